#pragma once

#include <Eigen/Sparse>

#include <concepts>
#include <functional>
#include <optional>
#include <utility>

#include "physbench/domain.hpp"

namespace physbench {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// A first-order system x' = f(x) on packed state vectors.
///
/// `position_size()` returns the length of the q block when the state is
/// laid out as [q; p] with q' depending on p and p' on (q, p). Systems
/// without that split return std::nullopt and cannot be stepped with
/// leapfrog.
template <class S>
concept OdeSystem = requires(const S& s, const Vector& x, Vector& dx) {
  { s.dimension() } -> std::convertible_to<Index>;
  { s.position_size() } -> std::convertible_to<std::optional<Index>>;
  s.derivative(x, dx);
};

/// Systems that are linear, f(x) = A x, expose A so implicit steps can use
/// a direct solve.
template <class S>
concept LinearOdeSystem = OdeSystem<S> && requires(const S& s) {
  { s.linear_operator() } -> std::convertible_to<const SparseMatrix&>;
};

/// Type-erased system, used for learned right-hand sides and ad-hoc ODEs.
class DynamicSystem {
 public:
  using Rhs = std::function<void(const Vector&, Vector&)>;

  DynamicSystem(Index dimension, Rhs rhs,
                std::optional<Index> position_size = std::nullopt)
      : dimension_(dimension),
        position_size_(position_size),
        rhs_(std::move(rhs)) {}

  /// Wraps a value-returning callable `Vector f(const Vector&)`.
  template <class F>
    requires std::invocable<const F&, const Vector&>
  static DynamicSystem from_function(Index dimension, F f,
                                     std::optional<Index> position_size =
                                         std::nullopt) {
    return DynamicSystem(
        dimension,
        [f = std::move(f)](const Vector& x, Vector& dx) { dx = f(x); },
        position_size);
  }

  Index dimension() const { return dimension_; }
  std::optional<Index> position_size() const { return position_size_; }
  void derivative(const Vector& x, Vector& dx) const { rhs_(x, dx); }

 private:
  Index dimension_;
  std::optional<Index> position_size_;
  Rhs rhs_;
};

template <OdeSystem S>
Vector evaluate(const S& sys, const Vector& x) {
  Vector dx(x.size());
  sys.derivative(x, dx);
  return dx;
}

}  // namespace physbench
