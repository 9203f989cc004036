#pragma once

// One-nearest-neighbour regression under the Euclidean metric. Lookups go
// through a kd-tree in low dimension and a linear scan otherwise; both give
// the same answer, with ties going to the lowest training index.

#include <algorithm>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "physbench/learners/model.hpp"

namespace physbench {

class KdTree {
 public:
  static constexpr Index kLeafSize = 16;
  static constexpr Index kMaxTreeDim = 32;

  KdTree() = default;

  /// Indexes the columns of `points`.
  explicit KdTree(const Matrix& points) : points_(&points) {
    order_.resize(static_cast<std::size_t>(points.cols()));
    std::iota(order_.begin(), order_.end(), Index{0});
    if (points.rows() <= kMaxTreeDim && points.cols() > kLeafSize) {
      nodes_.reserve(static_cast<std::size_t>(2 * points.cols() / kLeafSize + 1));
      build(0, points.cols());
    }
  }

  /// Index of the nearest column; equal distances resolve to the smaller index.
  Index nearest(const Vector& x) const {
    if (points_->cols() == 0) throw ValidationError("nearest neighbour query on an empty index");
    Best best;
    if (nodes_.empty()) {
      scan(0, points_->cols(), x, best);
    } else {
      search(0, x, best);
    }
    return best.index;
  }

  /// Linear scan, for cross-checking the tree.
  Index nearest_brute(const Vector& x) const {
    Best best;
    for (Index i = 0; i < points_->cols(); ++i) consider(i, x, best);
    return best.index;
  }

  bool uses_tree() const { return !nodes_.empty(); }

 private:
  struct Node {
    Index begin, end;  // range in order_
    Index dim = -1;    // -1 for leaves
    double split = 0.0;
    std::int32_t left = -1, right = -1;
  };

  struct Best {
    double dist = std::numeric_limits<double>::infinity();
    Index index = std::numeric_limits<Index>::max();
  };

  double sq_dist(Index i, const Vector& x) const {
    return (points_->col(i) - x).squaredNorm();
  }

  void consider(Index i, const Vector& x, Best& best) const {
    const double d = sq_dist(i, x);
    if (d < best.dist || (d == best.dist && i < best.index)) {
      best.dist = d;
      best.index = i;
    }
  }

  void scan(Index begin, Index end, const Vector& x, Best& best) const {
    for (Index k = begin; k < end; ++k) consider(order_[static_cast<std::size_t>(k)], x, best);
  }

  std::int32_t build(Index begin, Index end) {
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back(Node{begin, end});
    if (end - begin <= kLeafSize) return id;
    const Matrix& p = *points_;
    Index dim = 0;
    double spread = -1.0;
    for (Index d = 0; d < p.rows(); ++d) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (Index k = begin; k < end; ++k) {
        const double v = p(d, order_[static_cast<std::size_t>(k)]);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      if (hi - lo > spread) {
        spread = hi - lo;
        dim = d;
      }
    }
    if (!(spread > 0.0)) return id;  // all points identical
    const Index mid = begin + (end - begin) / 2;
    auto first = order_.begin() + begin;
    std::nth_element(first, order_.begin() + mid, order_.begin() + end,
                     [&](Index a, Index b) { return p(dim, a) < p(dim, b); });
    const double split = p(dim, order_[static_cast<std::size_t>(mid)]);
    nodes_[static_cast<std::size_t>(id)].dim = dim;
    nodes_[static_cast<std::size_t>(id)].split = split;
    const auto l = build(begin, mid);
    const auto r = build(mid, end);
    nodes_[static_cast<std::size_t>(id)].left = l;
    nodes_[static_cast<std::size_t>(id)].right = r;
    return id;
  }

  // Left subtree holds values <= split, right subtree values >= split.
  void search(std::int32_t id, const Vector& x, Best& best) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.dim < 0) {
      scan(n.begin, n.end, x, best);
      return;
    }
    const double diff = x[n.dim] - n.split;
    const std::int32_t near = diff <= 0.0 ? n.left : n.right;
    const std::int32_t far = diff <= 0.0 ? n.right : n.left;
    search(near, x, best);
    // Ties on distance must still be explored for a smaller index.
    if (diff * diff <= best.dist) search(far, x, best);
  }

  const Matrix* points_ = nullptr;
  std::vector<Index> order_;
  std::vector<Node> nodes_;
};

class KnnModel : public Model {
 public:
  /// Indexes every training input with its target. Step-prediction sets
  /// already exclude each trajectory's last snapshot.
  explicit KnnModel(TrainingSet set) : set_(std::move(set)), tree_(set_.inputs) {
    if (set_.size() == 0) throw ValidationError("knn: empty training set");
  }

  KnnModel(const KnnModel&) = delete;
  KnnModel& operator=(const KnnModel&) = delete;

  using Model::predict;

  std::string kind() const override { return "knn"; }
  TaskKind task() const override { return set_.task; }
  Index input_dim() const override { return set_.inputs.rows(); }
  Index output_dim() const override { return set_.targets.rows(); }
  Index size() const { return set_.size(); }
  const TrainingSet& training_set() const { return set_; }
  const KdTree& tree() const { return tree_; }

  Index nearest(const Vector& input) const {
    check_input(input);
    return tree_.nearest(input);
  }

  void predict(const Vector& input, Vector& out) const override {
    out = set_.targets.col(nearest(input));
  }

 private:
  TrainingSet set_;
  KdTree tree_;
};

inline std::unique_ptr<KnnModel> knn_fit(const std::vector<Trajectory>& trajs, TaskKind task,
                                         const std::vector<Vector>& masks = {}) {
  return std::make_unique<KnnModel>(make_training_set(trajs, task, masks));
}

}  // namespace physbench
