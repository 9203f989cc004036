#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "physbench/sampling.hpp"

using namespace physbench;

TEST(Sampling, SpringRadiusRanges) {
  auto in = spring_source(1, Distribution::InDistribution);
  for (const auto& ic : in.draw(2000)) {
    EXPECT_GT(ic.radius, 0.2);
    EXPECT_LT(ic.radius, 1.0);
    EXPECT_NEAR(ic.state.q.squaredNorm() + ic.state.p.squaredNorm(), ic.radius * ic.radius,
                1e-14);
    EXPECT_GE(ic.theta, 0.0);
    EXPECT_LT(ic.theta, 2 * std::numbers::pi);
  }
  auto ood = spring_source(1, Distribution::OutOfDistribution);
  for (const auto& ic : ood.draw(2000)) {
    EXPECT_GT(ic.radius, 1.0);
    EXPECT_LT(ic.radius, 1.2);
  }
}

TEST(Sampling, SupersetProperty) {
  auto a = spring_source(77, Distribution::InDistribution);
  auto b = spring_source(77, Distribution::InDistribution);
  const auto small = a.draw(10);
  const auto large = b.draw(1000);
  for (std::size_t i = 0; i < small.size(); ++i) {
    EXPECT_EQ(small[i].radius, large[i].radius);
    EXPECT_EQ(small[i].theta, large[i].theta);
  }
  // Extending a cached source keeps its prefix.
  const auto extended = a.draw(500);
  for (std::size_t i = 0; i < 500; ++i) EXPECT_EQ(extended[i].radius, large[i].radius);
  EXPECT_EQ(a.cached(), 500u);
}

TEST(Sampling, SeedsDiffer) {
  auto a = spring_source(1, Distribution::InDistribution);
  auto b = spring_source(2, Distribution::InDistribution);
  EXPECT_NE(a.draw(1)[0].radius, b.draw(1)[0].radius);
}

TEST(Sampling, WaveParameterRanges) {
  auto in = wave_source(3, Distribution::InDistribution);
  for (const auto& ic : in.draw(500)) {
    EXPECT_GT(ic.width, 0.75);
    EXPECT_LT(ic.width, 1.25);
    EXPECT_GT(ic.height, 0.75);
    EXPECT_LT(ic.height, 1.25);
    EXPECT_EQ(ic.state.q.size(), 125);
    EXPECT_EQ(ic.state.p, Vector::Zero(125));
  }
  auto ood = wave_source(3, Distribution::OutOfDistribution);
  int low = 0, high = 0;
  for (const auto& ic : ood.draw(4000)) {
    for (double v : {ic.width, ic.height}) {
      const bool lo = v > 0.5 && v < 0.75;
      const bool hi = v > 1.25 && v < 1.5;
      EXPECT_TRUE(lo || hi) << v;
      low += lo;
      high += hi;
    }
  }
  // Equal-length intervals: each side near half.
  EXPECT_NEAR(static_cast<double>(low) / (low + high), 0.5, 0.03);
}

TEST(Sampling, WavePulsePeakBoundedByHeight) {
  auto src = wave_source(5, Distribution::InDistribution);
  for (const auto& ic : src.draw(100)) {
    EXPECT_LE(ic.state.q.maxCoeff(), ic.height + 1e-15);
    EXPECT_GT(ic.state.q.maxCoeff(), 0.5 * ic.height);
    EXPECT_GE(ic.state.q.minCoeff(), 0.0);
  }
}

TEST(Sampling, MeshPerturbationsAreAreaUniform) {
  const auto mesh = SpringMeshSystem::grid(10);
  const Vector rest = mesh.rest_positions();
  auto in = mesh_source(9, Distribution::InDistribution, mesh);
  std::vector<double> radii;
  for (const auto& s : in.draw(200)) {
    EXPECT_EQ(s.p, Vector::Zero(200));
    for (Index i = 0; i < 100; ++i) {
      const double r = (s.q.segment<2>(2 * i) - rest.segment<2>(2 * i)).norm();
      if (i >= 90) {
        EXPECT_EQ(r, 0.0);
      } else {
        EXPECT_LE(r, 0.35 + 1e-15);
        radii.push_back(r);
      }
    }
  }
  // Area-uniform on a disk: P(r < R/sqrt 2) = 1/2.
  const double below = static_cast<double>(std::count_if(
                           radii.begin(), radii.end(),
                           [](double r) { return r < 0.35 / std::sqrt(2.0); })) /
                       static_cast<double>(radii.size());
  EXPECT_NEAR(below, 0.5, 0.01);
}

TEST(Sampling, MeshOodIsAnnulus) {
  const auto mesh = SpringMeshSystem::grid(10);
  const Vector rest = mesh.rest_positions();
  auto ood = mesh_source(9, Distribution::OutOfDistribution, mesh);
  std::vector<double> r2;
  for (const auto& s : ood.draw(100)) {
    for (Index i = 0; i < 90; ++i) {
      const double r = (s.q.segment<2>(2 * i) - rest.segment<2>(2 * i)).norm();
      EXPECT_GT(r, 0.35 - 1e-12);
      EXPECT_LE(r, 0.45 + 1e-12);
      r2.push_back(r * r);
    }
  }
  // r^2 uniform on (0.35^2, 0.45^2): mean at the midpoint.
  double mean = 0.0;
  for (double v : r2) mean += v;
  mean /= static_cast<double>(r2.size());
  EXPECT_NEAR(mean, 0.5 * (0.35 * 0.35 + 0.45 * 0.45), 0.002);
}

TEST(Sampling, NavierStokesScenes) {
  auto one = ns_source(4, Distribution::InDistribution, 1);
  for (const auto& scene : one.draw(100)) {
    ASSERT_EQ(scene.obstacles.size(), 1u);
    EXPECT_GT(scene.obstacles[0].radius, 0.05);
    EXPECT_LT(scene.obstacles[0].radius, 0.1);
    EXPECT_TRUE(scene_violations(scene).empty());
  }
  auto four = ns_source(4, Distribution::OutOfDistribution, 4);
  for (const auto& scene : four.draw(100)) {
    ASSERT_EQ(scene.obstacles.size(), 4u);
    for (const auto& o : scene.obstacles) {
      EXPECT_GT(o.radius, 0.025);
      EXPECT_LT(o.radius, 0.05);
    }
    EXPECT_TRUE(scene_violations(scene).empty());
  }
  EXPECT_THROW(ns_source(4, Distribution::InDistribution, 2), ValidationError);
}

TEST(Sampling, DistributionNames) {
  EXPECT_EQ(parse_distribution("in"), Distribution::InDistribution);
  EXPECT_EQ(parse_distribution(to_string(Distribution::OutOfDistribution)),
            Distribution::OutOfDistribution);
  EXPECT_THROW(parse_distribution("mid"), ValidationError);
}
