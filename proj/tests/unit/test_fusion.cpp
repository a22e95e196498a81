#include <doctest.h>

#include "oracles.hpp"
#include "protofuse/errors.hpp"
#include "protofuse/fusion.hpp"

using namespace protofuse;

TEST_SUITE("fusion") {
  TEST_CASE("affinity closed forms") {
    auto single = [](double p0, double p1, double g0, double g1) {
      return affinity_matrix((Matrix(1, 2) << p0, p1).finished(), (Matrix(1, 2) << g0, g1).finished()).values(0, 0);
    };
    CHECK(std::abs(single(1, 0, 1, 0) - 1.0) < 1e-15);
    CHECK(std::abs(single(1, 0, 0, 1)) < 1e-15);
    CHECK(std::abs(single(1, 1, 1, 0) - 1.0 / std::sqrt(2.0)) < 1e-6);
    CHECK_THROWS_AS(affinity_matrix(Matrix::Zero(1, 2), Matrix::Ones(1, 2)), NormalizationError);

    std::mt19937_64 rng(1);
    const Matrix p = oracle::random_matrix(6, 5, rng), g = oracle::random_matrix(6, 5, rng);
    const Matrix a = affinity_matrix(p, g).values;
    const auto po = oracle::from_eigen(p), go = oracle::from_eigen(g);
    for (int n = 0; n < 6; ++n)
      for (int m = 0; m < 6; ++m) {
        CHECK(std::abs(a(n, m) - oracle::dot(po[n], go[m]) / (oracle::norm(po[n]) * oracle::norm(go[m]))) < 1e-12);
        CHECK(std::abs(a(n, m)) <= 1.0);
      }
  }

  TEST_CASE("greedy selection closed forms") {
    AffinityMatrix a{(Matrix(2, 2) << 0.9, 0.1, 0.2, 0.8).finished()};
    const FusionSelection k1 = select_top_k(a, 1);
    CHECK(k1.pairs == std::vector<std::pair<int, int>>{{0, 0}});
    CHECK(k1.residual_p == std::vector<int>{1});
    CHECK(k1.residual_g == std::vector<int>{1});
    CHECK(select_top_k(a, 2).pairs == std::vector<std::pair<int, int>>{{0, 0}, {1, 1}});
    CHECK_THROWS_AS(select_top_k(a, 3), ConfigError);
    CHECK_THROWS_AS(select_top_k(a, -1), ConfigError);
  }

  TEST_CASE("greedy selection matches the brute-force oracle") {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> coarse(-3, 3);
    for (int trial = 0; trial < 200; ++trial) {
      Matrix a(6, 6);
      // Every other matrix uses a coarse grid so ties are frequent.
      const Matrix r = oracle::random_matrix(6, 6, rng);
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) a(i, j) = trial % 2 ? coarse(rng) / 3.0 : std::tanh(r(i, j));
      for (int k = 0; k <= 6; ++k) {
        const FusionSelection s = select_top_k({a}, k);
        REQUIRE(s.pairs == oracle::greedy_pairs(oracle::from_eigen(a), k));
        CHECK(s.residual_p.size() == static_cast<std::size_t>(6 - k));
        CHECK(std::is_sorted(s.residual_p.begin(), s.residual_p.end()));
        CHECK(std::is_sorted(s.residual_g.begin(), s.residual_g.end()));
      }
    }
  }

  TEST_CASE("fusion output layout") {
    std::mt19937_64 rng(3);
    const Matrix p = oracle::random_matrix(6, 4, rng), g = oracle::random_matrix(6, 4, rng);
    const FusionParams params{oracle::random_matrix(8, 4, rng), oracle::random_matrix(1, 4, rng)};
    const AffinityMatrix a = affinity_matrix(p, g);
    for (int k = 0; k <= 6; ++k) {
      const FusionSelection s = select_top_k(a, k);
      const Matrix out = fuse(p, g, s, params);
      REQUIRE(out.rows() == 12 - k);
      for (int i = 0; i < k; ++i) {
        const auto [n, m] = s.pairs[i];
        // Hand-computed affine of the concatenated pair.
        for (int c = 0; c < 4; ++c) {
          double v = params.bias(0, c);
          for (int j = 0; j < 4; ++j) v += p(n, j) * params.weight(j, c) + g(m, j) * params.weight(4 + j, c);
          CHECK(std::abs(out(i, c) - v) < 1e-12);
        }
      }
      for (std::size_t j = 0; j < s.residual_p.size(); ++j) CHECK(out.row(k + j) == p.row(s.residual_p[j]));
      for (std::size_t j = 0; j < s.residual_g.size(); ++j)
        CHECK(out.row(k + s.residual_p.size() + j) == g.row(s.residual_g[j]));
    }
    Matrix concat(12, 4);
    concat << p, g;
    CHECK(fuse(p, g, select_top_k(a, 0), params) == concat);
  }
}
