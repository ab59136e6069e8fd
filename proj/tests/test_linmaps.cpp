#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "flexivit/data.hpp"
#include "flexivit/linmaps.hpp"
#include "flexivit/rng.hpp"

using namespace flexivit;

namespace {

Eigen::VectorXd random_vec(int n, Rng& rng) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = rng.normal();
  return v;
}

// Independent scalar oracle: one output coordinate of a half-pixel-center
// clamped linear interpolation.
double interp_weight_oracle(int p_in, int p_out, int out_idx, int in_idx) {
  double src = (out_idx + 0.5) * static_cast<double>(p_in) / p_out - 0.5;
  int i0 = static_cast<int>(std::floor(src));
  double f = src - i0;
  double w = 0.0;
  int a = std::min(std::max(i0, 0), p_in - 1);
  int b = std::min(std::max(i0 + 1, 0), p_in - 1);
  if (a == in_idx) w += 1.0 - f;
  if (b == in_idx) w += f;
  return w;
}

// Least-squares oracle via unregularized normal equations.
Eigen::VectorXd least_squares_oracle(const Eigen::MatrixXd& b, const Eigen::VectorXd& w) {
  Eigen::MatrixXd gram = b * b.transpose();
  return gram.ldlt().solve(b * w);
}

}  // namespace

TEST_CASE("bilinear matrix: identity when sides match") {
  ResizeMap m = bilinear_matrix(4, 4);
  CHECK((m.weights - Eigen::MatrixXd::Identity(16, 16)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("bilinear matrix: preserves constants and rows sum to one") {
  ResizeMap m = bilinear_matrix(4, 8);
  Eigen::VectorXd ones = Eigen::VectorXd::Ones(16);
  Eigen::VectorXd up = m.apply(ones);
  CHECK((up.array() - 1.0).abs().maxCoeff() < 1e-15);
  Eigen::VectorXd sums = m.weights.rowwise().sum();
  CHECK((sums.array() - 1.0).abs().maxCoeff() < 1e-15);
  CHECK(m.weights.minCoeff() >= 0.0);
}

TEST_CASE("bilinear matrix: rows match the scalar interpolation oracle") {
  for (auto [pin, pout] : {std::pair{2, 4}, std::pair{4, 8}, std::pair{5, 3}}) {
    Eigen::MatrixXd r = interp1d_matrix(pin, pout);
    for (int i = 0; i < pout; ++i)
      for (int j = 0; j < pin; ++j)
        CHECK(r(i, j) == doctest::Approx(interp_weight_oracle(pin, pout, i, j)).epsilon(1e-15));
  }
}

TEST_CASE("bilinear matrix: separable as a Kronecker product") {
  ResizeMap m = bilinear_matrix(3, 7);
  Eigen::MatrixXd r = interp1d_matrix(3, 7);
  for (int ro = 0; ro < 7; ++ro)
    for (int co = 0; co < 7; ++co)
      for (int ri = 0; ri < 3; ++ri)
        for (int ci = 0; ci < 3; ++ci)
          CHECK(std::abs(m.weights(ro * 7 + co, ri * 3 + ci) - r(ro, ri) * r(co, ci)) <
                1e-12);
}

TEST_CASE("bilinear matrix: rejects side length zero") {
  CHECK_THROWS_AS(bilinear_matrix(0, 4), std::invalid_argument);
  CHECK_THROWS_AS(bilinear_matrix(4, 0), std::invalid_argument);
}

TEST_CASE("pseudoinverse: identity and diagonal cases") {
  Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(5, 5);
  CHECK((pseudoinverse(eye) - eye).cwiseAbs().maxCoeff() < 1e-14);

  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(2, 2);
  d(0, 0) = 2.0;
  Eigen::MatrixXd dp = pseudoinverse(d);
  CHECK(dp(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(dp(1, 1) == 0.0);
  CHECK(std::abs(dp(0, 1)) + std::abs(dp(1, 0)) < 1e-14);
}

TEST_CASE("pseudoinverse: Penrose conditions on a random 6x4 matrix") {
  Rng rng(42, 0);
  Eigen::MatrixXd a(6, 4);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 4; ++j) a(i, j) = rng.normal();
  Eigen::MatrixXd ap = pseudoinverse(a);
  CHECK((a * ap * a - a).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((ap * a * ap - ap).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(((a * ap) - (a * ap).transpose()).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(((ap * a) - (ap * a).transpose()).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("pseudoinverse: rejects non-finite input") {
  Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(2, 2);
  bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(pseudoinverse(bad), std::invalid_argument);
}

TEST_CASE("pi resize: identity when sides match") {
  ResizeMap p = pi_resize_matrix(8, 8);
  CHECK((p.weights - Eigen::MatrixXd::Identity(64, 64)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("pi resize: upsampling preserves inner products (4 -> 8)") {
  ResizeMap b = bilinear_matrix(4, 8);
  ResizeMap p = pi_resize_matrix(4, 8);
  Rng rng(7, 0);
  for (int t = 0; t < 100; ++t) {
    Eigen::VectorXd x = random_vec(16, rng);
    Eigen::VectorXd w = random_vec(16, rng);
    double ref = x.dot(w);
    double got = (b.apply(x)).dot(p.apply(w));
    CHECK(std::abs(ref - got) < 1e-9);
  }
}

TEST_CASE("pi resize: exactness across the upsampling range") {
  Rng rng(11, 0);
  for (int pin = 2; pin <= 8; ++pin) {
    for (int pout = pin; pout <= 16; ++pout) {
      ResizeMap b = bilinear_matrix(pin, pout);
      ResizeMap p = pi_resize_matrix(pin, pout);
      for (int t = 0; t < 10; ++t) {
        Eigen::VectorXd x = random_vec(pin * pin, rng);
        Eigen::VectorXd w = random_vec(pin * pin, rng);
        double ref = x.dot(w);
        double got = b.apply(x).dot(p.apply(w));
        CHECK(std::abs(ref - got) <= 1e-9 * (1.0 + std::abs(ref)));
      }
    }
  }
}

TEST_CASE("pi resize: downsampling matches the least-squares oracle") {
  ResizeMap b = bilinear_matrix(8, 4);
  ResizeMap p = pi_resize_matrix(8, 4);
  Rng rng(13, 0);
  for (int t = 0; t < 20; ++t) {
    Eigen::VectorXd w = random_vec(64, rng);
    Eigen::VectorXd got = p.apply(w);
    Eigen::VectorXd oracle = least_squares_oracle(b.weights, w);
    CHECK((got - oracle).cwiseAbs().maxCoeff() < 1e-9);
    double res_got = (w - b.weights.transpose() * got).squaredNorm();
    double res_oracle = (w - b.weights.transpose() * oracle).squaredNorm();
    CHECK(std::abs(res_got - res_oracle) <= 1e-8 * (1.0 + res_oracle));
  }
}

TEST_CASE("norm mismatch: bilinearly resizing both sides scales the product by 4") {
  // All-ones 4x4 patch and kernel, upsampled x2: 64 vs 16.
  ResizeMap b = bilinear_matrix(4, 8);
  Eigen::VectorXd ones = Eigen::VectorXd::Ones(16);
  double before = ones.dot(ones);
  double after = b.apply(ones).dot(b.apply(ones));
  CHECK(before == doctest::Approx(16.0).epsilon(1e-15));
  CHECK(std::abs(after - 4.0 * before) < 1e-12);
}

TEST_CASE("sigma weighted: identity covariance reduces to plain pi resize") {
  CovarianceSpec cov;
  cov.p = 4;
  cov.sigma = Eigen::MatrixXd::Identity(16, 16);
  Eigen::MatrixXd got = sigma_weighted_pi_matrix(4, 8, cov);
  Eigen::MatrixXd plain = pi_resize_matrix(4, 8).weights;
  CHECK((got - plain).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("sigma weighted: scalar covariance cancels") {
  CovarianceSpec cov;
  cov.p = 4;
  cov.sigma = 2.0 * Eigen::MatrixXd::Identity(16, 16);
  Eigen::MatrixXd got = sigma_weighted_pi_matrix(4, 8, cov);
  Eigen::MatrixXd plain = pi_resize_matrix(4, 8).weights;
  CHECK((got - plain).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("sigma weighted: achieves a no-worse weighted objective (6 -> 3)") {
  Rng rng(17, 0);
  Eigen::MatrixXd b = bilinear_matrix(6, 3).weights;
  for (int t = 0; t < 20; ++t) {
    CovarianceSpec cov;
    cov.p = 6;
    Eigen::VectorXd diag(36);
    for (int i = 0; i < 36; ++i) diag(i) = 0.1 + rng.uniform() * 2.0;
    cov.sigma = diag.asDiagonal();

    Eigen::MatrixXd weighted = sigma_weighted_pi_matrix(6, 3, cov);
    Eigen::MatrixXd plain = pi_resize_matrix(6, 3).weights;
    Eigen::VectorXd w = random_vec(36, rng);

    auto objective = [&](const Eigen::VectorXd& w_hat) {
      Eigen::VectorXd r = w - b.transpose() * w_hat;
      return r.dot(cov.sigma * r);
    };
    CHECK(objective(weighted * w) <= objective(plain * w) + 1e-10);
  }
}

TEST_CASE("sigma weighted: rejects non-PSD covariance") {
  CovarianceSpec cov;
  cov.p = 2;
  cov.sigma = Eigen::MatrixXd::Identity(4, 4);
  cov.sigma(0, 0) = -1.0;
  CHECK_THROWS_AS(sigma_weighted_pi_matrix(2, 4, cov), std::invalid_argument);
}

TEST_CASE("covariance validation: symmetry and eigenvalue floor") {
  CovarianceSpec good;
  good.p = 2;
  good.sigma = Eigen::MatrixXd::Identity(4, 4);
  CHECK_NOTHROW(good.validate());

  CovarianceSpec skew = good;
  skew.sigma(0, 1) = 1e-6;
  CHECK_THROWS_AS(skew.validate(), std::invalid_argument);
}

TEST_CASE("heuristic resize: vanilla keeps constants") {
  Eigen::MatrixXd grid = Eigen::MatrixXd::Constant(4, 4, 3.5);
  Eigen::MatrixXd out = heuristic_resize(grid, 8, HeuristicMethod::kVanilla);
  CHECK((out.array() - 3.5).abs().maxCoeff() < 1e-12);
}

TEST_CASE("heuristic resize: norm restores the slice L2 norm") {
  Rng rng(23, 0);
  Eigen::MatrixXd grid(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) grid(i, j) = rng.normal();
  Eigen::MatrixXd out = heuristic_resize(grid, 7, HeuristicMethod::kNorm);
  CHECK(std::abs(out.norm() - grid.norm()) < 1e-12);

  Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(4, 4);
  Eigen::MatrixXd zout = heuristic_resize(zero, 7, HeuristicMethod::kNorm);
  CHECK(zout.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("heuristic resize: area average of a checkerboard is one half") {
  Eigen::MatrixXd cb(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) cb(i, j) = (i + j) % 2;
  Eigen::MatrixXd out = heuristic_resize(cb, 2, HeuristicMethod::kArea);
  CHECK((out.array() - 0.5).abs().maxCoeff() < 1e-12);
}

TEST_CASE("area matrix rows sum to one in both directions") {
  for (auto [pin, pout] : {std::pair{4, 2}, std::pair{3, 5}}) {
    ResizeMap m = area_matrix(pin, pout);
    Eigen::VectorXd sums = m.weights.rowwise().sum();
    CHECK((sums.array() - 1.0).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("resize maps export to the tensor file format") {
  ResizeMap p = pi_resize_matrix(4, 8);
  FxtMap m;
  FxtTensor t;
  t.dims = {static_cast<std::uint32_t>(p.weights.rows()),
            static_cast<std::uint32_t>(p.weights.cols())};
  for (int r = 0; r < p.weights.rows(); ++r)
    for (int c = 0; c < p.weights.cols(); ++c) t.values.push_back(p.weights(r, c));
  m.emplace("pi_4_8", std::move(t));
  std::string path = "resize_map_export_test.fxt";
  fxt_write(path, m);
  FxtMap back = fxt_read(path);
  REQUIRE(back.count("pi_4_8") == 1);
  const FxtTensor& bt = back["pi_4_8"];
  REQUIRE(bt.dims == std::vector<std::uint32_t>{64, 16});
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 16; ++c) CHECK(bt.values[r * 16 + c] == p.weights(r, c));
  std::remove(path.c_str());
}
