#include "flexivit/linmaps.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unsupported/Eigen/KroneckerProduct>

namespace flexivit {

void CovarianceSpec::validate() const {
  if (sigma.rows() != p * p || sigma.cols() != p * p)
    throw std::invalid_argument("CovarianceSpec: sigma must be p^2 x p^2");
  if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw std::invalid_argument("CovarianceSpec: sigma is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma,
                                                    Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-10)
    throw std::invalid_argument("CovarianceSpec: sigma has negative eigenvalues");
}

Eigen::MatrixXd interp1d_matrix(int p_in, int p_out) {
  if (p_in < 1 || p_out < 1)
    throw std::invalid_argument("interp1d_matrix: side lengths must be >= 1");
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(p_out, p_in);
  for (int i = 0; i < p_out; ++i) {
    double src = (i + 0.5) * static_cast<double>(p_in) / p_out - 0.5;
    double f = src - std::floor(src);
    int i0 = static_cast<int>(std::floor(src));
    int a = std::clamp(i0, 0, p_in - 1);
    int b = std::clamp(i0 + 1, 0, p_in - 1);
    m(i, a) += 1.0 - f;
    m(i, b) += f;
  }
  return m;
}

ResizeMap bilinear_matrix(int p_in, int p_out) {
  Eigen::MatrixXd r = interp1d_matrix(p_in, p_out);
  ResizeMap map;
  map.p_in = p_in;
  map.p_out = p_out;
  map.method = ResizeMethod::kBilinear;
  map.weights = Eigen::kroneckerProduct(r, r);
  return map;
}

Eigen::MatrixXd pseudoinverse(const Eigen::MatrixXd& m, double tol) {
  if (!m.allFinite())
    throw std::invalid_argument("pseudoinverse: input has non-finite values");
  if (tol < 0.0) {
    tol = static_cast<double>(std::max(m.rows(), m.cols())) *
          std::numeric_limits<double>::epsilon();
  }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(m,
                                     Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  double cutoff = sv.size() > 0 ? tol * sv(0) : 0.0;
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(sv.size());
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > cutoff && sv(i) > 0.0) inv(i) = 1.0 / sv(i);
  }
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

ResizeMap pi_resize_matrix(int p_in, int p_out) {
  ResizeMap bil = bilinear_matrix(p_in, p_out);
  ResizeMap map;
  map.p_in = p_in;
  map.p_out = p_out;
  map.method = ResizeMethod::kPi;
  map.weights = pseudoinverse(bil.weights.transpose());
  return map;
}

Eigen::MatrixXd sigma_weighted_pi_matrix(int p_in, int p_out,
                                         const CovarianceSpec& cov) {
  if (cov.p != p_in)
    throw std::invalid_argument("sigma_weighted_pi_matrix: cov.p != p_in");
  if ((cov.sigma - cov.sigma.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw std::invalid_argument("sigma_weighted_pi_matrix: sigma not symmetric");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov.sigma);
  Eigen::VectorXd evals = es.eigenvalues();
  if (evals.minCoeff() < -1e-8)
    throw std::invalid_argument(
        "sigma_weighted_pi_matrix: sigma is not positive semi-definite");
  // Symmetric PSD square root; tiny negative eigenvalues are clamped so
  // singular covariances are usable.
  Eigen::VectorXd root = evals.cwiseMax(0.0).cwiseSqrt();
  Eigen::MatrixXd sqrt_sigma =
      es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();

  Eigen::MatrixXd bt = bilinear_matrix(p_in, p_out).weights.transpose();
  return pseudoinverse(sqrt_sigma * bt) * sqrt_sigma;
}

ResizeMap area_matrix(int p_in, int p_out) {
  if (p_in < 1 || p_out < 1)
    throw std::invalid_argument("area_matrix: side lengths must be >= 1");
  double r = static_cast<double>(p_in) / p_out;
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(p_out, p_in);
  for (int j = 0; j < p_out; ++j) {
    double lo = j * r;
    double hi = (j + 1) * r;
    for (int k = 0; k < p_in; ++k) {
      double overlap = std::min(hi, static_cast<double>(k + 1)) -
                       std::max(lo, static_cast<double>(k));
      if (overlap > 0.0) m(j, k) = overlap / r;
    }
  }
  ResizeMap map;
  map.p_in = p_in;
  map.p_out = p_out;
  map.method = ResizeMethod::kArea;
  map.weights = Eigen::kroneckerProduct(m, m);
  return map;
}

Eigen::MatrixXd heuristic_resize(const Eigen::MatrixXd& kernel_slice,
                                 int p_out, HeuristicMethod method) {
  if (kernel_slice.rows() != kernel_slice.cols())
    throw std::invalid_argument("heuristic_resize: slice must be square");
  int p_in = static_cast<int>(kernel_slice.rows());
  if (p_in < 1 || p_out < 1)
    throw std::invalid_argument("heuristic_resize: side lengths must be >= 1");

  // Flatten explicitly in row-major order (Eigen default is column-major).
  Eigen::VectorXd vec(p_in * p_in);
  for (int r = 0; r < p_in; ++r)
    for (int c = 0; c < p_in; ++c) vec(r * p_in + c) = kernel_slice(r, c);

  Eigen::VectorXd out;
  switch (method) {
    case HeuristicMethod::kVanilla:
      out = bilinear_matrix(p_in, p_out).apply(vec);
      break;
    case HeuristicMethod::kArea:
      out = area_matrix(p_in, p_out).apply(vec);
      break;
    case HeuristicMethod::kNorm: {
      out = bilinear_matrix(p_in, p_out).apply(vec);
      double in_norm = vec.norm();
      double out_norm = out.norm();
      if (in_norm == 0.0 || out_norm == 0.0)
        out.setZero();
      else
        out *= in_norm / out_norm;
      break;
    }
  }

  Eigen::MatrixXd grid(p_out, p_out);
  for (int r = 0; r < p_out; ++r)
    for (int c = 0; c < p_out; ++c) grid(r, c) = out(r * p_out + c);
  return grid;
}

}  // namespace flexivit
