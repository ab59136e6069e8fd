#pragma once

#include <Eigen/Dense>

namespace flexivit {

// Resampling a p x p grid to p* x p* is a linear map on the row-major
// flattened grid. We materialize these maps as dense matrices so they can
// be composed, pseudo-inverted, inspected and exported.
enum class ResizeMethod { kBilinear, kPi, kArea, kNorm };

struct ResizeMap {
  int p_in = 0;
  int p_out = 0;
  ResizeMethod method = ResizeMethod::kBilinear;
  // Shape (p_out^2, p_in^2), acting on row-major vec(grid).
  Eigen::MatrixXd weights;

  Eigen::VectorXd apply(const Eigen::VectorXd& grid_vec) const {
    return weights * grid_vec;
  }
};

// Uncentered covariance E[x x^T] of a patch distribution, used by the
// sigma-weighted resize optimum.
struct CovarianceSpec {
  int p = 0;
  Eigen::MatrixXd sigma;  // (p^2, p^2), symmetric PSD

  // Checks symmetry (1e-12) and eigenvalue floor (-1e-10).
  void validate() const;
};

// 1-D linear interpolation matrix (p_out x p_in): half-pixel centers,
// edges clamped, no antialiasing. Matches the common image-resize
// "bilinear" semantics.
Eigen::MatrixXd interp1d_matrix(int p_in, int p_out);

// 2-D bilinear map as the Kronecker product of two 1-D factors.
ResizeMap bilinear_matrix(int p_in, int p_out);

// Moore-Penrose pseudoinverse via SVD. Singular values below
// tol * sigma_max are treated as zero; tol < 0 selects the default
// max(rows, cols) * machine epsilon.
Eigen::MatrixXd pseudoinverse(const Eigen::MatrixXd& m, double tol = -1.0);

// PI-resize operator P = ((B_{p_in}^{p_out})^T)^+. Upsampling with it
// preserves inner products against bilinearly resized inputs; downsampling
// yields the least-squares optimum for unit-covariance inputs.
ResizeMap pi_resize_matrix(int p_in, int p_out);

// Weighted optimum (sqrt(Sigma) B^T)^+ sqrt(Sigma) for an arbitrary patch
// covariance. Reduces to pi_resize_matrix when Sigma is a positive multiple
// of the identity.
Eigen::MatrixXd sigma_weighted_pi_matrix(int p_in, int p_out,
                                         const CovarianceSpec& cov);

// Area-weighted average resampling matrix (each output cell averages the
// input area it covers). Rows sum to one.
ResizeMap area_matrix(int p_in, int p_out);

enum class HeuristicMethod { kVanilla, kArea, kNorm };

// Baseline kernel resizers compared against PI-resize: plain bilinear,
// area averaging, and bilinear followed by restoring the slice L2 norm
// (zero-norm input maps to zero).
Eigen::MatrixXd heuristic_resize(const Eigen::MatrixXd& kernel_slice,
                                 int p_out, HeuristicMethod method);

}  // namespace flexivit
