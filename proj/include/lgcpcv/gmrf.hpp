#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "lgcpcv/geodata.hpp"

namespace lgcpcv {

using SpMat = Eigen::SparseMatrix<double>;

/// Matérn hyperparameters with the smoothness fixed at alpha = 2 (nu = 1 in 2-D).
struct MaternHyper {
  double sigma = 1.0;  // marginal standard deviation
  double range = 1.0;  // practical range rho, correlation ~0.13 at this distance

  static constexpr int alpha = 2;
  static constexpr double nu = 1.0;

  /// kappa = sqrt(8 nu) / rho.
  double kappa() const;
  void validate() const;
};

/// Penalised-complexity prior: P(rho < rho0) = p_rho and P(sigma > sigma0) = p_sigma.
struct PcPriorSpec {
  double rho0 = 50.0;
  double p_rho = 0.5;
  double sigma0 = 0.5;
  double p_sigma = 0.01;

  void validate() const;
  double range_rate() const;  // lambda_rho = -log(p_rho) * rho0^(d/2)
  double sd_rate() const;     // lambda_sigma = -log(p_sigma) / sigma0
};

double pc_range_logdensity(double rho, const PcPriorSpec& spec);
double pc_sd_logdensity(double sigma, const PcPriorSpec& spec);
/// Joint log density of (sigma, rho) on their natural scales.
double pc_prior_logdensity(const MaternHyper& hyper, const PcPriorSpec& spec);

/// Regular lattice used as the SPDE mesh: the covariate grid padded with a
/// halo of extra cells on every side.  Node order is row-major, row 0 on top.
struct MeshLattice {
  GridGeometry grid;  // the data grid (without halo)
  std::size_t halo_rows = 0;
  std::size_t halo_cols = 0;

  std::size_t rows() const { return grid.n_rows + 2 * halo_rows; }
  std::size_t cols() const { return grid.n_cols + 2 * halo_cols; }
  std::size_t size() const { return rows() * cols(); }
  std::size_t node_of_cell(std::size_t cell) const {
    return (grid.row_of(cell) + halo_rows) * cols() + grid.col_of(cell) + halo_cols;
  }
};

/// Pads `grid` by ceil(halo / cell size) cells in each direction.
MeshLattice build_mesh(const GridGeometry& grid, double halo);

struct SparsePrecision {
  SpMat matrix;
  std::string name = "Q";

  Eigen::Index dimension() const { return matrix.rows(); }
};

/// Stationary variance of x = K^{-1} e with K = kappa^2 I - Laplacian(dx, dy)
/// and e ~ N(0, I / (dx dy)) on the infinite lattice.
double lattice_stationary_variance(double kappa, double dx, double dy);

/// kappa^2 I minus the 5-point Laplacian with zero-flux boundaries.
SpMat spde_operator(const MeshLattice& mesh, double kappa);

/// Precision of the alpha = 2 SPDE field on the lattice, scaled so that the
/// stationary marginal standard deviation equals hyper.sigma.
SparsePrecision build_precision(const MeshLattice& mesh, const MaternHyper& hyper);

/// Sparse Cholesky factor P A P^T = L L^T with a reusable symbolic analysis.
class SparseCholesky {
 public:
  SparseCholesky();
  ~SparseCholesky();
  SparseCholesky(SparseCholesky&&) noexcept;
  SparseCholesky& operator=(SparseCholesky&&) noexcept;

  void analyze(const SpMat& a);
  /// Throws std::runtime_error naming `name` when the matrix is not positive definite.
  void factorize(const SpMat& a, const std::string& name = "matrix");
  bool analyzed() const;

  double log_det() const;
  Eigen::VectorXd solve(const Eigen::VectorXd& b) const;
  /// L^{-1} P b
  Eigen::VectorXd half_solve(const Eigen::VectorXd& b) const;
  /// P^T L^{-T} u; maps standard normals to draws with covariance A^{-1}.
  Eigen::VectorXd half_solve_t(const Eigen::VectorXd& u) const;
  /// diag(A^{-1}) by selected inversion over the pattern of the factor.
  Eigen::VectorXd inverse_diagonal() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// The Matérn GMRF on a fixed mesh; keeps the spectrum of the lattice
/// Laplacian so log-determinants at new hyperparameters need no factorisation.
class MaternField {
 public:
  explicit MaternField(MeshLattice mesh);

  const MeshLattice& mesh() const { return mesh_; }
  /// Precision at `hyper` and its log-determinant.
  SparsePrecision precision(const MaternHyper& hyper, double* log_det = nullptr);

 private:
  MeshLattice mesh_;
  Eigen::VectorXd row_eigen_, col_eigen_;
};

Eigen::VectorXd sample_field(const SparsePrecision& precision, std::uint64_t seed);

}  // namespace lgcpcv
