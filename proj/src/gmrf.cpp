#include "lgcpcv/gmrf.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include <Eigen/SparseCholesky>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "lgcpcv/rng.hpp"

namespace lgcpcv {

double MaternHyper::kappa() const { return std::sqrt(8.0 * nu) / range; }

void MaternHyper::validate() const {
  if (!(sigma > 0) || !std::isfinite(sigma)) throw UsageError("Matern sigma must be positive");
  if (!(range > 0) || !std::isfinite(range)) throw UsageError("Matern range must be positive");
}

void PcPriorSpec::validate() const {
  if (!(rho0 > 0) || !(sigma0 > 0)) throw UsageError("PC prior thresholds must be positive");
  if (!(p_rho > 0 && p_rho < 1) || !(p_sigma > 0 && p_sigma < 1))
    throw UsageError("PC prior probabilities must lie in (0, 1)");
}

double PcPriorSpec::range_rate() const { return -std::log(p_rho) * rho0; }
double PcPriorSpec::sd_rate() const { return -std::log(p_sigma) / sigma0; }

// d = 2: pi(rho) = lambda rho^-2 exp(-lambda / rho)
double pc_range_logdensity(double rho, const PcPriorSpec& spec) {
  const double lam = spec.range_rate();
  return std::log(lam) - 2.0 * std::log(rho) - lam / rho;
}

double pc_sd_logdensity(double sigma, const PcPriorSpec& spec) {
  const double lam = spec.sd_rate();
  return std::log(lam) - lam * sigma;
}

double pc_prior_logdensity(const MaternHyper& hyper, const PcPriorSpec& spec) {
  hyper.validate();
  spec.validate();
  return pc_range_logdensity(hyper.range, spec) + pc_sd_logdensity(hyper.sigma, spec);
}

MeshLattice build_mesh(const GridGeometry& grid, double halo) {
  if (grid.size() == 0) throw UsageError("mesh needs a non-empty grid");
  if (!(halo >= 0)) throw UsageError("mesh halo must be non-negative");
  MeshLattice m;
  m.grid = grid;
  m.halo_cols = static_cast<std::size_t>(std::ceil(halo / grid.cell_dx - 1e-9));
  m.halo_rows = static_cast<std::size_t>(std::ceil(halo / grid.cell_dy - 1e-9));
  return m;
}

double lattice_stationary_variance(double kappa, double dx, double dy) {
  // The omega_2 integral has the closed form 2 pi c / (c^2 - d^2)^{3/2}.
  const double k2 = kappa * kappa;
  const double d = 2.0 / (dy * dy);
  // a = c - d is formed directly; subtracting d from c loses the digits that
  // matter when kappa is small.
  auto integrand = [&](double w) {
    const double s = std::sin(0.5 * w);
    const double a = k2 + 4.0 * s * s / (dx * dx);
    const double b = a * (a + 2.0 * d);
    return (a + d) / (b * std::sqrt(b));
  };
  using boost::math::quadrature::gauss_kronrod;
  const double pi = std::numbers::pi;
  const double split = std::min(pi, 20.0 * kappa * dx);
  double total = gauss_kronrod<double, 61>::integrate(integrand, 0.0, split, 15, 1e-12);
  if (split < pi) total += gauss_kronrod<double, 61>::integrate(integrand, split, pi, 15, 1e-12);
  return total / (pi * dx * dy);
}

SpMat spde_operator(const MeshLattice& mesh, double kappa) {
  const auto rows = mesh.rows(), cols = mesh.cols();
  const double wx = 1.0 / (mesh.grid.cell_dx * mesh.grid.cell_dx);
  const double wy = 1.0 / (mesh.grid.cell_dy * mesh.grid.cell_dy);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(mesh.size() * 5);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const auto i = static_cast<int>(r * cols + c);
      double diag = kappa * kappa;
      auto link = [&](std::size_t rr, std::size_t cc, double w) {
        trip.emplace_back(i, static_cast<int>(rr * cols + cc), -w);
        diag += w;
      };
      if (c > 0) link(r, c - 1, wx);
      if (c + 1 < cols) link(r, c + 1, wx);
      if (r > 0) link(r - 1, c, wy);
      if (r + 1 < rows) link(r + 1, c, wy);
      trip.emplace_back(i, i, diag);
    }
  }
  SpMat k(static_cast<Eigen::Index>(mesh.size()), static_cast<Eigen::Index>(mesh.size()));
  k.setFromTriplets(trip.begin(), trip.end());
  return k;
}

namespace {

SpMat scaled_square(const SpMat& k, double scale) {
  SpMat q = k * k;
  q *= scale;
  return q;
}

double precision_scale(const MeshLattice& mesh, const MaternHyper& hyper) {
  const double dx = mesh.grid.cell_dx, dy = mesh.grid.cell_dy;
  const double v0 = lattice_stationary_variance(hyper.kappa(), dx, dy);
  return v0 / (hyper.sigma * hyper.sigma) * dx * dy;
}

}  // namespace

SparsePrecision build_precision(const MeshLattice& mesh, const MaternHyper& hyper) {
  hyper.validate();
  SparsePrecision p;
  p.matrix = scaled_square(spde_operator(mesh, hyper.kappa()), precision_scale(mesh, hyper));
  p.name = "Matern precision (sigma=" + std::to_string(hyper.sigma) +
           ", range=" + std::to_string(hyper.range) + ")";
  return p;
}

// ---------------------------------------------------------------------------

struct SparseCholesky::Impl {
  Eigen::SimplicialLLT<SpMat, Eigen::Lower, Eigen::AMDOrdering<int>> llt;
  bool analyzed = false;
  bool factorized = false;
};

SparseCholesky::SparseCholesky() : impl_(std::make_unique<Impl>()) {}
SparseCholesky::~SparseCholesky() = default;
SparseCholesky::SparseCholesky(SparseCholesky&&) noexcept = default;
SparseCholesky& SparseCholesky::operator=(SparseCholesky&&) noexcept = default;

void SparseCholesky::analyze(const SpMat& a) {
  impl_->llt.analyzePattern(a);
  impl_->analyzed = true;
  impl_->factorized = false;
}

bool SparseCholesky::analyzed() const { return impl_->analyzed; }

void SparseCholesky::factorize(const SpMat& a, const std::string& name) {
  if (!impl_->analyzed) analyze(a);
  impl_->llt.factorize(a);
  if (impl_->llt.info() != Eigen::Success) {
    impl_->factorized = false;
    throw std::runtime_error("Cholesky factorization failed: " + name + " is not positive definite");
  }
  impl_->factorized = true;
}

double SparseCholesky::log_det() const {
  const auto& l = impl_->llt.matrixL().nestedExpression();
  double s = 0.0;
  for (Eigen::Index j = 0; j < l.outerSize(); ++j) {
    // lower-triangular column-major storage: the diagonal is the first entry of each column
    SpMat::InnerIterator it(l, j);
    s += std::log(it.value());
  }
  return 2.0 * s;
}

Eigen::VectorXd SparseCholesky::solve(const Eigen::VectorXd& b) const { return impl_->llt.solve(b); }

Eigen::VectorXd SparseCholesky::half_solve(const Eigen::VectorXd& b) const {
  Eigen::VectorXd y = impl_->llt.permutationP() * b;
  impl_->llt.matrixL().solveInPlace(y);
  return y;
}

Eigen::VectorXd SparseCholesky::half_solve_t(const Eigen::VectorXd& u) const {
  Eigen::VectorXd y = u;
  impl_->llt.matrixU().solveInPlace(y);
  return impl_->llt.permutationPinv() * y;
}

Eigen::VectorXd SparseCholesky::inverse_diagonal() const {
  // Takahashi recursion: Z = (L L^T)^{-1} on the pattern of L, column by
  // column from the last.  Z_ij = -(1/L_jj) sum_{k>j} L_kj Z_ki only touches
  // columns after j, and rows of column j below any k lie in column k.
  const auto& l = impl_->llt.matrixL().nestedExpression();
  const auto n = l.cols();
  const int* outer = l.outerIndexPtr();
  const int* inner = l.innerIndexPtr();
  const double* lv = l.valuePtr();
  std::vector<double> z(static_cast<std::size_t>(l.nonZeros()), 0.0);
  std::vector<int> local(static_cast<std::size_t>(n), -1);
  std::vector<double> acc;
  for (Eigen::Index j = n - 1; j >= 0; --j) {
    const int first = outer[j], last = outer[j + 1];
    const int m = last - first - 1;
    acc.assign(static_cast<std::size_t>(m), 0.0);
    for (int q = 0; q < m; ++q) local[static_cast<std::size_t>(inner[first + 1 + q])] = q;
    for (int qa = 0; qa < m; ++qa) {
      const int a = inner[first + 1 + qa];
      const double la = lv[first + 1 + qa];
      // Z(a, a) is the head of column a; then rows b > a of column a.
      acc[static_cast<std::size_t>(qa)] += la * z[static_cast<std::size_t>(outer[a])];
      for (int p = outer[a] + 1; p < outer[a + 1]; ++p) {
        const int qb = local[static_cast<std::size_t>(inner[p])];
        if (qb < 0) continue;
        acc[static_cast<std::size_t>(qb)] += la * z[static_cast<std::size_t>(p)];
        acc[static_cast<std::size_t>(qa)] += lv[first + 1 + qb] * z[static_cast<std::size_t>(p)];
      }
    }
    const double ljj = lv[first];
    double diag = 1.0 / (ljj * ljj);
    for (int q = 0; q < m; ++q) {
      const double zij = -acc[static_cast<std::size_t>(q)] / ljj;
      z[static_cast<std::size_t>(first + 1 + q)] = zij;
      diag -= lv[first + 1 + q] * zij / ljj;
      local[static_cast<std::size_t>(inner[first + 1 + q])] = -1;
    }
    z[static_cast<std::size_t>(first)] = diag;
  }
  Eigen::VectorXd out(n);
  const auto& perm = impl_->llt.permutationP().indices();
  for (Eigen::Index i = 0; i < n; ++i) out[i] = z[static_cast<std::size_t>(outer[perm[i]])];
  return out;
}

// ---------------------------------------------------------------------------

namespace {

// Eigenvalues of the free-boundary path Laplacian on n nodes with edge weight w.
Eigen::VectorXd path_spectrum(std::size_t n, double w) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(n));
  for (std::size_t k = 0; k < n; ++k) {
    const double s = std::sin(std::numbers::pi * static_cast<double>(k) / (2.0 * static_cast<double>(n)));
    out[static_cast<Eigen::Index>(k)] = 4.0 * w * s * s;
  }
  return out;
}

}  // namespace

// The operator is kappa^2 I plus a Kronecker sum of the row and column path
// Laplacians, so its eigenvalues are kappa^2 + a_i + b_j.
MaternField::MaternField(MeshLattice mesh)
    : mesh_(std::move(mesh)),
      row_eigen_(path_spectrum(mesh_.rows(), 1.0 / (mesh_.grid.cell_dy * mesh_.grid.cell_dy))),
      col_eigen_(path_spectrum(mesh_.cols(), 1.0 / (mesh_.grid.cell_dx * mesh_.grid.cell_dx))) {}

SparsePrecision MaternField::precision(const MaternHyper& hyper, double* log_det) {
  hyper.validate();
  SpMat k = spde_operator(mesh_, hyper.kappa());
  const double scale = precision_scale(mesh_, hyper);
  SparsePrecision p;
  p.matrix = scaled_square(k, scale);
  p.name = "Matern precision";
  if (log_det) {
    const double k2 = hyper.kappa() * hyper.kappa();
    double s = 0.0;
    for (const double a : row_eigen_)
      for (const double b : col_eigen_) s += std::log(k2 + a + b);
    *log_det = static_cast<double>(mesh_.size()) * std::log(scale) + 2.0 * s;
  }
  return p;
}

Eigen::VectorXd sample_field(const SparsePrecision& precision, std::uint64_t seed) {
  SparseCholesky chol;
  chol.factorize(precision.matrix, precision.name);
  Rng rng(seed);
  std::normal_distribution<double> normal;
  Eigen::VectorXd z(precision.dimension());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal(rng);
  return chol.half_solve_t(z);
}

}  // namespace lgcpcv
