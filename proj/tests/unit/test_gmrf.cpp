#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "lgcpcv/gmrf.hpp"
#include "lgcpcv/rng.hpp"
#include "support/fixtures.hpp"

using namespace lgcpcv;

namespace {

double mass(const std::function<double(double)>& f, double a, double b) {
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 20, 1e-14);
}

// Variance of the same lattice field on an N x N torus, summed over the
// discrete spectrum; converges to the infinite-lattice value as N grows.
double torus_variance(double kappa, double dx, double dy, int n) {
  const double pi = std::acos(-1.0);
  double sum = 0;
  for (int i = 0; i < n; ++i) {
    const double sx = std::sin(pi * i / n);
    for (int j = 0; j < n; ++j) {
      const double sy = std::sin(pi * j / n);
      const double a = kappa * kappa + 4 * sx * sx / (dx * dx) + 4 * sy * sy / (dy * dy);
      sum += 1.0 / (a * a);
    }
  }
  return sum / (static_cast<double>(n) * n * dx * dy);
}

SpMat random_spd(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  SpMat a(n, n);
  std::vector<Eigen::Triplet<double>> t;
  for (int i = 0; i < n; ++i) {
    t.emplace_back(i, i, 4.0 + u(rng));
    for (int j : {i + 1, i + 3}) {
      if (j >= n) continue;
      const double v = 0.7 * u(rng);
      t.emplace_back(i, j, v);
      t.emplace_back(j, i, v);
    }
  }
  a.setFromTriplets(t.begin(), t.end());
  return a;
}

}  // namespace

TEST_CASE("kappa from the practical range") {
  MaternHyper h;
  h.range = 56.72;
  CHECK(h.kappa() == doctest::Approx(std::sqrt(8.0) / 56.72));
  CHECK(h.kappa() == doctest::Approx(0.04988).epsilon(1e-4));
  h.range = -1;
  CHECK_THROWS_AS(h.validate(), UsageError);
}

TEST_CASE("PC prior reproduces its tail probabilities") {
  PcPriorSpec spec;  // P(rho < 50) = 0.5, P(sigma > 0.5) = 0.01
  const auto range_density = [&](double r) { return std::exp(pc_range_logdensity(r, spec)); };
  CHECK(mass(range_density, 0.0, 50.0) == doctest::Approx(0.5).epsilon(1e-8));
  const auto sd_density = [&](double s) { return std::exp(pc_sd_logdensity(s, spec)); };
  CHECK(std::abs(mass(sd_density, 0.5, 60.0) - 0.01) < 1e-9);
  CHECK(std::abs(1.0 - mass(sd_density, 0.0, 0.5) - 0.01) < 1e-9);

  PcPriorSpec other{8.0, 0.5, 1.0, 0.05};
  const auto d8 = [&](double r) { return std::exp(pc_range_logdensity(r, other)); };
  CHECK(mass(d8, 0.0, 8.0) == doctest::Approx(0.5).epsilon(1e-8));

  for (double s : {1e-3, 0.1, 1.0, 10.0})
    for (double r : {1e-2, 1.0, 50.0, 1e4}) {
      const double v = pc_prior_logdensity({s, r}, spec);
      CHECK(std::isfinite(v));
      CHECK(v == doctest::Approx(pc_sd_logdensity(s, spec) + pc_range_logdensity(r, spec)));
    }
  CHECK_THROWS_AS((PcPriorSpec{50, 1.5, 0.5, 0.01}.validate()), UsageError);
  CHECK_THROWS_AS((PcPriorSpec{0, 0.5, 0.5, 0.01}.validate()), UsageError);
}

TEST_CASE("mesh halo pads whole cells on every side") {
  const auto g = fixtures::square_grid(10, 12, 2.0);
  const auto m = build_mesh(g, 5.0);
  CHECK(m.halo_rows == 3);
  CHECK(m.halo_cols == 3);
  CHECK(m.rows() == 16);
  CHECK(m.cols() == 18);
  CHECK(m.node_of_cell(0) == 3 * 18 + 3);
  CHECK(build_mesh(g, 0.0).size() == g.size());
}

TEST_CASE("stationary variance matches the torus spectrum") {
  for (double kappa : {0.05, 0.3, 1.5})
    for (double dx : {0.5, 1.0, 2.0}) {
      const double ref = torus_variance(kappa, dx, 1.5 * dx, 2048);
      CHECK(lattice_stationary_variance(kappa, dx, 1.5 * dx) == doctest::Approx(ref).epsilon(1e-6));
    }
}

TEST_CASE("SPDE operator rows sum to kappa squared") {
  const auto m = build_mesh(fixtures::square_grid(6, 5), 0.0);
  const SpMat k = spde_operator(m, 0.7);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(k.rows());
  const Eigen::VectorXd rows = k * ones;
  for (Eigen::Index i = 0; i < rows.size(); ++i) CHECK(rows[i] == doctest::Approx(0.49));
}

TEST_CASE("precision is symmetric and positive definite") {
  for (auto [n, s, r] : {std::tuple{8, 0.5, 3.0}, std::tuple{32, 2.0, 40.0}, std::tuple{128, 1.0, 10.0}}) {
    const auto m = build_mesh(fixtures::square_grid(n, n), 0.0);
    const auto q = build_precision(m, {s, r});
    const SpMat diff = q.matrix - SpMat(q.matrix.transpose());
    double worst = 0;
    for (int k = 0; k < diff.outerSize(); ++k)
      for (SpMat::InnerIterator it(diff, k); it; ++it) worst = std::max(worst, std::abs(it.value()));
    CHECK(worst == 0.0);
    SparseCholesky chol;
    CHECK_NOTHROW(chol.factorize(q.matrix, "Q"));
    // neighbours of neighbours at most
    for (int k = 0; k < q.matrix.outerSize(); ++k) {
      int nnz = 0;
      for (SpMat::InnerIterator it(q.matrix, k); it; ++it) ++nnz;
      CHECK(nnz <= 13);
    }
  }
}

TEST_CASE("interior marginal sd equals sigma") {
  const auto g = fixtures::square_grid(40, 40);
  const MaternHyper h{0.8, 8.0};
  const auto m = build_mesh(g, 8.0);
  const auto q = build_precision(m, h);
  SparseCholesky chol;
  chol.factorize(q.matrix);
  const Eigen::VectorXd var = chol.inverse_diagonal();
  const auto centre = static_cast<Eigen::Index>(m.node_of_cell(g.index(20, 20)));
  CHECK(std::sqrt(var[centre]) == doctest::Approx(0.8).epsilon(0.02));
  const Eigen::VectorXd unit = Eigen::VectorXd::Unit(var.size(), centre);
  CHECK(var[centre] == doctest::Approx(chol.solve(unit)[centre]).epsilon(1e-9));
}

TEST_CASE("sampled fields have the stated sd and practical-range correlation") {
  const auto g = fixtures::square_grid(30, 30);
  const MaternHyper h{1.3, 8.0};
  const auto m = build_mesh(g, 8.0);
  const auto q = build_precision(m, h);
  const auto a = static_cast<Eigen::Index>(m.node_of_cell(g.index(15, 11)));
  const auto b = static_cast<Eigen::Index>(m.node_of_cell(g.index(15, 19)));
  const int n = 500;
  double saa = 0, sbb = 0, sab = 0, sa = 0;
  for (int i = 0; i < n; ++i) {
    const auto x = sample_field(q, derive_seed(3, {static_cast<std::uint64_t>(i)}));
    saa += x[a] * x[a];
    sbb += x[b] * x[b];
    sab += x[a] * x[b];
    sa += x[a];
  }
  CHECK(std::sqrt(saa / n) == doctest::Approx(1.3).epsilon(0.05));
  CHECK(std::abs(sa / n) < 4 * 1.3 / std::sqrt(n));
  CHECK(std::abs(sab / std::sqrt(saa * sbb) - 0.13) < 0.05);

  // exact correlation at distance rho from two columns of the covariance
  SparseCholesky chol;
  chol.factorize(q.matrix);
  const Eigen::VectorXd ca = chol.solve(Eigen::VectorXd::Unit(q.dimension(), a));
  const Eigen::VectorXd cb = chol.solve(Eigen::VectorXd::Unit(q.dimension(), b));
  CHECK(std::abs(ca[b] / std::sqrt(ca[a] * cb[b]) - 0.13) < 0.05);
}

TEST_CASE("scalar precision and determinism") {
  SparsePrecision p;
  p.matrix.resize(1, 1);
  p.matrix.insert(0, 0) = 4.0;
  double ss = 0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    const double x = sample_field(p, derive_seed(9, {static_cast<std::uint64_t>(i)}))[0];
    ss += x * x;
  }
  CHECK(std::sqrt(ss / n) == doctest::Approx(0.5).epsilon(0.05));

  const auto m = build_mesh(fixtures::square_grid(7, 9), 2.0);
  const auto q = build_precision(m, {1.0, 3.0});
  const auto x1 = sample_field(q, 17), x2 = sample_field(q, 17), x3 = sample_field(q, 18);
  CHECK((x1.array() == x2.array()).all());
  CHECK((x1.array() != x3.array()).any());
}

TEST_CASE("sparse Cholesky agrees with dense linear algebra") {
  const SpMat a = random_spd(60, 4);
  const Eigen::MatrixXd d(a);
  SparseCholesky chol;
  chol.analyze(a);
  CHECK(chol.analyzed());
  chol.factorize(a);
  Eigen::LLT<Eigen::MatrixXd> llt(d);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  CHECK(chol.log_det() == doctest::Approx(logdet).epsilon(1e-12));

  Rng rng(5);
  std::normal_distribution<double> z;
  Eigen::VectorXd b(60);
  for (auto& v : b) v = z(rng);
  CHECK((chol.solve(b) - llt.solve(b)).norm() < 1e-12 * llt.solve(b).norm());
  const Eigen::VectorXd inv_diag = d.inverse().diagonal();
  CHECK((chol.inverse_diagonal() - inv_diag).cwiseAbs().maxCoeff() < 1e-12);
  // b' A^{-1} b through the half solve, and u'u = x'Ax for x = half_solve_t(u)
  CHECK(chol.half_solve(b).squaredNorm() == doctest::Approx(b.dot(llt.solve(b))).epsilon(1e-12));
  const Eigen::VectorXd x = chol.half_solve_t(b);
  CHECK(x.dot(d * x) == doctest::Approx(b.squaredNorm()).epsilon(1e-12));

  // refactorize with new values on the same pattern
  SpMat a2 = a;
  a2.diagonal().array() += 1.0;
  chol.factorize(a2);
  const Eigen::VectorXd direct = Eigen::MatrixXd(a2).llt().solve(b);
  CHECK((chol.solve(b) - direct).norm() < 1e-12 * direct.norm());
}

TEST_CASE("factorization failure names the matrix") {
  SpMat a(2, 2);
  a.insert(0, 0) = 1.0;
  a.insert(1, 1) = -1.0;
  SparseCholesky chol;
  try {
    chol.factorize(a, "test precision");
    FAIL("expected failure");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("test precision") != std::string::npos);
  }
}

TEST_CASE("cached Matern field matches direct assembly") {
  const auto m = build_mesh(fixtures::square_grid(12, 10), 4.0);
  MaternField field(m);
  for (MaternHyper h : {MaternHyper{1.0, 5.0}, MaternHyper{0.3, 12.0}, MaternHyper{2.0, 2.0}}) {
    double logdet = 0;
    const auto cached = field.precision(h, &logdet);
    const auto direct = build_precision(m, h);
    CHECK((Eigen::MatrixXd(cached.matrix) - Eigen::MatrixXd(direct.matrix)).cwiseAbs().maxCoeff() <
          1e-12 * Eigen::MatrixXd(direct.matrix).cwiseAbs().maxCoeff());
    SparseCholesky chol;
    chol.factorize(direct.matrix);
    CHECK(logdet == doctest::Approx(chol.log_det()).epsilon(1e-10));
  }
}
