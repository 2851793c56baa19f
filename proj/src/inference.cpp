#include "lgcpcv/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "lgcpcv/rng.hpp"
#include "lgcpcv/text.hpp"

namespace lgcpcv {

namespace {

// lambda is floored at 1e-300 before taking logs
constexpr double kMinLogIntensity = -690.7755278982137;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double poisson_term(double count, double weight, double log_weight, double eta) {
  return count * (log_weight + std::max(eta, kMinLogIntensity)) - weight * std::exp(eta) - std::lgamma(count + 1.0);
}

}  // namespace

// ---------------------------------------------------------------------------
// Likelihood

double CampaignCounts::total() const { return std::accumulate(counts.begin(), counts.end(), 0.0); }

double GriddedLikelihood::total_count() const {
  double s = 0.0;
  for (const auto& c : campaigns) s += c.total();
  return s;
}

GriddedLikelihood bin_points(const PointPattern& pattern, const std::vector<QuadratureScheme>& quadrature) {
  if (quadrature.empty()) throw UsageError("bin_points needs at least one campaign");
  GriddedLikelihood lik;
  lik.grid = quadrature.front().domain.grid;
  std::vector<std::vector<int>> slot(quadrature.size());
  for (std::size_t t = 0; t < quadrature.size(); ++t) {
    const auto& q = quadrature[t];
    if (!q.domain.grid.same_as(lik.grid)) throw UsageError("campaign quadratures must share one grid");
    CampaignCounts cc;
    cc.campaign = static_cast<int>(t + 1);
    cc.cells = q.cells;
    cc.weights = q.weights;
    cc.counts.assign(q.size(), 0.0);
    slot[t].assign(lik.grid.size(), -1);
    for (std::size_t k = 0; k < q.size(); ++k) slot[t][q.cells[k]] = static_cast<int>(k);
    lik.campaigns.push_back(std::move(cc));
  }
  std::vector<std::size_t> bad;
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    const auto& p = pattern.points[i];
    if (p.campaign < 1 || p.campaign > static_cast<int>(quadrature.size())) {
      bad.push_back(i + 1);
      continue;
    }
    const auto t = static_cast<std::size_t>(p.campaign - 1);
    auto cell = lik.grid.cell_at(p.x, p.y);
    if (!cell || slot[t][*cell] < 0) {
      bad.push_back(i + 1);
      continue;
    }
    lik.campaigns[t].counts[static_cast<std::size_t>(slot[t][*cell])] += 1.0;
  }
  if (!bad.empty()) {
    std::ostringstream msg;
    msg << bad.size() << " point(s) outside their campaign domain, rows:";
    for (std::size_t i = 0; i < std::min<std::size_t>(bad.size(), 20); ++i) msg << ' ' << bad[i];
    if (bad.size() > 20) msg << " ...";
    throw UsageError(msg.str());
  }
  return lik;
}

double poisson_loglik(const GriddedLikelihood& lik, const EffectVector& effects, const Design& design) {
  effects.validate(design);
  const double gamma = design.include_effort ? effects.gamma : 0.0;
  double ll = 0.0;
  for (const auto& cc : lik.campaigns) {
    const double shift = effects.mu0 + effects.campaign_effect(cc.campaign);
    for (std::size_t q = 0; q < cc.cells.size(); ++q) {
      const auto cell = cc.cells[q];
      const double eta = shift + gamma * design.z[cell] + design.linear(cell, effects.beta) +
                         effects.w[static_cast<Eigen::Index>(cell)];
      ll += poisson_term(cc.counts[q], cc.weights[q], std::log(cc.weights[q]), eta);
    }
  }
  return ll;
}

MeshLattice fit_mesh(const GridGeometry& grid, const ModelSpec& spec, const InferenceOptions& options) {
  return build_mesh(grid, options.mesh_halo < 0 ? spec.prior.pc.rho0 : options.mesh_halo);
}

// ---------------------------------------------------------------------------
// Latent Gaussian model

struct LatentModel::Impl {
  const GriddedLikelihood& lik;
  const Design& design;
  ModelSpec spec;
  MaternField field;

  Eigen::Index nw = 0;      // mesh nodes
  Eigen::Index nf = 0;      // fixed block: mu0, beta, gamma, mu_t
  Eigen::Index n_beta = 0;
  bool effort = false;
  Eigen::Index n_camp = 0;  // campaign effects in the latent vector

  std::vector<Eigen::Index> obs_node;
  Eigen::VectorXd obs_count, obs_weight, obs_logw;
  Eigen::VectorXd obs_shift;  // half the predictor variance under the variational correction, else 0
  double lgamma_sum = 0.0;
  Eigen::MatrixXd features;  // n_obs x nf

  Eigen::VectorXd theta;
  MaternHyper hyper;
  double campaign_precision = 1.0;
  SparsePrecision qw;
  double logdet_qw = 0.0;
  Eigen::VectorXd prior_prec;  // diagonal prior precision of the fixed block
  double log_hyper_prior = 0.0;

  SparseCholesky chol;
  std::vector<Eigen::Index> diag_pos;
  SpMat hww;
  Eigen::MatrixXd u;  // L^{-1} P B
  Eigen::LLT<Eigen::MatrixXd> schur;
  Eigen::VectorXd mode;

  Impl(const GriddedLikelihood& l, const Design& d, const ModelSpec& s, MeshLattice mesh)
      : lik(l), design(d), spec(s), field(std::move(mesh)) {}

  Eigen::VectorXd eta(const Eigen::VectorXd& x) const {
    Eigen::VectorXd e = features * x.tail(nf);
    for (Eigen::Index o = 0; o < e.size(); ++o) e[o] += x[obs_node[static_cast<std::size_t>(o)]];
    return e;
  }

  double loglik(const Eigen::VectorXd& e) const {
    double ll = -lgamma_sum;
    for (Eigen::Index o = 0; o < e.size(); ++o)
      ll += obs_count[o] * (obs_logw[o] + std::max(e[o], kMinLogIntensity)) - obs_weight[o] * std::exp(e[o] + obs_shift[o]);
    return ll;
  }

  double quad(const Eigen::VectorXd& x) const {
    const auto w = x.head(nw);
    const auto f = x.tail(nf);
    return w.dot(qw.matrix * w) + (prior_prec.array() * f.array().square()).sum();
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& x, const Eigen::VectorXd& e) const {
    Eigen::VectorXd r(e.size());
    for (Eigen::Index o = 0; o < e.size(); ++o) r[o] = obs_count[o] - obs_weight[o] * std::exp(e[o] + obs_shift[o]);
    Eigen::VectorXd g(nw + nf);
    g.head(nw) = -(qw.matrix * x.head(nw));
    for (Eigen::Index o = 0; o < r.size(); ++o) g[obs_node[static_cast<std::size_t>(o)]] += r[o];
    g.tail(nf) = features.transpose() * r - prior_prec.cwiseProduct(x.tail(nf));
    return g;
  }

  // Factorises the negative Hessian at latent point with linear predictor `e`.
  void factorize(const Eigen::VectorXd& e) {
    Eigen::VectorXd d(e.size());
    for (Eigen::Index o = 0; o < e.size(); ++o) d[o] = obs_weight[o] * std::exp(e[o] + obs_shift[o]);
    hww = qw.matrix;
    double* values = hww.valuePtr();
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(nw, nf);
    for (Eigen::Index o = 0; o < d.size(); ++o) {
      const auto node = obs_node[static_cast<std::size_t>(o)];
      values[diag_pos[static_cast<std::size_t>(node)]] += d[o];
      b.row(node) += d[o] * features.row(o);
    }
    Eigen::MatrixXd c = features.transpose() * d.asDiagonal() * features;
    c.diagonal() += prior_prec;
    if (!chol.analyzed()) chol.analyze(hww);
    chol.factorize(hww, "latent Hessian");
    u.resize(nw, nf);
    for (Eigen::Index j = 0; j < nf; ++j) u.col(j) = chol.half_solve(b.col(j));
    Eigen::MatrixXd s = c - u.transpose() * u;
    schur.compute(s);
    if (schur.info() != Eigen::Success)
      throw std::runtime_error("Cholesky factorization failed: fixed-effect Schur complement is not positive definite");
  }

  double log_det_hessian() const {
    double s = chol.log_det();
    const Eigen::MatrixXd& l = schur.matrixLLT();
    for (Eigen::Index i = 0; i < l.rows(); ++i) s += 2.0 * std::log(l(i, i));
    return s;
  }

  Eigen::VectorXd newton_step(const Eigen::VectorXd& g) const {
    Eigen::VectorXd y = chol.half_solve(g.head(nw));
    Eigen::VectorXd df = schur.solve(g.tail(nf) - u.transpose() * y);
    Eigen::VectorXd step(nw + nf);
    step.head(nw) = chol.half_solve_t(y - u * df);
    step.tail(nf) = df;
    return step;
  }
};

LatentModel::LatentModel(const GriddedLikelihood& lik, const Design& design, const ModelSpec& spec, MeshLattice mesh)
    : impl_(std::make_unique<Impl>(lik, design, spec, std::move(mesh))) {
  auto& m = *impl_;
  if (!lik.grid.same_as(design.grid) || !m.field.mesh().grid.same_as(design.grid))
    throw UsageError("likelihood, design and mesh must share one grid");
  if (lik.n_campaigns() != spec.n_campaigns)
    throw UsageError("model expects " + std::to_string(spec.n_campaigns) + " campaigns, data has " +
                     std::to_string(lik.n_campaigns()));
  m.nw = static_cast<Eigen::Index>(m.field.mesh().size());
  m.n_beta = static_cast<Eigen::Index>(design.n_covariates());
  m.effort = design.include_effort;
  m.n_camp = spec.has_campaign_effects() ? spec.n_campaigns : 0;
  m.nf = 1 + m.n_beta + (m.effort ? 1 : 0) + m.n_camp;

  std::size_t n_obs = 0;
  for (const auto& cc : lik.campaigns) n_obs += cc.cells.size();
  m.obs_node.reserve(n_obs);
  m.obs_count.resize(static_cast<Eigen::Index>(n_obs));
  m.obs_weight.resize(static_cast<Eigen::Index>(n_obs));
  m.obs_logw.resize(static_cast<Eigen::Index>(n_obs));
  m.obs_shift.setZero(static_cast<Eigen::Index>(n_obs));
  m.features.setZero(static_cast<Eigen::Index>(n_obs), m.nf);
  Eigen::Index o = 0;
  for (const auto& cc : lik.campaigns) {
    for (std::size_t q = 0; q < cc.cells.size(); ++q, ++o) {
      const auto cell = cc.cells[q];
      m.obs_node.push_back(static_cast<Eigen::Index>(m.field.mesh().node_of_cell(cell)));
      m.obs_count[o] = cc.counts[q];
      m.obs_weight[o] = cc.weights[q];
      m.obs_logw[o] = std::log(cc.weights[q]);
      m.lgamma_sum += std::lgamma(cc.counts[q] + 1.0);
      m.features(o, 0) = 1.0;
      for (Eigen::Index j = 0; j < m.n_beta; ++j)
        m.features(o, 1 + j) = design.x(static_cast<Eigen::Index>(cell), j);
      Eigen::Index col = 1 + m.n_beta;
      if (m.effort) m.features(o, col++) = design.z[cell];
      if (m.n_camp > 0) m.features(o, col + cc.campaign - 1) = 1.0;
    }
  }
}

LatentModel::~LatentModel() = default;

Eigen::Index LatentModel::n_field() const { return impl_->nw; }
Eigen::Index LatentModel::n_fixed() const { return impl_->nf; }
Eigen::Index LatentModel::dim() const { return impl_->nw + impl_->nf; }
int LatentModel::n_hyper() const { return impl_->n_camp > 0 ? 3 : 2; }
const Eigen::VectorXd& LatentModel::hyper() const { return impl_->theta; }
double LatentModel::log_hyper_prior() const { return impl_->log_hyper_prior; }

void LatentModel::set_hyper(const Eigen::VectorXd& theta) {
  auto& m = *impl_;
  if (theta.size() != n_hyper()) throw UsageError("hyperparameter vector has the wrong length");
  if (!theta.allFinite()) throw UsageError("hyperparameters must be finite");
  m.theta = theta;
  m.obs_shift.setZero();
  m.hyper = {std::exp(theta[0]), std::exp(theta[1])};
  m.campaign_precision = m.n_camp > 0 ? std::exp(theta[2]) : 1.0;
  m.qw = m.field.precision(m.hyper, &m.logdet_qw);
  if (m.diag_pos.empty()) {
    m.diag_pos.resize(static_cast<std::size_t>(m.nw));
    for (Eigen::Index j = 0; j < m.qw.matrix.outerSize(); ++j) {
      for (SpMat::InnerIterator it(m.qw.matrix, j); it; ++it)
        if (it.row() == j) m.diag_pos[static_cast<std::size_t>(j)] = &it.valueRef() - m.qw.matrix.valuePtr();
    }
  }
  m.prior_prec.setConstant(m.nf, m.spec.prior.fixed_precision);
  if (m.n_camp > 0) m.prior_prec.tail(m.n_camp).setConstant(m.campaign_precision);

  const auto& pc = m.spec.prior.pc;
  m.log_hyper_prior = pc_sd_logdensity(m.hyper.sigma, pc) + theta[0] + pc_range_logdensity(m.hyper.range, pc) + theta[1];
  if (m.n_camp > 0)
    m.log_hyper_prior +=
        gamma_logdensity(m.campaign_precision, m.spec.prior.campaign_shape, m.spec.prior.campaign_rate) + theta[2];
}

double LatentModel::objective(const Eigen::VectorXd& x) const {
  return impl_->loglik(impl_->eta(x)) - 0.5 * impl_->quad(x);
}

Eigen::VectorXd LatentModel::gradient(const Eigen::VectorXd& x) const { return impl_->gradient(x, impl_->eta(x)); }

Eigen::VectorXd LatentModel::initial_latent() const {
  const auto& m = *impl_;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(dim());
  const double area = m.obs_weight.sum();
  x[m.nw] = std::log((m.obs_count.sum() + 0.5) / area);
  return x;
}

LaplacePoint LatentModel::optimize(const Eigen::VectorXd& start, const InferenceOptions& options) {
  auto& m = *impl_;
  if (m.theta.size() == 0) throw UsageError("set_hyper must be called before optimize");
  if (start.size() != dim()) throw UsageError("latent start vector has the wrong length");
  Eigen::VectorXd x = start;
  Eigen::VectorXd e = m.eta(x);
  double f = m.loglik(e) - 0.5 * m.quad(x);
  LaplacePoint out;
  out.theta = m.theta;
  for (int it = 0;; ++it) {
    const Eigen::VectorXd g = m.gradient(x, e);
    const double gnorm = g.lpNorm<Eigen::Infinity>();
    m.factorize(e);
    bool converged = gnorm < options.newton_tol;
    if (!converged) {
      if (it >= options.max_newton) {
        std::ostringstream msg;
        msg << "Newton iteration did not converge after " << options.max_newton
            << " iterations (gradient max-norm " << gnorm << ")";
        throw std::runtime_error(msg.str());
      }
      const Eigen::VectorXd step = m.newton_step(g);
      double t = 1.0;
      bool accepted = false;
      for (int halving = 0; halving < 50; ++halving, t *= 0.5) {
        Eigen::VectorXd xn = x + t * step;
        Eigen::VectorXd en = m.eta(xn);
        const double fn = m.loglik(en) - 0.5 * m.quad(xn);
        if (std::isfinite(fn) && fn >= f - 1e-12 * (1.0 + std::abs(f))) {
          x = std::move(xn);
          e = std::move(en);
          f = fn;
          accepted = true;
          break;
        }
      }
      if (!accepted) {
        // the objective no longer improves at double precision
        if (gnorm > 1e3 * options.newton_tol) {
          std::ostringstream msg;
          msg << "Newton line search stalled (gradient max-norm " << gnorm << ")";
          throw std::runtime_error(msg.str());
        }
        converged = true;
      }
    }
    if (converged) {
      out.iterations = it;
      out.gradient_norm = gnorm;
      out.mode = x;
      m.mode = x;
      out.log_marginal = m.log_hyper_prior + 0.5 * (m.logdet_qw + m.prior_prec.array().log().sum()) + f -
                         0.5 * m.log_det_hessian();
      return out;
    }
  }
}

Eigen::VectorXd LatentModel::sample(const Eigen::VectorXd& z) const {
  const auto& m = *impl_;
  if (z.size() != dim()) throw UsageError("normal vector has the wrong length");
  Eigen::VectorXd xf = m.schur.matrixU().solve(z.tail(m.nf));
  Eigen::VectorXd out(dim());
  out.head(m.nw) = m.chol.half_solve_t(z.head(m.nw) - m.u * xf);
  out.tail(m.nf) = xf;
  return m.mode + out;
}

Eigen::VectorXd LatentModel::predictor_variance() const {
  const auto& m = *impl_;
  const Eigen::VectorXd field_var = m.chol.inverse_diagonal();
  Eigen::MatrixXd g(m.nw, m.nf);  // A^{-1} B
  for (Eigen::Index j = 0; j < m.nf; ++j) g.col(j) = m.chol.half_solve_t(m.u.col(j));
  const Eigen::MatrixXd& ls = m.schur.matrixLLT();
  Eigen::VectorXd out(static_cast<Eigen::Index>(m.obs_node.size()));
  for (Eigen::Index o = 0; o < out.size(); ++o) {
    const auto node = m.obs_node[static_cast<std::size_t>(o)];
    Eigen::VectorXd r = (m.features.row(o) - g.row(node)).transpose();
    const Eigen::VectorXd y = ls.triangularView<Eigen::Lower>().solve(r);
    out[o] = field_var[node] + y.squaredNorm();
  }
  return out;
}

Eigen::VectorXd LatentModel::predict_mode(const Eigen::VectorXd& theta) {
  auto& m = *impl_;
  if (m.mode.size() == 0) throw UsageError("optimize must be called before predict_mode");
  if (theta.size() != n_hyper() || !theta.allFinite()) throw UsageError("invalid hyperparameter vector");
  // The gradient at the old mode is zero under the old prior, so under the
  // new one only the prior terms differ.
  const SpMat q = m.field.precision({std::exp(theta[0]), std::exp(theta[1])}, nullptr).matrix;
  Eigen::VectorXd g(dim());
  g.head(m.nw) = m.qw.matrix * m.mode.head(m.nw) - q * m.mode.head(m.nw);
  g.tail(m.nf).setZero();
  if (m.n_camp > 0)
    g.tail(m.n_camp) = (m.campaign_precision - std::exp(theta[2])) * m.mode.tail(m.n_camp);
  return m.mode + m.newton_step(g);
}

void LatentModel::refine_variational(const InferenceOptions& options) {
  auto& m = *impl_;
  if (m.mode.size() == 0) throw UsageError("optimize must be called before refine_variational");
  // Gaussian variational fixed point: mean solves the score equations with
  // E[exp(eta)] = exp(m_eta + v/2) and the precision is the Hessian there.
  for (int step = 0; step < options.variational_steps; ++step) {
    m.obs_shift = 0.5 * predictor_variance();
    optimize(m.mode, options);
  }
}

EffectVector LatentModel::to_effects(const Eigen::VectorXd& x) const {
  const auto& m = *impl_;
  EffectVector ev;
  Eigen::Index k = m.nw;
  ev.mu0 = x[k++];
  ev.beta = x.segment(k, m.n_beta);
  k += m.n_beta;
  ev.gamma = m.effort ? x[k++] : 0.0;
  ev.mu_t = x.segment(k, m.n_camp);
  const auto& mesh = m.field.mesh();
  ev.w.resize(static_cast<Eigen::Index>(mesh.grid.size()));
  for (std::size_t c = 0; c < mesh.grid.size(); ++c)
    ev.w[static_cast<Eigen::Index>(c)] = x[static_cast<Eigen::Index>(mesh.node_of_cell(c))];
  ev.hyper = m.hyper;
  ev.tau2 = m.n_camp > 0 ? 1.0 / m.campaign_precision : 1.0;
  return ev;
}

// ---------------------------------------------------------------------------
// Fitting

namespace {

struct Evaluation {
  LaplacePoint point;
  bool ok = false;
};

Evaluation evaluate(LatentModel& model, const Eigen::VectorXd& theta, const Eigen::VectorXd& start,
                    const InferenceOptions& options, FitDiagnostics& diag,
                    const Eigen::VectorXd* guess = nullptr) {
  Evaluation ev;
  ++diag.hyper_evaluations;
  try {
    model.set_hyper(theta);
    const bool use_guess = guess && guess->allFinite() && model.objective(*guess) > model.objective(start);
    ev.point = model.optimize(use_guess ? *guess : start, options);
    ev.ok = std::isfinite(ev.point.log_marginal);
    diag.newton_iterations += ev.point.iterations;
  } catch (const std::runtime_error&) {
    ev.ok = false;
  }
  if (!ev.ok) ev.point.log_marginal = kNegInf;
  ev.point.theta = theta;
  return ev;
}

Eigen::VectorXd default_theta(const ModelSpec& spec) {
  Eigen::VectorXd theta(spec.has_campaign_effects() ? 3 : 2);
  theta[0] = std::log(spec.prior.pc.sigma0);
  theta[1] = std::log(spec.prior.pc.rho0);
  if (theta.size() == 3) theta[2] = 0.0;
  return theta;
}

// Leaves the model factorised at `center`, as predict_mode needs.
void restore(LatentModel& model, const Evaluation& center, const InferenceOptions& options) {
  if (model.hyper().size() == center.point.theta.size() && model.hyper() == center.point.theta) return;
  model.set_hyper(center.point.theta);
  model.optimize(center.point.mode, options);
}

Evaluation evaluate_near(LatentModel& model, const Evaluation& center, const Eigen::VectorXd& theta,
                         const Eigen::VectorXd& guess, const InferenceOptions& options, FitDiagnostics& diag) {
  return evaluate(model, theta, center.point.mode, options, diag, &guess);
}

// Finite-difference gradient and Hessian of the log marginal around `center`.
// With `axes_only` the mixed second derivatives in `hess` are left as they are.
void stencil(LatentModel& model, const Evaluation& center, double h, const InferenceOptions& options,
             FitDiagnostics& diag, Eigen::VectorXd& grad, Eigen::MatrixXd& hess, bool axes_only = false) {
  const auto d = center.point.theta.size();
  const double f0 = center.point.log_marginal;
  std::vector<Eigen::VectorXd> deltas;
  for (Eigen::Index i = 0; i < d; ++i) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(d);
    e[i] = h;
    deltas.push_back(e);
    deltas.push_back(-e);
  }
  if (!axes_only) {
    for (Eigen::Index i = 0; i < d; ++i) {
      for (Eigen::Index j = i + 1; j < d; ++j) {
        Eigen::VectorXd pp = Eigen::VectorXd::Zero(d);
        pp[i] = h;
        pp[j] = h;
        Eigen::VectorXd pm = pp;
        pm[j] = -h;
        for (const auto& v : {pp, pm, Eigen::VectorXd(-pm), Eigen::VectorXd(-pp)}) deltas.push_back(v);
      }
    }
  }
  restore(model, center, options);
  std::vector<Eigen::VectorXd> guesses;
  for (const auto& v : deltas) guesses.push_back(model.predict_mode(center.point.theta + v));
  std::vector<double> f(deltas.size());
  for (std::size_t k = 0; k < deltas.size(); ++k) {
    auto ev = evaluate_near(model, center, center.point.theta + deltas[k], guesses[k], options, diag);
    if (!ev.ok) throw std::runtime_error("Laplace approximation failed next to the hyperparameter mode");
    f[k] = ev.point.log_marginal;
  }
  grad.resize(d);
  if (hess.rows() != d) hess.setZero(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const double fp = f[static_cast<std::size_t>(2 * i)], fm = f[static_cast<std::size_t>(2 * i + 1)];
    grad[i] = (fp - fm) / (2 * h);
    hess(i, i) = (fp - 2 * f0 + fm) / (h * h);
  }
  if (axes_only) return;
  std::size_t k = static_cast<std::size_t>(2 * d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = i + 1; j < d; ++j, k += 4) {
      const double v = (f[k] - f[k + 1] - f[k + 2] + f[k + 3]) / (4 * h * h);
      hess(i, j) = hess(j, i) = v;
    }
  }
}

// Smallest change to the off-diagonal of `hess` that makes it consistent with
// the gradient change `dg` over the step `s`, given fresh diagonal entries.
void secant_cross_terms(Eigen::MatrixXd& hess, const Eigen::VectorXd& s, const Eigen::VectorXd& dg) {
  const auto d = s.size();
  if (d < 2) return;
  const Eigen::VectorXd target = dg - hess * s;
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(d, d * (d - 1) / 2);
  Eigen::Index p = 0;
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = i + 1; j < d; ++j, ++p) {
      m(i, p) = s[j];
      m(j, p) = s[i];
    }
  }
  const Eigen::VectorXd e = m.completeOrthogonalDecomposition().solve(target);
  p = 0;
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = i + 1; j < d; ++j, ++p) {
      hess(i, j) += e[p];
      hess(j, i) += e[p];
    }
  }
}

struct ModeSearch {
  Evaluation center;
  Eigen::MatrixXd hess;
};

// Newton ascent on the Laplace log marginal with finite-difference
// derivatives.  The mixed derivatives come from a full stencil, refreshed only
// after the centre has moved far from where it was taken.
ModeSearch search_mode(LatentModel& model, const ModelSpec& spec, const InferenceOptions& options,
                       FitDiagnostics& diag) {
  const int d = model.n_hyper();
  Eigen::VectorXd theta = options.theta_start ? *options.theta_start : default_theta(spec);
  if (theta.size() != d) theta = default_theta(spec);
  ModeSearch out;
  out.center = evaluate(model, theta, model.initial_latent(), options, diag);
  if (!out.center.ok) throw std::runtime_error("Laplace approximation failed at the starting hyperparameters");
  auto& center = out.center;
  auto& hess = out.hess;

  Eigen::VectorXd grad;
  stencil(model, center, options.fd_step, options, diag, grad, hess);
  Eigen::VectorXd anchor = center.point.theta;
  Eigen::VectorXd previous = anchor;
  for (int iter = 0; iter < options.max_outer; ++iter) {
    ++diag.outer_iterations;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(-hess);
    Eigen::VectorXd curv = eig.eigenvalues().cwiseMax(0.05);
    Eigen::VectorXd step = eig.eigenvectors() * (eig.eigenvectors().transpose() * grad).cwiseQuotient(curv);
    const double big = step.lpNorm<Eigen::Infinity>();
    if (big > 1.0) step /= big;
    if (step.lpNorm<Eigen::Infinity>() < options.outer_tol) break;
    bool moved = false;
    for (int halving = 0; halving < 6; ++halving, step *= 0.5) {
      restore(model, center, options);
      const Eigen::VectorXd guess = model.predict_mode(center.point.theta + step);
      auto cand = evaluate_near(model, center, center.point.theta + step, guess, options, diag);
      if (cand.ok && cand.point.log_marginal > center.point.log_marginal) {
        center = std::move(cand);
        moved = true;
        break;
      }
    }
    if (!moved) break;
    const bool far = (center.point.theta - anchor).lpNorm<Eigen::Infinity>() > 0.5;
    const Eigen::VectorXd moved_by = center.point.theta - previous;
    const Eigen::VectorXd old_grad = grad;
    stencil(model, center, options.fd_step, options, diag, grad, hess, !far);
    if (far) anchor = center.point.theta;
    else secant_cross_terms(hess, moved_by, grad - old_grad);
    previous = center.point.theta;
  }
  if ((center.point.theta - anchor).lpNorm<Eigen::Infinity>() > 0.25) {
    stencil(model, center, options.fd_step, options, diag, grad, hess);
  }
  return out;
}

}  // namespace

Eigen::VectorXd find_hyper_mode(const GriddedLikelihood& lik, const ModelSpec& spec, const Design& design,
                                const InferenceOptions& options) {
  if (lik.total_count() <= 0) throw UsageError("cannot fit a model to a pattern without points");
  LatentModel model(lik, design, spec, fit_mesh(design.grid, spec, options));
  FitDiagnostics diag;
  return search_mode(model, spec, options, diag).center.point.theta;
}

FitResult fit(const GriddedLikelihood& lik, const ModelSpec& spec, const Design& design,
              const InferenceOptions& options, std::uint64_t seed) {
  if (options.n_draws < 1) throw UsageError("at least one posterior draw is required");
  if (lik.total_count() <= 0) throw UsageError("cannot fit a model to a pattern without points");
  LatentModel model(lik, design, spec, fit_mesh(design.grid, spec, options));
  FitDiagnostics diag;
  const int d = model.n_hyper();
  ModeSearch found = search_mode(model, spec, options, diag);
  const Evaluation& center = found.center;
  const Eigen::MatrixXd& hess = found.hess;

  // 3-point Gauss-Hermite design per axis in standardised hyperparameter space,
  // reweighted by the Laplace marginal.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(-hess);
  Eigen::VectorXd scale(d);
  for (int i = 0; i < d; ++i) {
    const double lam = eig.eigenvalues()[i];
    const double cap = options.max_hyper_sd;
    scale[i] = lam > 1.0 / (cap * cap) ? 1.0 / std::sqrt(lam) : cap;
  }
  const double node = std::sqrt(3.0);
  const double gh_weight[3] = {1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0};
  const double gh_node[3] = {-node, 0.0, node};
  int n_points = 1;
  for (int i = 0; i < d; ++i) n_points *= 3;

  PosteriorDraws post;
  post.theta_mode = center.point.theta;
  std::vector<Eigen::VectorXd> zs, guesses;
  std::vector<double> log_gh;
  restore(model, center, options);
  for (int k = 0; k < n_points; ++k) {
    Eigen::VectorXd z(d);
    double lw = 0.0;
    int rem = k;
    for (int i = 0; i < d; ++i) {
      z[i] = gh_node[rem % 3];
      lw += std::log(gh_weight[rem % 3]);
      rem /= 3;
    }
    zs.push_back(z);
    log_gh.push_back(lw);
    guesses.push_back(model.predict_mode(center.point.theta + eig.eigenvectors() * scale.cwiseProduct(z)));
  }
  std::vector<Eigen::VectorXd> modes;
  std::vector<double> logw;
  for (int k = 0; k < n_points; ++k) {
    const Eigen::VectorXd& z = zs[static_cast<std::size_t>(k)];
    const double lw = log_gh[static_cast<std::size_t>(k)];
    Evaluation ev;
    if (z.isZero()) {
      ev = center;
    } else {
      ev = evaluate_near(model, center, center.point.theta + eig.eigenvectors() * scale.cwiseProduct(z),
                         guesses[static_cast<std::size_t>(k)], options, diag);
    }
    HyperPoint hp;
    hp.theta = ev.point.theta;
    hp.sigma = std::exp(hp.theta[0]);
    hp.range = std::exp(hp.theta[1]);
    hp.tau2 = d == 3 ? std::exp(-hp.theta[2]) : std::numeric_limits<double>::quiet_NaN();
    hp.log_marginal = ev.point.log_marginal;
    post.hyper_grid.push_back(hp);
    modes.push_back(ev.ok ? ev.point.mode : Eigen::VectorXd());
    logw.push_back(ev.ok ? lw + ev.point.log_marginal - center.point.log_marginal + 0.5 * z.squaredNorm() : kNegInf);
    if (ev.ok) diag.max_gradient_norm = std::max(diag.max_gradient_norm, ev.point.gradient_norm);
  }
  const double lmax = *std::max_element(logw.begin(), logw.end());
  double wsum = 0.0;
  for (std::size_t k = 0; k < logw.size(); ++k) {
    post.hyper_grid[k].weight = std::exp(logw[k] - lmax);
    wsum += post.hyper_grid[k].weight;
  }
  for (auto& hp : post.hyper_grid) hp.weight /= wsum;

  // Draws: hyperparameter point by weight, then the Gaussian approximation there.
  Rng pick(derive_seed(seed, {1}));
  post.hyper_index.resize(options.n_draws);
  std::vector<double> cum(post.hyper_grid.size());
  double acc = 0.0;
  for (std::size_t k = 0; k < cum.size(); ++k) cum[k] = (acc += post.hyper_grid[k].weight);
  for (auto& idx : post.hyper_index) {
    const double u = uniform01(pick) * acc;
    idx = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
    idx = std::min(idx, cum.size() - 1);
    while (post.hyper_grid[idx].weight <= 0 && idx > 0) --idx;
  }
  post.draws.resize(options.n_draws);
  for (std::size_t k = 0; k < post.hyper_grid.size(); ++k) {
    if (std::find(post.hyper_index.begin(), post.hyper_index.end(), k) == post.hyper_index.end()) continue;
    model.set_hyper(post.hyper_grid[k].theta);
    model.optimize(modes[k], options);
    model.refine_variational(options);
    Rng rng(derive_seed(seed, {2, k}));
    std::normal_distribution<double> normal;
    Eigen::VectorXd z(model.dim());
    for (std::size_t a = 0; a < options.n_draws; ++a) {
      if (post.hyper_index[a] != k) continue;
      for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal(rng);
      post.draws[a] = model.to_effects(model.sample(z));
    }
  }
  post.diagnostics = diag;

  FitResult result;
  result.draws = std::move(post);
  result.summary = summarize(result.draws, design);
  if (result.draws.size() >= 2) {
    auto dic = compute_dic(result.draws, lik, design);
    result.summary.dic = dic.dic;
    result.summary.mean_deviance = dic.mean_deviance;
    result.summary.p_d = dic.p_d;
  }
  result.field_mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(design.grid.size()));
  for (const auto& ev : result.draws.draws) result.field_mean += ev.w;
  result.field_mean /= static_cast<double>(result.draws.size());
  return result;
}

// ---------------------------------------------------------------------------
// Summaries

DicResult compute_dic(const PosteriorDraws& draws, const GriddedLikelihood& lik, const Design& design) {
  if (draws.size() < 2) throw UsageError("DIC needs at least two posterior draws");
  EffectVector mean = draws.draws.front();
  mean.mu0 = 0;
  mean.gamma = 0;
  mean.beta.setZero();
  mean.mu_t.setZero();
  mean.w.setZero();
  double dbar = 0.0;
  for (const auto& ev : draws.draws) {
    dbar += -2.0 * poisson_loglik(lik, ev, design);
    mean.mu0 += ev.mu0;
    mean.gamma += ev.gamma;
    mean.beta += ev.beta;
    mean.mu_t += ev.mu_t;
    mean.w += ev.w;
  }
  const double n = static_cast<double>(draws.size());
  dbar /= n;
  mean.mu0 /= n;
  mean.gamma /= n;
  mean.beta /= n;
  mean.mu_t /= n;
  mean.w /= n;
  DicResult out;
  out.mean_deviance = dbar;
  out.p_d = dbar - (-2.0 * poisson_loglik(lik, mean, design));
  out.dic = dbar + out.p_d;
  return out;
}

double empirical_quantile(std::vector<double> values, double p) {
  if (values.empty()) throw UsageError("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] + (h - static_cast<double>(lo)) * (values[lo + 1] - values[lo]);
}

ParameterSummary summarize_values(const std::string& name, const std::vector<double>& values) {
  if (values.empty()) throw UsageError("cannot summarise an empty sample");
  ParameterSummary s;
  s.name = name;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.sd = values.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  s.q025 = empirical_quantile(sorted, 0.025);
  s.q50 = empirical_quantile(sorted, 0.5);
  s.q975 = empirical_quantile(sorted, 0.975);
  return s;
}

const ParameterSummary& FitSummary::get(const std::string& name) const {
  for (const auto& p : parameters)
    if (p.name == name) return p;
  throw UsageError("no summary for parameter '" + name + "'");
}

FitSummary summarize(const PosteriorDraws& draws, const Design& design) {
  if (draws.size() < 1) throw UsageError("no draws to summarise");
  FitSummary out;
  auto collect = [&](const std::string& name, auto&& get) {
    std::vector<double> v;
    v.reserve(draws.size());
    for (const auto& ev : draws.draws) v.push_back(get(ev));
    out.parameters.push_back(summarize_values(name, v));
  };
  collect("intercept", [](const EffectVector& ev) { return ev.mu0; });
  for (std::size_t j = 0; j < design.n_covariates(); ++j)
    collect(design.names[j], [j](const EffectVector& ev) { return ev.beta[static_cast<Eigen::Index>(j)]; });
  if (design.include_effort) collect("effort", [](const EffectVector& ev) { return ev.gamma; });
  const auto n_camp = draws.draws.front().mu_t.size();
  for (Eigen::Index t = 0; t < n_camp; ++t)
    collect("campaign " + std::to_string(t + 1), [t](const EffectVector& ev) { return ev.mu_t[t]; });
  if (n_camp > 0) collect("campaign precision", [](const EffectVector& ev) { return 1.0 / ev.tau2; });
  collect("gp range", [](const EffectVector& ev) { return ev.hyper.range; });
  collect("gp sd", [](const EffectVector& ev) { return ev.hyper.sigma; });

  bool any_standardized = false;
  for (std::size_t j = 0; j < design.n_covariates(); ++j) {
    if (!design.standardized[j]) continue;
    any_standardized = true;
    collect(design.names[j] + " (raw scale)", [&design, j](const EffectVector& ev) {
      return ev.beta[static_cast<Eigen::Index>(j)] / design.scale[j];
    });
  }
  if (any_standardized) {
    collect("intercept (raw scale)", [&design](const EffectVector& ev) {
      double v = ev.mu0;
      for (std::size_t j = 0; j < design.n_covariates(); ++j)
        if (design.standardized[j]) v -= ev.beta[static_cast<Eigen::Index>(j)] * design.center[j] / design.scale[j];
      return v;
    });
  }
  return out;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

void write_posterior_summary(const std::filesystem::path& path, const FitSummary& summary) {
  std::ostringstream out;
  out << "parameter,mean,sd,q2.5,q50,q97.5\n";
  for (const auto& p : summary.parameters)
    out << csv_field(p.name) << ',' << text::format_double(p.mean) << ',' << text::format_double(p.sd) << ','
        << text::format_double(p.q025) << ',' << text::format_double(p.q50) << ',' << text::format_double(p.q975)
        << "\n";
  text::write_atomic(path, out.str());
}

void write_field_mean(const std::filesystem::path& path, const GridGeometry& grid, const Eigen::VectorXd& field,
                      const DomainMask& domain) {
  RasterGrid r = RasterGrid::filled(grid, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t c = 0; c < grid.size(); ++c)
    if (domain.contains_cell(c)) r.values[c] = field[static_cast<Eigen::Index>(c)];
  write_raster(path, r);
}

}  // namespace lgcpcv
