#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lgcpcv/geodata.hpp"
#include "lgcpcv/gmrf.hpp"
#include "lgcpcv/model.hpp"

namespace lgcpcv {

/// Counts-in-cells data for one campaign.
struct CampaignCounts {
  int campaign = 1;
  std::vector<std::size_t> cells;  // quadrature nodes of the campaign domain
  std::vector<double> counts;      // N_q
  std::vector<double> weights;     // alpha_q

  double total() const;
};

struct GriddedLikelihood {
  GridGeometry grid;
  std::vector<CampaignCounts> campaigns;  // campaign t at index t - 1

  int n_campaigns() const { return static_cast<int>(campaigns.size()); }
  double total_count() const;
};

/// Bins each point into its campaign's quadrature cell.  Throws UsageError
/// listing the (1-based) rows of points that fall outside their domain.
GriddedLikelihood bin_points(const PointPattern& pattern, const std::vector<QuadratureScheme>& quadrature);

/// Gridded Poisson log-likelihood sum_{t,q} [N log(alpha lambda) - alpha lambda - log N!].
double poisson_loglik(const GriddedLikelihood& lik, const EffectVector& effects, const Design& design);

struct InferenceOptions {
  std::size_t n_draws = 1000;
  int max_newton = 50;
  double newton_tol = 1e-6;
  double mesh_halo = -1.0;  // metres; negative means one prior range (rho0)
  int max_outer = 25;
  double outer_tol = 0.01;   // stop when the hyperparameter step is below this (log units)
  double fd_step = 0.1;      // finite-difference step for the hyperparameter Hessian
  double max_hyper_sd = 1.0; // cap on the standardised grid scale, log units
  int variational_steps = 1; // variational refinements of the latent Gaussian before drawing
  std::optional<Eigen::VectorXd> theta_start;
};

/// Mesh used for a model fit under `options`.
MeshLattice fit_mesh(const GridGeometry& grid, const ModelSpec& spec, const InferenceOptions& options);

/// Result of the inner Newton iteration at one hyperparameter point.
struct LaplacePoint {
  Eigen::VectorXd theta;
  Eigen::VectorXd mode;  // latent mode
  double log_marginal = 0.0;
  int iterations = 0;
  double gradient_norm = 0.0;
};

/// Joint latent posterior for fixed hyperparameters.  The latent vector is
/// [w (mesh nodes) | mu0 | beta | gamma? | mu_t (T > 1 only)].
class LatentModel {
 public:
  LatentModel(const GriddedLikelihood& lik, const Design& design, const ModelSpec& spec, MeshLattice mesh);
  ~LatentModel();

  Eigen::Index n_field() const;
  Eigen::Index n_fixed() const;
  Eigen::Index dim() const;
  int n_hyper() const;

  /// theta = (log sigma, log rho[, log campaign precision]).
  void set_hyper(const Eigen::VectorXd& theta);
  const Eigen::VectorXd& hyper() const;
  double log_hyper_prior() const;

  /// Inner objective: log-likelihood minus the latent quadratic form.
  double objective(const Eigen::VectorXd& x) const;
  Eigen::VectorXd gradient(const Eigen::VectorXd& x) const;
  Eigen::VectorXd initial_latent() const;

  /// Newton with step halving; throws on non-convergence.
  LaplacePoint optimize(const Eigen::VectorXd& start, const InferenceOptions& options);
  /// First-order guess of the latent mode at `theta` from the mode and
  /// Hessian factor of the last optimize call (one chord Newton step).
  Eigen::VectorXd predict_mode(const Eigen::VectorXd& theta);
  /// Variance of the linear predictor at every observation under the current
  /// Gaussian approximation.
  Eigen::VectorXd predictor_variance() const;
  /// Moves the Gaussian approximation at the current hyperparameters to the
  /// variational fixed point (mean and precision); keeps the latent mode
  /// as its starting point.
  void refine_variational(const InferenceOptions& options);
  /// Draws from the current Gaussian approximation.
  Eigen::VectorXd sample(const Eigen::VectorXd& standard_normal) const;

  EffectVector to_effects(const Eigen::VectorXd& x) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct HyperPoint {
  Eigen::VectorXd theta;
  double sigma = 0.0, range = 0.0, tau2 = 0.0;
  double log_marginal = 0.0;
  double weight = 0.0;
};

struct FitDiagnostics {
  int outer_iterations = 0;
  int hyper_evaluations = 0;
  int newton_iterations = 0;
  double max_gradient_norm = 0.0;
};

struct PosteriorDraws {
  std::vector<EffectVector> draws;       // w holds grid-cell values
  std::vector<HyperPoint> hyper_grid;    // weights sum to one
  std::vector<std::size_t> hyper_index;  // grid point behind each draw
  Eigen::VectorXd theta_mode;
  FitDiagnostics diagnostics;

  std::size_t size() const { return draws.size(); }
};

struct ParameterSummary {
  std::string name;
  double mean = 0.0, sd = 0.0, q025 = 0.0, q50 = 0.0, q975 = 0.0;
};

struct FitSummary {
  std::vector<ParameterSummary> parameters;
  double dic = 0.0;
  double mean_deviance = 0.0;
  double p_d = 0.0;

  const ParameterSummary& get(const std::string& name) const;
};

struct FitResult {
  PosteriorDraws draws;
  FitSummary summary;
  Eigen::VectorXd field_mean;  // posterior mean of w per grid cell
};

/// Posterior mode of the hyperparameters under the Laplace approximation.
Eigen::VectorXd find_hyper_mode(const GriddedLikelihood& lik, const ModelSpec& spec, const Design& design,
                                const InferenceOptions& options);

FitResult fit(const GriddedLikelihood& lik, const ModelSpec& spec, const Design& design,
              const InferenceOptions& options, std::uint64_t seed);

struct DicResult {
  double dic = 0.0;
  double mean_deviance = 0.0;
  double p_d = 0.0;
};

DicResult compute_dic(const PosteriorDraws& draws, const GriddedLikelihood& lik, const Design& design);

/// Empirical quantile with linear interpolation between order statistics.
double empirical_quantile(std::vector<double> values, double p);
ParameterSummary summarize_values(const std::string& name, const std::vector<double>& values);
/// Posterior summaries for every fixed effect, campaign effect and hyperparameter.
FitSummary summarize(const PosteriorDraws& draws, const Design& design);

void write_posterior_summary(const std::filesystem::path& path, const FitSummary& summary);
void write_field_mean(const std::filesystem::path& path, const GridGeometry& grid, const Eigen::VectorXd& field,
                      const DomainMask& domain);

}  // namespace lgcpcv
