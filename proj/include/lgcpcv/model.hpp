#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lgcpcv/geodata.hpp"
#include "lgcpcv/gmrf.hpp"

namespace lgcpcv {

/// Aligned covariate layers on one grid.  The habitat raster defines the study
/// domains; `effort_code` marks the habitat whose indicator is z(s).
/// Two coordinate layers, "xcoord" and "ycoord", are always available.
class CovariateStack {
 public:
  CovariateStack(RasterGrid habitat, int effort_code,
                 const std::map<std::string, RasterGrid>& continuous = {});

  const GridGeometry& grid() const { return habitat_.geometry; }
  const RasterGrid& habitat() const { return habitat_; }
  int effort_code() const { return effort_code_; }
  const StudyDomains& domains() const { return domains_; }

  bool has(const std::string& name) const;
  bool is_indicator(const std::string& name) const;
  /// Habitat code behind an indicator name (legend label or "habitat:<code>").
  int indicator_code(const std::string& name) const;
  /// Raw per-cell values of a covariate; NaN where missing.
  std::vector<double> column(const std::string& name) const;
  /// z(s): 1 on the effort habitat, 0 elsewhere, NaN outside the study area.
  std::vector<double> effort_indicator() const;
  std::vector<std::string> continuous_names() const;
  std::vector<std::string> indicator_names() const;  // excludes the effort class

 private:
  RasterGrid habitat_;
  int effort_code_;
  std::map<std::string, std::vector<double>> continuous_;
  StudyDomains domains_;
};

struct PriorSpec {
  PcPriorSpec pc;
  double fixed_precision = 0.001;  // Gaussian prior on mu0, beta, gamma
  double campaign_shape = 1.0;     // Gamma prior on the campaign-effect precision
  double campaign_rate = 0.01;
};

struct ModelSpec {
  std::string model_id = "M1";
  std::vector<std::string> covariate_names;
  bool include_effort = true;  // gamma z(s) term
  int n_campaigns = 1;
  PriorSpec prior;

  /// With `require_effort` the effort term must be present, as it is for every
  /// model in a sweep.
  void validate(const CovariateStack& stack, bool require_effort = true) const;
  /// Campaign effects are identifiable only against an intercept when T > 1;
  /// with one campaign the effect is absorbed into mu0.
  bool has_campaign_effects() const { return n_campaigns > 1; }
};

/// One row per candidate; columns are covariate names holding 1/0, plus an
/// optional `model_id` column.
std::vector<ModelSpec> load_model_sweep(const std::filesystem::path& path, const CovariateStack& stack,
                                        const PriorSpec& prior, int n_campaigns);

/// Covariate columns as they enter the linear predictor.  Continuous layers
/// are standardised to zero mean and unit sd over the study domain D.
struct Design {
  GridGeometry grid;
  std::vector<std::string> names;
  std::vector<bool> standardized;
  std::vector<double> center;
  std::vector<double> scale;
  Eigen::MatrixXd x;      // grid.size() x names.size()
  std::vector<double> z;  // effort indicator per cell
  bool include_effort = true;
  int n_campaigns = 1;

  std::size_t n_covariates() const { return names.size(); }
  double linear(std::size_t cell, const Eigen::VectorXd& beta) const;
};

Design build_design(const CovariateStack& stack, const ModelSpec& spec);

struct EffectVector {
  double mu0 = 0.0;
  Eigen::VectorXd beta;
  double gamma = 0.0;
  Eigen::VectorXd mu_t;  // empty when the model has no campaign effects
  Eigen::VectorXd w;     // latent field, one value per grid cell (or mesh node)
  MaternHyper hyper;
  double tau2 = 1.0;

  double campaign_effect(int t) const;
  void validate(const Design& design) const;
};

std::vector<double> log_intensity(const EffectVector& effects, const QuadratureScheme& nodes,
                                  const Design& design, int campaign);

struct IntensityFactors {
  double base = 1.0;      // exp(mu0 + x'beta + w)
  double campaign = 1.0;  // exp(mu_t)
  double effort = 1.0;    // exp(gamma z)

  double product() const { return base * campaign * effort; }
};

IntensityFactors decompose_intensity(const EffectVector& effects, const Design& design,
                                     std::size_t cell, int campaign);

/// Log prior on natural scales: Gaussian fixed effects, N(0, tau2) campaign
/// effects, Gamma(shape, rate) density of the precision 1/tau2 (no log-scale
/// Jacobian), PC prior on (sigma, rho) and the GMRF density of w given
/// `field_precision` whose log-determinant is `field_log_det`.
double log_prior(const EffectVector& effects, const ModelSpec& spec,
                 const SparsePrecision& field_precision, double field_log_det);

/// Same without the latent field term.
double log_prior_parameters(const EffectVector& effects, const ModelSpec& spec);

double gamma_logdensity(double x, double shape, double rate);

}  // namespace lgcpcv
