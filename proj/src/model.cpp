#include "lgcpcv/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "lgcpcv/text.hpp"

namespace lgcpcv {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double normal_logdensity(double x, double precision) {
  return -0.5 * kLog2Pi + 0.5 * std::log(precision) - 0.5 * precision * x * x;
}

}  // namespace

CovariateStack::CovariateStack(RasterGrid habitat, int effort_code,
                               const std::map<std::string, RasterGrid>& continuous)
    : habitat_(std::move(habitat)), effort_code_(effort_code) {
  habitat_.validate();
  domains_ = split_domains(habitat_, effort_code_);
  const auto& g = habitat_.geometry;
  for (const auto& [name, raster] : continuous) {
    if (raster.kind != RasterKind::continuous) throw UsageError("covariate '" + name + "' is not continuous");
    if (!raster.geometry.same_as(g))
      throw UsageError("covariate '" + name + "' is not aligned with the habitat grid");
    if (name == "xcoord" || name == "ycoord") throw UsageError("'" + name + "' is a reserved covariate name");
    continuous_[name] = raster.values;
  }
  std::vector<double> xs(g.size()), ys(g.size());
  for (std::size_t c = 0; c < g.size(); ++c) {
    xs[c] = g.center_x(c);
    ys[c] = g.center_y(c);
  }
  continuous_["xcoord"] = std::move(xs);
  continuous_["ycoord"] = std::move(ys);
  for (const auto& [code, label] : habitat_.legend)
    if (continuous_.count(label)) throw UsageError("habitat label '" + label + "' collides with a covariate");
}

bool CovariateStack::has(const std::string& name) const {
  return continuous_.count(name) || is_indicator(name);
}

bool CovariateStack::is_indicator(const std::string& name) const {
  try {
    indicator_code(name);
    return true;
  } catch (const UsageError&) {
    return false;
  }
}

int CovariateStack::indicator_code(const std::string& name) const {
  for (const auto& [code, label] : habitat_.legend)
    if (label == name) return code;
  if (name.rfind("habitat:", 0) == 0) {
    long long code = 0;
    if (text::to_int(name.substr(8), code) && habitat_.legend.count(static_cast<int>(code)))
      return static_cast<int>(code);
  }
  throw UsageError("unknown habitat class '" + name + "'");
}

std::vector<double> CovariateStack::column(const std::string& name) const {
  if (auto it = continuous_.find(name); it != continuous_.end()) return it->second;
  const int code = indicator_code(name);
  std::vector<double> out(habitat_.values.size());
  for (std::size_t c = 0; c < out.size(); ++c)
    out[c] = habitat_.is_missing(c) ? std::numeric_limits<double>::quiet_NaN()
                                    : (static_cast<int>(habitat_.values[c]) == code ? 1.0 : 0.0);
  return out;
}

std::vector<double> CovariateStack::effort_indicator() const {
  std::vector<double> out(habitat_.values.size());
  for (std::size_t c = 0; c < out.size(); ++c)
    out[c] = habitat_.is_missing(c) ? std::numeric_limits<double>::quiet_NaN()
                                    : (static_cast<int>(habitat_.values[c]) == effort_code_ ? 1.0 : 0.0);
  return out;
}

std::vector<std::string> CovariateStack::continuous_names() const {
  std::vector<std::string> out;
  for (const auto& [name, v] : continuous_) out.push_back(name);
  return out;
}

std::vector<std::string> CovariateStack::indicator_names() const {
  std::vector<std::string> out;
  for (const auto& [code, label] : habitat_.legend)
    if (code != effort_code_) out.push_back(label);
  return out;
}

void ModelSpec::validate(const CovariateStack& stack, bool require_effort) const {
  if (model_id.empty()) throw UsageError("model id must not be empty");
  if (require_effort && !include_effort)
    throw UsageError("model " + model_id + ": the effort habitat term must be included");
  if (n_campaigns < 1) throw UsageError("model " + model_id + ": at least one campaign is required");
  prior.pc.validate();
  if (!(prior.fixed_precision > 0) || !(prior.campaign_shape > 0) || !(prior.campaign_rate > 0))
    throw UsageError("model " + model_id + ": prior precisions and Gamma parameters must be positive");
  std::set<std::string> seen;
  std::size_t indicators = 0;
  for (const auto& name : covariate_names) {
    if (!seen.insert(name).second) throw UsageError("model " + model_id + ": duplicate covariate '" + name + "'");
    if (!stack.has(name)) throw UsageError("model " + model_id + ": unknown covariate '" + name + "'");
    if (stack.is_indicator(name)) {
      if (stack.indicator_code(name) == stack.effort_code())
        throw UsageError("model " + model_id + ": '" + name + "' is the effort habitat, already modelled by gamma");
      ++indicators;
    }
  }
  const std::size_t classes = stack.habitat().legend.size();
  if (indicators + (include_effort ? 1 : 0) + 1 > classes)
    throw UsageError("model " + model_id +
                     ": habitat indicators must leave at least one reference class out");
}

std::vector<ModelSpec> load_model_sweep(const std::filesystem::path& path, const CovariateStack& stack,
                                        const PriorSpec& prior, int n_campaigns) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  int id_col = -1;
  std::vector<ModelSpec> models;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    auto fields = text::split(line, ',');
    if (header.empty()) {
      header = fields;
      for (std::size_t i = 0; i < header.size(); ++i)
        if (text::lower(header[i]) == "model_id") id_col = static_cast<int>(i);
      continue;
    }
    if (fields.size() != header.size())
      throw ParseError(path.string(), lineno, "expected " + std::to_string(header.size()) + " fields");
    ModelSpec spec;
    spec.prior = prior;
    spec.n_campaigns = n_campaigns;
    spec.model_id = id_col >= 0 ? fields[id_col] : "M" + std::to_string(models.size() + 1);
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (static_cast<int>(i) == id_col) continue;
      if (fields[i] == "1") {
        spec.covariate_names.push_back(header[i]);
      } else if (fields[i] != "0") {
        throw ParseError(path.string(), lineno, "inclusion flags must be 0 or 1");
      }
    }
    if (!ids.insert(spec.model_id).second)
      throw ParseError(path.string(), lineno, "duplicate model id '" + spec.model_id + "'");
    try {
      spec.validate(stack);
    } catch (const UsageError& e) {
      throw ParseError(path.string(), lineno, e.what());
    }
    models.push_back(std::move(spec));
  }
  if (models.empty()) throw ParseError(path.string(), lineno, "model sweep lists no models");
  return models;
}

double Design::linear(std::size_t cell, const Eigen::VectorXd& beta) const {
  return names.empty() ? 0.0 : x.row(static_cast<Eigen::Index>(cell)).dot(beta);
}

Design build_design(const CovariateStack& stack, const ModelSpec& spec) {
  spec.validate(stack, false);
  const auto& g = stack.grid();
  const auto& domain = stack.domains().full;
  Design d;
  d.grid = g;
  d.include_effort = spec.include_effort;
  d.n_campaigns = spec.n_campaigns;
  d.names = spec.covariate_names;
  d.x.setZero(static_cast<Eigen::Index>(g.size()), static_cast<Eigen::Index>(d.names.size()));
  for (std::size_t j = 0; j < d.names.size(); ++j) {
    const auto& name = d.names[j];
    auto col = stack.column(name);
    double sum = 0.0, sumsq = 0.0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < g.size(); ++c) {
      if (!domain.contains_cell(c)) continue;
      if (std::isnan(col[c]))
        throw UsageError("covariate '" + name + "' is missing at cell (" + std::to_string(g.row_of(c)) + ", " +
                         std::to_string(g.col_of(c)) + ") inside the study domain");
      sum += col[c];
      sumsq += col[c] * col[c];
      ++n;
    }
    const bool standardize = !stack.is_indicator(name);
    double center = 0.0, scale = 1.0;
    if (standardize) {
      center = sum / static_cast<double>(n);
      scale = std::sqrt(std::max(0.0, sumsq / static_cast<double>(n) - center * center));
      if (!(scale > 1e-12 * std::max(1.0, std::abs(center))))
        throw UsageError("covariate '" + name + "' is constant over the study domain");
    }
    d.standardized.push_back(standardize);
    d.center.push_back(center);
    d.scale.push_back(scale);
    for (std::size_t c = 0; c < g.size(); ++c)
      d.x(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(j)) =
          std::isnan(col[c]) ? 0.0 : (col[c] - center) / scale;
  }
  d.z = stack.effort_indicator();
  for (auto& v : d.z)
    if (std::isnan(v)) v = 0.0;
  return d;
}

double EffectVector::campaign_effect(int t) const {
  if (mu_t.size() == 0) return 0.0;
  if (t < 1 || t > mu_t.size()) throw UsageError("campaign " + std::to_string(t) + " out of range");
  return mu_t[t - 1];
}

void EffectVector::validate(const Design& design) const {
  if (static_cast<std::size_t>(beta.size()) != design.n_covariates())
    throw UsageError("effect vector has " + std::to_string(beta.size()) + " coefficients, design has " +
                     std::to_string(design.n_covariates()));
  if (mu_t.size() != 0 && mu_t.size() != design.n_campaigns)
    throw UsageError("campaign effect count does not match the design");
  if (static_cast<std::size_t>(w.size()) != design.grid.size())
    throw UsageError("latent field length does not match the grid");
  if (!(tau2 > 0)) throw UsageError("tau2 must be positive");
}

std::vector<double> log_intensity(const EffectVector& effects, const QuadratureScheme& nodes,
                                  const Design& design, int campaign) {
  effects.validate(design);
  const double shift = effects.mu0 + effects.campaign_effect(campaign);
  const double gamma = design.include_effort ? effects.gamma : 0.0;
  std::vector<double> out(nodes.size());
  for (std::size_t q = 0; q < nodes.size(); ++q) {
    const auto cell = nodes.cells[q];
    out[q] = shift + gamma * design.z[cell] + design.linear(cell, effects.beta) +
             effects.w[static_cast<Eigen::Index>(cell)];
  }
  return out;
}

IntensityFactors decompose_intensity(const EffectVector& effects, const Design& design, std::size_t cell,
                                     int campaign) {
  effects.validate(design);
  IntensityFactors f;
  f.base = std::exp(effects.mu0 + design.linear(cell, effects.beta) + effects.w[static_cast<Eigen::Index>(cell)]);
  f.campaign = std::exp(effects.campaign_effect(campaign));
  f.effort = std::exp((design.include_effort ? effects.gamma : 0.0) * design.z[cell]);
  return f;
}

double gamma_logdensity(double x, double shape, double rate) {
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

double log_prior_parameters(const EffectVector& effects, const ModelSpec& spec) {
  const double fp = spec.prior.fixed_precision;
  double lp = normal_logdensity(effects.mu0, fp);
  for (Eigen::Index j = 0; j < effects.beta.size(); ++j) lp += normal_logdensity(effects.beta[j], fp);
  if (spec.include_effort) lp += normal_logdensity(effects.gamma, fp);
  if (effects.mu_t.size() > 0) {
    const double prec = 1.0 / effects.tau2;
    for (Eigen::Index t = 0; t < effects.mu_t.size(); ++t) lp += normal_logdensity(effects.mu_t[t], prec);
    lp += gamma_logdensity(prec, spec.prior.campaign_shape, spec.prior.campaign_rate);
  }
  lp += pc_prior_logdensity(effects.hyper, spec.prior.pc);
  return lp;
}

double log_prior(const EffectVector& effects, const ModelSpec& spec, const SparsePrecision& field_precision,
                 double field_log_det) {
  if (effects.w.size() != field_precision.dimension())
    throw UsageError("latent field length does not match the precision matrix");
  const Eigen::VectorXd qw = field_precision.matrix * effects.w;
  const double n = static_cast<double>(effects.w.size());
  const double field = 0.5 * field_log_det - 0.5 * n * kLog2Pi - 0.5 * effects.w.dot(qw);
  return log_prior_parameters(effects, spec) + field;
}

}  // namespace lgcpcv
