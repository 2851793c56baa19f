#include "lgcpcv/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "lgcpcv/text.hpp"

namespace lgcpcv {

namespace {

namespace pt = boost::property_tree;

struct Reader {
  const std::filesystem::path& file;
  std::string section;

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw UsageError(file.string() + ": [" + section + "] " + key + ": " + what);
  }
  double number(const std::string& key, const std::string& v) const {
    double out = 0;
    if (!text::to_double(v, out)) fail(key, "'" + v + "' is not a number");
    return out;
  }
  long long integer(const std::string& key, const std::string& v) const {
    long long out = 0;
    if (!text::to_int(v, out)) fail(key, "'" + v + "' is not an integer");
    return out;
  }
  int positive(const std::string& key, const std::string& v) const {
    const auto n = integer(key, v);
    if (n < 1 || n > 1'000'000'000) fail(key, "must be a positive integer");
    return static_cast<int>(n);
  }
  bool flag(const std::string& key, const std::string& v) const {
    const auto s = text::lower(v);
    if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
    if (s == "0" || s == "false" || s == "no" || s == "off") return false;
    fail(key, "'" + v + "' is not a boolean");
  }
  double probability(const std::string& key, const std::string& v) const {
    const double p = number(key, v);
    if (!(p > 0 && p < 1)) fail(key, "must lie in (0, 1)");
    return p;
  }
  double positive_real(const std::string& key, const std::string& v) const {
    const double x = number(key, v);
    if (!(x > 0)) fail(key, "must be positive");
    return x;
  }
  std::vector<std::string> list(const std::string& v) const {
    std::vector<std::string> out;
    for (auto& s : text::split(v, ','))
      if (!s.empty()) out.push_back(s);
    return out;
  }
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& v) {
  std::filesystem::path p(v);
  return p.is_absolute() ? p : base / p;
}

void require_file(const std::filesystem::path& p, const std::string& what) {
  if (p.empty()) throw UsageError("config is missing " + what);
  if (!std::filesystem::is_regular_file(p)) throw UsageError(what + " not found: " + p.string());
}

}  // namespace

RunConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw UsageError("config file not found: " + path.string());
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError(path.string(), e.line(), e.message());
  }
  RunConfig c;
  c.source = path;
  const auto base = path.parent_path();

  for (const auto& [section, body] : tree) {
    Reader r{path, section};
    if (body.empty() && !body.data().empty()) r.fail(section, "key outside any section");
    for (const auto& [key, node] : body) {
      const std::string v = text::trim(node.data());
      if (section == "run") {
        if (key == "seed") {
          const auto s = r.integer(key, v);
          if (s < 0) r.fail(key, "must be non-negative");
          c.seed = static_cast<std::uint64_t>(s);
        } else if (key == "workers") {
          c.workers = r.positive(key, v);
        } else if (key == "out") {
          c.out = resolve(base, v);
        } else {
          r.fail(key, "unknown key");
        }
      } else if (section == "data") {
        if (key == "habitat") c.habitat = resolve(base, v);
        else if (key == "legend") c.legend = resolve(base, v);
        else if (key == "effort_class") c.effort_class = static_cast<int>(r.integer(key, v));
        else if (key == "points") c.points = resolve(base, v);
        else if (key == "campaign_domains") c.campaign_domains = resolve(base, v);
        else if (key == "aggregate_cell") c.aggregate_cell = r.number(key, v);
        else if (key.rfind("covariate.", 0) == 0 && key.size() > 10) c.covariates[key.substr(10)] = resolve(base, v);
        else r.fail(key, "unknown key");
      } else if (section == "prior") {
        auto& p = c.prior;
        if (key == "range_threshold") p.pc.rho0 = r.positive_real(key, v);
        else if (key == "range_probability") p.pc.p_rho = r.probability(key, v);
        else if (key == "sd_threshold") p.pc.sigma0 = r.positive_real(key, v);
        else if (key == "sd_probability") p.pc.p_sigma = r.probability(key, v);
        else if (key == "fixed_precision") p.fixed_precision = r.positive_real(key, v);
        else if (key == "campaign_shape") p.campaign_shape = r.positive_real(key, v);
        else if (key == "campaign_rate") p.campaign_rate = r.positive_real(key, v);
        else r.fail(key, "unknown key");
      } else if (section == "mesh") {
        if (key == "halo") {
          c.inference.mesh_halo = r.number(key, v);
          if (!(c.inference.mesh_halo >= 0)) r.fail(key, "must be non-negative");
        } else {
          r.fail(key, "unknown key");
        }
      } else if (section == "inference") {
        auto& o = c.inference;
        if (key == "draws") o.n_draws = static_cast<std::size_t>(r.positive(key, v));
        else if (key == "max_newton") o.max_newton = r.positive(key, v);
        else if (key == "newton_tol") o.newton_tol = r.positive_real(key, v);
        else if (key == "max_outer") o.max_outer = r.positive(key, v);
        else if (key == "outer_tol") o.outer_tol = r.positive_real(key, v);
        else if (key == "fd_step") o.fd_step = r.positive_real(key, v);
        else if (key == "max_hyper_sd") o.max_hyper_sd = r.positive_real(key, v);
        else r.fail(key, "unknown key");
      } else if (section == "fit") {
        if (key == "model_id") c.model_id = v;
        else if (key == "covariates") c.fit_covariates = r.list(v);
        else if (key == "effort") c.fit_effort = r.flag(key, v);
        else r.fail(key, "unknown key");
      } else if (section == "crossval") {
        if (key == "folds") c.folds = r.positive(key, v);
        else if (key == "partition_rows") c.partition_rows = static_cast<std::size_t>(r.positive(key, v));
        else if (key == "partition_cols") c.partition_cols = static_cast<std::size_t>(r.positive(key, v));
        else if (key == "sweep") c.sweep = resolve(base, v);
        else if (key == "dic") c.compute_dic = r.flag(key, v);
        else if (key == "weighting") c.weighting = parse_weighting(v);
        else r.fail(key, "unknown key");
      } else if (section == "simulate") {
        if (key == "campaigns") c.sim_campaigns = r.positive(key, v);
        else if (key == "intercept") c.sim_intercept = r.number(key, v);
        else if (key == "effort") c.sim_effort = r.number(key, v);
        else if (key == "campaign_effects") {
          c.sim_campaign_effects.clear();
          for (const auto& s : r.list(v)) c.sim_campaign_effects.push_back(r.number(key, s));
        } else if (key == "field") {
          const auto s = text::lower(v);
          if (s != "sample" && s != "none") r.fail(key, "expected sample or none");
          c.sim_field = s == "sample";
        } else if (key == "sd") c.sim_sigma = r.positive_real(key, v);
        else if (key == "range") c.sim_range = r.positive_real(key, v);
        else if (key == "halo") c.sim_halo = r.number(key, v);
        else if (key.rfind("coef.", 0) == 0 && key.size() > 5) c.sim_coefficients[key.substr(5)] = r.number(key, v);
        else r.fail(key, "unknown key");
      } else if (section == "rank") {
        if (key == "input") c.rank_input = resolve(base, v);
        else r.fail(key, "unknown key");
      } else {
        throw UsageError(path.string() + ": unknown section [" + section + "]");
      }
    }
  }
  return c;
}

StudyData load_study(const RunConfig& config) {
  require_file(config.habitat, "habitat raster");
  require_file(config.legend, "habitat legend");
  const Legend legend = load_legend(config.legend);
  RasterGrid habitat = load_raster(config.habitat, RasterKind::categorical, &legend);
  std::map<std::string, RasterGrid> layers;
  for (const auto& [name, p] : config.covariates) {
    require_file(p, "covariate '" + name + "'");
    layers.emplace(name, load_raster(p, RasterKind::continuous));
  }
  if (config.aggregate_cell > 0) {
    habitat = zonal_aggregate(habitat, config.aggregate_cell, Reducer::majority);
    for (auto& [name, r] : layers) r = zonal_aggregate(r, config.aggregate_cell, Reducer::mean);
  }
  for (const auto& [name, r] : layers)
    if (!r.geometry.same_as(habitat.geometry))
      throw UsageError("covariate '" + name + "' is not aligned with the habitat raster");

  StudyData data{CovariateStack(std::move(habitat), config.effort_class, layers), {}, {}};
  if (!config.campaign_domains.empty()) {
    require_file(config.campaign_domains, "campaign-domain map");
    data.domain_kinds = load_campaign_domains(config.campaign_domains);
  } else {
    data.domain_kinds.assign(static_cast<std::size_t>(config.sim_campaigns), DomainKind::full);
  }
  for (auto kind : data.domain_kinds) {
    const auto& mask = data.stack.domains().get(kind);
    if (mask.empty()) throw UsageError("campaign domain " + to_string(kind) + " is empty");
    data.campaign_domains.push_back(mask);
  }
  return data;
}

ModelSpec fit_model_spec(const RunConfig& config, const StudyData& data) {
  ModelSpec spec;
  spec.model_id = config.model_id;
  spec.covariate_names = config.fit_covariates;
  spec.include_effort = config.fit_effort;
  spec.n_campaigns = data.n_campaigns();
  spec.prior = config.prior;
  spec.validate(data.stack, false);
  return spec;
}

Scenario build_scenario(const RunConfig& config, const StudyData& data) {
  ModelSpec spec;
  spec.model_id = "truth";
  for (const auto& [name, v] : config.sim_coefficients) spec.covariate_names.push_back(name);
  spec.include_effort = true;
  spec.n_campaigns = data.n_campaigns();
  spec.prior = config.prior;
  spec.validate(data.stack, false);

  Scenario sc;
  sc.design = build_design(data.stack, spec);
  sc.truth.mu0 = config.sim_intercept;
  sc.truth.gamma = config.sim_effort;
  sc.truth.beta.resize(static_cast<Eigen::Index>(spec.covariate_names.size()));
  for (std::size_t j = 0; j < spec.covariate_names.size(); ++j)
    sc.truth.beta[static_cast<Eigen::Index>(j)] = config.sim_coefficients.at(spec.covariate_names[j]);
  if (!config.sim_campaign_effects.empty()) {
    if (static_cast<int>(config.sim_campaign_effects.size()) != data.n_campaigns())
      throw UsageError("[simulate] campaign_effects needs " + std::to_string(data.n_campaigns()) + " values");
    sc.truth.mu_t = Eigen::Map<const Eigen::VectorXd>(config.sim_campaign_effects.data(),
                                                      static_cast<Eigen::Index>(config.sim_campaign_effects.size()));
  }
  sc.truth.hyper.sigma = config.sim_sigma;
  sc.truth.hyper.range = config.sim_range;
  sc.sample_field = config.sim_field;
  sc.mesh_halo = config.sim_halo < 0 ? config.sim_range : config.sim_halo;
  sc.campaign_domains = data.campaign_domains;
  sc.seed = config.seed;
  return sc;
}

}  // namespace lgcpcv
