#include "lgcpcv/commands.hpp"

#include <iomanip>
#include <ostream>
#include <sstream>

#include "lgcpcv/text.hpp"

namespace lgcpcv {

namespace {

PointPattern load_observed(const RunConfig& config, const StudyData& data) {
  if (config.points.empty()) throw UsageError("config is missing [data] points");
  if (!std::filesystem::is_regular_file(config.points))
    throw UsageError("points file not found: " + config.points.string());
  PointPattern pattern = load_points(config.points);
  if (pattern.max_campaign() > data.n_campaigns())
    throw UsageError("points reference campaign " + std::to_string(pattern.max_campaign()) + " but only " +
                     std::to_string(data.n_campaigns()) + " campaign domain(s) are defined");
  return pattern;
}

std::vector<QuadratureScheme> campaign_quadrature(const StudyData& data) {
  std::vector<QuadratureScheme> q;
  for (const auto& d : data.campaign_domains) q.push_back(build_quadrature(d));
  return q;
}

void write_diagnostics(const std::filesystem::path& path, const PosteriorDraws& draws) {
  std::ostringstream out;
  const auto& d = draws.diagnostics;
  out << "outer_iterations," << d.outer_iterations << "\n"
      << "hyper_evaluations," << d.hyper_evaluations << "\n"
      << "newton_iterations," << d.newton_iterations << "\n"
      << "max_gradient_norm," << text::format_double(d.max_gradient_norm) << "\n";
  out << "\ngp_sd,gp_range,campaign_variance,log_marginal,weight\n";
  for (const auto& h : draws.hyper_grid)
    out << text::format_double(h.sigma) << ',' << text::format_double(h.range) << ',' << text::format_double(h.tau2)
        << ',' << text::format_double(h.log_marginal) << ',' << text::format_double(h.weight) << "\n";
  text::write_atomic(path, out.str());
}

}  // namespace

int cmd_simulate(const RunConfig& config, std::ostream& log) {
  const StudyData data = load_study(config);
  const Scenario scenario = build_scenario(config, data);
  const Simulation sim = simulate_lgcp(scenario);
  std::filesystem::create_directories(config.out);
  write_points(config.out / "points.csv", sim.pattern);
  write_truth(config.out / "truth.csv", scenario, sim);
  if (scenario.sample_field)
    write_field_mean(config.out / "field_truth.asc", data.stack.grid(), sim.effects.w, data.stack.domains().full);
  log << "simulated " << sim.pattern.size() << " points over " << scenario.n_campaigns() << " campaign(s) -> "
      << (config.out / "points.csv").string() << "\n";
  return kExitOk;
}

int cmd_fit(const RunConfig& config, std::ostream& log) {
  const StudyData data = load_study(config);
  const ModelSpec spec = fit_model_spec(config, data);
  const PointPattern pattern = load_observed(config, data);
  const GriddedLikelihood lik = bin_points(pattern, campaign_quadrature(data));
  const Design design = build_design(data.stack, spec);
  std::filesystem::create_directories(config.out);
  FitResult result;
  try {
    result = fit(lik, spec, design, config.inference, config.seed);
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    std::ostringstream msg;
    msg << "model " << spec.model_id << ": " << e.what() << "\n";
    text::write_atomic(config.out / "fit_failure.log", msg.str());
    log << "fit failed: " << e.what() << "\n";
    return kExitPartial;
  }
  write_posterior_summary(config.out / "posterior_summary.csv", result.summary);
  write_field_mean(config.out / "field_posterior_mean.asc", data.stack.grid(), result.field_mean,
                   data.stack.domains().full);
  write_diagnostics(config.out / "fit_diagnostics.csv", result.draws);
  log << "fitted " << spec.model_id << " to " << pattern.size() << " points; DIC "
      << text::format_double(result.summary.dic) << "\n";
  return kExitOk;
}

int cmd_crossval(const RunConfig& config, std::ostream& log) {
  if (config.folds < 2) throw UsageError("[crossval] folds must be at least 2");
  const StudyData data = load_study(config);
  const PointPattern pattern = load_observed(config, data);
  std::vector<ModelSpec> models;
  if (!config.sweep.empty()) {
    if (!std::filesystem::is_regular_file(config.sweep))
      throw UsageError("model sweep file not found: " + config.sweep.string());
    models = load_model_sweep(config.sweep, data.stack, config.prior, data.n_campaigns());
  } else {
    models.push_back(fit_model_spec(config, data));
  }
  CrossvalOptions opts;
  opts.folds = config.folds;
  opts.partition_rows = config.partition_rows;
  opts.partition_cols = config.partition_cols;
  opts.workers = config.workers;
  opts.seed = config.seed;
  opts.compute_dic = config.compute_dic;
  opts.weighting = config.weighting;
  opts.inference = config.inference;
  const CrossvalResult result = run_crossval(data.stack, pattern, data.campaign_domains, models, opts);
  write_crossval_outputs(config.out, result);
  for (std::size_t t = 0; t < result.partitions.size(); ++t)
    if (result.partitions[t].empty_subsets > 0)
      log << "campaign " << t + 1 << ": " << result.partitions[t].empty_subsets
          << " empty partition subset(s) excluded\n";
  log << models.size() << " model(s), " << models.size() * static_cast<std::size_t>(config.folds)
      << " fold fits, " << result.failed_tasks() << " failure(s)\n";
  for (const auto& m : result.models)
    for (const auto& f : m.failures) log << "  " << m.spec.model_id << ": " << f << "\n";
  return result.failed_tasks() > 0 ? kExitPartial : kExitOk;
}

int cmd_rank(const RunConfig& config, std::ostream& log) {
  const auto input = config.rank_input.empty() ? config.out / "crps_by_model.csv" : config.rank_input;
  if (!std::filesystem::is_regular_file(input)) throw UsageError("rank input not found: " + input.string());
  std::vector<std::string> columns;
  const auto ranked = rank_models(read_crps_by_model(input, &columns));
  std::filesystem::create_directories(config.out);
  std::ostringstream out;
  out << "rank,model_id";
  for (const auto& c : columns) out << ',' << c;
  out << ",crps,dic,status\n";
  std::size_t i = 0;
  for (const auto& r : ranked) {
    out << ++i << ',' << r.model_id;
    for (const auto& [name, v] : r.flags) out << ',' << v;
    out << ',' << text::format_double(r.crps) << ',' << text::format_double(r.dic) << ',' << r.status << "\n";
  }
  text::write_atomic(config.out / "ranking.csv", out.str());
  log << std::left << std::setw(6) << "rank" << std::setw(16) << "model" << "crps\n";
  i = 0;
  for (const auto& r : ranked)
    log << std::setw(6) << ++i << std::setw(16) << r.model_id << text::format_double(r.crps) << "\n";
  bool any_failed = false;
  for (const auto& r : ranked) any_failed |= r.status != "ok";
  return any_failed ? kExitPartial : kExitOk;
}

}  // namespace lgcpcv
