#include "lgcpcv/simulate.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "lgcpcv/rng.hpp"
#include "lgcpcv/text.hpp"

namespace lgcpcv {

namespace {

constexpr double kMaxExpectedTotal = 1e8;

double cell_log_intensity(const Design& design, const EffectVector& ev, std::size_t cell, int campaign) {
  const double gamma = design.include_effort ? ev.gamma : 0.0;
  return ev.mu0 + ev.campaign_effect(campaign) + gamma * design.z[cell] + design.linear(cell, ev.beta) +
         ev.w[static_cast<Eigen::Index>(cell)];
}

}  // namespace

void Scenario::validate() const {
  if (campaign_domains.empty()) throw UsageError("scenario needs at least one campaign");
  for (std::size_t t = 0; t < campaign_domains.size(); ++t) {
    if (!campaign_domains[t].grid.same_as(design.grid))
      throw UsageError("campaign " + std::to_string(t + 1) + " domain is on a different grid");
    if (campaign_domains[t].empty()) throw UsageError("campaign " + std::to_string(t + 1) + " has an empty domain");
  }
  if (truth.mu_t.size() != 0 && truth.mu_t.size() != n_campaigns())
    throw UsageError("scenario campaign effects do not match the campaign count");
  if (sample_field) truth.hyper.validate();
  if (!(mesh_halo >= 0)) throw UsageError("mesh halo must be non-negative");
}

EffectVector realize_effects(const Scenario& scenario) {
  scenario.validate();
  EffectVector ev = scenario.truth;
  const auto n = static_cast<Eigen::Index>(scenario.design.grid.size());
  if (scenario.sample_field) {
    const MeshLattice mesh = build_mesh(scenario.design.grid, scenario.mesh_halo);
    const Eigen::VectorXd nodes = sample_field(build_precision(mesh, ev.hyper), derive_seed(scenario.seed, {1}));
    ev.w.resize(n);
    for (Eigen::Index c = 0; c < n; ++c) ev.w[c] = nodes[static_cast<Eigen::Index>(mesh.node_of_cell(c))];
  } else if (ev.w.size() != n) {
    ev.w = Eigen::VectorXd::Zero(n);
  }
  return ev;
}

PointPattern simulate_points(const Scenario& scenario, const EffectVector& effects) {
  scenario.validate();
  effects.validate(scenario.design);
  const auto& grid = scenario.design.grid;
  std::vector<std::vector<double>> means(scenario.campaign_domains.size());
  double total = 0.0;
  for (int t = 1; t <= scenario.n_campaigns(); ++t) {
    const auto& dom = scenario.campaign_domains[static_cast<std::size_t>(t - 1)];
    auto& m = means[static_cast<std::size_t>(t - 1)];
    m.assign(grid.size(), 0.0);
    for (std::size_t c = 0; c < grid.size(); ++c) {
      if (!dom.contains_cell(c)) continue;
      const double eta = cell_log_intensity(scenario.design, effects, c, t);
      const double mean = grid.cell_area() * std::exp(eta);
      if (std::isnan(eta) || mean > kMaxExpectedTotal) {
        total = std::numeric_limits<double>::infinity();
        break;
      }
      m[c] = mean;
      total += mean;
    }
  }
  if (!(total <= kMaxExpectedTotal)) {
    std::ostringstream msg;
    msg << "expected point count " << total << " exceeds " << kMaxExpectedTotal << "; rescale the intensity";
    throw UsageError(msg.str());
  }

  PointPattern out;
  for (int t = 1; t <= scenario.n_campaigns(); ++t) {
    Rng rng(derive_seed(scenario.seed, {2, static_cast<std::uint64_t>(t)}));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto& m = means[static_cast<std::size_t>(t - 1)];
    for (std::size_t c = 0; c < grid.size(); ++c) {
      if (!(m[c] > 0)) continue;
      std::poisson_distribution<long long> pois(m[c]);
      const long long n = pois(rng);
      const double x0 = grid.origin_x + grid.cell_dx * static_cast<double>(grid.col_of(c));
      const double y0 = grid.origin_y + grid.cell_dy * static_cast<double>(grid.n_rows - 1 - grid.row_of(c));
      for (long long i = 0; i < n; ++i) {
        Point p;
        p.x = x0 + grid.cell_dx * unit(rng);
        p.y = y0 + grid.cell_dy * unit(rng);
        p.campaign = t;
        out.points.push_back(p);
      }
    }
  }
  return out;
}

Simulation simulate_lgcp(const Scenario& scenario) {
  Simulation sim;
  sim.effects = realize_effects(scenario);
  sim.pattern = simulate_points(scenario, sim.effects);
  return sim;
}

double expected_count(const Scenario& scenario, const EffectVector& effects, int campaign,
                      const std::vector<std::size_t>& cells) {
  if (campaign < 1 || campaign > scenario.n_campaigns())
    throw UsageError("campaign " + std::to_string(campaign) + " out of range");
  effects.validate(scenario.design);
  const auto& dom = scenario.campaign_domains[static_cast<std::size_t>(campaign - 1)];
  const double area = scenario.design.grid.cell_area();
  double s = 0.0;
  for (auto c : cells) {
    if (c >= dom.included.size() || !dom.contains_cell(c))
      throw UsageError("region cell " + std::to_string(c) + " lies outside the campaign domain");
    s += area * std::exp(cell_log_intensity(scenario.design, effects, c, campaign));
  }
  return s;
}

void write_truth(const std::filesystem::path& path, const Scenario& scenario, const Simulation& sim) {
  const auto& ev = sim.effects;
  std::ostringstream out;
  out << "parameter,value\n";
  auto row = [&](const std::string& name, double v) { out << name << ',' << text::format_double(v) << "\n"; };
  row("intercept", ev.mu0);
  for (std::size_t j = 0; j < scenario.design.n_covariates(); ++j)
    row(scenario.design.names[j], ev.beta[static_cast<Eigen::Index>(j)]);
  if (scenario.design.include_effort) row("effort", ev.gamma);
  for (Eigen::Index t = 0; t < ev.mu_t.size(); ++t) row("campaign " + std::to_string(t + 1), ev.mu_t[t]);
  if (ev.mu_t.size() > 0) row("campaign precision", 1.0 / ev.tau2);
  if (scenario.sample_field) {
    row("gp range", ev.hyper.range);
    row("gp sd", ev.hyper.sigma);
  }
  out << "seed," << scenario.seed << "\n";
  for (int t = 1; t <= scenario.n_campaigns(); ++t)
    row("points campaign " + std::to_string(t), static_cast<double>(sim.pattern.count_campaign(t)));
  text::write_atomic(path, out.str());
}

}  // namespace lgcpcv
