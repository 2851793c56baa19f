#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "lgcpcv/geodata.hpp"
#include "lgcpcv/gmrf.hpp"
#include "lgcpcv/model.hpp"

namespace lgcpcv {

struct Scenario {
  Design design;
  EffectVector truth;            // w is ignored when the field is sampled
  bool sample_field = true;      // draw w from the Matern GMRF with truth.hyper
  double mesh_halo = 0.0;        // metres of padding around the grid for the field draw
  std::vector<DomainMask> campaign_domains;
  std::uint64_t seed = 1;

  int n_campaigns() const { return static_cast<int>(campaign_domains.size()); }
  void validate() const;
};

struct Simulation {
  PointPattern pattern;
  EffectVector effects;  // truth with the realised field
};

/// Realised effects: the scenario truth with w drawn (or zero when absent).
EffectVector realize_effects(const Scenario& scenario);

Simulation simulate_lgcp(const Scenario& scenario);
/// Point pattern for already realised effects.
PointPattern simulate_points(const Scenario& scenario, const EffectVector& effects);

/// Sum over `cells` of alpha_q lambda_t(v_q).  Every cell must lie in the campaign domain.
double expected_count(const Scenario& scenario, const EffectVector& effects, int campaign,
                      const std::vector<std::size_t>& cells);

void write_truth(const std::filesystem::path& path, const Scenario& scenario, const Simulation& sim);

}  // namespace lgcpcv
