#pragma once

// Synthetic study areas shared by the unit and acceptance tests.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "lgcpcv/crossval.hpp"
#include "lgcpcv/geodata.hpp"
#include "lgcpcv/gmrf.hpp"
#include "lgcpcv/inference.hpp"
#include "lgcpcv/model.hpp"
#include "lgcpcv/rng.hpp"
#include "lgcpcv/simulate.hpp"

namespace fixtures {

using namespace lgcpcv;

inline GridGeometry square_grid(std::size_t rows, std::size_t cols, double cell = 1.0) {
  GridGeometry g;
  g.origin_x = 0.0;
  g.origin_y = 0.0;
  g.cell_dx = cell;
  g.cell_dy = cell;
  g.n_rows = rows;
  g.n_cols = cols;
  return g;
}

inline Legend habitat_legend() { return {{1, "seagrass"}, {2, "sand"}, {3, "rock"}}; }

/// Smooth random field on the grid (no halo), used to carve habitat patches.
inline Eigen::VectorXd smooth_field(const GridGeometry& g, double range, std::uint64_t seed) {
  MaternHyper h;
  h.sigma = 1.0;
  h.range = range;
  const auto mesh = build_mesh(g, 0.0);
  return sample_field(build_precision(mesh, h), seed);
}

/// Code 1 (the effort class) where one smooth field is positive; the rest is
/// split between codes 2 and 3 by a second field.
inline RasterGrid patchy_habitat(const GridGeometry& g, double patch_scale, std::uint64_t seed) {
  const auto a = smooth_field(g, patch_scale, derive_seed(seed, {1}));
  const auto b = smooth_field(g, patch_scale, derive_seed(seed, {2}));
  RasterGrid r = RasterGrid::filled(g, 2.0, RasterKind::categorical);
  r.legend = habitat_legend();
  for (std::size_t c = 0; c < g.size(); ++c) {
    const auto i = static_cast<Eigen::Index>(c);
    r.values[c] = a[i] > 0.0 ? 1.0 : (b[i] > 0.0 ? 2.0 : 3.0);
  }
  return r;
}

/// Continuous layer: a smooth field plus a gentle east-west trend.
inline RasterGrid depth_layer(const GridGeometry& g, double scale, std::uint64_t seed) {
  const auto f = smooth_field(g, scale, seed);
  RasterGrid r = RasterGrid::filled(g, 0.0);
  for (std::size_t c = 0; c < g.size(); ++c)
    r.values[c] = 10.0 + 2.0 * f[static_cast<Eigen::Index>(c)] + 0.02 * g.center_x(c);
  return r;
}

inline CovariateStack patchy_stack(std::size_t n, double patch_scale, std::uint64_t seed, bool with_depth = false) {
  const auto g = square_grid(n, n);
  std::map<std::string, RasterGrid> layers;
  if (with_depth) layers.emplace("depth", depth_layer(g, patch_scale, derive_seed(seed, {3})));
  return CovariateStack(patchy_habitat(g, patch_scale, seed), 1, layers);
}

inline ModelSpec model(const std::string& id, std::vector<std::string> covariates, bool effort, int campaigns,
                       const PriorSpec& prior) {
  ModelSpec s;
  s.model_id = id;
  s.covariate_names = std::move(covariates);
  s.include_effort = effort;
  s.n_campaigns = campaigns;
  s.prior = prior;
  return s;
}

inline Scenario scenario(const CovariateStack& stack, const ModelSpec& truth_spec, double mu0, double gamma,
                         const Eigen::VectorXd& beta, double sigma, double range, std::uint64_t seed,
                         int campaigns = 1) {
  Scenario sc;
  sc.design = build_design(stack, truth_spec);
  sc.truth.mu0 = mu0;
  sc.truth.gamma = gamma;
  sc.truth.beta = beta;
  sc.truth.hyper.sigma = sigma;
  sc.truth.hyper.range = range;
  sc.sample_field = sigma > 0;
  sc.mesh_halo = range;
  sc.campaign_domains.assign(static_cast<std::size_t>(campaigns), stack.domains().full);
  sc.seed = seed;
  return sc;
}

inline std::vector<QuadratureScheme> quadrature_for(const std::vector<DomainMask>& domains) {
  std::vector<QuadratureScheme> q;
  for (const auto& d : domains) q.push_back(build_quadrature(d));
  return q;
}

}  // namespace fixtures
