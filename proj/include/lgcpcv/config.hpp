#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lgcpcv/crossval.hpp"
#include "lgcpcv/geodata.hpp"
#include "lgcpcv/inference.hpp"
#include "lgcpcv/model.hpp"
#include "lgcpcv/simulate.hpp"

namespace lgcpcv {

/// INI-style run configuration.  Relative paths resolve against the
/// directory holding the config file.
struct RunConfig {
  std::filesystem::path source;

  // [run]
  std::uint64_t seed = 1;
  int workers = 1;
  std::filesystem::path out = "out";

  // [data]
  std::filesystem::path habitat;
  std::filesystem::path legend;
  int effort_class = 0;
  std::map<std::string, std::filesystem::path> covariates;
  std::filesystem::path points;
  std::filesystem::path campaign_domains;  // empty: one campaign over D
  double aggregate_cell = 0.0;             // 0 keeps the native resolution

  // [prior], [mesh], [inference]
  PriorSpec prior;
  InferenceOptions inference;

  // [fit]
  std::string model_id = "M1";
  std::vector<std::string> fit_covariates;
  bool fit_effort = true;

  // [crossval]
  int folds = 5;
  std::size_t partition_rows = 18;
  std::size_t partition_cols = 18;
  std::filesystem::path sweep;
  bool compute_dic = true;
  Weighting weighting = Weighting::unweighted;

  // [simulate]
  int sim_campaigns = 1;  // used when no campaign-domain file is given
  double sim_intercept = 0.0;
  double sim_effort = 0.0;
  std::map<std::string, double> sim_coefficients;
  std::vector<double> sim_campaign_effects;
  bool sim_field = true;
  double sim_sigma = 0.5;
  double sim_range = 50.0;
  double sim_halo = -1.0;  // negative: one range

  // [rank]
  std::filesystem::path rank_input;
};

RunConfig load_config(const std::filesystem::path& path);

/// Inputs shared by every subcommand.
struct StudyData {
  CovariateStack stack;
  std::vector<DomainKind> domain_kinds;  // per campaign
  std::vector<DomainMask> campaign_domains;

  int n_campaigns() const { return static_cast<int>(campaign_domains.size()); }
};

StudyData load_study(const RunConfig& config);

ModelSpec fit_model_spec(const RunConfig& config, const StudyData& data);
Scenario build_scenario(const RunConfig& config, const StudyData& data);

}  // namespace lgcpcv
