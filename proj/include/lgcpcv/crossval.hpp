#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lgcpcv/geodata.hpp"
#include "lgcpcv/inference.hpp"
#include "lgcpcv/model.hpp"

namespace lgcpcv {

struct FoldAssignment {
  std::vector<int> marks;  // 1..K per point
  int k = 1;
  std::uint64_t seed = 0;

  std::size_t count(int fold) const;
};

/// Uniform marks on 1..K; the mark of point i depends only on (seed, i).
FoldAssignment assign_folds(const PointPattern& pattern, int k, std::uint64_t seed);

struct FoldSplit {
  PointPattern train;
  PointPattern validation;
};

FoldSplit split(const PointPattern& pattern, const FoldAssignment& assignment, int fold);

struct ThinnedIntensity {
  std::vector<double> train;       // (K-1)/K lambda
  std::vector<double> validation;  // lambda_train / (K-1)
};

ThinnedIntensity thin_intensity(const std::vector<double>& lambda, int k);

/// A x K x G residual samples for one campaign.
class ResidualTensor {
 public:
  ResidualTensor() = default;
  ResidualTensor(int campaign, std::size_t draws, std::size_t folds, std::size_t subsets);

  int campaign() const { return campaign_; }
  std::size_t draws() const { return draws_; }
  std::size_t folds() const { return folds_; }
  std::size_t subsets() const { return subsets_; }

  double& at(std::size_t a, std::size_t k, std::size_t g) { return values_[(k * subsets_ + g) * draws_ + a]; }
  double at(std::size_t a, std::size_t k, std::size_t g) const { return values_[(k * subsets_ + g) * draws_ + a]; }
  /// The A samples of one (fold, subset) pair, contiguous.
  std::vector<double> samples(std::size_t k, std::size_t g) const;
  double mean() const;

 private:
  int campaign_ = 1;
  std::size_t draws_ = 0, folds_ = 0, subsets_ = 0;
  std::vector<double> values_;
};

/// Observed count minus the train-fitted expected count rescaled to the validation fold.
double validation_residual(double observed, double train_integral, int k);

/// Fills fold `fold` (1-based) of `tensor` from draws fitted on that fold's training pattern.
void fill_validation_residuals(ResidualTensor& tensor, int fold, const PointPattern& validation,
                               const PosteriorDraws& draws, const Design& design, const PartitionScheme& partition,
                               int k);

/// Empirical CRPS of the sample distribution at y, via sorted samples.
double crps_empirical(std::vector<double> samples, double y);

enum class Weighting { unweighted, area };

Weighting parse_weighting(const std::string& text);
std::string to_string(Weighting w);

struct CrpsTable {
  std::string model_id;
  std::vector<std::vector<double>> scores;   // [t][g]: fold-averaged CRPS
  std::vector<std::vector<double>> weights;  // [t][g]: aggregation weights, summing to one overall
  double aggregate = 0.0;
};

/// `areas[t][g]` is used only for area weighting.
CrpsTable aggregate_crps(const std::string& model_id, const std::vector<ResidualTensor>& tensors,
                         const std::vector<std::vector<double>>& areas, Weighting weighting);

struct RankedModel {
  std::string model_id;
  std::vector<std::pair<std::string, int>> flags;  // covariate name -> 0/1
  double crps = 0.0;
  double dic = 0.0;
  std::string status = "ok";
};

/// Ascending aggregate CRPS, ties by model_id; non-finite scores go last.
std::vector<RankedModel> rank_models(std::vector<RankedModel> models);

// ---------------------------------------------------------------------------

struct CrossvalOptions {
  int folds = 5;
  std::size_t partition_rows = 18;
  std::size_t partition_cols = 18;
  int workers = 1;
  std::uint64_t seed = 1;
  bool compute_dic = true;
  Weighting weighting = Weighting::unweighted;
  InferenceOptions inference;
};

struct SubsetResidual {
  double mean = 0.0;
  double sd = 0.0;
};

struct ModelOutcome {
  ModelSpec spec;
  std::optional<CrpsTable> table;
  double dic = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::vector<SubsetResidual>> residuals;  // [t][g]
  double residual_mean = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> failures;

  bool ok() const { return table.has_value(); }
};

struct CrossvalResult {
  FoldAssignment assignment;
  std::vector<PartitionScheme> partitions;  // per campaign
  std::vector<ModelOutcome> models;
  std::vector<std::string> covariate_columns;

  std::size_t failed_tasks() const;
  std::vector<RankedModel> ranking_rows() const;
};

CrossvalResult run_crossval(const CovariateStack& stack, const PointPattern& pattern,
                            const std::vector<DomainMask>& campaign_domains, const std::vector<ModelSpec>& models,
                            const CrossvalOptions& options);

void write_crps_by_model(const std::filesystem::path& path, const std::vector<RankedModel>& rows,
                         const std::vector<std::string>& covariate_columns);
std::vector<RankedModel> read_crps_by_model(const std::filesystem::path& path,
                                            std::vector<std::string>* covariate_columns = nullptr);
void write_crossval_outputs(const std::filesystem::path& dir, const CrossvalResult& result);

}  // namespace lgcpcv
