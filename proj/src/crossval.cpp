#include "lgcpcv/crossval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "lgcpcv/rng.hpp"
#include "lgcpcv/text.hpp"

namespace lgcpcv {

std::size_t FoldAssignment::count(int fold) const {
  return static_cast<std::size_t>(std::count(marks.begin(), marks.end(), fold));
}

FoldAssignment assign_folds(const PointPattern& pattern, int k, std::uint64_t seed) {
  if (k < 1) throw UsageError("fold count must be at least 1");
  FoldAssignment fa;
  fa.k = k;
  fa.seed = seed;
  fa.marks.resize(pattern.size());
  const std::uint64_t stream = derive_seed(seed, {hash_string("folds")});
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    const std::uint64_t h = derive_seed(stream, {i});
    // multiply-shift maps the 64-bit hash onto 0..k-1 without modulo bias worth mentioning
    const auto m = static_cast<int>((static_cast<unsigned __int128>(h) * static_cast<unsigned>(k)) >> 64);
    fa.marks[i] = m + 1;
  }
  return fa;
}

FoldSplit split(const PointPattern& pattern, const FoldAssignment& assignment, int fold) {
  if (assignment.marks.size() != pattern.size()) throw UsageError("fold assignment does not match the pattern");
  if (fold < 1 || fold > assignment.k) throw UsageError("fold " + std::to_string(fold) + " out of range");
  FoldSplit s;
  for (std::size_t i = 0; i < pattern.size(); ++i)
    (assignment.marks[i] == fold ? s.validation : s.train).points.push_back(pattern.points[i]);
  return s;
}

ThinnedIntensity thin_intensity(const std::vector<double>& lambda, int k) {
  if (k < 2) throw UsageError("thinning needs K >= 2");
  ThinnedIntensity out;
  out.train.resize(lambda.size());
  out.validation.resize(lambda.size());
  const double kk = static_cast<double>(k);
  for (std::size_t i = 0; i < lambda.size(); ++i) {
    if (!(lambda[i] >= 0)) throw UsageError("intensity must be non-negative");
    out.train[i] = lambda[i] * (kk - 1.0) / kk;
    out.validation[i] = lambda[i] - out.train[i];
  }
  return out;
}

// ---------------------------------------------------------------------------

ResidualTensor::ResidualTensor(int campaign, std::size_t draws, std::size_t folds, std::size_t subsets)
    : campaign_(campaign), draws_(draws), folds_(folds), subsets_(subsets), values_(draws * folds * subsets, 0.0) {}

std::vector<double> ResidualTensor::samples(std::size_t k, std::size_t g) const {
  const auto begin = values_.begin() + static_cast<std::ptrdiff_t>((k * subsets_ + g) * draws_);
  return {begin, begin + static_cast<std::ptrdiff_t>(draws_)};
}

double ResidualTensor::mean() const {
  if (values_.empty()) return 0.0;
  return std::accumulate(values_.begin(), values_.end(), 0.0) / static_cast<double>(values_.size());
}

double validation_residual(double observed, double train_integral, int k) {
  if (k < 2) throw UsageError("validation residuals need K >= 2");
  return observed - train_integral / static_cast<double>(k - 1);
}

void fill_validation_residuals(ResidualTensor& tensor, int fold, const PointPattern& validation,
                               const PosteriorDraws& draws, const Design& design, const PartitionScheme& partition,
                               int k) {
  const auto& grid = partition.domain.grid;
  if (!grid.same_as(design.grid)) throw UsageError("partition and quadrature grids differ");
  if (fold < 1 || static_cast<std::size_t>(fold) > tensor.folds()) throw UsageError("fold out of range");
  if (draws.size() != tensor.draws() || partition.size() != tensor.subsets())
    throw UsageError("residual tensor dimensions do not match the draws or partition");
  const int t = tensor.campaign();
  const auto kf = static_cast<std::size_t>(fold - 1);

  std::vector<double> observed(partition.size(), 0.0);
  for (const auto& p : validation.points) {
    if (p.campaign != t) continue;
    const auto cell = grid.cell_at(p.x, p.y);
    if (!cell || partition.subset_of_cell[*cell] < 0)
      throw UsageError("validation point outside the campaign partition");
    observed[static_cast<std::size_t>(partition.subset_of_cell[*cell])] += 1.0;
  }

  const double area = grid.cell_area();
  std::vector<double> integral(partition.size());
  for (std::size_t a = 0; a < draws.size(); ++a) {
    const auto& ev = draws.draws[a];
    const double shift = ev.mu0 + ev.campaign_effect(t);
    const double gamma = design.include_effort ? ev.gamma : 0.0;
    std::fill(integral.begin(), integral.end(), 0.0);
    for (std::size_t g = 0; g < partition.size(); ++g) {
      double s = 0.0;
      for (auto cell : partition.subsets[g].cells)
        s += std::exp(shift + gamma * design.z[cell] + design.linear(cell, ev.beta) +
                      ev.w[static_cast<Eigen::Index>(cell)]);
      integral[g] = area * s;
    }
    for (std::size_t g = 0; g < partition.size(); ++g)
      tensor.at(a, kf, g) = validation_residual(observed[g], integral[g], k);
  }
}

double crps_empirical(std::vector<double> samples, double y) {
  if (samples.empty()) throw UsageError("CRPS needs at least one sample");
  const double n = static_cast<double>(samples.size());
  std::sort(samples.begin(), samples.end());
  double abs_dev = 0.0, spread = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    abs_dev += std::abs(samples[i] - y);
    // sum_{i,l} |r_i - r_l| = 2 sum_i (2i - A - 1) r_(i) over sorted samples, i 1-based
    spread += (2.0 * static_cast<double>(i + 1) - n - 1.0) * samples[i];
  }
  return std::max(0.0, abs_dev / n - spread / (n * n));
}

Weighting parse_weighting(const std::string& text) {
  const auto s = text::lower(text::trim(text));
  if (s == "unweighted" || s == "mean") return Weighting::unweighted;
  if (s == "area") return Weighting::area;
  throw UsageError("unknown weighting '" + text + "' (expected unweighted or area)");
}

std::string to_string(Weighting w) { return w == Weighting::area ? "area" : "unweighted"; }

CrpsTable aggregate_crps(const std::string& model_id, const std::vector<ResidualTensor>& tensors,
                         const std::vector<std::vector<double>>& areas, Weighting weighting) {
  if (tensors.empty()) throw UsageError("no residual tensors to aggregate");
  if (weighting == Weighting::area && areas.size() != tensors.size())
    throw UsageError("area weighting needs subset areas for every campaign");
  CrpsTable table;
  table.model_id = model_id;
  double total = 0.0;
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    const auto& r = tensors[t];
    std::vector<double> scores(r.subsets(), 0.0), weights(r.subsets(), 1.0);
    for (std::size_t g = 0; g < r.subsets(); ++g) {
      for (std::size_t k = 0; k < r.folds(); ++k) scores[g] += crps_empirical(r.samples(k, g), 0.0);
      scores[g] /= static_cast<double>(r.folds());
      if (weighting == Weighting::area) weights[g] = areas[t].at(g);
      total += weights[g];
    }
    table.scores.push_back(std::move(scores));
    table.weights.push_back(std::move(weights));
  }
  if (!(total > 0)) throw UsageError("no subsets to aggregate");
  table.aggregate = 0.0;
  for (std::size_t t = 0; t < table.scores.size(); ++t) {
    for (std::size_t g = 0; g < table.scores[t].size(); ++g) {
      table.weights[t][g] /= total;
      table.aggregate += table.weights[t][g] * table.scores[t][g];
    }
  }
  return table;
}

std::vector<RankedModel> rank_models(std::vector<RankedModel> models) {
  std::stable_sort(models.begin(), models.end(), [](const RankedModel& a, const RankedModel& b) {
    const bool fa = std::isfinite(a.crps), fb = std::isfinite(b.crps);
    if (fa != fb) return fa;
    if (fa && a.crps != b.crps) return a.crps < b.crps;
    return a.model_id < b.model_id;
  });
  return models;
}

// ---------------------------------------------------------------------------

namespace {

template <class Fn>
void run_pool(std::size_t n_tasks, int workers, Fn&& task) {
  const auto n_threads = static_cast<std::size_t>(std::max(1, workers));
  std::atomic<std::size_t> next{0};
  auto loop = [&] {
    for (std::size_t i = next++; i < n_tasks; i = next++) task(i);
  };
  if (n_threads == 1 || n_tasks <= 1) {
    loop();
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(n_threads, n_tasks); ++w) pool.emplace_back(loop);
  for (auto& th : pool) th.join();
}

struct ModelState {
  Design design;
  std::optional<Eigen::VectorXd> theta_start;
  std::mutex mutex;
  std::vector<ResidualTensor> tensors;
  int folds_done = 0;
  std::vector<std::string> fold_errors;  // one slot per fold
  std::string full_fit_error;
};

std::uint64_t model_stream(std::uint64_t seed, const std::string& id) { return derive_seed(seed, {hash_string(id)}); }

}  // namespace

std::size_t CrossvalResult::failed_tasks() const {
  std::size_t n = 0;
  for (const auto& m : models) n += m.failures.size();
  return n;
}

std::vector<RankedModel> CrossvalResult::ranking_rows() const {
  std::vector<RankedModel> rows;
  for (const auto& m : models) {
    RankedModel r;
    r.model_id = m.spec.model_id;
    for (const auto& name : covariate_columns) {
      const auto& cov = m.spec.covariate_names;
      r.flags.emplace_back(name, std::find(cov.begin(), cov.end(), name) != cov.end() ? 1 : 0);
    }
    r.crps = m.ok() ? m.table->aggregate : std::numeric_limits<double>::quiet_NaN();
    r.dic = m.dic;
    r.status = m.ok() ? "ok" : "failed";
    rows.push_back(std::move(r));
  }
  return rows;
}

CrossvalResult run_crossval(const CovariateStack& stack, const PointPattern& pattern,
                            const std::vector<DomainMask>& campaign_domains, const std::vector<ModelSpec>& models,
                            const CrossvalOptions& options) {
  if (options.folds < 2) throw UsageError("cross-validation needs at least 2 folds");
  if (options.inference.n_draws < 1) throw UsageError("at least one posterior draw is required");
  if (models.empty()) throw UsageError("no models to cross-validate");
  if (campaign_domains.empty()) throw UsageError("no campaign domains");
  {
    std::set<std::string> ids;
    for (const auto& m : models)
      if (!ids.insert(m.model_id).second) throw UsageError("duplicate model_id '" + m.model_id + "'");
  }
  const int n_camp = static_cast<int>(campaign_domains.size());
  const int k = options.folds;

  CrossvalResult result;
  result.assignment = assign_folds(pattern, k, options.seed);
  std::vector<QuadratureScheme> quads;
  std::vector<std::vector<double>> areas;
  for (const auto& dom : campaign_domains) {
    quads.push_back(build_quadrature(dom));
    result.partitions.push_back(build_partition(dom, options.partition_rows, options.partition_cols));
    std::vector<double> a;
    for (const auto& s : result.partitions.back().subsets) a.push_back(s.area);
    areas.push_back(std::move(a));
  }
  for (const auto& m : models) {
    for (const auto& name : m.covariate_names)
      if (std::find(result.covariate_columns.begin(), result.covariate_columns.end(), name) ==
          result.covariate_columns.end())
        result.covariate_columns.push_back(name);
  }

  const GriddedLikelihood full = bin_points(pattern, quads);
  std::vector<FoldSplit> splits;
  std::vector<GriddedLikelihood> train_lik;
  for (int f = 1; f <= k; ++f) {
    splits.push_back(split(pattern, result.assignment, f));
    train_lik.push_back(bin_points(splits.back().train, quads));
  }

  std::vector<std::unique_ptr<ModelState>> states;
  result.models.resize(models.size());
  for (std::size_t m = 0; m < models.size(); ++m) {
    if (models[m].n_campaigns != n_camp)
      throw UsageError("model " + models[m].model_id + " expects " + std::to_string(models[m].n_campaigns) +
                       " campaigns, data has " + std::to_string(n_camp));
    auto st = std::make_unique<ModelState>();
    st->design = build_design(stack, models[m]);
    st->fold_errors.assign(static_cast<std::size_t>(k), {});
    states.push_back(std::move(st));
    result.models[m].spec = models[m];
  }

  // Full-data pass: DIC (when asked) and a hyperparameter warm start for the fold fits.
  run_pool(models.size(), options.workers, [&](std::size_t m) {
    auto& st = *states[m];
    try {
      if (options.compute_dic) {
        auto opts = options.inference;
        if (opts.n_draws < 2) opts.n_draws = 2;
        const auto fitted =
            fit(full, models[m], st.design, opts, derive_seed(model_stream(options.seed, models[m].model_id), {0}));
        result.models[m].dic = fitted.summary.dic;
        st.theta_start = fitted.draws.theta_mode;
      } else {
        st.theta_start = find_hyper_mode(full, models[m], st.design, options.inference);
      }
    } catch (const std::exception& e) {
      st.full_fit_error = std::string("full-data fit: ") + e.what();
    }
  });

  const std::size_t n_tasks = models.size() * static_cast<std::size_t>(k);
  run_pool(n_tasks, options.workers, [&](std::size_t task) {
    const std::size_t m = task / static_cast<std::size_t>(k);
    const int fold = static_cast<int>(task % static_cast<std::size_t>(k)) + 1;
    auto& st = *states[m];
    auto& outcome = result.models[m];
    std::vector<ResidualTensor> slices;
    std::string error;
    try {
      auto opts = options.inference;
      if (st.theta_start) opts.theta_start = st.theta_start;
      const auto fitted = fit(train_lik[static_cast<std::size_t>(fold - 1)], models[m], st.design, opts,
                              derive_seed(model_stream(options.seed, models[m].model_id), {static_cast<std::uint64_t>(fold)}));
      for (int t = 1; t <= n_camp; ++t) {
        const auto& part = result.partitions[static_cast<std::size_t>(t - 1)];
        ResidualTensor slice(t, fitted.draws.size(), 1, part.size());
        fill_validation_residuals(slice, 1, splits[static_cast<std::size_t>(fold - 1)].validation, fitted.draws,
                                  st.design, part, k);
        slices.push_back(std::move(slice));
      }
    } catch (const std::exception& e) {
      error = "fold " + std::to_string(fold) + ": " + e.what();
    }

    std::lock_guard lock(st.mutex);
    if (!error.empty()) {
      st.fold_errors[static_cast<std::size_t>(fold - 1)] = error;
    } else {
      if (st.tensors.empty())
        for (int t = 1; t <= n_camp; ++t)
          st.tensors.emplace_back(t, options.inference.n_draws, static_cast<std::size_t>(k),
                                  result.partitions[static_cast<std::size_t>(t - 1)].size());
      for (std::size_t t = 0; t < slices.size(); ++t)
        for (std::size_t g = 0; g < slices[t].subsets(); ++g)
          for (std::size_t a = 0; a < slices[t].draws(); ++a)
            st.tensors[t].at(a, static_cast<std::size_t>(fold - 1), g) = slices[t].at(a, 0, g);
    }
    if (++st.folds_done < k) return;

    // Last fold of this model: score it and release the tensors.
    const bool complete = std::all_of(st.fold_errors.begin(), st.fold_errors.end(),
                                      [](const std::string& s) { return s.empty(); });
    if (complete) {
      outcome.table = aggregate_crps(models[m].model_id, st.tensors, areas, options.weighting);
      double grand = 0.0, count = 0.0;
      for (const auto& r : st.tensors) {
        std::vector<SubsetResidual> per(r.subsets());
        const double n = static_cast<double>(r.draws() * r.folds());
        for (std::size_t g = 0; g < r.subsets(); ++g) {
          double s = 0.0, ss = 0.0;
          for (std::size_t kk = 0; kk < r.folds(); ++kk)
            for (std::size_t a = 0; a < r.draws(); ++a) s += r.at(a, kk, g);
          per[g].mean = s / n;
          for (std::size_t kk = 0; kk < r.folds(); ++kk)
            for (std::size_t a = 0; a < r.draws(); ++a) ss += (r.at(a, kk, g) - per[g].mean) * (r.at(a, kk, g) - per[g].mean);
          per[g].sd = n > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
          grand += s;
          count += n;
        }
        outcome.residuals.push_back(std::move(per));
      }
      outcome.residual_mean = grand / count;
    }
    st.tensors.clear();
    st.tensors.shrink_to_fit();
  });

  for (std::size_t m = 0; m < models.size(); ++m) {
    auto& st = *states[m];
    if (!st.full_fit_error.empty()) result.models[m].failures.push_back(st.full_fit_error);
    for (const auto& e : st.fold_errors)
      if (!e.empty()) result.models[m].failures.push_back(e);
  }
  return result;
}

// ---------------------------------------------------------------------------

void write_crps_by_model(const std::filesystem::path& path, const std::vector<RankedModel>& rows,
                         const std::vector<std::string>& covariate_columns) {
  std::ostringstream out;
  out << "model_id";
  for (const auto& c : covariate_columns) out << ',' << c;
  out << ",crps,dic,status\n";
  for (const auto& r : rows) {
    out << r.model_id;
    for (const auto& c : covariate_columns) {
      int flag = 0;
      for (const auto& [name, v] : r.flags)
        if (name == c) flag = v;
      out << ',' << flag;
    }
    out << ',' << text::format_double(r.crps) << ',' << text::format_double(r.dic) << ',' << r.status << "\n";
  }
  text::write_atomic(path, out.str());
}

std::vector<RankedModel> read_crps_by_model(const std::filesystem::path& path,
                                            std::vector<std::string>* covariate_columns) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string(), 1, "empty file");
  const auto header = text::split(line, ',');
  const auto find = [&](const std::string& name) -> std::ptrdiff_t {
    auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : it - header.begin();
  };
  const auto id_col = find("model_id"), crps_col = find("crps");
  if (id_col != 0 || crps_col < 0) throw ParseError(path.string(), 1, "header needs model_id first and a crps column");
  const auto dic_col = find("dic"), status_col = find("status");
  std::vector<std::string> flags(header.begin() + 1, header.begin() + crps_col);
  if (covariate_columns) *covariate_columns = flags;

  std::vector<RankedModel> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    const auto f = text::split(line, ',');
    if (f.size() != header.size()) throw ParseError(path.string(), line_no, "row length mismatch");
    RankedModel r;
    r.model_id = f[0];
    for (std::size_t j = 0; j < flags.size(); ++j) {
      long long v = 0;
      if (!text::to_int(f[j + 1], v) || (v != 0 && v != 1))
        throw ParseError(path.string(), line_no, "covariate flag must be 0 or 1");
      r.flags.emplace_back(flags[j], static_cast<int>(v));
    }
    auto number = [&](std::ptrdiff_t col) {
      if (col < 0) return std::numeric_limits<double>::quiet_NaN();
      const auto& s = f[static_cast<std::size_t>(col)];
      if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
      double v = 0;
      if (!text::to_double(s, v)) throw ParseError(path.string(), line_no, "bad number '" + s + "'");
      return v;
    };
    r.crps = number(crps_col);
    r.dic = number(dic_col);
    if (status_col >= 0) r.status = f[static_cast<std::size_t>(status_col)];
    rows.push_back(std::move(r));
  }
  return rows;
}

namespace {

std::string safe_name(const std::string& id) {
  std::string s = id;
  for (char& c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
  return s.empty() ? "_" : s;
}

}  // namespace

void write_crossval_outputs(const std::filesystem::path& dir, const CrossvalResult& result) {
  std::filesystem::create_directories(dir);
  write_crps_by_model(dir / "crps_by_model.csv", result.ranking_rows(), result.covariate_columns);
  std::ostringstream failures;
  for (const auto& m : result.models) {
    for (const auto& f : m.failures) failures << m.spec.model_id << ": " << f << "\n";
    if (!m.ok()) continue;
    const auto sub = dir / safe_name(m.spec.model_id);
    std::filesystem::create_directories(sub);
    for (std::size_t t = 0; t < m.residuals.size(); ++t) {
      const auto& part = result.partitions[t];
      std::ostringstream res, crps;
      res << "g,xmin,ymin,xmax,ymax,residual_mean,residual_sd\n";
      crps << "g,crps\n";
      for (std::size_t g = 0; g < part.size(); ++g) {
        const auto& s = part.subsets[g];
        res << g + 1 << ',' << text::format_double(s.xmin) << ',' << text::format_double(s.ymin) << ','
            << text::format_double(s.xmax) << ',' << text::format_double(s.ymax) << ','
            << text::format_double(m.residuals[t][g].mean) << ',' << text::format_double(m.residuals[t][g].sd)
            << "\n";
        crps << g + 1 << ',' << text::format_double(m.table->scores[t][g]) << "\n";
      }
      const auto tag = std::to_string(t + 1);
      text::write_atomic(sub / ("residual_map_t" + tag + ".csv"), res.str());
      text::write_atomic(sub / ("crps_map_t" + tag + ".csv"), crps.str());
    }
  }
  std::ostringstream parts;
  parts << "campaign,subsets,empty_subsets\n";
  for (std::size_t t = 0; t < result.partitions.size(); ++t)
    parts << t + 1 << ',' << result.partitions[t].size() << ',' << result.partitions[t].empty_subsets << "\n";
  text::write_atomic(dir / "partition_summary.csv", parts.str());
  if (!failures.str().empty()) text::write_atomic(dir / "failures.log", failures.str());
}

}  // namespace lgcpcv
