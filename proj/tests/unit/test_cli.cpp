#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "lgcpcv/crossval.hpp"
#include "support/study.hpp"

using namespace lgcpcv;
using fixtures::read_file;
using fixtures::run_cli;
using fixtures::TempDir;
using fixtures::write_file;

namespace {

const std::string kBinary = LGCPCV_BINARY;

std::string quote(const std::filesystem::path& p) { return "\"" + p.string() + "\""; }

// A 16 x 16 study with its own simulated points.
std::string prepare(const TempDir& dir) {
  const auto data = fixtures::write_study_files(dir.path(), 16, 4.0, 5);
  const std::string body = data +
                           "[prior]\nrange_threshold = 4\nsd_threshold = 1\nsd_probability = 0.05\n"
                           "[inference]\ndraws = 80\n"
                           "[fit]\ncovariates = depth\n"
                           "[crossval]\nfolds = 3\npartition_rows = 3\npartition_cols = 3\ndic = false\n"
                           "[simulate]\nintercept = 0.3\neffort = -0.4\ncoef.depth = 0.5\nsd = 0.4\nrange = 4\n";
  write_file(dir / "run.ini", body);
  const auto sim = run_cli(kBinary, "simulate --config " + quote(dir / "run.ini") + " --seed 4 --out " +
                                        quote(dir.path()));
  REQUIRE(sim.exit_code == 0);
  return body;
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(run_cli(kBinary, "").exit_code == 2);
  CHECK(run_cli(kBinary, "explode --config x.ini").exit_code == 2);
  CHECK(run_cli(kBinary, "fit").exit_code == 2);
  CHECK(run_cli(kBinary, "fit --config /nonexistent/run.ini").exit_code == 2);
  CHECK(run_cli(kBinary, "fit --config x.ini --workers 0").exit_code == 2);
  CHECK(run_cli(kBinary, "--help").exit_code == 0);

  TempDir dir;
  write_file(dir / "bad.ini", "[run]\nworkers = lots\n");
  const auto r = run_cli(kBinary, "fit --config " + quote(dir / "bad.ini"));
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("workers") != std::string::npos);

  write_file(dir / "nodata.ini", "[data]\nhabitat = missing.asc\nlegend = missing.csv\neffort_class = 1\n");
  CHECK(run_cli(kBinary, "simulate --config " + quote(dir / "nodata.ini")).exit_code == 2);
}

TEST_CASE("simulate, fit, crossval and rank from the command line") {
  TempDir dir;
  prepare(dir);
  CHECK(std::filesystem::exists(dir / "points.csv"));
  CHECK(std::filesystem::exists(dir / "truth.csv"));
  CHECK(load_points(dir / "points.csv").size() > 50);

  const auto fit = run_cli(kBinary, "fit --config " + quote(dir / "run.ini") + " --out " + quote(dir / "fit"));
  CHECK(fit.exit_code == 0);
  const auto summary = read_file(dir.path() / "fit" / "posterior_summary.csv");
  CHECK(summary.find("intercept,") != std::string::npos);
  CHECK(summary.find("depth,") != std::string::npos);
  CHECK(std::filesystem::exists(dir.path() / "fit" / "field_posterior_mean.asc"));

  write_file(dir / "sweep.csv", "model_id,depth,sand\nA,1,0\nB,0,1\nC,1,1\n");
  const auto cv = run_cli(kBinary, "crossval --config " + quote(dir / "run.ini") + " --workers 2 --out " +
                                       quote(dir / "cv") + " --seed 5");
  CHECK(cv.exit_code == 0);
  const auto rows = read_crps_by_model(dir.path() / "cv" / "crps_by_model.csv");
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].model_id == "M1");

  auto text = read_file(dir / "run.ini");
  text.replace(text.find("[crossval]\n"), 11, "[crossval]\nsweep = sweep.csv\n");
  write_file(dir / "sweep.ini", text);
  const auto sweep = run_cli(kBinary, "crossval --config " + quote(dir / "sweep.ini") + " --out " +
                                          quote(dir / "sweep_out"));
  CHECK(sweep.exit_code == 0);
  CHECK(read_crps_by_model(dir.path() / "sweep_out" / "crps_by_model.csv").size() == 3);

  const auto rank = run_cli(kBinary, "rank --config " + quote(dir / "sweep.ini") + " --out " +
                                         quote(dir / "sweep_out"));
  CHECK(rank.exit_code == 0);
  const auto ranking = read_file(dir.path() / "sweep_out" / "ranking.csv");
  CHECK(ranking.rfind("rank,model_id,depth,sand,crps,dic,status\n1,", 0) == 0);
}

TEST_CASE("failed fold fits give a partial-failure exit") {
  TempDir dir;
  auto body = prepare(dir);
  body.replace(body.find("draws = 80\n"), 11, "draws = 80\nmax_newton = 1\n");
  write_file(dir / "strict.ini", body);
  const auto cv = run_cli(kBinary, "crossval --config " + quote(dir / "strict.ini") + " --out " + quote(dir / "cv"));
  CHECK(cv.exit_code == 1);
  CHECK(std::filesystem::exists(dir.path() / "cv" / "failures.log"));
  const auto fit = run_cli(kBinary, "fit --config " + quote(dir / "strict.ini") + " --out " + quote(dir / "fit"));
  CHECK(fit.exit_code == 1);
}
