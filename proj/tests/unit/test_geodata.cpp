#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "lgcpcv/geodata.hpp"
#include "support/fixtures.hpp"
#include "support/tempdir.hpp"

using namespace lgcpcv;
using fixtures::TempDir;
using fixtures::write_file;

namespace {

std::string ascii_header(int cols, int rows, double cell, double x0 = 0, double y0 = 0) {
  return "ncols " + std::to_string(cols) + "\nnrows " + std::to_string(rows) + "\nxllcorner " +
         std::to_string(x0) + "\nyllcorner " + std::to_string(y0) + "\ncellsize " + std::to_string(cell) +
         "\nNODATA_value -9999\n";
}

RasterGrid constant_raster(std::size_t rows, std::size_t cols, double cell, double value) {
  return RasterGrid::filled(fixtures::square_grid(rows, cols, cell), value);
}

void check_set_partition(const PartitionScheme& p) {
  std::vector<int> hits(p.domain.grid.size(), 0);
  for (const auto& s : p.subsets) {
    CHECK_FALSE(s.cells.empty());
    for (auto c : s.cells) ++hits[c];
  }
  for (std::size_t c = 0; c < hits.size(); ++c) CHECK(hits[c] == (p.domain.contains_cell(c) ? 1 : 0));
}

}  // namespace

TEST_CASE("ascii grid reads back values and area") {
  TempDir dir;
  write_file(dir / "a.asc", ascii_header(2, 2, 1.0) + "1 2\n3 4\n");
  const auto r = load_raster(dir / "a.asc", RasterKind::continuous);
  CHECK(r.geometry.size() == 4);
  CHECK(r.total_area() == doctest::Approx(4.0));
  CHECK(r.values == std::vector<double>{1, 2, 3, 4});
  // row 0 is the northern row
  CHECK(r.geometry.center_y(0) == doctest::Approx(1.5));
  CHECK(r.geometry.center_y(2) == doctest::Approx(0.5));
}

TEST_CASE("short row is a parse error naming its line") {
  TempDir dir;
  write_file(dir / "bad.asc", ascii_header(2, 2, 1.0) + "1 2\n3\n");
  try {
    load_raster(dir / "bad.asc", RasterKind::continuous);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("row length mismatch") != std::string::npos);
    CHECK(e.line() == 8);
  }
}

TEST_CASE("malformed header and missing file") {
  TempDir dir;
  write_file(dir / "h.asc", "ncols 2\nnrows two\n");
  CHECK_THROWS_AS(load_raster(dir / "h.asc", RasterKind::continuous), ParseError);
  CHECK_THROWS_AS(load_raster(dir / "nope.asc", RasterKind::continuous), UsageError);
}

TEST_CASE("categorical raster checks codes against a five-class legend") {
  TempDir dir;
  write_file(dir / "legend.csv",
             "code,label\n1,posidonia\n2,dead matte\n3,transplanted\n4,sand\n5,hard bottom\n");
  const auto legend = load_legend(dir / "legend.csv");
  CHECK(legend.size() == 5);
  write_file(dir / "ok.asc", ascii_header(5, 1, 1.0) + "1 2 3 4 5\n");
  const auto r = load_raster(dir / "ok.asc", RasterKind::categorical, &legend);
  CHECK(r.kind == RasterKind::categorical);
  write_file(dir / "bad.asc", ascii_header(5, 1, 1.0) + "1 2 9 4 5\n");
  CHECK_THROWS_AS(load_raster(dir / "bad.asc", RasterKind::categorical, &legend), ParseError);
}

TEST_CASE("NODATA cells are missing and leave the study domain") {
  TempDir dir;
  write_file(dir / "h.asc", ascii_header(2, 2, 1.0) + "1 -9999\n2 1\n");
  const Legend legend{{1, "seagrass"}, {2, "sand"}};
  const auto r = load_raster(dir / "h.asc", RasterKind::categorical, &legend);
  CHECK(r.is_missing(1));
  const auto d = split_domains(r, 1);
  CHECK(d.full.n_cells() == 3);
  CHECK(d.effort.n_cells() == 2);
  CHECK(d.other.n_cells() == 1);
}

TEST_CASE("raster write and read round trip") {
  TempDir dir;
  auto r = constant_raster(3, 4, 0.5, 0.0);
  for (std::size_t i = 0; i < r.values.size(); ++i) r.values[i] = 0.1 * static_cast<double>(i) - 0.3;
  r.values[5] = std::numeric_limits<double>::quiet_NaN();
  write_raster(dir / "r.asc", r);
  const auto back = load_raster(dir / "r.asc", RasterKind::continuous);
  CHECK(back.geometry.same_as(r.geometry));
  for (std::size_t i = 0; i < r.values.size(); ++i) {
    if (i == 5) CHECK(back.is_missing(i));
    else CHECK(back.values[i] == r.values[i]);
  }
}

TEST_CASE("zonal mean and majority") {
  SUBCASE("2x2 block mean") {
    auto r = constant_raster(2, 2, 1.0, 0.0);
    r.values = {1, 2, 3, 4};
    const auto c = zonal_aggregate(r, 2.0, Reducer::mean);
    REQUIRE(c.geometry.size() == 1);
    CHECK(c.values[0] == doctest::Approx(2.5));
  }
  SUBCASE("majority of {1,1,2}") {
    auto r = RasterGrid::filled(fixtures::square_grid(2, 2), 1.0, RasterKind::categorical);
    r.legend = {{1, "a"}, {2, "b"}};
    r.values = {1, 1, 2, std::numeric_limits<double>::quiet_NaN()};
    const auto c = zonal_aggregate(r, 2.0, Reducer::majority);
    CHECK(c.values[0] == 1.0);
  }
  SUBCASE("constant 0.25 m field to 1 m") {
    const auto r = constant_raster(8, 8, 0.25, 7.0);
    const auto c = zonal_aggregate(r, 1.0, Reducer::mean);
    CHECK(c.geometry.n_rows == 2);
    CHECK(c.geometry.n_cols == 2);
    for (double v : c.values) CHECK(v == doctest::Approx(7.0));
  }
  SUBCASE("fully missing zone stays missing") {
    auto r = constant_raster(2, 4, 1.0, 3.0);
    for (std::size_t i : {0, 1, 4, 5}) r.values[i] = std::numeric_limits<double>::quiet_NaN();
    const auto c = zonal_aggregate(r, 2.0, Reducer::mean);
    CHECK(c.is_missing(0));
    CHECK(c.values[1] == doctest::Approx(3.0));
  }
  SUBCASE("misuse") {
    const auto r = constant_raster(4, 4, 1.0, 1.0);
    CHECK_THROWS_AS(zonal_aggregate(r, 2.0, Reducer::majority), UsageError);
    CHECK_THROWS_AS(zonal_aggregate(r, 0.5, Reducer::mean), UsageError);
  }
}

TEST_CASE("D1 and D2 are disjoint and cover D") {
  const auto stack = fixtures::patchy_stack(24, 6.0, 3);
  const auto& d = stack.domains();
  for (std::size_t c = 0; c < stack.grid().size(); ++c) {
    CHECK_FALSE((d.effort.contains_cell(c) && d.other.contains_cell(c)));
    CHECK(d.full.contains_cell(c) == (d.effort.contains_cell(c) || d.other.contains_cell(c)));
  }
  CHECK(d.full.area == doctest::Approx(d.effort.area + d.other.area));
}

TEST_CASE("half-open cell boundaries") {
  const auto g = fixtures::square_grid(2, 2);
  CHECK(g.cell_at(0.0, 0.0) == g.index(1, 0));
  CHECK(g.cell_at(1.0, 1.0) == g.index(0, 1));
  CHECK(g.cell_at(0.999, 1.0) == g.index(0, 0));
  CHECK_FALSE(g.cell_at(2.0, 0.5).has_value());
  CHECK_FALSE(g.cell_at(0.5, 2.0).has_value());
  CHECK(g.cell_at(1.999, 1.999) == g.index(0, 1));
}

TEST_CASE("18 x 18 partition of the unit square has 324 subsets") {
  const auto g = fixtures::square_grid(36, 36, 1.0 / 36.0);
  const auto p = build_partition(DomainMask::full(g), 18, 18);
  CHECK(p.size() == 324);
  CHECK(p.empty_subsets == 0);
  for (const auto& s : p.subsets) CHECK(s.cells.size() == 4);
  check_set_partition(p);
}

TEST_CASE("1 x 1 partition is the whole domain") {
  const auto g = fixtures::square_grid(5, 7);
  const auto p = build_partition(DomainMask::full(g), 1, 1);
  REQUIRE(p.size() == 1);
  CHECK(p.subsets[0].cells.size() == 35);
  CHECK(p.subsets[0].area == doctest::Approx(35.0));
}

TEST_CASE("L-shaped mask on 4 x 4 with a 2 x 2 lattice") {
  // Quadrants: top-left rows 0-1 cols 0-1, top-right rows 0-1 cols 2-3,
  // bottom-left rows 2-3 cols 0-1; the bottom-right quadrant is excluded.
  const auto g = fixtures::square_grid(4, 4);
  std::vector<std::uint8_t> cells(16, 1);
  for (std::size_t r = 2; r < 4; ++r)
    for (std::size_t c = 2; c < 4; ++c) cells[g.index(r, c)] = 0;
  const auto p = build_partition(DomainMask::from_cells(g, cells), 2, 2);
  REQUIRE(p.size() == 3);
  CHECK(p.empty_subsets == 1);
  const std::set<std::size_t> top_left{0, 1, 4, 5}, top_right{2, 3, 6, 7}, bottom_left{8, 9, 12, 13};
  std::vector<std::set<std::size_t>> got;
  for (const auto& s : p.subsets) got.emplace_back(s.cells.begin(), s.cells.end());
  CHECK(got[0] == top_left);
  CHECK(got[1] == top_right);
  CHECK(got[2] == bottom_left);
  check_set_partition(p);
}

TEST_CASE("random masks are partitioned exactly") {
  Rng rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const auto g = fixtures::square_grid(5 + rep % 7, 9 + rep % 4);
    std::vector<std::uint8_t> cells(g.size());
    std::bernoulli_distribution keep(0.6);
    for (auto& c : cells) c = keep(rng);
    cells[0] = 1;
    const auto p = build_partition(DomainMask::from_cells(g, cells), 1 + rep % 5, 2 + rep % 3);
    check_set_partition(p);
    CHECK(p.size() + p.empty_subsets == p.lattice_rows * p.lattice_cols);
  }
}

TEST_CASE("empty domain cannot be partitioned") {
  const auto g = fixtures::square_grid(3, 3);
  const auto empty = DomainMask::from_cells(g, std::vector<std::uint8_t>(9, 0));
  CHECK_THROWS_AS(build_partition(empty, 2, 2), UsageError);
  CHECK_THROWS_AS(build_quadrature(empty), UsageError);
}

TEST_CASE("quadrature on the unit square at 0.5 m") {
  const auto q = build_quadrature(DomainMask::full(fixtures::square_grid(2, 2, 0.5)));
  REQUIRE(q.size() == 4);
  for (double w : q.weights) CHECK(w == 0.25);
  CHECK(q.total_weight() == 1.0);
  double integral = 0;
  for (double w : q.weights) integral += w * 2.0;
  CHECK(integral == 2.0);
  for (std::size_t i = 0; i < q.size(); ++i) CHECK(q.domain.contains(q.x[i], q.y[i]));
}

TEST_CASE("quadrature weights sum to the domain area") {
  const auto stack = fixtures::patchy_stack(40, 8.0, 5);
  for (auto kind : {DomainKind::full, DomainKind::effort, DomainKind::other}) {
    const auto& d = stack.domains().get(kind);
    const auto q = build_quadrature(d);
    CHECK(std::abs(q.total_weight() - d.area) <= 1e-9 * d.area);
    for (std::size_t i = 0; i < q.size(); ++i) CHECK(d.contains(q.x[i], q.y[i]));
  }
  const auto g = fixtures::square_grid(3, 1);
  const auto q = build_quadrature(DomainMask::full(g));
  CHECK(q.size() == 3);
  CHECK(q.total_weight() == 3.0);
}

TEST_CASE("subset integrals add up to the domain integral") {
  const auto stack = fixtures::patchy_stack(30, 6.0, 9);
  const auto& d = stack.domains().full;
  const auto q = build_quadrature(d);
  const auto p = build_partition(d, 7, 5);
  std::vector<double> lambda(d.grid.size());
  for (std::size_t c = 0; c < lambda.size(); ++c) lambda[c] = std::exp(std::sin(0.3 * static_cast<double>(c)));
  double total = 0;
  for (std::size_t i = 0; i < q.size(); ++i) total += q.weights[i] * lambda[q.cells[i]];
  double by_subset = 0;
  for (const auto& s : p.subsets) {
    double part = 0;
    for (auto c : s.cells) part += d.grid.cell_area() * lambda[c];
    by_subset += part;
  }
  CHECK(by_subset == doctest::Approx(total).epsilon(1e-12));
}

TEST_CASE("points file round trip and campaign domains") {
  TempDir dir;
  PointPattern pp;
  pp.points = {{0.25, 1.5, 1}, {3.0, 0.125, 2}, {1e-3, 7.75, 2}};
  write_points(dir / "p.csv", pp);
  const auto back = load_points(dir / "p.csv");
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.points[i].x == pp.points[i].x);
    CHECK(back.points[i].y == pp.points[i].y);
    CHECK(back.points[i].campaign == pp.points[i].campaign);
  }
  CHECK(back.count_campaign(2) == 2);
  CHECK(back.max_campaign() == 2);

  write_file(dir / "d.csv", "campaign,domain\n1,D2\n2,D2\n3,D2\n4,D2\n5,D2\n6,D1\n7,D1\n8,D\n9,D\n");
  const auto kinds = load_campaign_domains(dir / "d.csv");
  REQUIRE(kinds.size() == 9);
  for (int t = 0; t < 5; ++t) CHECK(kinds[t] == DomainKind::other);
  CHECK(kinds[5] == DomainKind::effort);
  CHECK(kinds[6] == DomainKind::effort);
  CHECK(kinds[7] == DomainKind::full);
  CHECK(kinds[8] == DomainKind::full);

  write_file(dir / "gap.csv", "campaign,domain\n1,D\n3,D\n");
  CHECK_THROWS_AS(load_campaign_domains(dir / "gap.csv"), ParseError);
  write_file(dir / "bad.csv", "x,y,campaign\n1,2,0\n");
  CHECK_THROWS_AS(load_points(dir / "bad.csv"), ParseError);
}
