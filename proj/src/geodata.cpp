#include "lgcpcv/geodata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "lgcpcv/text.hpp"

namespace lgcpcv {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool close(double a, double b) {
  return std::abs(a - b) <= 1e-9 * std::max({1.0, std::abs(a), std::abs(b)});
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path.string());
  return in;
}

}  // namespace

ParseError::ParseError(const std::string& file, std::size_t line, const std::string& what)
    : std::runtime_error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}

double GridGeometry::center_x(std::size_t cell) const {
  return origin_x + (static_cast<double>(col_of(cell)) + 0.5) * cell_dx;
}

double GridGeometry::center_y(std::size_t cell) const {
  return origin_y + (static_cast<double>(n_rows - row_of(cell)) - 0.5) * cell_dy;
}

std::optional<std::size_t> GridGeometry::cell_at(double x, double y) const {
  if (!std::isfinite(x) || !std::isfinite(y)) return std::nullopt;
  const double fc = std::floor((x - origin_x) / cell_dx);
  const double fr = std::floor((y - origin_y) / cell_dy);
  if (fc < 0 || fr < 0 || fc >= static_cast<double>(n_cols) || fr >= static_cast<double>(n_rows))
    return std::nullopt;
  const auto col = static_cast<std::size_t>(fc);
  const auto row = n_rows - 1 - static_cast<std::size_t>(fr);
  return index(row, col);
}

bool GridGeometry::same_as(const GridGeometry& o) const {
  return n_rows == o.n_rows && n_cols == o.n_cols && close(origin_x, o.origin_x) &&
         close(origin_y, o.origin_y) && close(cell_dx, o.cell_dx) && close(cell_dy, o.cell_dy);
}

RasterGrid RasterGrid::filled(const GridGeometry& g, double value, RasterKind kind) {
  RasterGrid r;
  r.geometry = g;
  r.kind = kind;
  r.values.assign(g.size(), value);
  return r;
}

bool RasterGrid::is_missing(std::size_t cell) const { return std::isnan(values[cell]); }

void RasterGrid::validate() const {
  if (!(geometry.cell_dx > 0) || !(geometry.cell_dy > 0))
    throw UsageError("raster cell size must be positive");
  if (values.size() != geometry.size())
    throw UsageError("raster holds " + std::to_string(values.size()) + " values for " +
                     std::to_string(geometry.n_rows) + "x" + std::to_string(geometry.n_cols) +
                     " cells");
  if (kind == RasterKind::categorical) {
    for (double v : values) {
      if (std::isnan(v)) continue;
      if (v != std::floor(v) || !legend.count(static_cast<int>(v)))
        throw UsageError("categorical code " + text::format_double(v) + " not in legend");
    }
  }
}

Legend load_legend(const std::filesystem::path& path) {
  auto in = open_input(path);
  Legend legend;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    auto fields = text::split(line, ',');
    long long code = 0;
    if (!text::to_int(fields[0], code)) {
      if (lineno == 1 || legend.empty()) continue;  // header
      throw ParseError(path.string(), lineno, "legend code is not an integer");
    }
    if (fields.size() < 2) throw ParseError(path.string(), lineno, "legend row needs code,label");
    if (!legend.emplace(static_cast<int>(code), fields[1]).second)
      throw ParseError(path.string(), lineno, "duplicate legend code " + fields[0]);
  }
  return legend;
}

RasterGrid load_raster(const std::filesystem::path& path, RasterKind kind, const Legend* legend) {
  if (kind == RasterKind::categorical && legend == nullptr)
    throw UsageError("categorical raster " + path.string() + " needs a legend");
  auto in = open_input(path);
  const std::string file = path.string();

  std::map<std::string, double> header;
  bool x_center = false, y_center = false;
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> first_data;
  std::size_t first_data_line = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto tok = text::split_ws(line);
    if (tok.empty()) continue;
    double probe = 0.0;
    if (text::to_double(tok[0], probe)) {
      first_data = std::move(tok);
      first_data_line = lineno;
      break;
    }
    auto key = text::lower(tok[0]);
    if (tok.size() != 2) throw ParseError(file, lineno, "malformed header line '" + line + "'");
    double value = 0.0;
    if (!text::to_double(tok[1], value))
      throw ParseError(file, lineno, "header value for '" + tok[0] + "' is not a number");
    if (key == "xllcenter") { key = "xllcorner"; x_center = true; }
    if (key == "yllcenter") { key = "yllcorner"; y_center = true; }
    static const char* known[] = {"ncols", "nrows", "xllcorner", "yllcorner",
                                  "cellsize", "dx", "dy", "nodata_value"};
    if (std::find(std::begin(known), std::end(known), key) == std::end(known))
      throw ParseError(file, lineno, "unknown header key '" + tok[0] + "'");
    header[key] = value;
  }
  for (const char* req : {"ncols", "nrows", "xllcorner", "yllcorner"})
    if (!header.count(req)) throw ParseError(file, lineno, std::string("missing header '") + req + "'");

  RasterGrid r;
  r.kind = kind;
  auto& g = r.geometry;
  const double nc = header["ncols"], nr = header["nrows"];
  if (nc < 1 || nr < 1 || nc != std::floor(nc) || nr != std::floor(nr))
    throw ParseError(file, 1, "ncols/nrows must be positive integers");
  g.n_cols = static_cast<std::size_t>(nc);
  g.n_rows = static_cast<std::size_t>(nr);
  if (header.count("cellsize")) {
    g.cell_dx = g.cell_dy = header["cellsize"];
  } else if (header.count("dx") && header.count("dy")) {
    g.cell_dx = header["dx"];
    g.cell_dy = header["dy"];
  } else {
    throw ParseError(file, lineno, "missing header 'cellsize'");
  }
  if (!(g.cell_dx > 0) || !(g.cell_dy > 0)) throw ParseError(file, 1, "cell size must be positive");
  g.origin_x = header["xllcorner"] - (x_center ? 0.5 * g.cell_dx : 0.0);
  g.origin_y = header["yllcorner"] - (y_center ? 0.5 * g.cell_dy : 0.0);
  const bool has_nodata = header.count("nodata_value") != 0;
  const double nodata = has_nodata ? header["nodata_value"] : 0.0;

  r.values.reserve(g.size());
  auto consume = [&](const std::vector<std::string>& tok, std::size_t at) {
    if (r.values.size() >= g.size())
      throw ParseError(file, at, "row count mismatch: more than " + std::to_string(g.n_rows) + " rows");
    if (tok.size() != g.n_cols)
      throw ParseError(file, at, "row length mismatch: expected " + std::to_string(g.n_cols) +
                                     " values, found " + std::to_string(tok.size()));
    for (const auto& t : tok) {
      double v = 0.0;
      if (!text::to_double(t, v)) throw ParseError(file, at, "value '" + t + "' is not a number");
      if (has_nodata && v == nodata) {
        r.values.push_back(kNaN);
        continue;
      }
      if (kind == RasterKind::categorical) {
        if (v != std::floor(v)) throw ParseError(file, at, "categorical value '" + t + "' is not an integer");
        if (!legend->count(static_cast<int>(v)))
          throw ParseError(file, at, "unknown categorical code " + t);
      }
      r.values.push_back(v);
    }
  };
  if (first_data_line == 0) throw ParseError(file, lineno, "raster has no data rows");
  consume(first_data, first_data_line);
  while (std::getline(in, line)) {
    ++lineno;
    auto tok = text::split_ws(line);
    if (tok.empty()) continue;
    consume(tok, lineno);
  }
  if (r.values.size() != g.size())
    throw ParseError(file, lineno, "row count mismatch: expected " + std::to_string(g.n_rows) +
                                       " rows, found " + std::to_string(r.values.size() / g.n_cols));
  if (kind == RasterKind::categorical) r.legend = *legend;
  return r;
}

void write_raster(const std::filesystem::path& path, const RasterGrid& raster) {
  raster.validate();
  const auto& g = raster.geometry;
  constexpr double nodata = -9999.0;
  std::ostringstream out;
  out << "ncols " << g.n_cols << "\n"
      << "nrows " << g.n_rows << "\n"
      << "xllcorner " << text::format_double(g.origin_x) << "\n"
      << "yllcorner " << text::format_double(g.origin_y) << "\n";
  if (g.cell_dx == g.cell_dy) {
    out << "cellsize " << text::format_double(g.cell_dx) << "\n";
  } else {
    out << "dx " << text::format_double(g.cell_dx) << "\n"
        << "dy " << text::format_double(g.cell_dy) << "\n";
  }
  out << "NODATA_value " << text::format_double(nodata) << "\n";
  for (std::size_t r = 0; r < g.n_rows; ++r) {
    for (std::size_t c = 0; c < g.n_cols; ++c) {
      const double v = raster.values[g.index(r, c)];
      if (c) out << ' ';
      out << text::format_double(std::isnan(v) ? nodata : v);
    }
    out << "\n";
  }
  text::write_atomic(path, out.str());
}

RasterGrid zonal_aggregate(const RasterGrid& fine, double coarse_cell, Reducer reducer) {
  const auto& fg = fine.geometry;
  if (!(coarse_cell >= std::max(fg.cell_dx, fg.cell_dy) * (1 - 1e-12)))
    throw UsageError("coarse cell must be at least as large as the fine cells");
  if (fine.kind == RasterKind::continuous && reducer == Reducer::majority)
    throw UsageError("majority reducer applies to categorical rasters only");
  if (fine.kind == RasterKind::categorical && reducer == Reducer::mean)
    throw UsageError("categorical rasters must be aggregated with the majority reducer");

  GridGeometry cg;
  cg.origin_x = fg.origin_x;
  cg.origin_y = fg.origin_y;
  cg.cell_dx = cg.cell_dy = coarse_cell;
  cg.n_cols = static_cast<std::size_t>(std::ceil(fg.width() / coarse_cell - 1e-9));
  cg.n_rows = static_cast<std::size_t>(std::ceil(fg.height() / coarse_cell - 1e-9));

  RasterGrid out = RasterGrid::filled(cg, kNaN, fine.kind);
  out.legend = fine.legend;
  std::vector<double> sum(cg.size(), 0.0);
  std::vector<std::size_t> count(cg.size(), 0);
  std::vector<std::map<int, std::size_t>> votes(reducer == Reducer::majority ? cg.size() : 0);
  for (std::size_t cell = 0; cell < fg.size(); ++cell) {
    if (fine.is_missing(cell)) continue;
    auto target = cg.cell_at(fg.center_x(cell), fg.center_y(cell));
    if (!target) continue;
    if (reducer == Reducer::mean) {
      sum[*target] += fine.values[cell];
      ++count[*target];
    } else {
      ++votes[*target][static_cast<int>(fine.values[cell])];
    }
  }
  for (std::size_t c = 0; c < cg.size(); ++c) {
    if (reducer == Reducer::mean) {
      if (count[c]) out.values[c] = sum[c] / static_cast<double>(count[c]);
    } else if (!votes[c].empty()) {
      // ties go to the smallest code (std::map iterates in ascending order)
      auto best = votes[c].begin();
      for (auto it = votes[c].begin(); it != votes[c].end(); ++it)
        if (it->second > best->second) best = it;
      out.values[c] = best->first;
    }
  }
  return out;
}

DomainMask DomainMask::from_cells(const GridGeometry& g, const std::vector<std::uint8_t>& cells) {
  if (cells.size() != g.size()) throw UsageError("mask size does not match grid");
  DomainMask m;
  m.grid = g;
  m.included = cells;
  for (auto& v : m.included) v = v ? 1 : 0;
  m.area = static_cast<double>(m.n_cells()) * g.cell_area();
  return m;
}

DomainMask DomainMask::full(const GridGeometry& g) {
  return from_cells(g, std::vector<std::uint8_t>(g.size(), 1));
}

bool DomainMask::contains(double x, double y) const {
  auto c = grid.cell_at(x, y);
  return c && included[*c];
}

std::size_t DomainMask::n_cells() const {
  return static_cast<std::size_t>(std::count(included.begin(), included.end(), std::uint8_t{1}));
}

std::vector<std::size_t> DomainMask::cells() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < included.size(); ++i)
    if (included[i]) out.push_back(i);
  return out;
}

const DomainMask& StudyDomains::get(DomainKind kind) const {
  switch (kind) {
    case DomainKind::effort: return effort;
    case DomainKind::other: return other;
    case DomainKind::full: break;
  }
  return full;
}

StudyDomains split_domains(const RasterGrid& habitat, int effort_code) {
  if (habitat.kind != RasterKind::categorical)
    throw UsageError("habitat raster must be categorical");
  if (!habitat.legend.empty() && !habitat.legend.count(effort_code))
    throw UsageError("effort class code " + std::to_string(effort_code) + " not in legend");
  const auto& g = habitat.geometry;
  std::vector<std::uint8_t> d(g.size(), 0), d1(g.size(), 0), d2(g.size(), 0);
  for (std::size_t c = 0; c < g.size(); ++c) {
    if (habitat.is_missing(c)) continue;
    d[c] = 1;
    (static_cast<int>(habitat.values[c]) == effort_code ? d1 : d2)[c] = 1;
  }
  return {DomainMask::from_cells(g, d), DomainMask::from_cells(g, d1), DomainMask::from_cells(g, d2)};
}

DomainKind parse_domain_kind(const std::string& text) {
  auto t = text::lower(text::trim(text));
  if (t == "d") return DomainKind::full;
  if (t == "d1") return DomainKind::effort;
  if (t == "d2") return DomainKind::other;
  throw UsageError("unknown domain '" + text + "' (expected D, D1 or D2)");
}

std::string to_string(DomainKind kind) {
  switch (kind) {
    case DomainKind::effort: return "D1";
    case DomainKind::other: return "D2";
    case DomainKind::full: break;
  }
  return "D";
}

PartitionScheme build_partition(const DomainMask& domain, std::size_t rows, std::size_t cols) {
  if (rows < 1 || cols < 1) throw UsageError("partition needs at least one row and one column");
  const auto& g = domain.grid;
  std::size_t rmin = g.n_rows, rmax = 0, cmin = g.n_cols, cmax = 0;
  bool any = false;
  for (std::size_t c = 0; c < g.size(); ++c) {
    if (!domain.included[c]) continue;
    any = true;
    rmin = std::min(rmin, g.row_of(c));
    rmax = std::max(rmax, g.row_of(c));
    cmin = std::min(cmin, g.col_of(c));
    cmax = std::max(cmax, g.col_of(c));
  }
  if (!any) throw UsageError("cannot partition an empty domain");

  const double xmin = g.origin_x + static_cast<double>(cmin) * g.cell_dx;
  const double xmax = g.origin_x + static_cast<double>(cmax + 1) * g.cell_dx;
  const double ymin = g.origin_y + static_cast<double>(g.n_rows - rmax - 1) * g.cell_dy;
  const double ymax = g.origin_y + static_cast<double>(g.n_rows - rmin) * g.cell_dy;
  const double sw = (xmax - xmin) / static_cast<double>(cols);
  const double sh = (ymax - ymin) / static_cast<double>(rows);

  std::vector<PartitionSubset> lattice(rows * cols);
  for (std::size_t lr = 0; lr < rows; ++lr) {
    for (std::size_t lc = 0; lc < cols; ++lc) {
      auto& s = lattice[lr * cols + lc];
      s.lattice_row = lr;
      s.lattice_col = lc;
      s.xmin = xmin + static_cast<double>(lc) * sw;
      s.xmax = xmin + static_cast<double>(lc + 1) * sw;
      s.ymax = ymax - static_cast<double>(lr) * sh;
      s.ymin = ymax - static_cast<double>(lr + 1) * sh;
    }
  }
  auto clamp_index = [](double f, std::size_t n) {
    if (f < 0) return std::size_t{0};
    return std::min(static_cast<std::size_t>(f), n - 1);
  };
  for (std::size_t c = 0; c < g.size(); ++c) {
    if (!domain.included[c]) continue;
    const std::size_t lc = clamp_index(std::floor((g.center_x(c) - xmin) / sw), cols);
    const std::size_t from_bottom = clamp_index(std::floor((g.center_y(c) - ymin) / sh), rows);
    auto& s = lattice[(rows - 1 - from_bottom) * cols + lc];
    s.cells.push_back(c);
    s.area += g.cell_area();
  }

  PartitionScheme p;
  p.domain = domain;
  p.lattice_rows = rows;
  p.lattice_cols = cols;
  p.subset_of_cell.assign(g.size(), -1);
  for (auto& s : lattice) {
    if (s.cells.empty()) {
      ++p.empty_subsets;
      continue;
    }
    for (auto c : s.cells) p.subset_of_cell[c] = static_cast<int>(p.subsets.size());
    p.subsets.push_back(std::move(s));
  }
  return p;
}

double QuadratureScheme::total_weight() const {
  return std::accumulate(weights.begin(), weights.end(), 0.0);
}

QuadratureScheme build_quadrature(const DomainMask& domain) {
  if (domain.empty()) throw UsageError("cannot build quadrature on an empty domain");
  QuadratureScheme q;
  q.domain = domain;
  q.cells = domain.cells();
  q.x.reserve(q.cells.size());
  q.y.reserve(q.cells.size());
  for (auto c : q.cells) {
    q.x.push_back(domain.grid.center_x(c));
    q.y.push_back(domain.grid.center_y(c));
  }
  q.weights.assign(q.cells.size(), domain.grid.cell_area());
  return q;
}

std::size_t PointPattern::count_campaign(int t) const {
  return static_cast<std::size_t>(
      std::count_if(points.begin(), points.end(), [t](const Point& p) { return p.campaign == t; }));
}

int PointPattern::max_campaign() const {
  int m = 0;
  for (const auto& p : points) m = std::max(m, p.campaign);
  return m;
}

PointPattern load_points(const std::filesystem::path& path) {
  auto in = open_input(path);
  const std::string file = path.string();
  std::string line;
  std::size_t lineno = 0;
  int ix = -1, iy = -1, it = -1;
  PointPattern pattern;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    auto fields = text::split(line, ',');
    if (ix < 0) {
      for (std::size_t i = 0; i < fields.size(); ++i) {
        auto f = text::lower(fields[i]);
        if (f == "x") ix = static_cast<int>(i);
        if (f == "y") iy = static_cast<int>(i);
        if (f == "campaign") it = static_cast<int>(i);
      }
      if (ix < 0 || iy < 0 || it < 0) throw ParseError(file, lineno, "header must name x,y,campaign");
      continue;
    }
    const auto need = static_cast<std::size_t>(std::max({ix, iy, it}));
    if (fields.size() <= need) throw ParseError(file, lineno, "too few fields");
    Point p;
    long long t = 0;
    if (!text::to_double(fields[ix], p.x) || !text::to_double(fields[iy], p.y))
      throw ParseError(file, lineno, "coordinate is not a number");
    if (!text::to_int(fields[it], t) || t < 1) throw ParseError(file, lineno, "campaign must be a positive integer");
    p.campaign = static_cast<int>(t);
    pattern.points.push_back(p);
  }
  if (ix < 0) throw ParseError(file, lineno, "missing header x,y,campaign");
  return pattern;
}

void write_points(const std::filesystem::path& path, const PointPattern& pattern) {
  std::ostringstream out;
  out << "x,y,campaign\n";
  for (const auto& p : pattern.points)
    out << text::format_double(p.x) << ',' << text::format_double(p.y) << ',' << p.campaign << "\n";
  text::write_atomic(path, out.str());
}

std::vector<DomainKind> load_campaign_domains(const std::filesystem::path& path) {
  auto in = open_input(path);
  const std::string file = path.string();
  std::string line;
  std::size_t lineno = 0;
  std::map<long long, DomainKind> map;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    auto fields = text::split(line, ',');
    long long t = 0;
    if (!text::to_int(fields[0], t)) {
      if (map.empty()) continue;  // header
      throw ParseError(file, lineno, "campaign is not an integer");
    }
    if (fields.size() < 2) throw ParseError(file, lineno, "expected campaign,domain");
    try {
      map[t] = parse_domain_kind(fields[1]);
    } catch (const UsageError& e) {
      throw ParseError(file, lineno, e.what());
    }
  }
  std::vector<DomainKind> out;
  for (long long t = 1; t <= static_cast<long long>(map.size()); ++t) {
    auto it = map.find(t);
    if (it == map.end()) throw ParseError(file, lineno, "campaigns must be numbered 1..T without gaps");
    out.push_back(it->second);
  }
  if (out.empty()) throw ParseError(file, lineno, "no campaigns listed");
  return out;
}

}  // namespace lgcpcv
