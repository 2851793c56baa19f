#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace lgcpcv {

/// Raised by the file readers; the message carries the offending line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Raised when an operation is called with arguments that violate its contract.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class RasterKind { continuous, categorical };
enum class Reducer { mean, majority };

/// Geometry of a regular lattice of cells.  Row 0 is the northern (top) row,
/// matching the ESRI ASCII-grid storage order; (origin_x, origin_y) is the
/// lower-left corner of the lower-left cell.
struct GridGeometry {
  double origin_x = 0.0;
  double origin_y = 0.0;
  double cell_dx = 1.0;
  double cell_dy = 1.0;
  std::size_t n_rows = 0;
  std::size_t n_cols = 0;

  std::size_t size() const { return n_rows * n_cols; }
  double cell_area() const { return cell_dx * cell_dy; }
  std::size_t index(std::size_t row, std::size_t col) const { return row * n_cols + col; }
  std::size_t row_of(std::size_t cell) const { return cell / n_cols; }
  std::size_t col_of(std::size_t cell) const { return cell % n_cols; }
  double center_x(std::size_t cell) const;
  double center_y(std::size_t cell) const;
  double width() const { return cell_dx * static_cast<double>(n_cols); }
  double height() const { return cell_dy * static_cast<double>(n_rows); }

  /// Cell containing (x, y) under half-open [low, high) intervals on both axes.
  std::optional<std::size_t> cell_at(double x, double y) const;

  bool same_as(const GridGeometry& other) const;
};

using Legend = std::map<int, std::string>;

struct RasterGrid {
  GridGeometry geometry;
  std::vector<double> values;  // NaN marks missing cells
  RasterKind kind = RasterKind::continuous;
  Legend legend;               // only for categorical rasters

  static RasterGrid filled(const GridGeometry& g, double value,
                           RasterKind kind = RasterKind::continuous);

  bool is_missing(std::size_t cell) const;
  double total_area() const { return geometry.cell_area() * static_cast<double>(geometry.size()); }
  /// Throws UsageError when an invariant is broken.
  void validate() const;
};

RasterGrid load_raster(const std::filesystem::path& path, RasterKind kind,
                       const Legend* legend = nullptr);
void write_raster(const std::filesystem::path& path, const RasterGrid& raster);
Legend load_legend(const std::filesystem::path& path);

RasterGrid zonal_aggregate(const RasterGrid& fine, double coarse_cell, Reducer reducer);

struct DomainMask {
  GridGeometry grid;
  std::vector<std::uint8_t> included;
  double area = 0.0;

  static DomainMask from_cells(const GridGeometry& g, const std::vector<std::uint8_t>& cells);
  static DomainMask full(const GridGeometry& g);

  bool contains_cell(std::size_t cell) const { return included[cell] != 0; }
  bool contains(double x, double y) const;
  std::size_t n_cells() const;
  std::vector<std::size_t> cells() const;
  bool empty() const { return n_cells() == 0; }
};

/// The three study regions: the effort habitat (D1), everything else (D2)
/// and their union (D).
enum class DomainKind { full, effort, other };

struct StudyDomains {
  DomainMask full;    // D
  DomainMask effort;  // D1
  DomainMask other;   // D2

  const DomainMask& get(DomainKind kind) const;
};

/// D is every non-missing habitat cell; D1 holds the cells coded `effort_code`.
StudyDomains split_domains(const RasterGrid& habitat, int effort_code);

DomainKind parse_domain_kind(const std::string& text);
std::string to_string(DomainKind kind);

struct PartitionSubset {
  std::size_t lattice_row = 0;
  std::size_t lattice_col = 0;
  std::vector<std::size_t> cells;
  double area = 0.0;
  double xmin = 0.0, ymin = 0.0, xmax = 0.0, ymax = 0.0;  // lattice rectangle
};

struct PartitionScheme {
  DomainMask domain;
  std::vector<PartitionSubset> subsets;
  std::size_t lattice_rows = 0;
  std::size_t lattice_cols = 0;
  std::size_t empty_subsets = 0;
  std::vector<int> subset_of_cell;  // -1 outside the domain

  std::size_t size() const { return subsets.size(); }
};

PartitionScheme build_partition(const DomainMask& domain, std::size_t rows, std::size_t cols);

struct QuadratureScheme {
  DomainMask domain;
  std::vector<std::size_t> cells;  // node v_q sits at the center of cells[q]
  std::vector<double> x, y;
  std::vector<double> weights;

  std::size_t size() const { return cells.size(); }
  double total_weight() const;
};

QuadratureScheme build_quadrature(const DomainMask& domain);

struct Point {
  double x = 0.0;
  double y = 0.0;
  int campaign = 1;
};

struct PointPattern {
  std::vector<Point> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  std::size_t count_campaign(int t) const;
  int max_campaign() const;
};

PointPattern load_points(const std::filesystem::path& path);
void write_points(const std::filesystem::path& path, const PointPattern& pattern);

/// campaign t (1-based) -> domain kind; index 0 holds campaign 1.
std::vector<DomainKind> load_campaign_domains(const std::filesystem::path& path);

}  // namespace lgcpcv
