#include "stmix/ingest.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "stmix/error.hpp"

namespace stmix {

static_assert(std::endian::native == std::endian::little,
              "dataset serialization assumes a little-endian host");

namespace {

double parse_double(const std::string& field, const std::string& context) {
  double out = 0.0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  if (ec != std::errc() || ptr != end)
    throw ParseError("cannot parse '" + field + "' as a number (" + context + ")");
  return out;
}

long parse_long(const std::string& field, const std::string& context) {
  long out = 0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  if (ec != std::errc() || ptr != end)
    throw ParseError("cannot parse '" + field + "' as an integer (" + context + ")");
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string format_full(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

GriddedDataset load_csv_long(const std::filesystem::path& path, int weeks_per_year) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path.string() + "'");

  struct Cell {
    long site, t;
    double lon, lat, value;
  };
  std::vector<Cell> cells;
  long max_site = 0, max_t = 0;
  std::string line;
  long line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("site_id", 0) == 0) continue;  // optional header
    const auto fields = split_csv_line(line);
    const std::string ctx = path.filename().string() + " row " + std::to_string(line_no);
    if (fields.size() != 5)
      throw ParseError("expected 5 fields, got " + std::to_string(fields.size()) + " (" + ctx + ")");
    Cell c;
    c.site = parse_long(fields[0], ctx);
    c.lon = parse_double(fields[1], ctx);
    c.lat = parse_double(fields[2], ctx);
    c.t = parse_long(fields[3], ctx);
    c.value = parse_double(fields[4], ctx);
    if (c.site < 1 || c.t < 1)
      throw ParseError("site_id and t must be positive (" + ctx + ")");
    max_site = std::max(max_site, c.site);
    max_t = std::max(max_t, c.t);
    cells.push_back(c);
  }
  if (cells.empty()) throw ParseError("'" + path.string() + "' holds no data rows");
  if (static_cast<long>(cells.size()) != max_site * max_t)
    throw ParseError("'" + path.string() + "' is not a complete site x week grid: " +
                     std::to_string(cells.size()) + " rows for " + std::to_string(max_site) +
                     " sites and " + std::to_string(max_t) + " weeks");

  GriddedDataset data;
  data.weeks_per_year = weeks_per_year;
  if (max_t % weeks_per_year != 0)
    throw ShapeError("week count " + std::to_string(max_t) + " is not a multiple of " +
                     std::to_string(weeks_per_year));
  data.n_years = static_cast<int>(max_t / weeks_per_year);
  data.values.setConstant(max_site, max_t, std::numeric_limits<double>::quiet_NaN());
  data.coords.setConstant(max_site, 2, std::numeric_limits<double>::quiet_NaN());
  std::vector<char> seen(static_cast<std::size_t>(max_site * max_t), 0);
  for (const Cell& c : cells) {
    const std::size_t flat = static_cast<std::size_t>((c.site - 1) * max_t + (c.t - 1));
    if (seen[flat])
      throw ParseError("duplicate cell for site " + std::to_string(c.site) + ", t " +
                       std::to_string(c.t));
    seen[flat] = 1;
    data.values(c.site - 1, c.t - 1) = c.value;
    const double old_lon = data.coords(c.site - 1, 0);
    if (!std::isnan(old_lon) &&
        (old_lon != c.lon || data.coords(c.site - 1, 1) != c.lat))
      throw ParseError("inconsistent coordinates for site " + std::to_string(c.site));
    data.coords(c.site - 1, 0) = c.lon;
    data.coords(c.site - 1, 1) = c.lat;
  }
  data.validate();
  return data;
}

void save_csv_long(const GriddedDataset& data, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os << "site_id,lon,lat,t,value\n";
  for (Eigen::Index n = 0; n < data.n_sites(); ++n)
    for (Eigen::Index t = 0; t < data.n_weeks(); ++t)
      os << (n + 1) << ',' << format_full(data.coords(n, 0)) << ','
         << format_full(data.coords(n, 1)) << ',' << (t + 1) << ','
         << format_full(data.values(n, t)) << '\n';
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

GriddedDataset load_binary(const std::filesystem::path& path, int weeks_per_year) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  std::uint64_t n = 0, t = 0;
  is.read(reinterpret_cast<char*>(&n), sizeof(n));
  is.read(reinterpret_cast<char*>(&t), sizeof(t));
  if (!is) throw ParseError("'" + path.string() + "' truncated in header");
  if (n == 0 || t == 0) throw ParseError("'" + path.string() + "' declares an empty grid");
  GriddedDataset data;
  data.weeks_per_year = weeks_per_year;
  if (t % static_cast<std::uint64_t>(weeks_per_year) != 0)
    throw ShapeError("week count " + std::to_string(t) + " is not a multiple of " +
                     std::to_string(weeks_per_year));
  data.n_years = static_cast<int>(t / static_cast<std::uint64_t>(weeks_per_year));
  // Coordinates and values are written row-major (site-major).
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> coords_rm(n, 2);
  is.read(reinterpret_cast<char*>(coords_rm.data()),
          static_cast<std::streamsize>(sizeof(double) * n * 2));
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> values_rm(n, t);
  is.read(reinterpret_cast<char*>(values_rm.data()),
          static_cast<std::streamsize>(sizeof(double) * n * t));
  if (!is) throw ParseError("'" + path.string() + "' truncated in payload");
  data.coords = coords_rm;
  data.values = values_rm;
  data.validate();
  return data;
}

void save_binary(const GriddedDataset& data, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  const std::uint64_t n = static_cast<std::uint64_t>(data.n_sites());
  const std::uint64_t t = static_cast<std::uint64_t>(data.n_weeks());
  os.write(reinterpret_cast<const char*>(&n), sizeof(n));
  os.write(reinterpret_cast<const char*>(&t), sizeof(t));
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> coords_rm = data.coords;
  os.write(reinterpret_cast<const char*>(coords_rm.data()),
           static_cast<std::streamsize>(sizeof(double) * n * 2));
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> values_rm = data.values;
  os.write(reinterpret_cast<const char*>(values_rm.data()),
           static_cast<std::streamsize>(sizeof(double) * n * t));
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace

DatasetFormat dataset_format_from_string(const std::string& name) {
  if (name == "csv" || name == "csv-long") return DatasetFormat::kCsvLong;
  if (name == "binary" || name == "binary-matrix") return DatasetFormat::kBinaryMatrix;
  throw ArgumentError("unknown dataset format '" + name + "'");
}

GriddedDataset load_dataset(const std::filesystem::path& path, DatasetFormat format,
                            int weeks_per_year) {
  if (weeks_per_year < 1) throw ArgumentError("weeks_per_year must be positive");
  switch (format) {
    case DatasetFormat::kCsvLong:
      return load_csv_long(path, weeks_per_year);
    case DatasetFormat::kBinaryMatrix:
      return load_binary(path, weeks_per_year);
  }
  throw ArgumentError("unknown dataset format");
}

void save_dataset(const GriddedDataset& data, const std::filesystem::path& path,
                  DatasetFormat format) {
  data.validate();
  switch (format) {
    case DatasetFormat::kCsvLong:
      save_csv_long(data, path);
      return;
    case DatasetFormat::kBinaryMatrix:
      save_binary(data, path);
      return;
  }
  throw ArgumentError("unknown dataset format");
}

CovariateSeries load_covariate_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  CovariateSeries series;
  std::vector<double> values;
  std::string line;
  long line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("year", 0) == 0) continue;
    const auto fields = split_csv_line(line);
    const std::string ctx = path.filename().string() + " row " + std::to_string(line_no);
    if (fields.size() != 2)
      throw ParseError("expected 2 fields, got " + std::to_string(fields.size()) + " (" + ctx + ")");
    series.years.push_back(static_cast<int>(parse_long(fields[0], ctx)));
    values.push_back(parse_double(fields[1], ctx));
  }
  series.values = Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
  series.validate();
  return series;
}

void save_covariate_csv(const CovariateSeries& series, const std::filesystem::path& path) {
  series.validate();
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os << "year,value\n";
  for (Eigen::Index i = 0; i < series.size(); ++i)
    os << series.years[static_cast<std::size_t>(i)] << ',' << format_full(series.values[i]) << '\n';
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

Eigen::MatrixXd thin_weekly(const Eigen::Ref<const Eigen::MatrixXd>& daily, int weekday,
                            int stride) {
  if (stride < 1) throw ArgumentError("stride must be positive");
  if (weekday < 1 || weekday > stride)
    throw ArgumentError("weekday " + std::to_string(weekday) + " outside 1.." +
                        std::to_string(stride));
  const Eigen::Index d = daily.cols();
  if (d < stride) throw ArgumentError("daily matrix has fewer columns than one stride");
  const Eigen::Index t = d / stride;
  Eigen::MatrixXd weekly(daily.rows(), t);
  for (Eigen::Index w = 0; w < t; ++w)
    weekly.col(w) = daily.col(static_cast<Eigen::Index>(stride) * w + (weekday - 1));
  return weekly;
}

CovariateScale covariate_scale(const CovariateSeries& series, int n_years) {
  series.validate();
  if (n_years < 2) throw ArgumentError("covariate standardization requires at least two years");
  if (series.size() < n_years)
    throw CoverageError("covariate series shorter than the fit window");
  const Eigen::VectorXd window = series.values.head(n_years);
  CovariateScale scale;
  scale.n_years = n_years;
  scale.mean = window.mean();
  const double ss = (window.array() - scale.mean).square().sum();
  if (ss <= 0.0)
    throw DegeneracyError("covariate is constant over the fit window; scale is undefined");
  scale.scale = std::sqrt(ss);
  return scale;
}

Eigen::Vector2d CovariateScale::row(const CovariateSeries& series, int year_index) const {
  if (year_index < 1 || year_index > series.size())
    throw CoverageError("year index " + std::to_string(year_index) +
                        " outside covariate coverage 1.." + std::to_string(series.size()));
  Eigen::Vector2d out;
  out[0] = 1.0 / std::sqrt(static_cast<double>(n_years));
  out[1] = (series.values[year_index - 1] - mean) / scale;
  return out;
}

Eigen::MatrixXd standardize_covariate(const CovariateSeries& series, int n_years) {
  const CovariateScale scale = covariate_scale(series, n_years);
  Eigen::MatrixXd x0(n_years, 2);
  for (int t1 = 1; t1 <= n_years; ++t1) x0.row(t1 - 1) = scale.row(series, t1).transpose();
  return x0;
}

}  // namespace stmix
