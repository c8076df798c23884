#pragma once

#include <filesystem>

#include <Eigen/Dense>

#include "stmix/types.hpp"

namespace stmix {

enum class DatasetFormat {
  kCsvLong,       // text rows: site_id,lon,lat,t,value
  kBinaryMatrix,  // u64 N, u64 T, N x 2 coords, then values site-major (all f64 LE)
};

DatasetFormat dataset_format_from_string(const std::string& name);

// Loaders validate the result (complete grid, T = T1*T2, finite values,
// distinct coordinates). No format sniffing: the caller states the format.
GriddedDataset load_dataset(const std::filesystem::path& path, DatasetFormat format,
                            int weeks_per_year = 52);
void save_dataset(const GriddedDataset& data, const std::filesystem::path& path,
                  DatasetFormat format);

// Covariate series as two-column CSV `year,value`.
CovariateSeries load_covariate_csv(const std::filesystem::path& path);
void save_covariate_csv(const CovariateSeries& series, const std::filesystem::path& path);

// Keep one column per `stride` from a daily matrix: output column t is input
// column stride*(t-1)+weekday (1-based); trailing days are dropped.
Eigen::MatrixXd thin_weekly(const Eigen::Ref<const Eigen::MatrixXd>& daily, int weekday,
                            int stride = 7);

// Centering/scale constants of the first n_years covariate values. Projection
// years are standardized with these same historic constants.
struct CovariateScale {
  double mean = 0.0;
  double scale = 1.0;  // sqrt of the centered sum of squares
  int n_years = 0;

  // Orthonormal design row (T1^{-1/2}, standardized value) for a 1-based year
  // index into the covariate series; the year may lie beyond the fit window.
  Eigen::Vector2d row(const CovariateSeries& series, int year_index) const;
};

CovariateScale covariate_scale(const CovariateSeries& series, int n_years);

// T1 x 2 orthonormal covariate design over the fit window.
Eigen::MatrixXd standardize_covariate(const CovariateSeries& series, int n_years);

}  // namespace stmix
