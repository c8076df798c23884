#pragma once

#include <vector>

#include <Eigen/Dense>

#include "stmix/error.hpp"

namespace stmix {

// 1-based map between the flat week index t and the (year t1, week-of-year t2)
// pair: t = T2*(t1-1) + t2.
struct TimeIndex {
  int weeks_per_year = 52;

  int year_of(int t) const { return (t + weeks_per_year - 1) / weeks_per_year; }
  int week_of(int t) const { return t - weeks_per_year * (year_of(t) - 1); }
  int flat(int year, int week) const { return weeks_per_year * (year - 1) + week; }
};

// Complete N-site by T-week observation grid with site coordinates.
// Values are site-major: row n holds site n's weekly series.
struct GriddedDataset {
  Eigen::MatrixXd values;  // N x T
  Eigen::MatrixXd coords;  // N x 2, (longitude deg E, latitude deg N)
  int n_years = 0;
  int weeks_per_year = 52;

  Eigen::Index n_sites() const { return values.rows(); }
  Eigen::Index n_weeks() const { return values.cols(); }
  TimeIndex time() const { return TimeIndex{weeks_per_year}; }

  void validate() const;
};

// Annual covariate series (one value per calendar year), covering the fit
// window and any projection horizon beyond it.
struct CovariateSeries {
  std::vector<int> years;  // calendar labels, consecutive
  Eigen::VectorXd values;

  Eigen::Index size() const { return values.size(); }
  // 1-based year index (1 = first entry); throws CoverageError when the
  // calendar year is not covered.
  int index_of_year(int calendar_year) const;

  void validate() const;
};

inline void GriddedDataset::validate() const {
  if (weeks_per_year < 1) throw ShapeError("weeks_per_year must be positive");
  if (n_years < 1) throw ShapeError("dataset must cover at least one year");
  const Eigen::Index t = n_weeks();
  if (t != static_cast<Eigen::Index>(n_years) * weeks_per_year)
    throw ShapeError("week count " + std::to_string(t) + " is not n_years * weeks_per_year");
  if (coords.rows() != n_sites() || coords.cols() != 2)
    throw ShapeError("coordinate matrix must be n_sites x 2");
  if (!values.allFinite()) throw ShapeError("dataset contains non-finite values");
  if (!coords.allFinite()) throw ShapeError("coordinates contain non-finite values");
  for (Eigen::Index i = 0; i < coords.rows(); ++i)
    for (Eigen::Index j = i + 1; j < coords.rows(); ++j)
      if (coords(i, 0) == coords(j, 0) && coords(i, 1) == coords(j, 1))
        throw ShapeError("sites " + std::to_string(i + 1) + " and " + std::to_string(j + 1) +
                         " share coordinates");
  // The t <-> (t1, t2) map must round-trip over the whole series.
  const TimeIndex idx = time();
  for (int w = 1; w <= static_cast<int>(t); ++w) {
    const int t1 = idx.year_of(w);
    const int t2 = idx.week_of(w);
    if (t1 < 1 || t1 > n_years || t2 < 1 || t2 > weeks_per_year || idx.flat(t1, t2) != w)
      throw ShapeError("time index map fails to round-trip at t=" + std::to_string(w));
  }
}

inline int CovariateSeries::index_of_year(int calendar_year) const {
  for (std::size_t i = 0; i < years.size(); ++i)
    if (years[i] == calendar_year) return static_cast<int>(i) + 1;
  throw CoverageError("covariate series does not cover year " + std::to_string(calendar_year));
}

inline void CovariateSeries::validate() const {
  if (static_cast<Eigen::Index>(years.size()) != values.size())
    throw ShapeError("covariate year labels and values differ in length");
  if (values.size() < 1) throw ShapeError("covariate series is empty");
  if (!values.allFinite()) throw ShapeError("covariate series contains non-finite values");
  for (std::size_t i = 1; i < years.size(); ++i)
    if (years[i] != years[i - 1] + 1)
      throw ShapeError("covariate years must be consecutive");
}

}  // namespace stmix
