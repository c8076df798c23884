#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace stmix {

// A flat container of named dense matrices, serialized as a single binary
// bundle: magic, entry count, then per entry a length-prefixed name followed
// by row/column counts and the column-major payload of little-endian 64-bit
// floats. Used for basis bundles, parameter bundles and sample chunks.
class MatrixBundle {
 public:
  void set(const std::string& name, const Eigen::MatrixXd& value);
  void set_scalar(const std::string& name, double value);
  void set_vector(const std::string& name, const Eigen::VectorXd& value);

  bool contains(const std::string& name) const;
  const Eigen::MatrixXd& at(const std::string& name) const;
  double scalar(const std::string& name) const;
  Eigen::VectorXd vector(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }

  void save(const std::filesystem::path& path) const;
  static MatrixBundle load(const std::filesystem::path& path);

 private:
  std::vector<std::string> names_;     // insertion order
  std::vector<Eigen::MatrixXd> data_;  // parallel to names_
};

}  // namespace stmix
