#include "stmix/container.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "stmix/error.hpp"

namespace stmix {

static_assert(std::endian::native == std::endian::little,
              "bundle serialization assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'T', 'M', 'X', 'B', 'N', 'D', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw IoError("bundle truncated while reading header field");
  return v;
}

}  // namespace

void MatrixBundle::set(const std::string& name, const Eigen::MatrixXd& value) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) {
      data_[i] = value;
      return;
    }
  }
  names_.push_back(name);
  data_.push_back(value);
}

void MatrixBundle::set_scalar(const std::string& name, double value) {
  Eigen::MatrixXd m(1, 1);
  m(0, 0) = value;
  set(name, m);
}

void MatrixBundle::set_vector(const std::string& name, const Eigen::VectorXd& value) {
  set(name, Eigen::MatrixXd(value));
}

bool MatrixBundle::contains(const std::string& name) const {
  for (const auto& n : names_)
    if (n == name) return true;
  return false;
}

const Eigen::MatrixXd& MatrixBundle::at(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return data_[i];
  throw IoError("bundle has no entry named '" + name + "'");
}

double MatrixBundle::scalar(const std::string& name) const {
  const Eigen::MatrixXd& m = at(name);
  if (m.size() != 1) throw IoError("bundle entry '" + name + "' is not a scalar");
  return m(0, 0);
}

Eigen::VectorXd MatrixBundle::vector(const std::string& name) const {
  const Eigen::MatrixXd& m = at(name);
  if (m.cols() != 1) throw IoError("bundle entry '" + name + "' is not a column vector");
  return m.col(0);
}

void MatrixBundle::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os.write(kMagic, sizeof(kMagic));
  write_u64(os, names_.size());
  for (std::size_t i = 0; i < names_.size(); ++i) {
    write_u64(os, names_[i].size());
    os.write(names_[i].data(), static_cast<std::streamsize>(names_[i].size()));
    const Eigen::MatrixXd& m = data_[i];
    write_u64(os, static_cast<std::uint64_t>(m.rows()));
    write_u64(os, static_cast<std::uint64_t>(m.cols()));
    os.write(reinterpret_cast<const char*>(m.data()),
             static_cast<std::streamsize>(sizeof(double) * m.size()));
  }
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

MatrixBundle MatrixBundle::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "' for reading");
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw ParseError("'" + path.string() + "' is not a stmix bundle");
  MatrixBundle bundle;
  const std::uint64_t count = read_u64(is);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t name_len = read_u64(is);
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    const std::uint64_t rows = read_u64(is);
    const std::uint64_t cols = read_u64(is);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    is.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * rows * cols));
    if (!is) throw IoError("bundle truncated in entry '" + name + "'");
    bundle.set(name, m);
  }
  return bundle;
}

}  // namespace stmix
