#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace stmix::cli {

// Usage-level failure: maps to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flat sectioned key/value configuration. Keys are addressed as
// "section.key"; '#' and ';' start comments.
class ConfigMap {
 public:
  static ConfigMap from_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw UsageError("cannot open config file '" + path.string() + "'");
    ConfigMap config;
    std::string line, section;
    long line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      const auto hash = line.find_first_of("#;");
      if (hash != std::string::npos) line.erase(hash);
      trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          throw UsageError("config line " + std::to_string(line_no) + ": unterminated section");
        section = line.substr(1, line.size() - 2);
        trim(section);
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw UsageError("config line " + std::to_string(line_no) + ": expected key = value");
      std::string key = line.substr(0, eq);
      std::string value = line.substr(eq + 1);
      trim(key);
      trim(value);
      if (key.empty())
        throw UsageError("config line " + std::to_string(line_no) + ": empty key");
      config.set(section.empty() ? key : section + "." + key, value);
    }
    return config;
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string str(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw UsageError("config is missing required key '" + key + "'");
    return it->second;
  }
  std::string str_or(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double num(const std::string& key) const { return parse_num(key, str(key)); }
  double num_or(const std::string& key, double fallback) const {
    return has(key) ? num(key) : fallback;
  }

  long integer(const std::string& key) const {
    const double v = num(key);
    const long out = static_cast<long>(v);
    if (static_cast<double>(out) != v)
      throw UsageError("config key '" + key + "' must be an integer");
    return out;
  }
  long integer_or(const std::string& key, long fallback) const {
    return has(key) ? integer(key) : fallback;
  }

  std::vector<double> list(const std::string& key) const {
    std::vector<double> out;
    std::stringstream ss(str(key));
    std::string field;
    while (std::getline(ss, field, ',')) {
      trim(field);
      if (!field.empty()) out.push_back(parse_num(key, field));
    }
    if (out.empty()) throw UsageError("config key '" + key + "' holds no values");
    return out;
  }

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  static void trim(std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    const auto end = s.find_last_not_of(" \t\r");
    s = (begin == std::string::npos) ? std::string() : s.substr(begin, end - begin + 1);
  }
  static double parse_num(const std::string& key, const std::string& text) {
    try {
      std::size_t used = 0;
      const double v = std::stod(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
      return v;
    } catch (const std::exception&) {
      throw UsageError("config key '" + key + "' has non-numeric value '" + text + "'");
    }
  }

  std::map<std::string, std::string> values_;
};

}  // namespace stmix::cli
