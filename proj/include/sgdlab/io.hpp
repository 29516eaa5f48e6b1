#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "sgdlab/common.hpp"

namespace sgdlab {

namespace fs = std::filesystem;

// JSON has no infinity; non-finite numbers are written as the strings "inf", "-inf", "nan".
inline nlohmann::json json_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  return x;
}

// Numeric column of a headed CSV file; rows with an empty field in that column are skipped.
inline std::vector<double> read_csv_column(const fs::path& path, const std::string& column) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path.string() + ": empty file");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  const auto it = std::find(header.begin(), header.end(), column);
  if (it == header.end()) throw ConfigError(path.string() + ": no column '" + column + "'");
  const auto col = static_cast<std::size_t>(it - header.begin());
  std::vector<double> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    for (std::size_t i = 0; i <= col; ++i)
      if (!std::getline(ss, cell, ',')) cell.clear();
    if (cell.empty()) continue;
    std::size_t used = 0;
    double x = 0;
    try {
      x = std::stod(cell, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != cell.size()) throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": not a number: '" + cell + "'");
    out.push_back(x);
  }
  return out;
}

class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::vector<std::string>& header) : path_(path), out_(path) {
    if (!out_) throw Error("cannot write " + path.string());
    out_.precision(17);
    for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
    out_ << '\n';
    width_ = header.size();
  }

  template <class... Ts>
  void row(const Ts&... xs) {
    std::size_t n = 0;
    ((out_ << (n++ ? "," : "") << xs), ...);
    if (n != width_) throw Error("csv row width mismatch in " + path_.string());
    out_ << '\n';
  }

  void row_vec(const std::vector<double>& xs) {
    if (xs.size() != width_) throw Error("csv row width mismatch in " + path_.string());
    for (std::size_t i = 0; i < xs.size(); ++i) out_ << (i ? "," : "") << xs[i];
    out_ << '\n';
  }

 private:
  fs::path path_;
  std::ofstream out_;
  std::size_t width_ = 0;
};

inline void write_json(const fs::path& path, nlohmann::json j) {
  j["schema_version"] = kSchemaVersion;
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// Collects artifacts written by a run; the manifest lists each with its role.
class ArtifactSet {
 public:
  explicit ArtifactSet(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec || !fs::is_directory(dir_)) throw Error("cannot create output directory " + dir_.string());
  }

  const fs::path& dir() const { return dir_; }

  fs::path add(const std::string& name, const std::string& role) {
    files_.push_back({{"file", name}, {"role", role}});
    return dir_ / name;
  }

  nlohmann::json entries() const { return files_; }

 private:
  fs::path dir_;
  nlohmann::json files_ = nlohmann::json::array();
};

}  // namespace sgdlab
