#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "dkrr/dataset.hpp"
#include "dkrr/errors.hpp"

namespace dkrr {

// Shortest round-trip representation; identical bytes for identical doubles.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, const char* where) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc{} || res.ptr != last)
    throw IngestionError(std::string(where) + ": bad number '" + std::string(s) + "'");
  return v;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& csv) {
  std::filesystem::path p = csv;
  p += ".meta.json";
  return p;
}

}  // namespace detail

// Writes header + rows; every cell is already formatted.
inline void write_csv(const std::filesystem::path& path,
                      const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path, std::ios::binary);  // binary: byte-stable line endings
  if (!out) throw IngestionError("cannot open for writing: " + path.string());
  for (std::size_t j = 0; j < header.size(); ++j)
    out << (j ? "," : "") << header[j];
  out << '\n';
  for (const auto& row : rows) {
    for (std::size_t j = 0; j < row.size(); ++j) out << (j ? "," : "") << row[j];
    out << '\n';
  }
  if (!out) throw IngestionError("write failed: " + path.string());
}

// Dataset CSV: covariate columns then the response.  When f0/sigma are known
// they go to a JSON sidecar next to the file, so the CSV stays a plain table.
inline void write_dataset_csv(const Dataset& d, const std::filesystem::path& path,
                              const std::string& response_name = "y") {
  std::vector<std::string> header;
  header.reserve(static_cast<std::size_t>(d.p()) + 1);
  for (Eigen::Index j = 0; j < d.p(); ++j) header.push_back("x" + std::to_string(j + 1));
  header.push_back(response_name);
  std::vector<std::vector<std::string>> rows;
  rows.reserve(static_cast<std::size_t>(d.n()));
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    std::vector<std::string> row;
    row.reserve(header.size());
    for (Eigen::Index j = 0; j < d.p(); ++j) row.push_back(format_double(d.x(i, j)));
    row.push_back(format_double(d.y[i]));
    rows.push_back(std::move(row));
  }
  write_csv(path, header, rows);
  if (d.has_f0() || d.has_sigma()) {
    nlohmann::json meta;
    if (d.has_sigma()) meta["sigma"] = d.sigma;
    if (d.has_f0()) {
      auto& arr = meta["f0"] = nlohmann::json::array();
      for (Eigen::Index i = 0; i < d.n(); ++i) arr.push_back(d.f0[i]);
    }
    std::ofstream out(detail::sidecar_path(path), std::ios::binary);
    if (!out) throw IngestionError("cannot write sidecar for: " + path.string());
    out << meta.dump(2) << '\n';
  }
}

// Loads a dataset CSV.  `response` selects the response column by header name
// or, failing that, by zero-based index.  A sidecar written by
// write_dataset_csv is picked up automatically.
inline Dataset load_dataset_csv(const std::filesystem::path& path, const std::string& response,
                                bool standardize = false) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IngestionError("empty file: " + path.string());
  const auto header = detail::split_csv_line(line);
  const auto ncol = header.size();
  if (ncol < 2) throw IngestionError("dataset CSV needs at least two columns");

  std::ptrdiff_t ycol = -1;
  for (std::size_t j = 0; j < ncol; ++j)
    if (header[j] == response) ycol = static_cast<std::ptrdiff_t>(j);
  if (ycol < 0) {
    // fall back to a zero-based column index
    try {
      const std::size_t j = static_cast<std::size_t>(std::stoul(response));
      if (j < ncol) ycol = static_cast<std::ptrdiff_t>(j);
    } catch (...) {
    }
  }
  if (ycol < 0)
    throw IngestionError("response column '" + response + "' not found in " + path.string());

  std::vector<std::vector<double>> data;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != ncol)
      throw IngestionError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                           std::to_string(ncol) + " fields, got " + std::to_string(cells.size()));
    std::vector<double> row;
    row.reserve(ncol);
    for (const auto& c : cells)
      row.push_back(parse_double(c, (path.string() + ":" + std::to_string(lineno)).c_str()));
    data.push_back(std::move(row));
  }
  if (data.empty()) throw IngestionError("no data rows in " + path.string());

  Dataset d;
  const auto n = static_cast<Eigen::Index>(data.size());
  const auto p = static_cast<Eigen::Index>(ncol - 1);
  d.x.resize(n, p);
  d.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index xj = 0;
    for (std::size_t j = 0; j < ncol; ++j) {
      if (static_cast<std::ptrdiff_t>(j) == ycol)
        d.y[i] = data[static_cast<std::size_t>(i)][j];
      else
        d.x(i, xj++) = data[static_cast<std::size_t>(i)][j];
    }
  }

  const auto side = detail::sidecar_path(path);
  if (std::filesystem::exists(side)) {
    std::ifstream ms(side, std::ios::binary);
    nlohmann::json meta;
    try {
      ms >> meta;
    } catch (const std::exception& e) {
      throw IngestionError("bad sidecar " + side.string() + ": " + e.what());
    }
    if (meta.contains("sigma")) d.sigma = meta["sigma"].get<double>();
    if (meta.contains("f0")) {
      const auto& arr = meta["f0"];
      if (static_cast<Eigen::Index>(arr.size()) != n)
        throw IngestionError("sidecar f0 length differs from data rows: " + side.string());
      d.f0.resize(n);
      for (Eigen::Index i = 0; i < n; ++i) d.f0[i] = arr[static_cast<std::size_t>(i)].get<double>();
    }
  }

  if (standardize) standardize_covariates(d);
  validate(d);
  return d;
}

}  // namespace dkrr
