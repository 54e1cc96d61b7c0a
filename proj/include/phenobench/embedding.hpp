#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "phenobench/errors.hpp"

namespace phenobench {

enum class WellType { negative_control, perturbation };

inline const char* to_string(WellType t) {
  return t == WellType::negative_control ? "negative_control" : "perturbation";
}

// Perturbation label carried by negative-control wells. The screens this
// pipeline targets do not publish their control label, so it is a
// configurable default rather than a constant.
inline constexpr const char* kDefaultControlLabel = "EMPTY";

struct EmbeddingRecord {
  std::string well_id;
  std::string experiment_id;
  std::string plate_id;
  std::string perturbation_id;
  WellType well_type = WellType::perturbation;
  std::vector<double> vector;
};

// Immutable after construction; rows keep their file order so that every
// downstream quantile and grouping decision is deterministic.
struct EmbeddingTable {
  int dim = 0;
  std::vector<EmbeddingRecord> records;
};

namespace detail {

inline void split_csv(std::string_view line, std::vector<std::string_view>& out) {
  out.clear();
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline double parse_double(std::string_view s, std::size_t row, std::size_t col) {
  double v = 0.0;
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc{} || res.ptr != last) {
    throw schema_error("row " + std::to_string(row) + ": column " +
                       std::to_string(col) + " is not a number: '" +
                       std::string(s) + "'");
  }
  return v;
}

// 17 significant decimal digits round-trip any 64-bit float exactly.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string record_key(const EmbeddingRecord& r) {
  return r.experiment_id + "\x1f" + r.plate_id + "\x1f" + r.well_id;
}

}  // namespace detail

// Checks every type invariant; throws on the first violation.
inline void validate_table(const EmbeddingTable& table,
                           const std::string& control_label = kDefaultControlLabel) {
  if (table.dim <= 0) throw validation_error("table dimension must be positive");
  std::set<std::string> keys;
  for (std::size_t i = 0; i < table.records.size(); ++i) {
    const auto& r = table.records[i];
    if (static_cast<int>(r.vector.size()) != table.dim) {
      throw validation_error("row " + std::to_string(i + 1) +
                             ": vector length " + std::to_string(r.vector.size()) +
                             " does not match table dimension " +
                             std::to_string(table.dim));
    }
    for (double v : r.vector) {
      if (!std::isfinite(v)) {
        throw validation_error("row " + std::to_string(i + 1) +
                               ": non-finite embedding component");
      }
    }
    if (r.well_type == WellType::negative_control &&
        r.perturbation_id != control_label) {
      throw validation_error("row " + std::to_string(i + 1) +
                             ": negative control with perturbation_id '" +
                             r.perturbation_id + "' (expected '" +
                             control_label + "')");
    }
    if (!keys.insert(detail::record_key(r)).second) {
      throw validation_error("row " + std::to_string(i + 1) +
                             ": duplicate (experiment, plate, well) key " +
                             r.experiment_id + "/" + r.plate_id + "/" + r.well_id);
    }
  }
}

// Loads the comma-separated embeddings format:
//   well_id,experiment_id,plate_id,perturbation_id,well_type,v0,...,v{d-1}
// The dimension is inferred from the header unless `dim` is given, in which
// case the header must agree.
inline EmbeddingTable load_embeddings(const std::string& path, int dim = 0,
                                      const std::string& control_label = kDefaultControlLabel) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open embeddings file: " + path);

  std::string line;
  if (!std::getline(in, line)) throw schema_error(path + ": missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  std::vector<std::string_view> cols;
  detail::split_csv(line, cols);
  static constexpr const char* kMeta[5] = {"well_id", "experiment_id", "plate_id",
                                           "perturbation_id", "well_type"};
  if (cols.size() < 6) throw schema_error(path + ": header needs at least 6 columns");
  for (int i = 0; i < 5; ++i) {
    if (cols[i] != kMeta[i]) {
      throw schema_error(path + ": header column " + std::to_string(i + 1) +
                         " must be '" + kMeta[i] + "', got '" + std::string(cols[i]) + "'");
    }
  }
  const int header_dim = static_cast<int>(cols.size()) - 5;
  for (int i = 0; i < header_dim; ++i) {
    const std::string want = "v" + std::to_string(i);
    if (cols[5 + i] != want) {
      throw schema_error(path + ": vector column " + std::to_string(i) +
                         " must be named '" + want + "'");
    }
  }
  if (dim != 0 && dim != header_dim) {
    throw schema_error(path + ": expected dimension " + std::to_string(dim) +
                       " but header declares " + std::to_string(header_dim));
  }

  EmbeddingTable table;
  table.dim = header_dim;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row;
    detail::split_csv(line, cols);
    if (static_cast<int>(cols.size()) != 5 + header_dim) {
      throw schema_error(path + ": row " + std::to_string(row) + " has " +
                         std::to_string(cols.size()) + " fields, expected " +
                         std::to_string(5 + header_dim));
    }
    EmbeddingRecord r;
    r.well_id = std::string(cols[0]);
    r.experiment_id = std::string(cols[1]);
    r.plate_id = std::string(cols[2]);
    r.perturbation_id = std::string(cols[3]);
    if (cols[4] == "negative_control") {
      r.well_type = WellType::negative_control;
    } else if (cols[4] == "perturbation") {
      r.well_type = WellType::perturbation;
    } else {
      throw schema_error(path + ": row " + std::to_string(row) +
                         " has unknown well_type '" + std::string(cols[4]) + "'");
    }
    r.vector.resize(header_dim);
    for (int i = 0; i < header_dim; ++i) {
      r.vector[i] = detail::parse_double(cols[5 + i], row, 5 + i);
    }
    table.records.push_back(std::move(r));
  }
  validate_table(table, control_label);
  return table;
}

inline void save_embeddings(const EmbeddingTable& table, const std::string& path,
                            const std::string& control_label = kDefaultControlLabel) {
  validate_table(table, control_label);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write embeddings file: " + path);
  out << "well_id,experiment_id,plate_id,perturbation_id,well_type";
  for (int i = 0; i < table.dim; ++i) out << ",v" << i;
  out << '\n';
  for (const auto& r : table.records) {
    out << r.well_id << ',' << r.experiment_id << ',' << r.plate_id << ','
        << r.perturbation_id << ',' << to_string(r.well_type);
    for (double v : r.vector) out << ',' << detail::format_double(v);
    out << '\n';
  }
  if (!out) throw io_error("write failed: " + path);
}

// Row subset by metadata predicate; order and dimension preserved.
template <class Pred>
EmbeddingTable select(const EmbeddingTable& table, Pred&& pred) {
  EmbeddingTable out;
  out.dim = table.dim;
  for (const auto& r : table.records) {
    if (pred(r)) out.records.push_back(r);
  }
  return out;
}

inline EmbeddingTable select_well_type(const EmbeddingTable& table, WellType t) {
  return select(table, [t](const EmbeddingRecord& r) { return r.well_type == t; });
}

}  // namespace phenobench
