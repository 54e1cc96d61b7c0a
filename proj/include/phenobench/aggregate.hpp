#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "phenobench/embedding.hpp"
#include "phenobench/errors.hpp"

namespace phenobench {

// Norms below this are treated as degenerate rather than normalized away.
inline constexpr double kNormTol = 1e-12;

// Consensus embedding of one perturbation: spherical mean of its replicate
// wells, always unit norm.
struct PerturbationProfile {
  std::string perturbation_id;
  std::vector<double> vector;
  std::int64_t n_replicates = 0;
};

inline void validate_profile(const PerturbationProfile& p) {
  if (p.n_replicates < 1) {
    throw validation_error("profile '" + p.perturbation_id + "': n_replicates < 1");
  }
  double sq = 0.0;
  for (double v : p.vector) sq += v * v;
  if (std::abs(std::sqrt(sq) - 1.0) > kNormTol) {
    throw validation_error("profile '" + p.perturbation_id + "': vector is not unit norm");
  }
}

// Arithmetic column mean of the crop embeddings of one well, accumulated in
// row order.
inline Eigen::VectorXd mean_aggregate(const Eigen::MatrixXd& crop_embeddings) {
  if (crop_embeddings.rows() == 0) {
    throw insufficient_data_error("mean_aggregate: empty group");
  }
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(crop_embeddings.cols());
  for (Eigen::Index i = 0; i < crop_embeddings.rows(); ++i) {
    sum += crop_embeddings.row(i).transpose();
  }
  return sum / static_cast<double>(crop_embeddings.rows());
}

// Normalize each replicate to unit norm, average, renormalize. The
// normalized rows are accumulated in lexicographic order, which makes the
// result bit-identical under any permutation of the input rows.
inline Eigen::VectorXd spherical_mean(const Eigen::MatrixXd& replicates,
                                      double norm_tol = kNormTol) {
  const Eigen::Index m = replicates.rows();
  const Eigen::Index d = replicates.cols();
  if (m == 0) throw insufficient_data_error("spherical_mean: empty group");

  std::vector<Eigen::VectorXd> unit(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) {
    const double norm = replicates.row(i).norm();
    if (!(norm > norm_tol)) {
      throw degenerate_error("spherical_mean: degenerate replicate (row " +
                             std::to_string(i + 1) + " has near-zero norm)");
    }
    unit[static_cast<std::size_t>(i)] = replicates.row(i).transpose() / norm;
  }
  std::sort(unit.begin(), unit.end(), [d](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    for (Eigen::Index k = 0; k < d; ++k) {
      if (a(k) != b(k)) return a(k) < b(k);
    }
    return false;
  });
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(d);
  for (const auto& u : unit) sum += u;
  const Eigen::VectorXd mean = sum / static_cast<double>(m);
  const double norm = mean.norm();
  if (!(norm > norm_tol)) {
    throw degenerate_error("spherical_mean: undefined mean (replicates cancel out)");
  }
  return mean / norm;
}

// Groups perturbation rows by perturbation_id (sorted) and takes the
// spherical mean of each group. Control rows are skipped.
inline std::vector<PerturbationProfile> profiles_from_table(const EmbeddingTable& table,
                                                            double norm_tol = kNormTol) {
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < table.records.size(); ++i) {
    const auto& r = table.records[i];
    if (r.well_type == WellType::perturbation) groups[r.perturbation_id].push_back(i);
  }
  std::vector<PerturbationProfile> profiles;
  profiles.reserve(groups.size());
  for (const auto& [id, rows] : groups) {
    Eigen::MatrixXd reps(static_cast<Eigen::Index>(rows.size()), table.dim);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto& v = table.records[rows[k]].vector;
      for (int j = 0; j < table.dim; ++j) {
        reps(static_cast<Eigen::Index>(k), j) = v[static_cast<std::size_t>(j)];
      }
    }
    PerturbationProfile p;
    p.perturbation_id = id;
    const Eigen::VectorXd mean = spherical_mean(reps, norm_tol);
    p.vector.assign(mean.data(), mean.data() + mean.size());
    p.n_replicates = static_cast<std::int64_t>(rows.size());
    profiles.push_back(std::move(p));
  }
  return profiles;
}

// Profiles reuse the embeddings schema with well/plate ids blanked and an
// n_replicates column appended.
inline void save_profiles(const std::vector<PerturbationProfile>& profiles, int dim,
                          const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write profiles file: " + path);
  out << "well_id,experiment_id,plate_id,perturbation_id,well_type";
  for (int i = 0; i < dim; ++i) out << ",v" << i;
  out << ",n_replicates\n";
  for (const auto& p : profiles) {
    validate_profile(p);
    if (static_cast<int>(p.vector.size()) != dim) {
      throw validation_error("profile '" + p.perturbation_id + "' has dimension " +
                             std::to_string(p.vector.size()) + ", expected " +
                             std::to_string(dim));
    }
    out << ",,," << p.perturbation_id << ",perturbation";
    for (double v : p.vector) out << ',' << detail::format_double(v);
    out << ',' << p.n_replicates << '\n';
  }
  if (!out) throw io_error("write failed: " + path);
}

inline std::vector<PerturbationProfile> load_profiles(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open profiles file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw schema_error(path + ": missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string_view> cols;
  detail::split_csv(line, cols);
  if (cols.size() < 7 || cols.back() != "n_replicates") {
    throw schema_error(path + ": expected profile header ending in n_replicates");
  }
  const int dim = static_cast<int>(cols.size()) - 6;
  std::vector<PerturbationProfile> profiles;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row;
    detail::split_csv(line, cols);
    if (static_cast<int>(cols.size()) != dim + 6) {
      throw schema_error(path + ": row " + std::to_string(row) + " has " +
                         std::to_string(cols.size()) + " fields, expected " +
                         std::to_string(dim + 6));
    }
    PerturbationProfile p;
    p.perturbation_id = std::string(cols[3]);
    p.vector.resize(static_cast<std::size_t>(dim));
    for (int i = 0; i < dim; ++i) {
      p.vector[static_cast<std::size_t>(i)] = detail::parse_double(cols[5 + i], row, 5 + i);
    }
    p.n_replicates = static_cast<std::int64_t>(detail::parse_double(cols.back(), row,
                                                                    dim + 5));
    validate_profile(p);
    profiles.push_back(std::move(p));
  }
  return profiles;
}

// Geometry of the deterministic inference tiling: a 2048x2048 well image
// with 256-pixel crops yields the 8x8 = 64 crop grid.
struct TilingSpec {
  int image_height = 2048;
  int image_width = 2048;
  int channels = 6;
  int crop_side = 256;
};

inline std::vector<std::pair<int, int>> tile_offsets(const TilingSpec& spec) {
  if (spec.image_height <= 0 || spec.image_width <= 0 || spec.crop_side <= 0) {
    throw validation_error("tile_offsets: dimensions must be positive");
  }
  if (spec.image_height % spec.crop_side != 0 || spec.image_width % spec.crop_side != 0) {
    throw tiling_error("tile_offsets: crop side " + std::to_string(spec.crop_side) +
                       " does not divide image " + std::to_string(spec.image_height) +
                       "x" + std::to_string(spec.image_width));
  }
  std::vector<std::pair<int, int>> offsets;
  offsets.reserve(static_cast<std::size_t>((spec.image_height / spec.crop_side) *
                                           (spec.image_width / spec.crop_side)));
  for (int r = 0; r < spec.image_height; r += spec.crop_side) {
    for (int c = 0; c < spec.image_width; c += spec.crop_side) {
      offsets.emplace_back(r, c);
    }
  }
  return offsets;
}

// Exact count of encoder forward passes for a screen of the given shape.
inline std::int64_t inference_sample_count(std::int64_t crops_per_well,
                                           std::int64_t wells_per_plate,
                                           std::int64_t plates_per_experiment,
                                           std::int64_t experiments) {
  const std::int64_t inputs[4] = {crops_per_well, wells_per_plate,
                                  plates_per_experiment, experiments};
  std::int64_t total = 1;
  for (std::int64_t v : inputs) {
    if (v < 1) throw validation_error("inference_sample_count: all inputs must be >= 1");
    if (__builtin_mul_overflow(total, v, &total)) {
      throw overflow_error("inference_sample_count: product overflows 64-bit integer");
    }
  }
  return total;
}

}  // namespace phenobench
