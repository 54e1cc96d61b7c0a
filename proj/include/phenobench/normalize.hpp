#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "phenobench/embedding.hpp"
#include "phenobench/errors.hpp"
#include "phenobench/parallel.hpp"

namespace phenobench {

// Whitening transform fitted on negative experimental controls. Applying
// W(x - mean) aligns embeddings across batches: the controls end up with
// zero mean and (epsilon-regularized) identity covariance.
struct TvnModel {
  Eigen::VectorXd mean;        // control centroid
  Eigen::MatrixXd whitening;   // W = (Lambda + eps I)^{-1/2} V^T
  Eigen::VectorXd eigenvalues; // descending, clamped at 0
  double epsilon = 0.0;
};

namespace detail {

// Fixed reduction block size. Partials are computed per block and combined
// in block order, so the result is bit-identical for any thread count.
inline constexpr std::size_t kReduceBlock = 1024;

inline Eigen::MatrixXd rows_to_matrix(const EmbeddingTable& table) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(table.records.size()), table.dim);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const auto& v = table.records[static_cast<std::size_t>(i)].vector;
    for (int j = 0; j < table.dim; ++j) m(i, j) = v[static_cast<std::size_t>(j)];
  }
  return m;
}

}  // namespace detail

// Fits TVN by PCA whitening of the sample covariance (1/(n-1)) of the
// control rows. Eigenvector signs are fixed by making the
// largest-magnitude component positive, so W is deterministic.
inline TvnModel tvn_fit(const Eigen::MatrixXd& controls, double epsilon,
                        unsigned threads = 0) {
  const Eigen::Index n = controls.rows();
  const Eigen::Index d = controls.cols();
  if (n < 2) {
    throw insufficient_data_error("tvn_fit needs at least 2 control rows, got " +
                                  std::to_string(n));
  }
  if (d < 1) throw validation_error("tvn_fit needs at least 1 dimension");
  if (epsilon < 0.0) throw validation_error("epsilon must be >= 0");
  if (!controls.allFinite()) throw validation_error("tvn_fit: non-finite control value");

  const std::size_t n_blocks =
      (static_cast<std::size_t>(n) + detail::kReduceBlock - 1) / detail::kReduceBlock;

  // Pass 1: column sums per block, combined in block order.
  std::vector<Eigen::VectorXd> sum_parts(n_blocks);
  detail::parallel_tasks(n_blocks, threads, [&](std::size_t b) {
    const Eigen::Index lo = static_cast<Eigen::Index>(b * detail::kReduceBlock);
    const Eigen::Index len = std::min<Eigen::Index>(detail::kReduceBlock, n - lo);
    sum_parts[b] = controls.middleRows(lo, len).colwise().sum().transpose();
  });
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  for (const auto& part : sum_parts) mean += part;
  mean /= static_cast<double>(n);

  // Pass 2: centered scatter per block, combined in block order.
  std::vector<Eigen::MatrixXd> scatter_parts(n_blocks);
  detail::parallel_tasks(n_blocks, threads, [&](std::size_t b) {
    const Eigen::Index lo = static_cast<Eigen::Index>(b * detail::kReduceBlock);
    const Eigen::Index len = std::min<Eigen::Index>(detail::kReduceBlock, n - lo);
    const Eigen::MatrixXd centered = controls.middleRows(lo, len).rowwise() - mean.transpose();
    scatter_parts[b] = centered.transpose() * centered;
  });
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
  for (const auto& part : scatter_parts) cov += part;
  cov /= static_cast<double>(n - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) {
    throw degenerate_error("tvn_fit: eigendecomposition failed");
  }

  // Eigen returns ascending eigenvalues; flip to descending.
  Eigen::VectorXd lambda(d);
  Eigen::MatrixXd vecs(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    lambda(i) = std::max(0.0, solver.eigenvalues()(d - 1 - i));
    vecs.col(i) = solver.eigenvectors().col(d - 1 - i);
  }
  for (Eigen::Index i = 0; i < d; ++i) {
    Eigen::Index arg = 0;
    vecs.col(i).cwiseAbs().maxCoeff(&arg);
    if (vecs(arg, i) < 0.0) vecs.col(i) = -vecs.col(i);
  }

  TvnModel model;
  model.mean = std::move(mean);
  model.eigenvalues = lambda;
  model.epsilon = epsilon;
  model.whitening.resize(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const double reg = lambda(i) + epsilon;
    if (reg <= 0.0) {
      throw degenerate_error(
          "tvn_fit: zero eigenvalue with epsilon 0 (rank-deficient controls "
          "need epsilon > 0)");
    }
    model.whitening.row(i) = vecs.col(i).transpose() / std::sqrt(reg);
  }
  return model;
}

inline Eigen::VectorXd tvn_apply(const TvnModel& model, const Eigen::VectorXd& x) {
  if (x.size() != model.mean.size()) {
    throw validation_error("tvn_apply: vector has dimension " +
                           std::to_string(x.size()) + ", model expects " +
                           std::to_string(model.mean.size()));
  }
  return model.whitening * (x - model.mean);
}

// Pure per-row map; metadata untouched.
inline EmbeddingTable tvn_apply(const TvnModel& model, const EmbeddingTable& table,
                                unsigned threads = 0) {
  if (table.dim != model.mean.size()) {
    throw validation_error("tvn_apply: table dimension " + std::to_string(table.dim) +
                           " does not match model dimension " +
                           std::to_string(model.mean.size()));
  }
  EmbeddingTable out;
  out.dim = table.dim;
  out.records = table.records;
  detail::parallel_tasks(out.records.size(), threads, [&](std::size_t i) {
    auto& rec = out.records[i];
    Eigen::Map<const Eigen::VectorXd> x(rec.vector.data(),
                                        static_cast<Eigen::Index>(rec.vector.size()));
    const Eigen::VectorXd y = model.whitening * (x - model.mean);
    for (int j = 0; j < out.dim; ++j) rec.vector[static_cast<std::size_t>(j)] = y(j);
  });
  return out;
}

// Gene symbol -> chromosome arm label ("1p", "17q", ...).
struct ArmMap {
  std::map<std::string, std::string> entries;
};

// Comma-separated file with header `gene,arm`.
inline ArmMap load_arm_map(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open arm map file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw schema_error(path + ": missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "gene,arm") throw schema_error(path + ": header must be 'gene,arm'");
  ArmMap map;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row;
    const std::size_t pos = line.find(',');
    if (pos == std::string::npos || line.find(',', pos + 1) != std::string::npos) {
      throw schema_error(path + ": row " + std::to_string(row) +
                         " must have exactly 2 fields");
    }
    const std::string gene = line.substr(0, pos);
    const std::string arm = line.substr(pos + 1);
    if (gene.empty() || arm.empty()) {
      throw schema_error(path + ": row " + std::to_string(row) + " has empty field");
    }
    auto [it, inserted] = map.entries.emplace(gene, arm);
    if (!inserted && it->second != arm) {
      throw validation_error(path + ": gene '" + gene + "' mapped to both '" +
                             it->second + "' and '" + arm + "'");
    }
  }
  return map;
}

struct ArmCorrectionProvenance {
  std::size_t n_mapped_rows = 0;
  std::size_t n_control_rows = 0;            // passed through unchanged
  std::vector<std::string> unmapped_genes;   // sorted, unique, passed through
  bool no_mapped_rows = false;               // warning: input returned unchanged
};

struct ArmCorrectionResult {
  EmbeddingTable table;
  ArmCorrectionProvenance provenance;
};

// Removes per-arm shifts: every mapped perturbation row moves by
// (global mean - its arm mean), which leaves the global mean of mapped rows
// unchanged and is idempotent. Group means accumulate in
// (experiment, plate, well) key order so a permuted input yields
// bit-identical per-row outputs.
inline ArmCorrectionResult arm_correct(const EmbeddingTable& table, const ArmMap& arms) {
  ArmCorrectionResult result;
  result.table.dim = table.dim;
  result.table.records = table.records;

  std::vector<std::size_t> mapped;
  std::vector<std::string> unmapped;
  for (std::size_t i = 0; i < table.records.size(); ++i) {
    const auto& r = table.records[i];
    if (r.well_type == WellType::negative_control) {
      ++result.provenance.n_control_rows;
      continue;
    }
    if (arms.entries.count(r.perturbation_id) != 0) {
      mapped.push_back(i);
    } else {
      unmapped.push_back(r.perturbation_id);
    }
  }
  std::sort(unmapped.begin(), unmapped.end());
  unmapped.erase(std::unique(unmapped.begin(), unmapped.end()), unmapped.end());
  result.provenance.unmapped_genes = std::move(unmapped);
  result.provenance.n_mapped_rows = mapped.size();
  if (mapped.empty()) {
    result.provenance.no_mapped_rows = true;
    return result;
  }

  // Canonical accumulation order, independent of row order.
  std::sort(mapped.begin(), mapped.end(), [&](std::size_t a, std::size_t b) {
    const auto& ra = table.records[a];
    const auto& rb = table.records[b];
    return std::tie(ra.experiment_id, ra.plate_id, ra.well_id) <
           std::tie(rb.experiment_id, rb.plate_id, rb.well_id);
  });

  const int d = table.dim;
  std::map<std::string, Eigen::VectorXd> arm_sum;
  std::map<std::string, std::size_t> arm_count;
  Eigen::VectorXd global_sum = Eigen::VectorXd::Zero(d);
  for (std::size_t idx : mapped) {
    const auto& r = table.records[idx];
    const std::string& arm = arms.entries.at(r.perturbation_id);
    Eigen::Map<const Eigen::VectorXd> x(r.vector.data(), d);
    auto [it, inserted] = arm_sum.emplace(arm, Eigen::VectorXd::Zero(d));
    it->second += x;
    ++arm_count[arm];
    global_sum += x;
  }
  std::map<std::string, Eigen::VectorXd> arm_mean;
  for (const auto& [arm, sum] : arm_sum) {
    arm_mean.emplace(arm, sum / static_cast<double>(arm_count.at(arm)));
  }
  const Eigen::VectorXd global_mean = global_sum / static_cast<double>(mapped.size());

  for (std::size_t idx : mapped) {
    auto& rec = result.table.records[idx];
    const Eigen::VectorXd& ma = arm_mean.at(arms.entries.at(rec.perturbation_id));
    for (int j = 0; j < d; ++j) {
      rec.vector[static_cast<std::size_t>(j)] =
          (rec.vector[static_cast<std::size_t>(j)] - ma(j)) + global_mean(j);
    }
  }
  return result;
}

}  // namespace phenobench
