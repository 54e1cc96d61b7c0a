#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "phenobench/aggregate.hpp"
#include "phenobench/errors.hpp"
#include "phenobench/parallel.hpp"

namespace phenobench {

// Reference point for cosine similarity: the mean of negative-control
// embeddings after the normalization pipeline.
struct Origin {
  std::vector<double> vector;
};

// Exact q/(1-q) order statistics of the all-pairs similarity multiset.
struct SimilarityThresholds {
  double low = 0.0;
  double high = 0.0;
  double q = 0.0;
};

// Canonical unordered gene pair: lexicographically ordered ids.
using PairKey = std::pair<std::string, std::string>;

inline PairKey make_pair_key(const std::string& a, const std::string& b) {
  if (a == b) throw validation_error("self-pair (" + a + ", " + a + ") is undefined");
  return a < b ? PairKey{a, b} : PairKey{b, a};
}

namespace detail {

// Strict sequential dot product. Both centered_cosine and the pair engine
// funnel through this (the build disables FP contraction), so a pair's
// similarity is bit-identical no matter which path computed it.
inline double dot_strict(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) s += a[k] * b[k];
  return s;
}

inline double cosine_from_centered(const double* a, const double* b,
                                   double norm_a, double norm_b, std::size_t d) {
  const double sim = dot_strict(a, b, d) / (norm_a * norm_b);
  return std::clamp(sim, -1.0, 1.0);
}

// ceil(q * n) guarded against the product rounding up past an integer
// (e.g. fl(0.05) * 19900 lands just above 995).
inline std::int64_t quantile_index(double q, std::int64_t n) {
  const long double t = static_cast<long double>(q) * static_cast<long double>(n) - 1e-9L;
  auto m = static_cast<std::int64_t>(std::ceil(t));
  return std::clamp<std::int64_t>(m, 1, n);
}

}  // namespace detail

// Cosine of the angle between (a - origin) and (b - origin).
inline double centered_cosine(std::span<const double> a, std::span<const double> b,
                              const Origin& origin) {
  const std::size_t d = origin.vector.size();
  if (a.size() != d || b.size() != d) {
    throw validation_error("centered_cosine: dimension mismatch");
  }
  std::vector<double> ca(d), cb(d);
  for (std::size_t k = 0; k < d; ++k) ca[k] = a[k] - origin.vector[k];
  for (std::size_t k = 0; k < d; ++k) cb[k] = b[k] - origin.vector[k];
  const double na = std::sqrt(detail::dot_strict(ca.data(), ca.data(), d));
  const double nb = std::sqrt(detail::dot_strict(cb.data(), cb.data(), d));
  if (na == 0.0 || nb == 0.0) {
    throw degenerate_error("centered_cosine: zero-length centered vector");
  }
  return detail::cosine_from_centered(ca.data(), cb.data(), na, nb, d);
}

// All-pairs similarity engine over a profile set. Pairs are streamed in row
// blocks rather than materialized; quantiles are found by an exact two-pass
// selection (histogram, then candidate refinement) that reproduces a
// brute-force sort bit for bit. Every reduction is counting-based, so the
// results are identical for any thread count.
class PairEngine {
 public:
  PairEngine(const std::vector<PerturbationProfile>& profiles, const Origin& origin,
             unsigned threads = 0)
      : dim_(origin.vector.size()), threads_(threads) {
    std::vector<const PerturbationProfile*> sorted;
    sorted.reserve(profiles.size());
    for (const auto& p : profiles) sorted.push_back(&p);
    std::sort(sorted.begin(), sorted.end(),
              [](const PerturbationProfile* x, const PerturbationProfile* y) {
                return x->perturbation_id < y->perturbation_id;
              });
    const std::size_t n = sorted.size();
    ids_.reserve(n);
    centered_.resize(n * dim_);
    norms_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& p = *sorted[i];
      if (p.vector.size() != dim_) {
        throw validation_error("profile '" + p.perturbation_id +
                               "' does not match origin dimension");
      }
      if (!ids_.empty() && ids_.back() == p.perturbation_id) {
        throw validation_error("duplicate profile id '" + p.perturbation_id + "'");
      }
      double* row = centered_.data() + i * dim_;
      for (std::size_t k = 0; k < dim_; ++k) row[k] = p.vector[k] - origin.vector[k];
      norms_[i] = std::sqrt(detail::dot_strict(row, row, dim_));
      if (norms_[i] == 0.0) {
        throw degenerate_error("profile '" + p.perturbation_id +
                               "' coincides with the origin");
      }
      ids_.push_back(p.perturbation_id);
      index_[p.perturbation_id] = i;
    }
  }

  std::size_t size() const { return ids_.size(); }
  const std::string& id(std::size_t i) const { return ids_[i]; }
  std::optional<std::size_t> index_of(const std::string& id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  std::int64_t n_pairs() const {
    const auto n = static_cast<std::int64_t>(ids_.size());
    return n * (n - 1) / 2;
  }

  double similarity(std::size_t i, std::size_t j) const {
    return detail::cosine_from_centered(centered_.data() + i * dim_,
                                        centered_.data() + j * dim_, norms_[i],
                                        norms_[j], dim_);
  }

  // k-th smallest similarity (1-based) among pairs accepted by `include`.
  template <class Include>
  double kth_smallest(std::int64_t k, Include&& include) const {
    double lo = -1.0;
    double hi = 1.0;
    for (int iter = 0; iter < 64; ++iter) {
      if (lo == hi) return lo;
      if (hi - lo <= std::abs(lo) * 4e-16 + 1e-300) {
        // Massive ties in an ulp-wide window: count exact values.
        auto [distinct, below] = distinct_pass(lo, hi, include);
        std::int64_t r = k - below;
        for (const auto& [value, count] : distinct) {
          if (r <= count) return value;
          r -= count;
        }
        throw validation_error("kth_smallest: inconsistent tie state");
      }
      const auto counts = count_pass(lo, hi, include);
      const std::int64_t rank = k - counts.below;  // rank within [lo, hi]
      if (rank < 1) throw validation_error("kth_smallest: rank out of range");
      std::int64_t cum = 0;
      int target_bin = -1;
      for (int b = 0; b < kBins; ++b) {
        cum += counts.bins[static_cast<std::size_t>(b)];
        if (cum >= rank) {
          target_bin = b;
          break;
        }
      }
      if (target_bin < 0) {
        throw validation_error("kth_smallest: rank out of range");
      }
      // Widen by one bin on each side; boundary classification may wobble
      // by an ulp between passes, and correctness only needs the window to
      // contain the target.
      const double width = (hi - lo) / kBins;
      const double nlo = std::max(lo, lo + (target_bin - 1) * width);
      const double nhi = std::min(hi, lo + (target_bin + 2) * width);
      std::int64_t window = 0;
      for (int b = std::max(0, target_bin - 1); b <= std::min(kBins - 1, target_bin + 1); ++b) {
        window += counts.bins[static_cast<std::size_t>(b)];
      }
      if (window <= kCollectLimit) {
        auto [values, below] = collect_pass(nlo, nhi, include);
        const std::int64_t r = k - below;
        if (r < 1 || r > static_cast<std::int64_t>(values.size())) {
          throw validation_error("kth_smallest: inconsistent selection state");
        }
        auto nth = values.begin() + (r - 1);
        std::nth_element(values.begin(), nth, values.end());
        return *nth;
      }
      lo = nlo;
      hi = nhi;
    }
    throw validation_error("kth_smallest: selection did not converge");
  }

  double kth_smallest(std::int64_t k) const {
    return kth_smallest(k, [](std::size_t, std::size_t) { return true; });
  }

 private:
  static constexpr int kBins = 4096;
  static constexpr std::int64_t kCollectLimit = 4 * 1024 * 1024;

  struct Counts {
    std::int64_t below = 0;
    std::int64_t above = 0;
    std::vector<std::int64_t> bins;
  };

  template <class Fn>
  void for_each_block(Fn&& fn) const {
    // fn(task, i_begin, i_end); tasks sized for load balance.
    const std::size_t n = ids_.size();
    const unsigned t = detail::resolve_threads(threads_);
    const std::size_t block = std::max<std::size_t>(1, n / (8 * t) + 1);
    const std::size_t n_tasks = (n + block - 1) / block;
    detail::parallel_tasks(n_tasks, threads_, [&](std::size_t task) {
      const std::size_t begin = task * block;
      const std::size_t end = std::min(n, begin + block);
      fn(task, begin, end);
    });
  }

  template <class Include>
  Counts count_pass(double lo, double hi, Include&& include) const {
    const std::size_t n = ids_.size();
    const unsigned t = detail::resolve_threads(threads_);
    const std::size_t block = std::max<std::size_t>(1, n / (8 * t) + 1);
    const std::size_t n_tasks = (n + block - 1) / block;
    std::vector<Counts> parts(n_tasks);
    const double width = (hi - lo) / kBins;
    for_each_block([&](std::size_t task, std::size_t begin, std::size_t end) {
      Counts local;
      local.bins.assign(kBins, 0);
      for (std::size_t i = begin; i < end; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
          if (!include(i, j)) continue;
          const double v = similarity(i, j);
          if (v < lo) {
            ++local.below;
          } else if (v > hi) {
            ++local.above;
          } else {
            const auto b = std::min<std::int64_t>(kBins - 1,
                                                  static_cast<std::int64_t>((v - lo) / width));
            ++local.bins[static_cast<std::size_t>(std::max<std::int64_t>(0, b))];
          }
        }
      }
      parts[task] = std::move(local);
    });
    Counts total;
    total.bins.assign(kBins, 0);
    for (const auto& p : parts) {
      total.below += p.below;
      total.above += p.above;
      for (int b = 0; b < kBins; ++b) {
        total.bins[static_cast<std::size_t>(b)] += p.bins[static_cast<std::size_t>(b)];
      }
    }
    return total;
  }

  template <class Include>
  std::pair<std::vector<double>, std::int64_t> collect_pass(double lo, double hi,
                                                            Include&& include) const {
    const std::size_t n = ids_.size();
    const unsigned t = detail::resolve_threads(threads_);
    const std::size_t block = std::max<std::size_t>(1, n / (8 * t) + 1);
    const std::size_t n_tasks = (n + block - 1) / block;
    std::vector<std::vector<double>> values(n_tasks);
    std::vector<std::int64_t> below(n_tasks, 0);
    for_each_block([&](std::size_t task, std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
          if (!include(i, j)) continue;
          const double v = similarity(i, j);
          if (v < lo) {
            ++below[task];
          } else if (v <= hi) {
            values[task].push_back(v);
          }
        }
      }
    });
    std::vector<double> all;
    std::int64_t below_total = 0;
    for (std::size_t task = 0; task < n_tasks; ++task) {
      below_total += below[task];
      all.insert(all.end(), values[task].begin(), values[task].end());
    }
    return {std::move(all), below_total};
  }

  template <class Include>
  std::pair<std::map<double, std::int64_t>, std::int64_t> distinct_pass(
      double lo, double hi, Include&& include) const {
    const std::size_t n = ids_.size();
    const unsigned t = detail::resolve_threads(threads_);
    const std::size_t block = std::max<std::size_t>(1, n / (8 * t) + 1);
    const std::size_t n_tasks = (n + block - 1) / block;
    std::vector<std::map<double, std::int64_t>> maps(n_tasks);
    std::vector<std::int64_t> below(n_tasks, 0);
    for_each_block([&](std::size_t task, std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
          if (!include(i, j)) continue;
          const double v = similarity(i, j);
          if (v < lo) {
            ++below[task];
          } else if (v <= hi) {
            ++maps[task][v];
          }
        }
      }
    });
    std::map<double, std::int64_t> total;
    std::int64_t below_total = 0;
    for (std::size_t task = 0; task < n_tasks; ++task) {
      below_total += below[task];
      for (const auto& [value, count] : maps[task]) total[value] += count;
    }
    return {std::move(total), below_total};
  }

  std::size_t dim_;
  unsigned threads_;
  std::vector<std::string> ids_;  // ascending
  std::vector<double> centered_;  // row-contiguous, n x dim
  std::vector<double> norms_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Exact bottom-q / top-q order statistics over all unordered distinct
// pairs; self-pairs are excluded by construction.
inline SimilarityThresholds all_pairs_thresholds(const PairEngine& engine, double q) {
  if (engine.size() < 2) {
    throw insufficient_data_error("all_pairs_thresholds: need at least 2 profiles");
  }
  if (!(q > 0.0 && q < 0.5)) {
    throw validation_error("all_pairs_thresholds: q must be in (0, 0.5)");
  }
  const std::int64_t n_pairs = engine.n_pairs();
  const std::int64_t m = detail::quantile_index(q, n_pairs);
  SimilarityThresholds th;
  th.q = q;
  th.low = engine.kth_smallest(m);
  th.high = engine.kth_smallest(n_pairs - m + 1);
  return th;
}

inline SimilarityThresholds all_pairs_thresholds(
    const std::vector<PerturbationProfile>& profiles, const Origin& origin, double q,
    unsigned threads = 0) {
  const PairEngine engine(profiles, origin, threads);
  return all_pairs_thresholds(engine, q);
}

struct PairQueryResult {
  std::map<PairKey, double> similarities;
  std::vector<PairKey> uncovered;  // pairs with at least one id absent from profiles
};

// Centered cosine for each queried pair; pairs naming unknown genes are
// exclusions, not errors (databases cover genes absent from the screen).
inline PairQueryResult pair_similarities(const PairEngine& engine,
                                         const std::set<PairKey>& pairs) {
  PairQueryResult out;
  for (const auto& pair : pairs) {
    const auto i = engine.index_of(pair.first);
    const auto j = engine.index_of(pair.second);
    if (!i || !j) {
      out.uncovered.push_back(pair);
      continue;
    }
    out.similarities.emplace(pair, engine.similarity(*i, *j));
  }
  return out;
}

inline PairQueryResult pair_similarities(const std::vector<PerturbationProfile>& profiles,
                                         const std::set<PairKey>& pairs,
                                         const Origin& origin, unsigned threads = 0) {
  const PairEngine engine(profiles, origin, threads);
  return pair_similarities(engine, pairs);
}

}  // namespace phenobench
