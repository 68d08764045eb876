#pragma once

// Test-only reference implementations. Nothing here calls into the library's
// matrix helpers; each oracle re-derives its quantity element by element.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "seqrank/numerics.hpp"
#include "seqrank/rankloss.hpp"

namespace seqrank::testing {

using Grid = std::vector<std::vector<double>>;

inline Grid to_grid(const Matrix& m) {
  Grid g(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) g[i][j] = m(i, j);
  return g;
}

inline double brute_cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ab += a[k] * b[k];
    aa += a[k] * a[k];
    bb += b[k] * b[k];
  }
  if (aa == 0 || bb == 0) return 0.0;
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

inline bool brute_permitted(std::size_t i, std::size_t j, const std::vector<std::string>& sites,
                            bool sequester) {
  if (i == j) return false;
  return !(sequester && sites[i] == sites[j]);
}

/// Prediction rows from the clamp-normalize-vote rule with the uniform fallback.
inline Grid brute_prediction(const Grid& f, const std::vector<std::size_t>& labels,
                             const std::vector<std::string>& sites, std::size_t num_classes,
                             bool sequester) {
  const std::size_t b = f.size();
  Grid p(b, std::vector<double>(num_classes, 0.0));
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<double> votes(num_classes, 0.0);
    double total = 0.0;
    for (std::size_t j = 0; j < b; ++j) {
      if (!brute_permitted(i, j, sites, sequester)) continue;
      const double s = std::max(brute_cosine(f[i], f[j]), 0.0);
      votes[labels[j]] += s;
      total += s;
    }
    for (std::size_t c = 0; c < num_classes; ++c) {
      p[i][c] = total > 0 ? votes[c] / total : 1.0 / static_cast<double>(num_classes);
    }
  }
  return p;
}

inline double brute_loss(const Grid& f, const std::vector<std::size_t>& labels,
                         const std::vector<std::string>& sites, std::size_t num_classes,
                         bool sequester) {
  const Grid p = brute_prediction(f, labels, sites, num_classes, sequester);
  double sum = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    for (std::size_t c = 0; c < num_classes; ++c) {
      const double target = labels[i] == c ? 1.0 : 0.0;
      sum += (p[i][c] - target) * (p[i][c] - target);
    }
  }
  return sum / static_cast<double>(f.size() * num_classes);
}

/// Smallest |cos| over permitted pairs; FD is unreliable near the clamp kink.
inline double min_permitted_abs_cosine(const Grid& f, const std::vector<std::string>& sites,
                                       bool sequester) {
  double m = INFINITY;
  for (std::size_t i = 0; i < f.size(); ++i)
    for (std::size_t j = 0; j < f.size(); ++j)
      if (brute_permitted(i, j, sites, sequester)) m = std::min(m, std::abs(brute_cosine(f[i], f[j])));
  return m;
}

inline double central_difference(const std::function<double(double)>& fn, double x, double h) {
  return (fn(x + h) - fn(x - h)) / (2.0 * h);
}

inline constexpr double kFdStep = 1e-6;
inline constexpr double kGradRelTol = 1e-5;
// Central differences at h = 1e-6 carry about eps * |loss| / h ~ 1e-10 of
// rounding noise, so components smaller than this are compared absolutely.
inline constexpr double kGradAbsFloor = 1e-8;

inline bool grad_close(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), kGradAbsFloor / kGradRelTol});
  return std::abs(analytic - numeric) <= kGradRelTol * scale;
}

inline double grad_rel_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), kGradAbsFloor / kGradRelTol});
  return std::abs(analytic - numeric) / scale;
}

struct RandomBatch {
  FeatureBatch batch;
  bool sequester = false;
};

/// B in [b_lo, b_hi], e in [e_lo, e_hi], C in {2, 3}; sites drawn from a small
/// pool so duplicate-site pairs are common.
inline RandomBatch random_batch(Rng& rng, std::size_t b_lo, std::size_t b_hi, std::size_t e_lo,
                                std::size_t e_hi) {
  RandomBatch rb;
  const std::size_t b = b_lo + rng.uniform_index(b_hi - b_lo + 1);
  const std::size_t e = e_lo + rng.uniform_index(e_hi - e_lo + 1);
  rb.batch.num_classes = 2 + rng.uniform_index(2);
  rb.batch.features = Matrix(b, e);
  for (double& v : rb.batch.features.data()) v = rng.normal();
  const std::size_t n_sites = 1 + rng.uniform_index(3);
  for (std::size_t i = 0; i < b; ++i) {
    rb.batch.labels.push_back(rng.uniform_index(rb.batch.num_classes));
    rb.batch.sites.push_back(std::string(1, static_cast<char>('A' + rng.uniform_index(n_sites))));
  }
  rb.sequester = rng.uniform() < 0.5;
  return rb;
}

}  // namespace seqrank::testing
