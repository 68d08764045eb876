#include "seqrank/rankloss.hpp"

#include <cmath>

#include "seqrank/errors.hpp"

namespace seqrank {

void FeatureBatch::validate() const {
  const std::size_t b = features.rows();
  if (b < 2) {
    throw batch_too_small_error("ranking loss needs at least 2 rows, got " + std::to_string(b));
  }
  if (labels.size() != b || sites.size() != b) {
    throw shape_error("batch labels/sites not aligned with feature rows");
  }
  if (num_classes < 1) throw shape_error("num_classes must be positive");
  for (std::size_t l : labels) {
    if (l >= num_classes) throw shape_error("label " + std::to_string(l) + " out of range");
  }
  if (!features.all_finite()) throw shape_error("batch features contain non-finite values");
}

SequesterMask build_mask(const std::vector<std::string>& sites, bool sequester) {
  const std::size_t b = sites.size();
  SequesterMask mask{Matrix::identity(b)};
  if (!sequester) return mask;
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j)
      if (sites[i] == sites[j]) mask.excluded(i, j) = 1.0;
  return mask;
}

Matrix similarity(const Matrix& features) {
  const Matrix unit = row_l2_normalize(features);
  return matmul(unit, transpose(unit));
}

NormalizedSimilarity masked_row_normalize(const Matrix& sim, const SequesterMask& mask) {
  const std::size_t b = sim.rows();
  if (sim.cols() != b || mask.excluded.rows() != b || mask.excluded.cols() != b) {
    throw shape_error("masked_row_normalize: similarity and mask must be matching square matrices");
  }
  NormalizedSimilarity out{Matrix(b, b), std::vector<double>(b, 0.0), std::vector<bool>(b, false)};
  for (std::size_t i = 0; i < b; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < b; ++j) {
      if (mask.blocks(i, j)) continue;
      const double s = sim(i, j);
      if (s > 0.0) {
        out.weights(i, j) = s;
        sum += s;
      }
    }
    out.row_sums[i] = sum;
    if (sum > 0.0) {
      for (double& w : out.weights.row(i)) w /= sum;
    } else {
      out.degenerate[i] = true;
    }
  }
  return out;
}

Matrix one_hot(const std::vector<std::size_t>& labels, std::size_t num_classes) {
  Matrix l(labels.size(), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) l(i, labels[i]) = 1.0;
  return l;
}

Matrix predict(const NormalizedSimilarity& norm, const std::vector<std::size_t>& labels,
               std::size_t num_classes) {
  Matrix p = matmul(norm.weights, one_hot(labels, num_classes));
  const double uniform = 1.0 / static_cast<double>(num_classes);
  for (std::size_t i = 0; i < p.rows(); ++i) {
    if (!norm.degenerate[i]) continue;
    for (double& v : p.row(i)) v = uniform;
  }
  return p;
}

LossOutput ranking_loss(const FeatureBatch& batch, bool sequester) {
  batch.validate();
  const std::size_t b = batch.size();
  const std::size_t e = batch.features.cols();
  const std::size_t c = batch.num_classes;

  const Matrix unit = row_l2_normalize(batch.features);
  const Matrix sim = matmul(unit, transpose(unit));
  const SequesterMask mask = build_mask(batch.sites, sequester);
  const NormalizedSimilarity norm = masked_row_normalize(sim, mask);
  const Matrix labels = one_hot(batch.labels, c);

  LossOutput out;
  out.prediction = predict(norm, batch.labels, c);
  out.degenerate = norm.degenerate;

  const double scale = 1.0 / static_cast<double>(b * c);
  double loss = 0.0;
  Matrix grad_pred(b, c);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      const double r = out.prediction(i, k) - labels(i, k);
      loss += r * r;
      grad_pred(i, k) = 2.0 * r * scale;
    }
  }
  out.loss = loss * scale;

  // d loss / d sim, through the vote, the row division and the clamp.
  Matrix grad_sim(b, b);
  for (std::size_t i = 0; i < b; ++i) {
    if (norm.degenerate[i]) continue;
    // Gradient w.r.t. weight (i, j) is the residual gradient at j's class.
    double mean_term = 0.0;
    for (std::size_t j = 0; j < b; ++j) {
      mean_term += norm.weights(i, j) * grad_pred(i, batch.labels[j]);
    }
    const double inv_sum = 1.0 / norm.row_sums[i];
    for (std::size_t j = 0; j < b; ++j) {
      if (mask.blocks(i, j) || !(sim(i, j) > 0.0)) continue;
      grad_sim(i, j) = (grad_pred(i, batch.labels[j]) - mean_term) * inv_sum;
    }
  }

  // sim = U U^T, so d loss / d u_i = sum_j (G_ij + G_ji) u_j.
  Matrix grad_unit(b, e);
  for (std::size_t i = 0; i < b; ++i) {
    auto g = grad_unit.row(i);
    for (std::size_t j = 0; j < b; ++j) {
      const double w = grad_sim(i, j) + grad_sim(j, i);
      if (w == 0.0) continue;
      auto u = unit.row(j);
      for (std::size_t k = 0; k < e; ++k) g[k] += w * u[k];
    }
  }

  // Back through u = f / |f|: (g - u (u . g)) / |f|. Zero rows get zero gradient.
  out.grad_features = Matrix(b, e);
  for (std::size_t i = 0; i < b; ++i) {
    const double n = l2_norm(batch.features.row(i));
    if (n == 0.0) continue;
    auto u = unit.row(i);
    auto g = grad_unit.row(i);
    const double ug = dot(u, g);
    auto dst = out.grad_features.row(i);
    for (std::size_t k = 0; k < e; ++k) dst[k] = (g[k] - u[k] * ug) / n;
  }
  return out;
}

}  // namespace seqrank
