#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "seqrank/numerics.hpp"

namespace seqrank {

/// One training batch: B embeddings with aligned class and site labels.
struct FeatureBatch {
  Matrix features;                  // B x e
  std::vector<std::size_t> labels;  // class ids in [0, num_classes)
  std::vector<std::string> sites;
  std::size_t num_classes = 2;

  std::size_t size() const noexcept { return features.rows(); }
  void validate() const;
};

/// Pair matrix of excluded voters. Entry (i, j) is 1 when j may not vote for i.
struct SequesterMask {
  Matrix excluded;  // B x B, entries in {0, 1}

  bool blocks(std::size_t i, std::size_t j) const { return excluded(i, j) != 0.0; }
};

/// Identity when sequestering is off; otherwise the same-site indicator.
SequesterMask build_mask(const std::vector<std::string>& sites, bool sequester);

/// Cosine similarity matrix of the rows of F.
Matrix similarity(const Matrix& features);

struct NormalizedSimilarity {
  Matrix weights;              // row-stochastic over permitted neighbours, or all-zero
  std::vector<double> row_sums;  // sum of clamped permitted similarities before division
  std::vector<bool> degenerate;
};

/// Zeroes excluded pairs, clamps negatives to 0 and rescales each row to sum 1.
/// Rows with no positive permitted similarity stay zero and are flagged degenerate.
NormalizedSimilarity masked_row_normalize(const Matrix& sim, const SequesterMask& mask);

/// Similarity-weighted vote over one-hot labels. Degenerate rows predict 1/C.
Matrix predict(const NormalizedSimilarity& norm, const std::vector<std::size_t>& labels,
               std::size_t num_classes);

Matrix one_hot(const std::vector<std::size_t>& labels, std::size_t num_classes);

struct LossOutput {
  double loss = 0.0;
  Matrix grad_features;  // B x e
  Matrix prediction;     // B x C
  std::vector<bool> degenerate;
};

/// Mean squared error between the neighbour-vote prediction and one-hot labels,
/// with the exact gradient of that loss with respect to the raw batch features.
LossOutput ranking_loss(const FeatureBatch& batch, bool sequester);

}  // namespace seqrank
