#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "seqrank/cohort.hpp"
#include "seqrank/encoder.hpp"
#include "seqrank/metrics.hpp"

namespace seqrank {

struct WsiEmbedding {
  std::string wsi_id;
  std::string site_id;
  std::size_t class_id = 0;
  std::vector<double> vector;

  friend bool operator==(const WsiEmbedding&, const WsiEmbedding&) = default;
};

enum class Metric { euclidean, cosine };

std::string to_string(Metric m);
Metric metric_from_string(const std::string& s);

class EmbeddingIndex {
 public:
  explicit EmbeddingIndex(std::vector<WsiEmbedding> entries, Metric metric = Metric::euclidean);

  const std::vector<WsiEmbedding>& entries() const noexcept { return entries_; }
  Metric metric() const noexcept { return metric_; }
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t dim() const noexcept { return dim_; }

  const WsiEmbedding* find(const std::string& wsi_id) const;
  double distance(const std::vector<double>& a, const std::vector<double>& b) const;

 private:
  std::vector<WsiEmbedding> entries_;
  Metric metric_;
  std::size_t dim_ = 0;
};

struct SearchFilter {
  std::optional<std::string> exclude_wsi;
  std::optional<std::string> exclude_site;
};

struct Neighbor {
  const WsiEmbedding* entry;
  double distance;
};

/// Mean over a WSI's patches of the mean of each patch's view embeddings.
/// Output is ordered by first appearance of each wsi_id.
std::vector<WsiEmbedding> embed_wsis(const Cohort& cohort, const EncoderParams& params);

/// Per-patch mean view embedding, used by the site probe.
std::vector<LabeledVector> embed_patches(const Cohort& cohort, const EncoderParams& params);
/// Per-patch mean of the raw views.
std::vector<LabeledVector> raw_patch_features(const Cohort& cohort);

/// Exact search. Ascending distance, ties by wsi_id. Throws no_candidates_error
/// when the filter removes every entry.
std::vector<Neighbor> knn(const EmbeddingIndex& index, const WsiEmbedding& query, std::size_t k,
                          const SearchFilter& filter);

/// Majority vote over the k nearest; ties go to the tied class with the nearest member.
std::size_t predict_wsi_label(const EmbeddingIndex& index, const WsiEmbedding& query, std::size_t k,
                              const SearchFilter& filter);

EvalReport leave_one_out_eval(const EmbeddingIndex& index, std::size_t num_classes, std::size_t k,
                              bool sequester_queries);

/// Scores each query against the index (no exclusions beyond its own wsi_id).
EvalReport evaluate_queries(const EmbeddingIndex& index, const std::vector<WsiEmbedding>& queries,
                            std::size_t num_classes, std::size_t k);

struct LohoConfig {
  EncoderSpec spec;
  TrainConfig train;
  double test_fraction = 0.25;
  std::size_t k = 3;
  Metric metric = Metric::euclidean;
};

struct LohoResult {
  std::string holdout_site;
  std::vector<std::size_t> class_counts;  // holdout WSIs per class
  EvalReport report;
  std::vector<double> epoch_losses;
};

/// Trains without holdout_site, indexes train+test WSIs and scores the holdout WSIs by k-NN.
LohoResult run_loho_experiment(const Cohort& cohort, const LohoConfig& cfg,
                               const std::string& holdout_site);

void write_index(const EmbeddingIndex& index, std::ostream& out);
EmbeddingIndex read_index(std::istream& in, Metric metric = Metric::euclidean);

}  // namespace seqrank
