#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "seqrank/cohort.hpp"
#include "seqrank/numerics.hpp"

namespace seqrank {

struct EncoderSpec {
  std::size_t input_dim = 64;
  std::vector<std::size_t> hidden_dims = {32};
  std::size_t embed_dim = 16;

  void validate() const;
  /// Layer widths from input to embedding, inclusive.
  std::vector<std::size_t> widths() const;

  friend bool operator==(const EncoderSpec&, const EncoderSpec&) = default;
};

struct DenseLayer {
  Matrix weights;  // fan_in x fan_out
  Matrix bias;     // 1 x fan_out

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Hidden layers apply swish; the last layer is linear followed by row L2 normalization.
struct EncoderParams {
  EncoderSpec spec;
  std::vector<DenseLayer> layers;

  friend bool operator==(const EncoderParams&, const EncoderParams&) = default;
};

struct TrainConfig {
  SgdConfig sgd;
  bool sequester = false;
  std::uint64_t seed = 0;
  std::size_t min_sites_per_batch = 2;

  void validate() const;
};

struct TrainLog {
  std::vector<double> epoch_losses;
  EncoderParams params;
};

struct Batch {
  std::vector<std::size_t> records;  // indices into the record list
  std::vector<std::size_t> views;    // chosen view per record
};

double swish(double t);
double swish_grad(double t);

/// Glorot-uniform weights, zero biases.
EncoderParams init_params(const EncoderSpec& spec, Rng& rng);

Matrix forward(const EncoderParams& params, const Matrix& x);

/// Parameter gradients of <grad_embeddings, forward(params, x)>; same layout as params.
std::vector<DenseLayer> backward(const EncoderParams& params, const Matrix& x,
                                 const Matrix& grad_embeddings);

/// One epoch of batches. Each record appears at most once; with sequestering on
/// every batch spans at least cfg.min_sites_per_batch sites. Incomplete or
/// under-mixed trailing batches are dropped.
std::vector<Batch> sample_batches(const std::vector<CohortRecord>& records, const TrainConfig& cfg,
                                  std::size_t epoch, const Rng& rng);

TrainLog train(const Cohort& cohort, const EncoderSpec& spec, const TrainConfig& cfg);

/// Binary format: "SQRK1", then little-endian u64 dims, then little-endian doubles.
void write_params(const EncoderParams& params, std::ostream& out);
EncoderParams read_params(std::istream& in);
void save_params(const EncoderParams& params, const std::string& path);
EncoderParams load_params(const std::string& path);

}  // namespace seqrank
