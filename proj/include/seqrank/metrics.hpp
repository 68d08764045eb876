#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace seqrank {

using Confusion = std::vector<std::vector<std::size_t>>;  // [truth][predicted]

struct ClassScores {
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> f1;
};

struct EvalReport {
  ClassScores scores;
  double accuracy = 0.0;
  Confusion confusion;
  std::size_t n_scored = 0;
  std::size_t n_errors = 0;

  double macro_f1() const;
};

Confusion confusion_from_pairs(const std::vector<std::pair<std::size_t, std::size_t>>& truth_pred,
                               std::size_t num_classes);

/// Per-class precision, recall and F1; every 0/0 is taken as 0.
ClassScores f1_scores(const Confusion& confusion);

EvalReport make_report(const Confusion& confusion, std::size_t n_errors);

nlohmann::ordered_json to_json(const EvalReport& report);
std::string confusion_csv(const Confusion& confusion);

enum class ProbeKind { linear, rff };

std::string to_string(ProbeKind kind);
ProbeKind probe_kind_from_string(const std::string& s);

struct LabeledVector {
  std::vector<double> vector;
  std::string site;
};

struct ProbeReport {
  ProbeKind kind = ProbeKind::rff;
  double site_accuracy = 0.0;
  double chance_level = 0.0;
  std::size_t n_sites = 0;
};

nlohmann::ordered_json to_json(const ProbeReport& report);

struct ProbeConfig {
  std::size_t rff_features = 256;
  std::size_t iterations = 500;
  double learning_rate = 0.1;
  std::size_t bandwidth_pairs = 1000;
};

/// Trains a one-vs-rest logistic classifier to recover the site label, either on
/// the vectors directly or on random Fourier features of an RBF kernel whose
/// bandwidth is the median pairwise distance. Reports held-out accuracy.
ProbeReport site_probe(const std::vector<LabeledVector>& train, const std::vector<LabeledVector>& test,
                       ProbeKind kind, std::uint64_t seed, const ProbeConfig& cfg = {});

}  // namespace seqrank
