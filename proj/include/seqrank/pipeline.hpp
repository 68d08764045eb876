#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqrank/cohort.hpp"
#include "seqrank/encoder.hpp"
#include "seqrank/metrics.hpp"
#include "seqrank/retrieval.hpp"

// Command-level entry points. Every run_* returns a JSON report whose "config"
// member holds the fully resolved options; feeding that back to replay()
// reproduces the report.
namespace seqrank::pipeline {

using Json = nlohmann::ordered_json;

struct GenOptions {
  GenSpec spec;
  std::string out;
};

struct TrainOptions {
  std::string cohort;
  EncoderSpec spec;  // input_dim is taken from the cohort
  TrainConfig train;
  std::string out;
};

struct EvalOptions {
  std::string cohort;
  std::string model;
  std::size_t k = 3;
  Metric metric = Metric::euclidean;
  bool sequester_queries = false;
  std::string index_out;  // optional
  std::string csv_out;    // optional
};

struct SearchOptions {
  std::string cohort;
  std::string model;
  std::string query;
  std::size_t k = 3;
  Metric metric = Metric::euclidean;
  bool exclude_site_of_query = false;
};

struct ProbeOptions {
  std::string cohort;
  std::string model;  // empty: probe the raw view-averaged features
  ProbeKind kind = ProbeKind::rff;
  std::uint64_t seed = 0;
  double test_fraction = 0.5;
};

enum class SequesterMode { off, on, both };

struct LohoOptions {
  std::string cohort;
  std::vector<std::string> holdouts;  // empty: every site
  SequesterMode mode = SequesterMode::both;
  EncoderSpec spec;
  TrainConfig train;
  double test_fraction = 0.25;
  std::size_t k = 3;
  bool pool_singletons = false;
};

struct BiasOptions {
  GenSpec gen;
  EncoderSpec spec;
  TrainConfig train;  // sequester flag is ignored; both variants are trained
  ProbeKind probe_kind = ProbeKind::rff;
  double probe_test_fraction = 0.5;
  std::size_t k = 3;
  bool sequester_queries = false;
};

Json run_gen(const GenOptions& opts);
Json run_train(const TrainOptions& opts);
Json run_eval(const EvalOptions& opts);
Json run_search(const SearchOptions& opts);
Json run_probe(const ProbeOptions& opts);
Json run_loho(const LohoOptions& opts);
/// Generates one cohort and trains it with sequestering off and on; reports
/// site-probe accuracy and leave-one-out class scores for both.
Json run_bias(const BiasOptions& opts);

/// Re-executes the command recorded in report["config"].
Json replay(const Json& report);

/// Thread cap from SEQRANK_THREADS (default 1).
std::size_t thread_budget();

/// Runs fn(0..n-1) on up to `threads` workers; results come back in index order.
std::vector<Json> parallel_map(std::size_t n, std::size_t threads,
                               const std::function<Json(std::size_t)>& fn);

std::string to_string(SequesterMode m);
SequesterMode sequester_mode_from_string(const std::string& s);

Json to_json(const GenSpec& g);
Json to_json(const EncoderSpec& s);
Json to_json(const TrainConfig& c);
GenSpec gen_spec_from_json(const Json& j);
EncoderSpec encoder_spec_from_json(const Json& j);
TrainConfig train_config_from_json(const Json& j);

/// Plain-text tables for terminal output.
std::string format_eval_table(const Json& report);
std::string format_loho_table(const Json& report);
std::string format_bias_table(const Json& report);

}  // namespace seqrank::pipeline
