#include "seqrank/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <set>

#include <json.hpp>

#include "seqrank/errors.hpp"

namespace seqrank {

std::string to_string(Metric m) { return m == Metric::euclidean ? "euclidean" : "cosine"; }

Metric metric_from_string(const std::string& s) {
  if (s == "euclidean") return Metric::euclidean;
  if (s == "cosine") return Metric::cosine;
  throw error("unknown metric '" + s + "' (expected euclidean or cosine)");
}

EmbeddingIndex::EmbeddingIndex(std::vector<WsiEmbedding> entries, Metric metric)
    : entries_(std::move(entries)), metric_(metric) {
  std::set<std::string> ids;
  if (!entries_.empty()) dim_ = entries_.front().vector.size();
  for (const auto& e : entries_) {
    if (!ids.insert(e.wsi_id).second) throw schema_error("duplicate wsi_id " + e.wsi_id + " in index");
    if (e.vector.size() != dim_) throw shape_error("index entry " + e.wsi_id + " has wrong dim");
    for (double v : e.vector) {
      if (!std::isfinite(v)) throw shape_error("index entry " + e.wsi_id + " is not finite");
    }
  }
}

const WsiEmbedding* EmbeddingIndex::find(const std::string& wsi_id) const {
  for (const auto& e : entries_) {
    if (e.wsi_id == wsi_id) return &e;
  }
  return nullptr;
}

double EmbeddingIndex::distance(const std::vector<double>& a, const std::vector<double>& b) const {
  if (a.size() != b.size()) throw shape_error("query dim does not match index dim");
  if (metric_ == Metric::euclidean) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      const double d = a[k] - b[k];
      s += d * d;
    }
    return std::sqrt(s);
  }
  const double na = l2_norm(a), nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) return 1.0;
  return 1.0 - dot(a, b) / (na * nb);
}

namespace {

// Encodes every view of every record; returns per-record mean embeddings.
std::vector<std::vector<double>> patch_means(const Cohort& cohort, const EncoderParams& params) {
  if (cohort.dim != params.spec.input_dim) {
    throw shape_error("cohort dim " + std::to_string(cohort.dim) + " != encoder input dim " +
                      std::to_string(params.spec.input_dim));
  }
  std::vector<std::vector<double>> out;
  out.reserve(cohort.records.size());
  for (const auto& rec : cohort.records) {
    const Matrix emb = forward(params, rec.views);
    std::vector<double> mean(emb.cols(), 0.0);
    for (std::size_t v = 0; v < emb.rows(); ++v)
      for (std::size_t k = 0; k < emb.cols(); ++k) mean[k] += emb(v, k);
    for (double& m : mean) m /= static_cast<double>(emb.rows());
    out.push_back(std::move(mean));
  }
  return out;
}

}  // namespace

std::vector<WsiEmbedding> embed_wsis(const Cohort& cohort, const EncoderParams& params) {
  const auto patches = patch_means(cohort, params);
  std::vector<WsiEmbedding> out;
  std::map<std::string, std::size_t> slot;
  std::vector<std::size_t> counts;
  for (std::size_t i = 0; i < cohort.records.size(); ++i) {
    const auto& rec = cohort.records[i];
    auto [it, inserted] = slot.emplace(rec.wsi_id, out.size());
    if (inserted) {
      out.push_back({rec.wsi_id, rec.site_id, rec.class_id,
                     std::vector<double>(params.spec.embed_dim, 0.0)});
      counts.push_back(0);
    }
    auto& acc = out[it->second].vector;
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += patches[i][k];
    ++counts[it->second];
  }
  for (std::size_t w = 0; w < out.size(); ++w) {
    for (double& v : out[w].vector) v /= static_cast<double>(counts[w]);
  }
  return out;
}

std::vector<LabeledVector> embed_patches(const Cohort& cohort, const EncoderParams& params) {
  auto means = patch_means(cohort, params);
  std::vector<LabeledVector> out;
  for (std::size_t i = 0; i < means.size(); ++i) {
    out.push_back({std::move(means[i]), cohort.records[i].site_id});
  }
  return out;
}

std::vector<LabeledVector> raw_patch_features(const Cohort& cohort) {
  std::vector<LabeledVector> out;
  for (const auto& rec : cohort.records) {
    std::vector<double> mean(cohort.dim, 0.0);
    for (std::size_t v = 0; v < rec.views.rows(); ++v)
      for (std::size_t k = 0; k < cohort.dim; ++k) mean[k] += rec.views(v, k);
    for (double& m : mean) m /= static_cast<double>(rec.views.rows());
    out.push_back({std::move(mean), rec.site_id});
  }
  return out;
}

std::vector<Neighbor> knn(const EmbeddingIndex& index, const WsiEmbedding& query, std::size_t k,
                          const SearchFilter& filter) {
  if (k == 0) throw error("k must be at least 1");
  std::vector<Neighbor> cands;
  for (const auto& e : index.entries()) {
    if (filter.exclude_wsi && e.wsi_id == *filter.exclude_wsi) continue;
    if (filter.exclude_site && e.site_id == *filter.exclude_site) continue;
    cands.push_back({&e, index.distance(query.vector, e.vector)});
  }
  if (cands.empty()) throw no_candidates_error("no index entries survive the filter for " + query.wsi_id);
  const std::size_t n = std::min(k, cands.size());
  std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(n), cands.end(),
                    [](const Neighbor& a, const Neighbor& b) {
                      if (a.distance != b.distance) return a.distance < b.distance;
                      return a.entry->wsi_id < b.entry->wsi_id;
                    });
  cands.resize(n);
  return cands;
}

std::size_t predict_wsi_label(const EmbeddingIndex& index, const WsiEmbedding& query, std::size_t k,
                              const SearchFilter& filter) {
  const auto neighbors = knn(index, query, k, filter);
  std::map<std::size_t, std::size_t> votes;
  for (const auto& n : neighbors) ++votes[n.entry->class_id];
  std::size_t top = 0;
  for (auto [cls, v] : votes) top = std::max(top, v);
  // Neighbours are sorted, so the first one whose class is tied for the top wins.
  for (const auto& n : neighbors) {
    if (votes[n.entry->class_id] == top) return n.entry->class_id;
  }
  return neighbors.front().entry->class_id;
}

EvalReport leave_one_out_eval(const EmbeddingIndex& index, std::size_t num_classes, std::size_t k,
                              bool sequester_queries) {
  if (index.size() < 2) throw error("leave-one-out needs at least 2 index entries");
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::size_t errors = 0;
  for (const auto& q : index.entries()) {
    SearchFilter filter{q.wsi_id, std::nullopt};
    if (sequester_queries) filter.exclude_site = q.site_id;
    try {
      pairs.emplace_back(q.class_id, predict_wsi_label(index, q, k, filter));
    } catch (const no_candidates_error&) {
      ++errors;
    }
  }
  return make_report(confusion_from_pairs(pairs, num_classes), errors);
}

EvalReport evaluate_queries(const EmbeddingIndex& index, const std::vector<WsiEmbedding>& queries,
                            std::size_t num_classes, std::size_t k) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::size_t errors = 0;
  for (const auto& q : queries) {
    try {
      pairs.emplace_back(q.class_id, predict_wsi_label(index, q, k, SearchFilter{q.wsi_id, {}}));
    } catch (const no_candidates_error&) {
      ++errors;
    }
  }
  return make_report(confusion_from_pairs(pairs, num_classes), errors);
}

LohoResult run_loho_experiment(const Cohort& cohort, const LohoConfig& cfg,
                               const std::string& holdout_site) {
  std::set<std::string> present;
  for (const auto& r : cohort.records) present.insert(r.site_id);
  if (std::find(cohort.sites.begin(), cohort.sites.end(), holdout_site) == cohort.sites.end()) {
    throw lookup_error("unknown site " + holdout_site);
  }
  if (present.size() < 2) throw composition_error("leave-one-hospital-out needs at least 2 sites");

  const CohortSplit parts = split(cohort, holdout_site, cfg.test_fraction, cfg.train.seed);
  const TrainLog log = train(parts.train, cfg.spec, cfg.train);

  auto searchable = embed_wsis(parts.train, log.params);
  auto test = embed_wsis(parts.test, log.params);
  searchable.insert(searchable.end(), test.begin(), test.end());
  const EmbeddingIndex index(std::move(searchable), cfg.metric);
  const auto queries = embed_wsis(parts.external, log.params);

  LohoResult result;
  result.holdout_site = holdout_site;
  result.class_counts.assign(cohort.num_classes, 0);
  for (const auto& q : queries) ++result.class_counts[q.class_id];
  result.report = evaluate_queries(index, queries, cohort.num_classes, cfg.k);
  result.epoch_losses = log.epoch_losses;
  return result;
}

void write_index(const EmbeddingIndex& index, std::ostream& out) {
  for (const auto& e : index.entries()) {
    out << "{\"wsi_id\":" << nlohmann::json(e.wsi_id).dump()
        << ",\"site_id\":" << nlohmann::json(e.site_id).dump() << ",\"class_id\":" << e.class_id
        << ",\"vector\":[";
    for (std::size_t k = 0; k < e.vector.size(); ++k) {
      if (k) out << ',';
      out << format_double(e.vector[k]);
    }
    out << "]}\n";
  }
}

EmbeddingIndex read_index(std::istream& in, Metric metric) {
  std::vector<WsiEmbedding> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      entries.push_back({j.at("wsi_id").get<std::string>(), j.at("site_id").get<std::string>(),
                         j.at("class_id").get<std::size_t>(),
                         j.at("vector").get<std::vector<double>>()});
    } catch (const nlohmann::json::exception& e) {
      throw parse_error(e.what(), line_no);
    }
  }
  return EmbeddingIndex(std::move(entries), metric);
}

}  // namespace seqrank
