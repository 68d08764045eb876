#include "seqrank/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

#include "seqrank/errors.hpp"
#include "seqrank/numerics.hpp"

namespace seqrank {

namespace {

double ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

}  // namespace

double EvalReport::macro_f1() const {
  if (scores.f1.empty()) return 0.0;
  double s = 0.0;
  for (double f : scores.f1) s += f;
  return s / static_cast<double>(scores.f1.size());
}

Confusion confusion_from_pairs(const std::vector<std::pair<std::size_t, std::size_t>>& truth_pred,
                               std::size_t num_classes) {
  Confusion m(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (auto [t, p] : truth_pred) {
    if (t >= num_classes || p >= num_classes) throw shape_error("class id outside confusion matrix");
    ++m[t][p];
  }
  return m;
}

ClassScores f1_scores(const Confusion& confusion) {
  const std::size_t c = confusion.size();
  for (const auto& row : confusion) {
    if (row.size() != c) throw shape_error("confusion matrix must be square");
  }
  ClassScores s;
  for (std::size_t k = 0; k < c; ++k) {
    double tp = static_cast<double>(confusion[k][k]);
    double fp = 0.0, fn = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (j == k) continue;
      fp += static_cast<double>(confusion[j][k]);
      fn += static_cast<double>(confusion[k][j]);
    }
    const double p = ratio(tp, tp + fp);
    const double r = ratio(tp, tp + fn);
    s.precision.push_back(p);
    s.recall.push_back(r);
    s.f1.push_back(ratio(2.0 * p * r, p + r));
  }
  return s;
}

EvalReport make_report(const Confusion& confusion, std::size_t n_errors) {
  EvalReport r;
  r.confusion = confusion;
  r.scores = f1_scores(confusion);
  r.n_errors = n_errors;
  std::size_t trace = 0;
  for (std::size_t k = 0; k < confusion.size(); ++k) {
    trace += confusion[k][k];
    for (auto v : confusion[k]) r.n_scored += v;
  }
  r.accuracy = ratio(static_cast<double>(trace), static_cast<double>(r.n_scored));
  return r;
}

nlohmann::ordered_json to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["precision"] = report.scores.precision;
  j["recall"] = report.scores.recall;
  j["f1"] = report.scores.f1;
  j["macro_f1"] = report.macro_f1();
  j["accuracy"] = report.accuracy;
  j["confusion"] = report.confusion;
  j["n_scored"] = report.n_scored;
  j["n_errors"] = report.n_errors;
  return j;
}

std::string confusion_csv(const Confusion& confusion) {
  std::ostringstream out;
  out << "truth\\pred";
  for (std::size_t k = 0; k < confusion.size(); ++k) out << ',' << k;
  out << '\n';
  for (std::size_t t = 0; t < confusion.size(); ++t) {
    out << t;
    for (auto v : confusion[t]) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

std::string to_string(ProbeKind kind) { return kind == ProbeKind::linear ? "linear" : "rff"; }

ProbeKind probe_kind_from_string(const std::string& s) {
  if (s == "linear") return ProbeKind::linear;
  if (s == "rff") return ProbeKind::rff;
  throw error("unknown probe kind '" + s + "' (expected linear or rff)");
}

nlohmann::ordered_json to_json(const ProbeReport& report) {
  nlohmann::ordered_json j;
  j["probe_kind"] = to_string(report.kind);
  j["site_accuracy"] = report.site_accuracy;
  j["chance_level"] = report.chance_level;
  j["n_sites"] = report.n_sites;
  return j;
}

namespace {

double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return std::sqrt(s);
}

double median_pairwise_distance(const std::vector<LabeledVector>& pts, std::size_t max_pairs,
                                Rng& rng) {
  const std::size_t n = pts.size();
  std::vector<double> d;
  const std::size_t all_pairs = n * (n - 1) / 2;
  if (all_pairs <= max_pairs) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) d.push_back(distance(pts[i].vector, pts[j].vector));
  } else {
    while (d.size() < max_pairs) {
      const std::size_t i = rng.uniform_index(n), j = rng.uniform_index(n);
      if (i == j) continue;
      d.push_back(distance(pts[i].vector, pts[j].vector));
    }
  }
  if (d.empty()) return 1.0;
  std::sort(d.begin(), d.end());
  const std::size_t m = d.size();
  return m % 2 ? d[m / 2] : 0.5 * (d[m / 2 - 1] + d[m / 2]);
}

// Maps inputs onto the probe's feature space (with a trailing bias column).
class FeatureMap {
 public:
  FeatureMap(ProbeKind kind, std::size_t dim) : kind_(kind), dim_(dim) {}

  void fit_rff(std::size_t n_features, double bandwidth, Rng& rng) {
    const double inv = bandwidth > 0.0 ? 1.0 / bandwidth : 1.0;
    omega_ = Matrix(n_features, dim_);
    for (double& w : omega_.data()) w = rng.normal() * inv;
    phase_.resize(n_features);
    for (double& p : phase_) p = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }

  std::size_t out_dim() const { return (kind_ == ProbeKind::rff ? omega_.rows() : dim_) + 1; }

  std::vector<double> operator()(const std::vector<double>& x) const {
    std::vector<double> z;
    z.reserve(out_dim());
    if (kind_ == ProbeKind::linear) {
      z = x;
    } else {
      const double scale = std::sqrt(2.0 / static_cast<double>(omega_.rows()));
      for (std::size_t f = 0; f < omega_.rows(); ++f) {
        z.push_back(scale * std::cos(dot(omega_.row(f), x) + phase_[f]));
      }
    }
    z.push_back(1.0);
    return z;
  }

 private:
  ProbeKind kind_;
  std::size_t dim_;
  Matrix omega_;
  std::vector<double> phase_;
};

}  // namespace

ProbeReport site_probe(const std::vector<LabeledVector>& train, const std::vector<LabeledVector>& test,
                       ProbeKind kind, std::uint64_t seed, const ProbeConfig& cfg) {
  std::map<std::string, std::size_t> site_index;
  for (const auto& p : train) site_index.emplace(p.site, 0);
  if (site_index.size() < 2) {
    throw degenerate_probe_error("site probe needs at least 2 sites in the training split");
  }
  if (test.empty()) throw degenerate_probe_error("site probe needs a non-empty test split");
  std::size_t next = 0;
  for (auto& [site, idx] : site_index) idx = next++;
  const std::size_t n_sites = site_index.size();
  const std::size_t dim = train.front().vector.size();
  for (const auto* set : {&train, &test}) {
    for (const auto& p : *set) {
      if (p.vector.size() != dim) throw shape_error("probe vectors must share one dimension");
    }
  }

  Rng rng = Rng(seed).split(0x9b0be);
  FeatureMap map(kind, dim);
  if (kind == ProbeKind::rff) {
    Rng bw_rng = rng.split(0);
    Rng rff_rng = rng.split(1);
    map.fit_rff(cfg.rff_features, median_pairwise_distance(train, cfg.bandwidth_pairs, bw_rng),
                rff_rng);
  }

  const std::size_t n = train.size();
  const std::size_t f = map.out_dim();
  Matrix z(n, f);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = map(train[i].vector);
    std::copy(row.begin(), row.end(), z.row(i).begin());
  }
  std::vector<std::size_t> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = site_index.at(train[i].site);

  // One-vs-rest logistic regression, full-batch gradient descent.
  Matrix w(n_sites, f);
  std::vector<double> grad(f);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    for (std::size_t s = 0; s < n_sites; ++s) {
      std::fill(grad.begin(), grad.end(), 0.0);
      auto ws = w.row(s);
      for (std::size_t i = 0; i < n; ++i) {
        const double p = 1.0 / (1.0 + std::exp(-dot(ws, z.row(i))));
        const double r = p - (y[i] == s ? 1.0 : 0.0);
        auto zi = z.row(i);
        for (std::size_t k = 0; k < f; ++k) grad[k] += r * zi[k];
      }
      for (std::size_t k = 0; k < f; ++k) ws[k] -= cfg.learning_rate * grad[k] * inv_n;
    }
  }

  ProbeReport report;
  report.kind = kind;
  report.n_sites = n_sites;
  std::map<std::string, std::size_t> test_counts;
  std::size_t correct = 0;
  for (const auto& p : test) {
    ++test_counts[p.site];
    const auto zi = map(p.vector);
    std::size_t best = 0;
    double best_score = -INFINITY;
    for (std::size_t s = 0; s < n_sites; ++s) {
      const double score = dot(w.row(s), zi);
      if (score > best_score) {
        best_score = score;
        best = s;
      }
    }
    auto it = site_index.find(p.site);
    if (it != site_index.end() && it->second == best) ++correct;
  }
  std::size_t majority = 0;
  for (auto& [site, count] : test_counts) majority = std::max(majority, count);
  const double n_test = static_cast<double>(test.size());
  report.site_accuracy = static_cast<double>(correct) / n_test;
  report.chance_level = static_cast<double>(majority) / n_test;
  return report;
}

}  // namespace seqrank
