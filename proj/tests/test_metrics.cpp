#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "seqrank/cohort.hpp"
#include "seqrank/errors.hpp"
#include "seqrank/metrics.hpp"
#include "seqrank/numerics.hpp"
#include "seqrank/retrieval.hpp"

using namespace seqrank;

TEST_CASE("f1_scores") {
  SUBCASE("diagonal confusion is perfect") {
    const auto s = f1_scores({{4, 0, 0}, {0, 2, 0}, {0, 0, 7}});
    for (double f : s.f1) CHECK(f == 1.0);
  }
  SUBCASE("empty class scores zero") {
    const auto s = f1_scores({{3, 0}, {0, 0}});
    CHECK(s.f1[1] == 0.0);
    CHECK(s.precision[1] == 0.0);
    CHECK(s.recall[1] == 0.0);
  }
  SUBCASE("worked two-class example") {
    const auto s = f1_scores({{3, 1}, {2, 4}});
    CHECK(std::abs(s.precision[0] - 3.0 / 5.0) <= 1e-15);
    CHECK(std::abs(s.recall[0] - 3.0 / 4.0) <= 1e-15);
    CHECK(std::abs(s.f1[0] - 2.0 / 3.0) <= 1e-12);
  }
  SUBCASE("non-square") {
    CHECK_THROWS_AS(f1_scores({{1, 2}, {3}}), shape_error);
  }
}

TEST_CASE("f1_scores agrees with a recount from raw pairs") {
  Rng rng(31);
  for (int t = 0; t < 100; ++t) {
    const std::size_t c = 2 + rng.uniform_index(3);
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    const std::size_t n = rng.uniform_index(40);
    for (std::size_t i = 0; i < n; ++i) pairs.emplace_back(rng.uniform_index(c), rng.uniform_index(c));
    const EvalReport r = make_report(confusion_from_pairs(pairs, c), 0);
    std::size_t correct = 0;
    for (auto [a, b] : pairs) correct += a == b;
    CHECK(r.n_scored == n);
    CHECK(r.accuracy == (n ? static_cast<double>(correct) / static_cast<double>(n) : 0.0));
    for (std::size_t k = 0; k < c; ++k) {
      double tp = 0, fp = 0, fn = 0;
      for (auto [truth, pred] : pairs) {
        if (pred == k && truth == k) ++tp;
        if (pred == k && truth != k) ++fp;
        if (pred != k && truth == k) ++fn;
      }
      const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
      const double rc = tp + fn > 0 ? tp / (tp + fn) : 0.0;
      const double f = p + rc > 0 ? 2 * p * rc / (p + rc) : 0.0;
      CHECK(r.scores.precision[k] == p);
      CHECK(r.scores.recall[k] == rc);
      CHECK(r.scores.f1[k] == f);
    }
  }
}

TEST_CASE("report serialization") {
  const EvalReport r = make_report({{3, 1}, {2, 4}}, 1);
  const auto j = to_json(r);
  CHECK(j["n_scored"] == 10);
  CHECK(j["n_errors"] == 1);
  CHECK(j["confusion"][1][0] == 2);
  CHECK(confusion_csv(r.confusion) == "truth\\pred,0,1\n0,3,1\n1,2,4\n");
}

namespace {

std::vector<LabeledVector> labeled(const Cohort& c) { return raw_patch_features(c); }

Cohort probe_cohort(double site_signal, std::uint64_t seed) {
  GenSpec g;
  g.n_sites = 4;
  g.wsis_per_site = 8;
  g.patches_per_wsi = 10;
  g.class_signal = 2.0;
  g.site_signal = site_signal;
  g.noise_sigma = 0.5;
  g.seed = seed;
  return generate(g);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

}  // namespace

TEST_CASE("site probe finds an explicit site axis") {
  for (auto kind : {ProbeKind::linear, ProbeKind::rff}) {
    std::vector<double> acc;
    for (std::uint64_t s = 0; s < 5; ++s) {
      const auto parts = split(probe_cohort(4.0, s), std::nullopt, 0.5, s);
      acc.push_back(site_probe(labeled(parts.train), labeled(parts.test), kind, s).site_accuracy);
    }
    CHECK(median(acc) > 0.9);
  }
}

TEST_CASE("site probe sits near chance without site signal or with shuffled labels") {
  std::vector<double> no_signal, shuffled;
  double chance = 0.0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto parts = split(probe_cohort(0.0, s), std::nullopt, 0.5, s);
    const auto r = site_probe(labeled(parts.train), labeled(parts.test), ProbeKind::rff, s);
    no_signal.push_back(r.site_accuracy);
    chance = r.chance_level;

    const auto sig = split(probe_cohort(4.0, s), std::nullopt, 0.5, s);
    auto train = labeled(sig.train);
    std::vector<std::string> sites;
    for (const auto& p : train) sites.push_back(p.site);
    Rng rng(s);
    rng.shuffle(sites);
    for (std::size_t i = 0; i < train.size(); ++i) train[i].site = sites[i];
    shuffled.push_back(site_probe(train, labeled(sig.test), ProbeKind::rff, s).site_accuracy);
  }
  CHECK(std::abs(median(no_signal) - chance) <= 0.10);
  CHECK(std::abs(median(shuffled) - chance) <= 0.10);
}

TEST_CASE("site probe on constant embeddings predicts the majority site") {
  std::vector<LabeledVector> train, test;
  for (int i = 0; i < 12; ++i) train.push_back({{1.0, 2.0}, i < 8 ? "A" : "B"});
  for (int i = 0; i < 10; ++i) test.push_back({{1.0, 2.0}, i < 7 ? "A" : "B"});
  for (auto kind : {ProbeKind::linear, ProbeKind::rff}) {
    const auto r = site_probe(train, test, kind, 1);
    CHECK(r.chance_level == 0.7);
    CHECK(r.site_accuracy == r.chance_level);
  }
}

TEST_CASE("site probe determinism and errors") {
  const auto parts = split(probe_cohort(2.0, 1), std::nullopt, 0.5, 1);
  const auto a = site_probe(labeled(parts.train), labeled(parts.test), ProbeKind::rff, 9);
  const auto b = site_probe(labeled(parts.train), labeled(parts.test), ProbeKind::rff, 9);
  CHECK(a.site_accuracy == b.site_accuracy);

  std::vector<LabeledVector> one_site{{{1.0}, "A"}, {{2.0}, "A"}};
  CHECK_THROWS_AS(site_probe(one_site, one_site, ProbeKind::linear, 1), degenerate_probe_error);
}
