#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "seqrank/cohort.hpp"
#include "seqrank/errors.hpp"

using namespace seqrank;

namespace {

GenSpec small_spec() {
  GenSpec g;
  g.n_sites = 3;
  g.wsis_per_site = 4;
  g.patches_per_wsi = 3;
  g.dim = 8;
  g.seed = 17;
  return g;
}

}  // namespace

TEST_CASE("generate shape and determinism") {
  const GenSpec g = small_spec();
  const Cohort c = generate(g);
  CHECK(c.records.size() == 3 * 4 * 3);
  CHECK(c.sites == std::vector<std::string>{"H0", "H1", "H2"});
  CHECK_NOTHROW(c.validate());
  CHECK(generate(g) == c);

  std::set<std::string> wsis;
  for (const auto& r : c.records) wsis.insert(r.wsi_id);
  CHECK(wsis.size() == 12);

  // Classes balanced within every site.
  for (const auto& site : c.sites) {
    std::size_t counts[2] = {0, 0};
    for (const auto& r : c.records)
      if (r.site_id == site) ++counts[r.class_id];
    CHECK(counts[0] == counts[1]);
  }
}

TEST_CASE("generate places signals on disjoint canonical axes") {
  GenSpec g = small_spec();
  g.noise_sigma = 1e-9;
  g.view_jitter = 0.0;
  g.class_signal = 3.0;
  g.site_signal = 5.0;
  const Cohort c = generate(g);
  for (const auto& r : c.records) {
    const std::size_t site = static_cast<std::size_t>(r.site_id[1] - '0');
    for (std::size_t k = 0; k < g.dim; ++k) {
      double expected = 0.0;
      if (k == r.class_id) expected += 3.0;
      if (k == g.num_classes + site) expected += 5.0;
      CHECK(std::abs(r.views(0, k) - expected) < 1e-6);
    }
  }
}

TEST_CASE("zero view jitter gives identical views") {
  GenSpec g = small_spec();
  g.view_jitter = 0.0;
  for (const auto& r : generate(g).records)
    for (std::size_t v = 1; v < kViewsPerPatch; ++v)
      for (std::size_t k = 0; k < g.dim; ++k) CHECK(r.views(v, k) == r.views(0, k));
}

TEST_CASE("generate rejects dims too small for the signal axes") {
  GenSpec g = small_spec();
  g.dim = 4;
  CHECK_THROWS_AS(generate(g), dimension_error);
}

TEST_CASE("save/load round trip is exact") {
  const Cohort c = generate(small_spec());
  std::stringstream buf;
  write_cohort(c, buf);
  CHECK(read_cohort(buf) == c);

  std::stringstream again;
  write_cohort(c, again);
  std::stringstream first;
  write_cohort(c, first);
  CHECK(first.str() == again.str());
}

TEST_CASE("load errors") {
  const Cohort c = generate(small_spec());
  std::stringstream buf;
  write_cohort(c, buf);
  const std::string text = buf.str();

  SUBCASE("truncated line reports its number") {
    const std::string cut = text.substr(0, text.size() / 2);
    std::size_t lines = 0;
    for (char ch : cut) lines += ch == '\n';
    std::stringstream in(cut);
    try {
      read_cohort(in);
      FAIL("expected parse_error");
    } catch (const parse_error& e) {
      CHECK(e.line() == lines + 1);
    }
  }
  SUBCASE("24 views names the patch") {
    Cohort bad = c;
    Matrix v(24, bad.dim);
    bad.records[2].views = v;
    std::stringstream out;
    write_cohort(bad, out);
    try {
      read_cohort(out);
      FAIL("expected schema_error");
    } catch (const schema_error& e) {
      CHECK(std::string(e.what()).find(bad.records[2].patch_id) != std::string::npos);
    }
  }
  SUBCASE("missing header") {
    std::stringstream empty("");
    CHECK_THROWS_AS(read_cohort(empty), parse_error);
  }
  SUBCASE("wsi spanning two sites") {
    Cohort bad = c;
    bad.records[1].site_id = bad.records[0].site_id == "H0" ? "H1" : "H0";
    CHECK_THROWS_AS(bad.validate(), schema_error);
  }
}

TEST_CASE("split") {
  GenSpec g = small_spec();
  g.wsis_per_site = 8;
  const Cohort c = generate(g);

  SUBCASE("holdout site goes entirely to external") {
    const auto s = split(c, std::string("H1"), 0.25, 3);
    for (const auto& r : s.external.records) CHECK(r.site_id == "H1");
    std::size_t h1 = 0;
    for (const auto& r : c.records) h1 += r.site_id == "H1";
    CHECK(s.external.records.size() == h1);
    for (const auto& r : s.train.records) CHECK(r.site_id != "H1");
    for (const auto& r : s.test.records) CHECK(r.site_id != "H1");
  }
  SUBCASE("zero test fraction") {
    const auto s = split(c, std::nullopt, 0.0, 3);
    CHECK(s.test.records.empty());
    CHECK(s.external.records.empty());
    CHECK(s.train.records.size() == c.records.size());
  }
  SUBCASE("partition at WSI level, stratified") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto s = split(c, std::string("H0"), 0.5, seed);
      CHECK(s.train.records.size() + s.test.records.size() + s.external.records.size() ==
            c.records.size());
      std::set<std::string> tr, te, ex;
      for (const auto& r : s.train.records) tr.insert(r.wsi_id);
      for (const auto& r : s.test.records) te.insert(r.wsi_id);
      for (const auto& r : s.external.records) ex.insert(r.wsi_id);
      for (const auto& w : te) CHECK((!tr.count(w) && !ex.count(w)));
      for (const auto& w : tr) CHECK(!ex.count(w));
      // 4 WSIs per (site, class) stratum, half to test: 2 per stratum x 2 sites x 2 classes.
      CHECK(te.size() == 8);
    }
  }
  SUBCASE("unknown site") {
    CHECK_THROWS_AS(split(c, std::string("nowhere"), 0.2, 1), lookup_error);
  }
}

TEST_CASE("pool_singleton_sites") {
  Cohort c = generate(small_spec());
  // Shrink H2 to one WSI.
  std::vector<CohortRecord> kept;
  for (const auto& r : c.records)
    if (r.site_id != "H2" || r.wsi_id == "W8") kept.push_back(r);
  c.records = kept;
  const Cohort pooled = pool_singleton_sites(c, "pooled");
  CHECK(pooled.sites == std::vector<std::string>{"H0", "H1", "pooled"});
  for (const auto& r : pooled.records) CHECK(r.site_id != "H2");
  CHECK_NOTHROW(pooled.validate());
}
