#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "seqrank/errors.hpp"
#include "seqrank/pipeline.hpp"

using namespace seqrank;
namespace sp = seqrank::pipeline;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("seqrank_pipeline_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

sp::GenOptions small_gen(const TempDir& dir) {
  sp::GenOptions g;
  g.spec.n_sites = 3;
  g.spec.wsis_per_site = 4;
  g.spec.patches_per_wsi = 4;
  g.spec.dim = 10;
  g.spec.seed = 4;
  g.out = dir / "c.jsonl";
  return g;
}

sp::TrainOptions small_train(const TempDir& dir) {
  sp::TrainOptions t;
  t.cohort = dir / "c.jsonl";
  t.spec.hidden_dims = {6};
  t.spec.embed_dim = 4;
  t.train.sgd.epochs = 3;
  t.train.sgd.batch_size = 8;
  t.train.sequester = true;
  t.train.seed = 4;
  t.out = dir / "m.bin";
  return t;
}

}  // namespace

TEST_CASE("gen -> train -> eval -> probe, replayed from embedded configs") {
  TempDir dir;
  const auto gen = sp::run_gen(small_gen(dir));
  CHECK(gen["summary"]["patches"] == 48);
  const std::string cohort_bytes = slurp(dir / "c.jsonl");

  const auto trained = sp::run_train(small_train(dir));
  CHECK(trained["epoch_losses"].size() == 3);
  CHECK(trained["config"]["encoder"]["input_dim"] == 10);
  const std::string model_bytes = slurp(dir / "m.bin");

  sp::EvalOptions ev{dir / "c.jsonl", dir / "m.bin"};
  ev.csv_out = dir / "conf.csv";
  ev.index_out = dir / "index.jsonl";
  const auto eval = sp::run_eval(ev);
  CHECK(eval["eval"]["n_scored"] == 12);
  CHECK(fs::exists(dir / "conf.csv"));
  std::ifstream idx_in(dir / "index.jsonl");
  CHECK(read_index(idx_in).size() == 12);

  sp::ProbeOptions pr{dir / "c.jsonl", dir / "m.bin", ProbeKind::rff, 9, 0.5};
  const auto probe = sp::run_probe(pr);

  for (const auto* report : {&gen, &trained, &eval, &probe}) {
    CHECK(sp::replay(*report).dump() == report->dump());
  }
  CHECK(slurp(dir / "c.jsonl") == cohort_bytes);
  CHECK(slurp(dir / "m.bin") == model_bytes);
}

TEST_CASE("search excludes the query's site on request") {
  TempDir dir;
  sp::run_gen(small_gen(dir));
  sp::run_train(small_train(dir));
  sp::SearchOptions se{dir / "c.jsonl", dir / "m.bin", "W5", 3};
  se.exclude_site_of_query = true;
  const auto r = sp::run_search(se);
  CHECK(r["neighbors"].size() == 3);
  for (const auto& n : r["neighbors"]) CHECK(n["site_id"] != r["query"]["site_id"]);
  CHECK(sp::replay(r).dump() == r.dump());

  se.query = "missing";
  CHECK_THROWS_AS(sp::run_search(se), lookup_error);
}

TEST_CASE("loho report is independent of the thread count") {
  TempDir dir;
  sp::run_gen(small_gen(dir));
  sp::LohoOptions lo;
  lo.cohort = dir / "c.jsonl";
  lo.spec.hidden_dims = {6};
  lo.spec.embed_dim = 4;
  lo.train.sgd.epochs = 2;
  lo.train.sgd.batch_size = 4;
  lo.train.seed = 2;

  const auto serial = sp::run_loho(lo);
  ::setenv("SEQRANK_THREADS", "4", 1);
  CHECK(sp::thread_budget() == 4);
  const auto parallel = sp::run_loho(lo);
  ::unsetenv("SEQRANK_THREADS");
  CHECK(serial.dump() == parallel.dump());

  REQUIRE(serial.contains("rlf"));
  REQUIRE(serial.contains("isl"));
  CHECK(serial["rlf"]["per_site"].size() == 3);
  CHECK(serial["isl"]["overall_scored"] == 12);
  const std::string table = sp::format_loho_table(serial);
  CHECK(table.find("Overall") != std::string::npos);
  CHECK(table.find("H2") != std::string::npos);

  lo.holdouts = {"nowhere"};
  CHECK_THROWS_AS(sp::run_loho(lo), lookup_error);
}

TEST_CASE("training on a single-site cohort with sequestering is a composition error") {
  TempDir dir;
  auto g = small_gen(dir);
  g.spec.n_sites = 1;
  sp::run_gen(g);
  CHECK_THROWS_AS(sp::run_train(small_train(dir)), composition_error);
}

TEST_CASE("parallel_map keeps order and propagates failures") {
  const auto out = sp::parallel_map(10, 3, [](std::size_t i) { return sp::Json(i * i); });
  for (std::size_t i = 0; i < 10; ++i) CHECK(out[i] == i * i);
  CHECK_THROWS_AS(sp::parallel_map(4, 2,
                                   [](std::size_t i) -> sp::Json {
                                     if (i == 2) throw lookup_error("boom");
                                     return sp::Json(i);
                                   }),
                  lookup_error);
}

TEST_CASE("replay rejects unknown commands") {
  sp::Json bogus;
  bogus["config"]["command"] = "dance";
  CHECK_THROWS_AS(sp::replay(bogus), error);
}
