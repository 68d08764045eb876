#include "seqrank/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "seqrank/errors.hpp"

namespace seqrank::pipeline {

namespace {

constexpr const char* kPooledSite = "pooled";

std::vector<std::string> present_sites(const Cohort& cohort) {
  std::vector<std::string> out;
  std::set<std::string> present;
  for (const auto& r : cohort.records) present.insert(r.site_id);
  for (const auto& s : cohort.sites) {
    if (present.count(s)) out.push_back(s);
  }
  return out;
}

EncoderSpec resolve_spec(EncoderSpec spec, const Cohort& cohort) {
  spec.input_dim = cohort.dim;
  return spec;
}

Json site_and_wsi_summary(const Cohort& cohort) {
  std::set<std::string> wsis;
  for (const auto& r : cohort.records) wsis.insert(r.wsi_id);
  Json j;
  j["sites"] = cohort.sites.size();
  j["wsis"] = wsis.size();
  j["patches"] = cohort.records.size();
  j["classes"] = cohort.num_classes;
  j["dim"] = cohort.dim;
  return j;
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%6.2f%%", 100.0 * v);
  return buf;
}

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

template <typename T>
T get_or(const Json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

}  // namespace

std::string to_string(SequesterMode m) {
  switch (m) {
    case SequesterMode::off: return "off";
    case SequesterMode::on: return "on";
    default: return "both";
  }
}

SequesterMode sequester_mode_from_string(const std::string& s) {
  if (s == "off") return SequesterMode::off;
  if (s == "on") return SequesterMode::on;
  if (s == "both") return SequesterMode::both;
  throw error("sequester mode must be on, off or both");
}

Json to_json(const GenSpec& g) {
  Json j;
  j["sites"] = g.n_sites;
  j["wsis_per_site"] = g.wsis_per_site;
  j["patches_per_wsi"] = g.patches_per_wsi;
  j["classes"] = g.num_classes;
  j["dim"] = g.dim;
  j["class_signal"] = g.class_signal;
  j["site_signal"] = g.site_signal;
  j["noise"] = g.noise_sigma;
  j["view_jitter"] = g.view_jitter;
  j["seed"] = g.seed;
  return j;
}

GenSpec gen_spec_from_json(const Json& j) {
  GenSpec g;
  g.n_sites = j.at("sites").get<std::size_t>();
  g.wsis_per_site = j.at("wsis_per_site").get<std::size_t>();
  g.patches_per_wsi = j.at("patches_per_wsi").get<std::size_t>();
  g.num_classes = j.at("classes").get<std::size_t>();
  g.dim = j.at("dim").get<std::size_t>();
  g.class_signal = j.at("class_signal").get<double>();
  g.site_signal = j.at("site_signal").get<double>();
  g.noise_sigma = j.at("noise").get<double>();
  g.view_jitter = j.at("view_jitter").get<double>();
  g.seed = j.at("seed").get<std::uint64_t>();
  return g;
}

Json to_json(const EncoderSpec& s) {
  Json j;
  j["input_dim"] = s.input_dim;
  j["hidden_dims"] = s.hidden_dims;
  j["embed_dim"] = s.embed_dim;
  return j;
}

EncoderSpec encoder_spec_from_json(const Json& j) {
  EncoderSpec s;
  s.input_dim = j.at("input_dim").get<std::size_t>();
  s.hidden_dims = j.at("hidden_dims").get<std::vector<std::size_t>>();
  s.embed_dim = j.at("embed_dim").get<std::size_t>();
  return s;
}

Json to_json(const TrainConfig& c) {
  Json j;
  j["learning_rate"] = c.sgd.learning_rate;
  j["epochs"] = c.sgd.epochs;
  j["batch_size"] = c.sgd.batch_size;
  j["sequester"] = c.sequester;
  j["seed"] = c.seed;
  j["min_sites_per_batch"] = c.min_sites_per_batch;
  return j;
}

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  c.sgd.learning_rate = j.at("learning_rate").get<double>();
  c.sgd.epochs = j.at("epochs").get<std::size_t>();
  c.sgd.batch_size = j.at("batch_size").get<std::size_t>();
  c.sequester = j.at("sequester").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.min_sites_per_batch = j.at("min_sites_per_batch").get<std::size_t>();
  return c;
}

std::size_t thread_budget() {
  const char* env = std::getenv("SEQRANK_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const unsigned long v = std::strtoul(env, &end, 10);
  if (end == env || v == 0) return 1;
  return static_cast<std::size_t>(v);
}

std::vector<Json> parallel_map(std::size_t n, std::size_t threads,
                               const std::function<Json(std::size_t)>& fn) {
  std::vector<Json> results(n);
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) results[i] = fn(i);
    return results;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> failures(n);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          results[i] = fn(i);
        } catch (...) {
          failures[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
  return results;
}

Json run_gen(const GenOptions& opts) {
  const Cohort cohort = generate(opts.spec);
  if (!opts.out.empty()) save_cohort(cohort, opts.out);
  Json config;
  config["command"] = "gen";
  config["spec"] = to_json(opts.spec);
  config["out"] = opts.out;
  Json report;
  report["config"] = config;
  report["summary"] = site_and_wsi_summary(cohort);
  return report;
}

Json run_train(const TrainOptions& opts) {
  const Cohort cohort = load_cohort(opts.cohort);
  const EncoderSpec spec = resolve_spec(opts.spec, cohort);
  const TrainLog log = train(cohort, spec, opts.train);
  if (!opts.out.empty()) save_params(log.params, opts.out);
  Json config;
  config["command"] = "train";
  config["cohort"] = opts.cohort;
  config["encoder"] = to_json(spec);
  config["train"] = to_json(opts.train);
  config["out"] = opts.out;
  Json report;
  report["config"] = config;
  report["epoch_losses"] = log.epoch_losses;
  return report;
}

Json run_eval(const EvalOptions& opts) {
  const Cohort cohort = load_cohort(opts.cohort);
  const EncoderParams params = load_params(opts.model);
  const EmbeddingIndex index(embed_wsis(cohort, params), opts.metric);
  const EvalReport eval = leave_one_out_eval(index, cohort.num_classes, opts.k, opts.sequester_queries);
  if (!opts.index_out.empty()) {
    std::ofstream out(opts.index_out, std::ios::binary);
    if (!out) throw io_error("cannot open " + opts.index_out + " for writing");
    write_index(index, out);
  }
  if (!opts.csv_out.empty()) {
    std::ofstream out(opts.csv_out, std::ios::binary);
    if (!out) throw io_error("cannot open " + opts.csv_out + " for writing");
    out << confusion_csv(eval.confusion);
  }
  Json config;
  config["command"] = "eval";
  config["cohort"] = opts.cohort;
  config["model"] = opts.model;
  config["k"] = opts.k;
  config["metric"] = to_string(opts.metric);
  config["sequester_queries"] = opts.sequester_queries;
  config["index_out"] = opts.index_out;
  config["csv_out"] = opts.csv_out;
  Json report;
  report["config"] = config;
  report["eval"] = to_json(eval);
  return report;
}

Json run_search(const SearchOptions& opts) {
  const Cohort cohort = load_cohort(opts.cohort);
  const EncoderParams params = load_params(opts.model);
  const EmbeddingIndex index(embed_wsis(cohort, params), opts.metric);
  const WsiEmbedding* query = index.find(opts.query);
  if (query == nullptr) throw lookup_error("unknown wsi_id " + opts.query);
  SearchFilter filter{query->wsi_id, std::nullopt};
  if (opts.exclude_site_of_query) filter.exclude_site = query->site_id;
  const auto neighbors = knn(index, *query, opts.k, filter);

  Json config;
  config["command"] = "search";
  config["cohort"] = opts.cohort;
  config["model"] = opts.model;
  config["query"] = opts.query;
  config["k"] = opts.k;
  config["metric"] = to_string(opts.metric);
  config["exclude_site_of_query"] = opts.exclude_site_of_query;
  Json report;
  report["config"] = config;
  report["query"] = {{"wsi_id", query->wsi_id}, {"site_id", query->site_id}, {"class_id", query->class_id}};
  Json list = Json::array();
  for (const auto& n : neighbors) {
    list.push_back({{"wsi_id", n.entry->wsi_id},
                    {"site_id", n.entry->site_id},
                    {"class_id", n.entry->class_id},
                    {"distance", n.distance}});
  }
  report["neighbors"] = list;
  report["predicted_class"] = predict_wsi_label(index, *query, opts.k, filter);
  return report;
}

Json run_probe(const ProbeOptions& opts) {
  const Cohort cohort = load_cohort(opts.cohort);
  const CohortSplit parts = split(cohort, std::nullopt, opts.test_fraction, opts.seed);
  std::vector<LabeledVector> train_set, test_set;
  if (opts.model.empty()) {
    train_set = raw_patch_features(parts.train);
    test_set = raw_patch_features(parts.test);
  } else {
    const EncoderParams params = load_params(opts.model);
    train_set = embed_patches(parts.train, params);
    test_set = embed_patches(parts.test, params);
  }
  const ProbeReport probe = site_probe(train_set, test_set, opts.kind, opts.seed);
  Json config;
  config["command"] = "probe";
  config["cohort"] = opts.cohort;
  config["model"] = opts.model;
  config["kind"] = to_string(opts.kind);
  config["seed"] = opts.seed;
  config["test_fraction"] = opts.test_fraction;
  Json report;
  report["config"] = config;
  report["probe"] = to_json(probe);
  return report;
}

Json run_loho(const LohoOptions& opts) {
  Cohort cohort = load_cohort(opts.cohort);
  if (opts.pool_singletons) cohort = pool_singleton_sites(cohort, kPooledSite);
  const std::vector<std::string> holdouts = opts.holdouts.empty() ? present_sites(cohort) : opts.holdouts;
  for (const auto& h : holdouts) {
    if (std::find(cohort.sites.begin(), cohort.sites.end(), h) == cohort.sites.end()) {
      throw lookup_error("unknown site " + h);
    }
  }

  std::vector<std::pair<std::string, bool>> variants;
  if (opts.mode != SequesterMode::on) variants.emplace_back("rlf", false);
  if (opts.mode != SequesterMode::off) variants.emplace_back("isl", true);

  const EncoderSpec spec = resolve_spec(opts.spec, cohort);
  const std::size_t jobs = holdouts.size() * variants.size();
  auto results = parallel_map(jobs, thread_budget(), [&](std::size_t job) {
    const auto& [name, sequester] = variants[job % variants.size()];
    LohoConfig cfg{spec, opts.train, opts.test_fraction, opts.k, Metric::euclidean};
    cfg.train.sequester = sequester;
    const LohoResult r = run_loho_experiment(cohort, cfg, holdouts[job / variants.size()]);
    Json j;
    j["holdout"] = r.holdout_site;
    j["class_counts"] = r.class_counts;
    j["eval"] = to_json(r.report);
    return j;
  });

  Json config;
  config["command"] = "loho";
  config["cohort"] = opts.cohort;
  config["holdouts"] = opts.holdouts;
  config["sequester"] = to_string(opts.mode);
  config["encoder"] = to_json(spec);
  config["train"] = to_json(opts.train);
  config["test_fraction"] = opts.test_fraction;
  config["k"] = opts.k;
  config["pool_singletons"] = opts.pool_singletons;

  Json report;
  report["config"] = config;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    Json per_site = Json::array();
    std::size_t correct = 0, scored = 0;
    for (std::size_t h = 0; h < holdouts.size(); ++h) {
      const Json& r = results[h * variants.size() + v];
      const auto& conf = r["eval"]["confusion"];
      for (std::size_t c = 0; c < conf.size(); ++c) correct += conf[c][c].get<std::size_t>();
      scored += r["eval"]["n_scored"].get<std::size_t>();
      per_site.push_back(r);
    }
    Json variant;
    variant["per_site"] = per_site;
    variant["overall_accuracy"] = scored == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(scored);
    variant["overall_correct"] = correct;
    variant["overall_scored"] = scored;
    report[variants[v].first] = variant;
  }
  return report;
}

Json run_bias(const BiasOptions& opts) {
  const Cohort cohort = generate(opts.gen);
  const EncoderSpec spec = resolve_spec(opts.spec, cohort);
  const CohortSplit probe_parts = split(cohort, std::nullopt, opts.probe_test_fraction, opts.train.seed);

  Json config;
  config["command"] = "bias";
  config["gen"] = to_json(opts.gen);
  config["encoder"] = to_json(spec);
  config["train"] = to_json(opts.train);
  config["probe_kind"] = to_string(opts.probe_kind);
  config["probe_test_fraction"] = opts.probe_test_fraction;
  config["k"] = opts.k;
  config["sequester_queries"] = opts.sequester_queries;

  Json report;
  report["config"] = config;
  const ProbeReport raw = site_probe(raw_patch_features(probe_parts.train),
                                     raw_patch_features(probe_parts.test), opts.probe_kind,
                                     opts.train.seed);
  report["raw_probe"] = to_json(raw);
  for (bool sequester : {false, true}) {
    TrainConfig cfg = opts.train;
    cfg.sequester = sequester;
    const TrainLog log = train(cohort, spec, cfg);
    const ProbeReport probe = site_probe(embed_patches(probe_parts.train, log.params),
                                         embed_patches(probe_parts.test, log.params),
                                         opts.probe_kind, opts.train.seed);
    const EmbeddingIndex index(embed_wsis(cohort, log.params));
    const EvalReport loo = leave_one_out_eval(index, cohort.num_classes, opts.k, opts.sequester_queries);
    Json variant;
    variant["epoch_losses"] = log.epoch_losses;
    variant["probe"] = to_json(probe);
    variant["loo"] = to_json(loo);
    report[sequester ? "isl" : "rlf"] = variant;
  }
  return report;
}

Json replay(const Json& report) {
  const Json& c = report.at("config");
  const std::string cmd = c.at("command").get<std::string>();
  if (cmd == "gen") {
    return run_gen({gen_spec_from_json(c.at("spec")), c.at("out").get<std::string>()});
  }
  if (cmd == "train") {
    return run_train({c.at("cohort").get<std::string>(), encoder_spec_from_json(c.at("encoder")),
                      train_config_from_json(c.at("train")), c.at("out").get<std::string>()});
  }
  if (cmd == "eval") {
    return run_eval({c.at("cohort").get<std::string>(), c.at("model").get<std::string>(),
                     c.at("k").get<std::size_t>(), metric_from_string(c.at("metric").get<std::string>()),
                     c.at("sequester_queries").get<bool>(), get_or<std::string>(c, "index_out", ""),
                     get_or<std::string>(c, "csv_out", "")});
  }
  if (cmd == "search") {
    return run_search({c.at("cohort").get<std::string>(), c.at("model").get<std::string>(),
                       c.at("query").get<std::string>(), c.at("k").get<std::size_t>(),
                       metric_from_string(c.at("metric").get<std::string>()),
                       c.at("exclude_site_of_query").get<bool>()});
  }
  if (cmd == "probe") {
    return run_probe({c.at("cohort").get<std::string>(), c.at("model").get<std::string>(),
                      probe_kind_from_string(c.at("kind").get<std::string>()),
                      c.at("seed").get<std::uint64_t>(), c.at("test_fraction").get<double>()});
  }
  if (cmd == "loho") {
    LohoOptions o;
    o.cohort = c.at("cohort").get<std::string>();
    o.holdouts = c.at("holdouts").get<std::vector<std::string>>();
    o.mode = sequester_mode_from_string(c.at("sequester").get<std::string>());
    o.spec = encoder_spec_from_json(c.at("encoder"));
    o.train = train_config_from_json(c.at("train"));
    o.test_fraction = c.at("test_fraction").get<double>();
    o.k = c.at("k").get<std::size_t>();
    o.pool_singletons = c.at("pool_singletons").get<bool>();
    return run_loho(o);
  }
  if (cmd == "bias") {
    BiasOptions o;
    o.gen = gen_spec_from_json(c.at("gen"));
    o.spec = encoder_spec_from_json(c.at("encoder"));
    o.train = train_config_from_json(c.at("train"));
    o.probe_kind = probe_kind_from_string(c.at("probe_kind").get<std::string>());
    o.probe_test_fraction = c.at("probe_test_fraction").get<double>();
    o.k = c.at("k").get<std::size_t>();
    o.sequester_queries = c.at("sequester_queries").get<bool>();
    return run_bias(o);
  }
  throw error("cannot replay unknown command '" + cmd + "'");
}

std::string format_eval_table(const Json& report) {
  const Json& e = report.at("eval");
  std::ostringstream out;
  out << "class  precision  recall     F1\n";
  const auto& f1 = e.at("f1");
  for (std::size_t c = 0; c < f1.size(); ++c) {
    out << "  " << c << "      " << fixed2(e["precision"][c].get<double>()) << "     "
        << fixed2(e["recall"][c].get<double>()) << "     " << fixed2(f1[c].get<double>()) << '\n';
  }
  out << "accuracy " << pct(e.at("accuracy").get<double>()) << "  scored "
      << e.at("n_scored").get<std::size_t>() << "  errors " << e.at("n_errors").get<std::size_t>()
      << '\n';
  return out.str();
}

std::string format_loho_table(const Json& report) {
  std::vector<std::string> variants;
  for (const char* v : {"rlf", "isl"}) {
    if (report.contains(v)) variants.emplace_back(v);
  }
  std::ostringstream out;
  out << "Hospital      (n per class)";
  for (const auto& v : variants) out << "   " << (v == "rlf" ? "RLF F1      " : "ISL F1      ");
  out << '\n';
  const std::size_t n_sites = report.at(variants.front()).at("per_site").size();
  for (std::size_t h = 0; h < n_sites; ++h) {
    const Json& first = report[variants.front()]["per_site"][h];
    std::string counts = "(";
    const auto& cc = first["class_counts"];
    for (std::size_t c = 0; c < cc.size(); ++c) {
      if (c) counts += ", ";
      counts += std::to_string(cc[c].get<std::size_t>());
    }
    counts += ")";
    char head[64];
    std::snprintf(head, sizeof head, "%-13s %-14s", first["holdout"].get<std::string>().c_str(),
                  counts.c_str());
    out << head;
    for (const auto& v : variants) {
      const auto& f1 = report[v]["per_site"][h]["eval"]["f1"];
      std::string cell = "(";
      for (std::size_t c = 0; c < f1.size(); ++c) {
        if (c) cell += ", ";
        cell += fixed2(f1[c].get<double>());
      }
      cell += ")";
      char buf[64];
      std::snprintf(buf, sizeof buf, "   %-12s", cell.c_str());
      out << buf;
    }
    out << '\n';
  }
  char head[64];
  std::snprintf(head, sizeof head, "%-13s %-14s", "Overall", "");
  out << head;
  for (const auto& v : variants) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "   %-12s", pct(report[v]["overall_accuracy"].get<double>()).c_str());
    out << buf;
  }
  out << '\n';
  return out.str();
}

std::string format_bias_table(const Json& report) {
  std::ostringstream out;
  out << "model   site-probe acc   chance   LOO accuracy   LOO macro-F1\n";
  const Json& raw = report.at("raw_probe");
  out << "raw     " << pct(raw["site_accuracy"].get<double>()) << "          "
      << pct(raw["chance_level"].get<double>()) << '\n';
  for (const char* v : {"rlf", "isl"}) {
    const Json& r = report.at(v);
    out << (std::string(v) == "rlf" ? "RLF     " : "ISL     ")
        << pct(r["probe"]["site_accuracy"].get<double>()) << "          "
        << pct(r["probe"]["chance_level"].get<double>()) << "   "
        << pct(r["loo"]["accuracy"].get<double>()) << "        "
        << pct(r["loo"]["macro_f1"].get<double>()) << '\n';
  }
  return out.str();
}

}  // namespace seqrank::pipeline
