// seqrank: generate cohorts, train sequestered ranking-loss encoders, and run
// retrieval / site-leakage evaluations.
//
// Exit codes: 0 success, 2 usage, 3 training/composition, 4 data lookup, 5 I/O.

#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "seqrank/errors.hpp"
#include "seqrank/pipeline.hpp"

namespace sp = seqrank::pipeline;

namespace {

enum ExitCode { kOk = 0, kUsage = 2, kTraining = 3, kLookup = 4, kIo = 5 };

void emit(const sp::Json& report, const std::string& path) {
  const std::string text = report.dump(2) + "\n";
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw seqrank::io_error("cannot open " + path + " for writing");
  out << text;
  if (!out) throw seqrank::io_error("write failed for " + path);
}

bool parse_on_off(const std::string& s) {
  if (s == "on") return true;
  if (s == "off") return false;
  throw seqrank::error("expected on or off, got '" + s + "'");
}

void add_train_flags(CLI::App* cmd, seqrank::EncoderSpec& spec, seqrank::TrainConfig& cfg) {
  cmd->add_option("--epochs", cfg.sgd.epochs, "Training epochs")->capture_default_str();
  cmd->add_option("--batch", cfg.sgd.batch_size, "Batch size")->capture_default_str();
  cmd->add_option("--lr", cfg.sgd.learning_rate, "SGD learning rate")->capture_default_str();
  cmd->add_option("--seed", cfg.seed, "Seed for every random stream")->capture_default_str();
  cmd->add_option("--min-sites", cfg.min_sites_per_batch, "Distinct sites per sequestered batch")
      ->capture_default_str();
  cmd->add_option("--hidden", spec.hidden_dims, "Hidden layer widths")->capture_default_str();
  cmd->add_option("--embed", spec.embed_dim, "Embedding width")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequestered ranking-loss embedding training and retrieval"};
  app.require_subcommand(1);

  // gen
  sp::GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic multi-site cohort");
  gen_cmd->add_option("--sites", gen.spec.n_sites)->capture_default_str();
  gen_cmd->add_option("--wsis-per-site", gen.spec.wsis_per_site)->capture_default_str();
  gen_cmd->add_option("--patches-per-wsi", gen.spec.patches_per_wsi)->capture_default_str();
  gen_cmd->add_option("--classes", gen.spec.num_classes)->capture_default_str();
  gen_cmd->add_option("--dim", gen.spec.dim)->capture_default_str();
  gen_cmd->add_option("--class-signal", gen.spec.class_signal)->capture_default_str();
  gen_cmd->add_option("--site-signal", gen.spec.site_signal)->capture_default_str();
  gen_cmd->add_option("--noise", gen.spec.noise_sigma)->capture_default_str();
  gen_cmd->add_option("--jitter", gen.spec.view_jitter)->capture_default_str();
  gen_cmd->add_option("--seed", gen.spec.seed)->capture_default_str();
  gen_cmd->add_option("-o,--out", gen.out, "Cohort file")->required();
  std::string gen_report;
  gen_cmd->add_option("--report", gen_report, "Write the JSON summary here");

  // train
  sp::TrainOptions tr;
  std::string tr_sequester = "off", tr_log;
  auto* train_cmd = app.add_subcommand("train", "Train an encoder with the ranking loss");
  train_cmd->add_option("cohort", tr.cohort)->required();
  train_cmd->add_option("--sequester", tr_sequester, "on: same-site pairs may not vote")
      ->check(CLI::IsMember({"on", "off"}))
      ->capture_default_str();
  add_train_flags(train_cmd, tr.spec, tr.train);
  train_cmd->add_option("-o,--out", tr.out, "Encoder parameter file")->required();
  train_cmd->add_option("--log", tr_log, "Loss-curve JSON (default <out>.json)");

  // eval
  sp::EvalOptions ev;
  std::string ev_metric = "euclidean", ev_report;
  auto* eval_cmd = app.add_subcommand("eval", "Leave-one-out k-NN evaluation over WSIs");
  eval_cmd->add_option("cohort", ev.cohort)->required();
  eval_cmd->add_option("-m,--model", ev.model)->required();
  eval_cmd->add_option("-k", ev.k)->capture_default_str();
  eval_cmd->add_option("--metric", ev_metric)->check(CLI::IsMember({"euclidean", "cosine"}));
  eval_cmd->add_flag("--sequester-queries", ev.sequester_queries,
                     "Exclude the query's own site from its candidates");
  eval_cmd->add_option("--index-out", ev.index_out, "Write the WSI index as JSON lines");
  eval_cmd->add_option("--csv", ev.csv_out, "Write the confusion matrix as CSV");
  eval_cmd->add_option("-r,--report", ev_report, "Report path (default stdout)");

  // search
  sp::SearchOptions se;
  std::string se_metric = "euclidean", se_report;
  auto* search_cmd = app.add_subcommand("search", "Top-k neighbours of one WSI");
  search_cmd->add_option("cohort", se.cohort)->required();
  search_cmd->add_option("-m,--model", se.model)->required();
  search_cmd->add_option("--query", se.query)->required();
  search_cmd->add_option("-k", se.k)->capture_default_str();
  search_cmd->add_option("--metric", se_metric)->check(CLI::IsMember({"euclidean", "cosine"}));
  search_cmd->add_flag("--exclude-site-of-query", se.exclude_site_of_query);
  search_cmd->add_option("-r,--report", se_report);

  // probe
  sp::ProbeOptions pr;
  std::string pr_kind = "rff", pr_report;
  auto* probe_cmd = app.add_subcommand("probe", "Measure how well site identity is recoverable");
  probe_cmd->add_option("cohort", pr.cohort)->required();
  probe_cmd->add_option("-m,--model", pr.model, "Encoder (omit to probe raw features)");
  probe_cmd->add_option("--kind", pr_kind)->check(CLI::IsMember({"linear", "rff"}))->capture_default_str();
  probe_cmd->add_option("--seed", pr.seed)->capture_default_str();
  probe_cmd->add_option("--test-fraction", pr.test_fraction)->capture_default_str();
  probe_cmd->add_option("-r,--report", pr_report);

  // loho
  sp::LohoOptions lo;
  std::string lo_mode = "both", lo_report;
  bool lo_all = false;
  auto* loho_cmd = app.add_subcommand("loho", "Leave-one-hospital-out external validation");
  loho_cmd->add_option("cohort", lo.cohort)->required();
  auto* all_flag = loho_cmd->add_flag("--all-sites", lo_all, "Hold out every site in turn");
  loho_cmd->add_option("--holdout", lo.holdouts, "Site(s) to hold out")->excludes(all_flag);
  loho_cmd->add_option("--sequester", lo_mode)->check(CLI::IsMember({"on", "off", "both"}))
      ->capture_default_str();
  add_train_flags(loho_cmd, lo.spec, lo.train);
  loho_cmd->add_option("--test-fraction", lo.test_fraction)->capture_default_str();
  loho_cmd->add_option("-k", lo.k)->capture_default_str();
  loho_cmd->add_flag("--pool-singletons", lo.pool_singletons,
                     "Merge sites owning a single WSI into one 'pooled' holdout");
  loho_cmd->add_option("-r,--report", lo_report);

  // bias
  sp::BiasOptions bi;
  std::string bi_kind = "rff", bi_report;
  auto* bias_cmd = app.add_subcommand("bias", "Generate, train RLF and ISL, probe both");
  bias_cmd->add_option("--sites", bi.gen.n_sites)->capture_default_str();
  bias_cmd->add_option("--wsis-per-site", bi.gen.wsis_per_site)->capture_default_str();
  bias_cmd->add_option("--patches-per-wsi", bi.gen.patches_per_wsi)->capture_default_str();
  bias_cmd->add_option("--classes", bi.gen.num_classes)->capture_default_str();
  bias_cmd->add_option("--dim", bi.gen.dim)->capture_default_str();
  bias_cmd->add_option("--class-signal", bi.gen.class_signal)->capture_default_str();
  bias_cmd->add_option("--site-signal", bi.gen.site_signal)->capture_default_str();
  bias_cmd->add_option("--noise", bi.gen.noise_sigma)->capture_default_str();
  bias_cmd->add_option("--jitter", bi.gen.view_jitter)->capture_default_str();
  add_train_flags(bias_cmd, bi.spec, bi.train);
  bias_cmd->add_option("--kind", bi_kind)->check(CLI::IsMember({"linear", "rff"}))->capture_default_str();
  bias_cmd->add_flag("--sequester-queries", bi.sequester_queries);
  bias_cmd->add_option("-r,--report", bi_report);

  // replay
  std::string rp_in, rp_report;
  auto* replay_cmd = app.add_subcommand("replay", "Re-run the command recorded in a report");
  replay_cmd->add_option("input", rp_in, "Report to replay")->required()->check(CLI::ExistingFile);
  replay_cmd->add_option("-r,--report", rp_report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*gen_cmd) {
      const auto report = sp::run_gen(gen);
      const auto& s = report["summary"];
      std::cout << "wrote " << gen.out << ": " << s["sites"] << " sites, " << s["wsis"] << " WSIs, "
                << s["patches"] << " patches\n";
      if (!gen_report.empty()) emit(report, gen_report);
    } else if (*train_cmd) {
      tr.train.sequester = parse_on_off(tr_sequester);
      const auto report = sp::run_train(tr);
      emit(report, tr_log.empty() ? tr.out + ".json" : tr_log);
      const auto& losses = report["epoch_losses"];
      std::cout << "trained " << losses.size() << " epochs, loss " << losses.front() << " -> "
                << losses.back() << "\n";
    } else if (*eval_cmd) {
      ev.metric = seqrank::metric_from_string(ev_metric);
      const auto report = sp::run_eval(ev);
      if (!ev_report.empty()) std::cout << sp::format_eval_table(report);
      emit(report, ev_report);
    } else if (*search_cmd) {
      se.metric = seqrank::metric_from_string(se_metric);
      const auto report = sp::run_search(se);
      if (!se_report.empty()) {
        for (const auto& n : report["neighbors"]) {
          std::cout << n["wsi_id"].get<std::string>() << "  site " << n["site_id"].get<std::string>()
                    << "  class " << n["class_id"] << "  distance " << n["distance"] << "\n";
        }
      }
      emit(report, se_report);
    } else if (*probe_cmd) {
      pr.kind = seqrank::probe_kind_from_string(pr_kind);
      const auto report = sp::run_probe(pr);
      if (!pr_report.empty()) {
        std::cout << "site accuracy " << report["probe"]["site_accuracy"] << " (chance "
                  << report["probe"]["chance_level"] << ")\n";
      }
      emit(report, pr_report);
    } else if (*loho_cmd) {
      if (!lo_all && lo.holdouts.empty()) {
        std::cerr << "loho: pass --all-sites or --holdout SITE\n";
        return kUsage;
      }
      lo.mode = sp::sequester_mode_from_string(lo_mode);
      const auto report = sp::run_loho(lo);
      if (!lo_report.empty()) std::cout << sp::format_loho_table(report);
      emit(report, lo_report);
    } else if (*bias_cmd) {
      bi.probe_kind = seqrank::probe_kind_from_string(bi_kind);
      bi.gen.seed = bi.train.seed;
      const auto report = sp::run_bias(bi);
      if (!bi_report.empty()) std::cout << sp::format_bias_table(report);
      emit(report, bi_report);
    } else if (*replay_cmd) {
      std::ifstream in(rp_in, std::ios::binary);
      if (!in) throw seqrank::io_error("cannot open " + rp_in);
      sp::Json original;
      try {
        original = sp::Json::parse(in);
      } catch (const nlohmann::json::exception& e) {
        throw seqrank::parse_error(e.what(), 1);
      }
      emit(sp::replay(original), rp_report);
    }
  } catch (const seqrank::dimension_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const seqrank::lookup_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kLookup;
  } catch (const seqrank::composition_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kTraining;
  } catch (const seqrank::batch_too_small_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kTraining;
  } catch (const seqrank::shape_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kTraining;
  } catch (const seqrank::degenerate_probe_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kTraining;
  } catch (const seqrank::io_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const seqrank::parse_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const seqrank::schema_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed report: " << e.what() << "\n";
    return kIo;
  } catch (const seqrank::error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kOk;
}
