// dmm: command-line front end.
//
//   dmm gen-data        --out DIR [--seed N ...]
//   dmm train           --data DIR --out DIR [--config FILE ...]
//   dmm eval            --checkpoint FILE --data SPLIT_DIR --out DIR
//   dmm ablate          --data DIR --out DIR
//   dmm compare-schemes --data DIR --out DIR [--compare weights|thresholds] [--seeds 1,2,3]
//   dmm plot-curves     --trace FILE --out DIR
//
// Every command writes manifest.txt into --out; `dmm <command> --config
// <manifest> --out <dir>` repeats the run. Values from --config override
// flags. --out defaults to $DMM_OUT.
//
// Exit status: 0 success, 2 usage error (bad flag, bad config, missing
// input), 1 runtime failure. Errors are one line on stderr:
//   dmm: error: <kind>: <message>

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "dmm/config.hpp"
#include "dmm/curves.hpp"
#include "dmm/data.hpp"
#include "dmm/eval.hpp"
#include "dmm/trainer.hpp"

namespace fs = std::filesystem;
using namespace dmm;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

int report(const char* kind, const std::string& what, int code) {
  std::cerr << "dmm: error: " << kind << ": " << one_line(what) << "\n";
  return code;
}

void require_exists(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw UsageError(std::string(what) + " not found: " + p.string());
}

struct Common {
  std::string out;
  std::string config;
};

struct Paths {
  std::string data;
  std::string checkpoint;
  std::string trace;
  std::string compare = "weights";
  std::vector<std::uint64_t> seeds{1, 2, 3};
  bool fixed_threshold = false;
};

// Loads --config, checks its keys and command, returns the pairs to apply.
KeyValues load_config(const Common& c, const std::string& command, const std::vector<std::string>& allowed) {
  if (c.config.empty()) return {};
  require_exists(c.config, "config file");
  KeyValues kv = read_key_values(c.config);
  std::set<std::string> ok(allowed.begin(), allowed.end());
  ok.insert("command");
  for (const auto& [k, v] : kv) {
    if (k.rfind("artifact.", 0) == 0) continue;
    if (!ok.count(k)) throw ConfigError(c.config + ": unknown key '" + k + "' for " + command);
  }
  if (auto it = kv.find("command"); it != kv.end() && it->second != command) {
    throw ConfigError(c.config + ": written for '" + it->second + "', not '" + command + "'");
  }
  return kv;
}

fs::path resolve_out(const Common& c) {
  std::string out = c.out;
  if (out.empty()) {
    if (const char* env = std::getenv("DMM_OUT"); env && *env) out = env;
  }
  if (out.empty()) throw UsageError("no output directory (pass --out or set DMM_OUT)");
  fs::create_directories(out);
  return out;
}

void apply_paths(Paths& p, const KeyValues& kv) {
  if (auto it = kv.find("data"); it != kv.end()) p.data = it->second;
  if (auto it = kv.find("checkpoint"); it != kv.end()) p.checkpoint = it->second;
  if (auto it = kv.find("trace"); it != kv.end()) p.trace = it->second;
  if (auto it = kv.find("compare"); it != kv.end()) p.compare = it->second;
  if (auto it = kv.find("fixed_threshold"); it != kv.end()) p.fixed_threshold = it->second == "true";
  if (auto it = kv.find("seeds"); it != kv.end()) {
    p.seeds.clear();
    std::stringstream in(it->second);
    for (std::string s; std::getline(in, s, ',');) {
      try {
        p.seeds.push_back(std::stoull(s));
      } catch (const std::exception&) {
        throw ConfigError("config: seeds = '" + it->second + "' is not a list of integers");
      }
    }
  }
}

std::string join_seeds(const std::vector<std::uint64_t>& seeds) {
  std::string s;
  for (std::size_t i = 0; i < seeds.size(); ++i) s += (i ? "," : "") + std::to_string(seeds[i]);
  return s;
}

void add_train_flags(CLI::App* app, TrainConfig& t) {
  app->add_option("--iterations", t.max_iterations, "Maximum iterations M")->capture_default_str();
  app->add_option("--interval", t.update_interval, "Scheduler update interval P")->capture_default_str();
  app->add_option("--batch-size", t.batch_size, "Minibatch size")->capture_default_str();
  app->add_option("--lr", t.base_lr, "Base learning rate")->capture_default_str();
  app->add_option("--momentum", t.momentum, "SGD momentum")->capture_default_str();
  app->add_option("--lr-decay", t.lr_decay_factor, "Learning-rate decay factor on plateau")->capture_default_str();
  app->add_option("--patience", t.plateau_patience, "Scheduler updates without improvement before decay")
      ->capture_default_str();
  app->add_option("--beta", t.beta, "Landmark loss weight")->capture_default_str();
  app->add_option("--gamma", t.gamma, "Threshold step constant")->capture_default_str();
  app->add_option("--seed", t.seed, "Training seed")->capture_default_str();
  app->add_option("--lambda-cap", t.lambda_cap, "Upper bound on dynamic weights");
  app->add_option("--channels", t.backbone.channels, "Backbone channels per block")->delimiter(',')->capture_default_str();
  app->add_option_function<std::string>(
         "--lr-monitor",
         [&t](const std::string& v) { t.lr_monitor = v == "mean_fac" ? LrMonitor::mean_fac : LrMonitor::joint; },
         "Validation loss watched by the LR policy")
      ->check(CLI::IsMember({"joint", "mean_fac"}));
  app->add_option_function<std::string>(
         "--validation-source",
         [&t](const std::string& v) {
           t.validation_source = v == "train_split" ? ValidationSource::train_split : ValidationSource::val_split;
         },
         "Split feeding the scheduler statistics")
      ->check(CLI::IsMember({"val_split", "train_split"}));
  app->add_flag_callback("--no-fld", [&t] { t.flags.use_fld = false; }, "Disable the landmark branch");
  app->add_flag_callback("--no-dynamic-weights", [&t] { t.flags.use_dynamic_weights = false; }, "Keep all weights at 1");
  app->add_flag_callback("--no-adaptive-threshold", [&t] { t.flags.use_adaptive_threshold = false; },
                         "Keep all thresholds at 0");
  app->add_flag_callback("--no-grouping", [&t] { t.flags.use_grouping = false; }, "Single attribute branch");
  app->add_flag("--freeze-backbone", t.freeze_backbone, "Train only the heads");
}

std::vector<std::string> with_keys(std::vector<std::string> keys, std::initializer_list<const char*> extra) {
  for (const char* k : extra) keys.emplace_back(k);
  return keys;
}

DatasetSplit load_data_root(const std::string& root) {
  if (root.empty()) throw UsageError("--data is required");
  require_exists(fs::path(root) / "attribute_groups.txt", "dataset");
  return load_dataset(root, infer_landmark_count(fs::path(root) / "train" / "landmarks.txt"));
}

void write_manifest(const fs::path& out, const std::string& command, KeyValues kv, const KeyValues& artifacts) {
  kv["command"] = command;
  for (const auto& [k, v] : artifacts) kv["artifact." + k] = v;
  write_key_values(out / "manifest.txt", kv);
}

// ---- commands ----

void run_gen_data(const Common& c, SynthConfig synth) {
  apply_synth_config(synth, load_config(c, "gen-data", synth_config_keys()));
  const fs::path out = resolve_out(c);
  const DatasetSplit data = generate_synthetic(synth);
  save_dataset(out, data);
  write_manifest(out, "gen-data", to_key_values(synth),
                 {{"attribute_groups", "attribute_groups.txt"}, {"train", "train"}, {"val", "val"}, {"test", "test"}});
  std::cout << "wrote " << data.train.size() << "/" << data.val.size() << "/" << data.test.size()
            << " samples to " << out.string() << "\n";
}

void run_train(const Common& c, TrainConfig t, Paths p) {
  const KeyValues kv = load_config(c, "train", with_keys(train_config_keys(), {"data"}));
  apply_train_config(t, kv);
  apply_paths(p, kv);
  t.validate();
  const DatasetSplit data = load_data_root(p.data);
  const fs::path out = resolve_out(c);

  DmmNetwork net = make_network(data, t);
  TrainLog log = train(net, data, t);
  save_checkpoint(net, out / "ckpt.bin");
  write_thresholds(out / "ckpt.bin.tau", data.spec, log.scheduler.tau);
  write_trace_csv(out / "trace.csv", log, data.spec);
  write_loss_csv(out / "loss.csv", log);
  write_lr_csv(out / "lr.csv", log);
  KeyValues artifacts{{"checkpoint", "ckpt.bin"}, {"thresholds", "ckpt.bin.tau"}, {"trace", "trace.csv"},
                      {"loss", "loss.csv"},       {"lr", "lr.csv"}};
  const std::vector<Sample>& held_out = data.test.empty() ? data.val : data.test;
  if (!held_out.empty()) {
    const EvalReport r = evaluate(net, held_out, log.scheduler.tau);
    write_report_csv(out / "report.csv", r);
    artifacts["report"] = "report.csv";
    std::cout << "mean accuracy " << r.mean_accuracy << "\n";
  }
  KeyValues manifest = to_key_values(t);
  manifest["data"] = p.data;
  write_manifest(out, "train", manifest, artifacts);
  std::cout << "trained " << t.max_iterations << " iterations, " << log.updates << " scheduler updates\n";
}

void run_eval(const Common& c, Paths p) {
  const KeyValues kv = load_config(c, "eval", {"data", "checkpoint", "fixed_threshold"});
  apply_paths(p, kv);
  if (p.checkpoint.empty()) throw UsageError("--checkpoint is required");
  if (p.data.empty()) throw UsageError("--data is required");
  require_exists(p.checkpoint, "checkpoint");
  require_exists(p.data, "data split");
  const DmmNetwork net = load_checkpoint(p.checkpoint);
  const AttributeSpec& spec = net.config().attributes;

  fs::path split = p.data;
  if (fs::exists(split / "attribute_groups.txt")) split /= "test";
  const std::vector<Sample> samples = load_split_dir(split, spec, net.config().landmarks);

  std::vector<double> tau(spec.size(), 0.0);
  const fs::path tau_file = p.checkpoint + ".tau";
  if (!p.fixed_threshold && fs::exists(tau_file)) tau = read_thresholds(tau_file, spec);

  const fs::path out = resolve_out(c);
  const EvalReport r = evaluate(net, samples, tau);
  write_report_csv(out / "report.csv", r);
  write_manifest(out, "eval",
                 {{"data", p.data}, {"checkpoint", p.checkpoint}, {"fixed_threshold", p.fixed_threshold ? "true" : "false"}},
                 {{"report", "report.csv"}});
  std::cout << "mean accuracy " << r.mean_accuracy << " over " << r.samples << " samples\n";
}

void run_ablate(const Common& c, TrainConfig t, Paths p) {
  const KeyValues kv = load_config(c, "ablate", with_keys(train_config_keys(), {"data"}));
  apply_train_config(t, kv);
  apply_paths(p, kv);
  t.validate();
  const DatasetSplit data = load_data_root(p.data);
  const fs::path out = resolve_out(c);
  const auto runs = run_ablation_suite(data, t);
  write_ablation_csv(out / "ablation.csv", runs);
  KeyValues artifacts{{"table", "ablation.csv"}};
  for (const auto& r : runs) {
    write_report_csv(out / (r.name + "_report.csv"), r.test);
    artifacts["report." + r.name] = r.name + "_report.csv";
  }
  KeyValues manifest = to_key_values(t);
  manifest["data"] = p.data;
  write_manifest(out, "ablate", manifest, artifacts);
  for (const auto& r : runs) std::cout << r.name << " " << r.test.mean_accuracy << "\n";
}

void run_compare(const Common& c, TrainConfig t, Paths p) {
  const KeyValues kv = load_config(c, "compare-schemes", with_keys(train_config_keys(), {"data", "compare", "seeds"}));
  apply_train_config(t, kv);
  apply_paths(p, kv);
  t.validate();
  if (p.compare != "weights" && p.compare != "thresholds") {
    throw UsageError("--compare must be weights or thresholds, got '" + p.compare + "'");
  }
  const DatasetSplit data = load_data_root(p.data);
  const fs::path out = resolve_out(c);

  std::vector<Scheme> schemes;
  TrainConfig a = t, b = t;
  if (p.compare == "weights") {
    a.flags.use_dynamic_weights = false;
    b.flags.use_dynamic_weights = true;
    schemes = {{"uniform", a}, {"dynamic", b}};
  } else {
    a.flags.use_adaptive_threshold = false;
    b.flags.use_adaptive_threshold = true;
    schemes = {{"fixed-tau", a}, {"adaptive-tau", b}};
  }
  std::vector<RunResult> runs;
  const auto rows = compare_schemes(data, schemes, p.seeds, &runs);
  write_comparison_csv(out / "comparison.csv", rows);

  {
    std::ofstream f(out / "attributes.csv");
    f << "scheme,seed,attribute,accuracy,balanced_accuracy,final_val_loss\n";
    for (const auto& r : runs) {
      const std::size_t j = r.test.attributes.size();
      for (std::size_t k = 0; k < j; ++k) {
        f << r.name << ',' << r.seed << ',' << r.test.attributes[k] << ',' << format_real(r.test.accuracy[k]) << ','
          << format_real(r.test.balanced_accuracy[k]) << ','
          << format_real(r.log.trace[r.log.trace.size() - j + k].val_loss) << '\n';
      }
    }
  }
  KeyValues manifest = to_key_values(t);
  manifest["data"] = p.data;
  manifest["compare"] = p.compare;
  manifest["seeds"] = join_seeds(p.seeds);
  write_manifest(out, "compare-schemes", manifest, {{"comparison", "comparison.csv"}, {"attributes", "attributes.csv"}});
  for (const auto& r : rows) std::cout << r.scheme << " seed " << r.seed << " " << r.mean_accuracy << "\n";
}

void run_plot(const Common& c, Paths p) {
  apply_paths(p, load_config(c, "plot-curves", {"trace"}));
  if (p.trace.empty()) throw UsageError("--trace is required");
  require_exists(p.trace, "trace");
  const fs::path out = resolve_out(c);
  const auto files = plot_curves(p.trace, out);
  KeyValues artifacts;
  for (const auto& f : files) artifacts[f.filename().string()] = f.filename().string();
  write_manifest(out, "plot-curves", {{"trace", p.trace}}, artifacts);
  std::cout << "wrote " << files.size() << " curve files to " << out.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task facial attribute training engine"};
  app.require_subcommand(1);
  Common common;
  TrainConfig train_cfg;
  train_cfg.batch_size = 16;
  train_cfg.base_lr = 0.03;
  SynthConfig synth;
  Paths paths;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--out", common.out, "Output directory (default $DMM_OUT)");
    sub->add_option("--config", common.config, "key = value config file; its values override flags");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  add_common(gen);
  gen->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
  gen->add_option("--image-size", synth.image_size, "Image side length (>= 16)")->capture_default_str();
  gen->add_option("--landmarks", synth.landmarks, "Landmarks per face (1..8)")->capture_default_str();
  gen->add_option("--train-size", synth.train_size)->capture_default_str();
  gen->add_option("--val-size", synth.val_size)->capture_default_str();
  gen->add_option("--test-size", synth.test_size)->capture_default_str();
  gen->add_option("--positive-rate", synth.positive_rate, "Per-attribute positive rate")->delimiter(',');
  gen->add_option("--difficulty", synth.difficulty, "Per-attribute difficulty")->delimiter(',');
  gen->add_option("--jitter", synth.jitter, "Max face translation in base pixels")->capture_default_str();

  auto* tr = app.add_subcommand("train", "Train one configuration");
  add_common(tr);
  tr->add_option("--data", paths.data, "Dataset root");
  add_train_flags(tr, train_cfg);

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  add_common(ev);
  ev->add_option("--checkpoint", paths.checkpoint, "Checkpoint file (thresholds read from <file>.tau)");
  ev->add_option("--data", paths.data, "Split directory, or dataset root for its test split");
  ev->add_flag("--fixed-threshold", paths.fixed_threshold, "Ignore stored thresholds and use 0");

  auto* ab = app.add_subcommand("ablate", "Train the seven ablation variants");
  add_common(ab);
  ab->add_option("--data", paths.data, "Dataset root");
  add_train_flags(ab, train_cfg);

  auto* cmp = app.add_subcommand("compare-schemes", "Compare weighting or threshold schemes over seeds");
  add_common(cmp);
  cmp->add_option("--data", paths.data, "Dataset root");
  cmp->add_option("--compare", paths.compare, "weights or thresholds")->capture_default_str();
  cmp->add_option("--seeds", paths.seeds, "Training seeds")->delimiter(',');
  add_train_flags(cmp, train_cfg);

  auto* plot = app.add_subcommand("plot-curves", "Curves of validation loss, weights and thresholds");
  add_common(plot);
  plot->add_option("--trace", paths.trace, "Scheduler trace CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report("usage", e.what(), 2);
  }

  try {
    if (gen->parsed()) run_gen_data(common, synth);
    else if (tr->parsed()) run_train(common, train_cfg, paths);
    else if (ev->parsed()) run_eval(common, paths);
    else if (ab->parsed()) run_ablate(common, train_cfg, paths);
    else if (cmp->parsed()) run_compare(common, train_cfg, paths);
    else if (plot->parsed()) run_plot(common, paths);
  } catch (const UsageError& e) {
    return report("usage", e.what(), 2);
  } catch (const ConfigError& e) {
    return report("config", e.what(), 2);
  } catch (const std::invalid_argument& e) {
    return report("invalid", e.what(), 2);
  } catch (const std::exception& e) {
    return report("runtime", e.what(), 1);
  }
  return 0;
}
