#include "popcorn/cli.hpp"

#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "popcorn/config.hpp"
#include "popcorn/errors.hpp"
#include "popcorn/io.hpp"
#include "popcorn/proximity.hpp"
#include "popcorn/stats.hpp"
#include "popcorn/synth.hpp"
#include "popcorn/trainer.hpp"
#include "popcorn/unet.hpp"

namespace popcorn {

using nlohmann::json;

namespace {

json read_json(const std::filesystem::path& p) {
  std::ifstream f(p);
  if (!f) throw DataError("cannot open " + p.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw DataError("invalid JSON in " + p.string() + ": " + e.what());
  }
  return j;
}

std::map<std::string, std::vector<double>> read_embedding_dir(
    const std::filesystem::path& dir) {
  const json manifest = read_json(dir / "manifest.json");
  if (!manifest.contains("ids") || !manifest.at("ids").is_array())
    throw DataError(dir.string() + "/manifest.json: expected an object with an 'ids' array");
  std::map<std::string, std::vector<double>> out;
  for (const auto& idj : manifest.at("ids")) {
    const auto id = idj.get<std::string>();
    NdArray a = load_raw_tensor(dir / (id + ".rt"));
    if (a.rank() != 1)
      throw DataError("embedding '" + id + "' must be a rank-1 tensor, got " +
                      shape_str(a.shape));
    out[id] = std::move(a.data);
  }
  return out;
}

struct TrainFlags {
  std::string config_path, strategy, out;
  std::uint64_t seed = 0;
  int max_cycles = 0;
  bool resume = false, reproducible = false;
  bool has_config = false, has_strategy = false, has_seed = false, has_max_cycles = false,
       has_out = false;
};

RunConfig assemble_config(const TrainFlags& f) {
  RunConfig cfg;
  if (f.has_config) cfg = load_run_config(f.config_path);
  apply_env_seed(cfg);
  if (f.has_seed) {
    cfg.seed = f.seed;
    cfg.seed_set = true;
  }
  if (f.has_strategy) cfg.trainer.strategy = strategy_from_name(f.strategy);
  if (f.has_max_cycles) cfg.trainer.max_cycles = f.max_cycles;
  if (f.has_out) cfg.out_dir = f.out;
  if (f.reproducible) cfg.reproducible = true;
  return cfg;
}

int cmd_synth_data(const TrainFlags& f) {
  RunConfig cfg = assemble_config(f);
  if (!cfg.seed_set)
    throw ConfigError("seed: required; set it in the config file, via --seed, or POPCORN_SEED");
  validate_synth_config(cfg.synth);
  const std::string dir = f.has_out ? f.out : cfg.dataset_dir;
  if (dir.empty())
    throw ConfigError("dataset_dir: required (set --out or dataset_dir in the config)");
  const SynthResult r = synthesize_dataset(cfg.synth, cfg.seed);
  write_dataset(dir, r, cfg.synth, cfg.seed);
  std::cout << "dataset written to " << dir << "\n";
  return 0;
}

int cmd_train(const TrainFlags& f) {
  if (f.resume) {
    if (f.has_config || f.has_seed || f.has_strategy || f.reproducible)
      throw ConfigError(
          "--resume uses the run directory's stored configuration; only --out and "
          "--max-cycles may be combined with it");
    if (!f.has_out) throw ConfigError("--resume requires --out <run_dir>");
    std::optional<int> cap;
    if (f.has_max_cycles) cap = f.max_cycles;
    const RunResult r = resume(f.out, cap);
    std::cout << "resumed run complete: " << r.run_dir.string() << " ("
              << r.cycles.size() << " cycles)\n";
    return 0;
  }
  RunConfig cfg = assemble_config(f);
  validate_run_config(cfg);
  if (cfg.out_dir.empty())
    throw ConfigError("out_dir: required (set --out or out_dir in the config)");
  if (cfg.dataset_dir.empty()) throw ConfigError("dataset_dir: required in the config");
  LoadedDataset ds = load_dataset(cfg.dataset_dir);
  DatasetPool pool = std::move(ds.pool);
  std::vector<Sample> validation = split_validation(pool, cfg.trainer.val_fraction);
  const RunResult r = run(cfg, std::move(pool), std::move(validation), ds.test, cfg.out_dir);
  std::cout << "run complete: " << r.run_dir.string() << " (" << r.cycles.size()
            << " cycles)\n";
  return 0;
}

int cmd_select(const std::string& unlabeled_dir, const std::string& training_dir, int k, int p,
               const std::string& out_path) {
  const auto u = read_embedding_dir(unlabeled_dir);
  const auto t = read_embedding_dir(training_dir);
  const ProximityGraph g = build_graph(u, t);
  const auto sel = select_candidates(g, k, p);
  std::string text = "rank\tid\tscore\n";
  for (std::size_t i = 0; i < sel.size(); ++i) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", sel[i].second);
    text += std::to_string(i + 1) + "\t" + sel[i].first + "\t" + buf + "\n";
  }
  if (out_path.empty()) {
    std::cout << text;
  } else {
    std::ofstream f(out_path, std::ios::trunc);
    if (!f) throw DataError("cannot write " + out_path);
    f << text;
  }
  return 0;
}

int cmd_evaluate(const std::string& run_dir_s, const std::string& data_dir_s,
                 const std::string& out_s, const std::string& label_s) {
  const std::filesystem::path run_dir = run_dir_s;
  const RunConfig cfg = load_run_config(run_dir / "config.json");
  const std::string data_dir = data_dir_s.empty() ? cfg.dataset_dir : data_dir_s;
  if (data_dir.empty()) throw ConfigError("no test data: pass --data or set dataset_dir");

  const auto ckpt_path = run_dir / "checkpoints" / "final.ckpt";
  if (!std::filesystem::exists(ckpt_path))
    throw DataError("missing checkpoint: " + ckpt_path.string());
  const Checkpoint ckpt = load_checkpoint(ckpt_path);

  const LoadedDataset ds = load_dataset(data_dir);
  if (ds.test.empty()) throw DataError("dataset has no test samples: " + data_dir);
  std::vector<ImageMetrics> metrics;
  for (const auto& s : ds.test) {
    const Mask pred = predict_mask(ckpt.model, s.volume, cfg.trainer.threshold);
    metrics.push_back(image_metrics(s.id, pred, *s.mask));
  }

  // dice-vs-cycle curve: the initial summary is cycle 0, then one point per
  // cycle record; test dice preferred, validation dice as fallback
  std::vector<std::pair<std::int64_t, double>> curve;
  const auto pick = [](const json& j) -> std::optional<double> {
    if (j.contains("test_dice")) return j.at("test_dice").get<double>();
    if (j.contains("validation_dice")) return j.at("validation_dice").get<double>();
    return std::nullopt;
  };
  if (std::filesystem::exists(run_dir / "initial.json")) {
    if (const auto v = pick(read_json(run_dir / "initial.json"))) curve.emplace_back(0, *v);
  }
  std::ifstream cyc(run_dir / "cycles.jsonl");
  std::string line;
  while (cyc && std::getline(cyc, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError("malformed cycle record in " + (run_dir / "cycles.jsonl").string() + ": " +
                      e.what());
    }
    if (const auto v = pick(j)) curve.emplace_back(j.at("cycle").get<std::int64_t>(), *v);
  }

  std::string label = label_s;
  if (label.empty()) label = cfg.eval_label;
  if (label.empty()) label = strategy_name(cfg.trainer.strategy);
  const StrategyResult result = make_strategy_result(
      label, strategy_name(cfg.trainer.strategy), std::move(metrics), std::move(curve));

  const std::filesystem::path out =
      out_s.empty() ? run_dir / "result.json" : std::filesystem::path(out_s);
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  std::ofstream f(out, std::ios::trunc);
  if (!f) throw DataError("cannot write " + out.string());
  f << strategy_result_to_json(result).dump(2) << "\n";
  std::cout << "result written to " << out.string() << " (mean dice "
            << result.mean_dice << ")\n";
  return 0;
}

int cmd_report(const std::vector<std::string>& result_files, const std::string& out_dir) {
  std::vector<StrategyResult> results;
  for (const auto& p : result_files)
    results.push_back(strategy_result_from_json(read_json(p)));
  const std::string table = build_report(results, out_dir);
  std::cout << table;
  std::cout << "report written to " << out_dir << "\n";
  return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Progressive pseudo-labeling for binary segmentation"};
  app.require_subcommand(1);

  TrainFlags tf;
  auto* synth = app.add_subcommand("synth-data", "Generate a synthetic dataset");
  auto* sd_config = synth->add_option("--config", tf.config_path, "Config file (JSON)");
  auto* sd_seed = synth->add_option("--seed", tf.seed, "Global seed");
  auto* sd_out = synth->add_option("--out", tf.out, "Dataset output directory");

  auto* train = app.add_subcommand("train", "Train one strategy arm");
  auto* tr_config = train->add_option("--config", tf.config_path, "Config file (JSON)");
  auto* tr_strategy =
      train->add_option("--strategy", tf.strategy, "Training arm")
          ->check(CLI::IsMember({"popcorn", "no-cr", "random-select", "baseline", "baseline-cr"}));
  auto* tr_seed = train->add_option("--seed", tf.seed, "Global seed");
  auto* tr_max = train->add_option("--max-cycles", tf.max_cycles, "Cap on selection cycles");
  auto* tr_out = train->add_option("--out", tf.out, "Run directory");
  train->add_flag("--resume", tf.resume, "Continue from the newest checkpoint");
  train->add_flag("--reproducible", tf.reproducible, "Zero timestamps for byte comparisons");

  std::string sel_unlabeled, sel_training, sel_out;
  int sel_k = 0, sel_p = 0;
  auto* select = app.add_subcommand("select", "Rank unlabeled embeddings by proximity");
  select->add_option("--unlabeled", sel_unlabeled, "Directory of unlabeled embeddings")
      ->required();
  select->add_option("--training", sel_training, "Directory of training embeddings")->required();
  select->add_option("--k", sel_k, "Number of ids to select")->required();
  select->add_option("--p", sel_p, "Neighbors per score")->required();
  select->add_option("--out", sel_out, "Report file (default: stdout)");

  std::string ev_run, ev_data, ev_out, ev_label;
  auto* evaluate = app.add_subcommand("evaluate", "Score a finished run on the test set");
  evaluate->add_option("--run", ev_run, "Run directory")->required();
  evaluate->add_option("--data", ev_data, "Dataset directory (default: from run config)");
  evaluate->add_option("--out", ev_out, "Result file (default: <run>/result.json)");
  evaluate->add_option("--label", ev_label, "Display label (default: strategy name)");

  std::vector<std::string> rp_results;
  std::string rp_out;
  auto* report = app.add_subcommand("report", "Compare evaluation results");
  report->add_option("results", rp_results, "Result files (result.json)")->required();
  report->add_option("--out", rp_out, "Report directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    tf.has_config = sd_config->count() > 0 || tr_config->count() > 0;
    tf.has_seed = sd_seed->count() > 0 || tr_seed->count() > 0;
    tf.has_strategy = tr_strategy->count() > 0;
    tf.has_max_cycles = tr_max->count() > 0;
    tf.has_out = sd_out->count() > 0 || tr_out->count() > 0;
    if (synth->parsed()) return cmd_synth_data(tf);
    if (train->parsed()) return cmd_train(tf);
    if (select->parsed()) return cmd_select(sel_unlabeled, sel_training, sel_k, sel_p, sel_out);
    if (evaluate->parsed()) return cmd_evaluate(ev_run, ev_data, ev_out, ev_label);
    if (report->parsed()) return cmd_report(rp_results, rp_out);
    throw Error("no subcommand dispatched");
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace popcorn
