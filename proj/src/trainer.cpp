#include "popcorn/trainer.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>

#include "popcorn/errors.hpp"
#include "popcorn/io.hpp"
#include "popcorn/losses.hpp"
#include "popcorn/pairing.hpp"
#include "popcorn/proximity.hpp"
#include "popcorn/stats.hpp"
#include "popcorn/synth.hpp"

namespace popcorn {

using nlohmann::json;

json epoch_to_json(const EpochRecord& r) {
  json j{{"cycle", r.cycle}, {"epoch", r.epoch}, {"mean_total", r.mean_total},
         {"ts_ms", r.ts_ms}};
  if (r.mean_reg) j["mean_reg"] = *r.mean_reg;
  if (r.val_dice) j["val_dice"] = *r.val_dice;
  return j;
}

EpochRecord epoch_from_json(const json& j) {
  try {
    EpochRecord r;
    r.cycle = j.at("cycle").get<std::int64_t>();
    r.epoch = j.at("epoch").get<std::int64_t>();
    r.mean_total = j.at("mean_total").get<double>();
    r.ts_ms = j.at("ts_ms").get<std::int64_t>();
    if (j.contains("mean_reg")) r.mean_reg = j.at("mean_reg").get<double>();
    if (j.contains("val_dice")) r.val_dice = j.at("val_dice").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw DataError("malformed epoch record: " + std::string(e.what()));
  }
}

json cycle_to_json(const CycleLog& c) {
  json j{{"cycle", c.cycle},
         {"selected_ids", c.selected_ids},
         {"scores", c.scores},
         {"mean_total_loss", c.mean_total_loss},
         {"t_size", c.t_size},
         {"u_size", c.u_size},
         {"model_hash", c.model_hash},
         {"ts_ms", c.ts_ms}};
  if (c.mean_reg_loss) j["mean_reg_loss"] = *c.mean_reg_loss;
  if (c.validation_dice) j["validation_dice"] = *c.validation_dice;
  if (c.test_dice) j["test_dice"] = *c.test_dice;
  return j;
}

CycleLog cycle_from_json(const json& j) {
  try {
    CycleLog c;
    c.cycle = j.at("cycle").get<std::int64_t>();
    c.selected_ids = j.at("selected_ids").get<std::vector<std::string>>();
    c.scores = j.at("scores").get<std::vector<double>>();
    c.mean_total_loss = j.at("mean_total_loss").get<double>();
    c.t_size = j.at("t_size").get<std::int64_t>();
    c.u_size = j.at("u_size").get<std::int64_t>();
    c.model_hash = j.at("model_hash").get<std::string>();
    c.ts_ms = j.at("ts_ms").get<std::int64_t>();
    if (j.contains("mean_reg_loss")) c.mean_reg_loss = j.at("mean_reg_loss").get<double>();
    if (j.contains("validation_dice"))
      c.validation_dice = j.at("validation_dice").get<double>();
    if (j.contains("test_dice")) c.test_dice = j.at("test_dice").get<double>();
    return c;
  } catch (const json::exception& e) {
    throw DataError("malformed cycle record: " + std::string(e.what()));
  }
}

std::vector<std::int64_t> promotion_schedule(std::int64_t m, std::int64_t k) {
  if (k < 1) throw ConfigError("promotion_schedule: k must be >= 1");
  if (m < 0) throw Error("promotion_schedule: negative sample count");
  std::vector<std::int64_t> out;
  while (m > 0) {
    const std::int64_t take = std::min(m, k);
    out.push_back(take);
    m -= take;
  }
  return out;
}

std::vector<Sample> split_validation(DatasetPool& pool, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0))
    throw ConfigError("split_validation: fraction must be in [0,1)");
  const auto n = pool.training.size();
  if (fraction == 0.0 || n < 2) return {};

  std::vector<std::pair<std::uint64_t, std::string>> keyed;
  keyed.reserve(n);
  for (const auto& s : pool.training) keyed.emplace_back(fnv1a64(s.id), s.id);
  std::sort(keyed.begin(), keyed.end());
  auto n_val = static_cast<std::size_t>(
      std::max<std::int64_t>(1, std::llround(fraction * static_cast<double>(n))));
  n_val = std::min(n_val, n - 1);

  std::set<std::string> val_ids;
  for (std::size_t i = 0; i < n_val; ++i) val_ids.insert(keyed[i].second);

  std::vector<Sample> validation, keep;
  for (auto& s : pool.training) {
    if (val_ids.count(s.id))
      validation.push_back(std::move(s));
    else
      keep.push_back(std::move(s));
  }
  pool.training = std::move(keep);
  return validation;
}

std::vector<Mask> assign_pseudo_labels(const Model& m, std::span<const Sample> samples,
                                       double threshold) {
  std::vector<Mask> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    if (s.provenance != Provenance::Unlabeled)
      throw DataError("assign_pseudo_labels: sample '" + s.id + "' is not unlabeled");
    out.push_back(predict_mask(m, s.volume, threshold));
  }
  return out;
}

namespace {

constexpr std::uint64_t kModelSalt = 0x6d6f64656cULL;
constexpr std::uint64_t kTrainerSalt = 0x747261696eULL;

class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& dir) {
    const auto p = dir / ".lock";
    fd_ = ::open(p.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
    if (fd_ < 0) throw DataError("cannot open lock file: " + p.string());
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      fd_ = -1;
      throw DataError("run directory is locked by another process: " + dir.string());
    }
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;
  ~RunLock() {
    if (fd_ >= 0) {
      ::flock(fd_, LOCK_UN);
      ::close(fd_);
    }
  }

 private:
  int fd_ = -1;
};

std::filesystem::path ckpt_name(const std::filesystem::path& dir, std::int64_t completed) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "cycle_%04lld.ckpt", static_cast<long long>(completed));
  return dir / "checkpoints" / buf;
}

class Trainer {
 public:
  Trainer(RunConfig cfg, std::filesystem::path dir)
      : cfg_(std::move(cfg)), dir_(std::move(dir)), rng_(0) {
    validate_run_config(cfg_);
    std::filesystem::create_directories(dir_);
    lock_.emplace(dir_);
    const Strategy s = cfg_.trainer.strategy;
    baseline_arm_ = s == Strategy::Baseline || s == Strategy::BaselineCr;
    alpha_eff_ = s == Strategy::NoCr ? 0.0 : cfg_.trainer.alpha;
    reg_active_ = s != Strategy::Baseline && alpha_eff_ > 0.0;
  }

  void fresh(DatasetPool pool, std::vector<Sample> validation,
             const std::vector<Sample>& test) {
    if (std::filesystem::exists(dir_ / "config.json"))
      throw DataError("run directory already contains a run (use resume): " + dir_.string());
    pool_ = std::move(pool);
    validation_ = std::move(validation);
    test_ = test;
    check_pool_fresh();
    save_run_config(dir_ / "config.json", cfg_);
    std::filesystem::create_directories(dir_ / "checkpoints");
    std::filesystem::create_directories(dir_ / "pseudo");

    model_ = init_model(cfg_.model, derive_seed(cfg_.seed, kModelSalt));
    opt_ = make_adam(model_, cfg_.trainer.lr);
    rng_ = Rng(derive_seed(cfg_.seed, kTrainerSalt));

    epochs_out_.open(dir_ / "epochs.jsonl", std::ios::trunc);
    cycles_out_.open(dir_ / "cycles.jsonl", std::ios::trunc);
    if (!epochs_out_ || !cycles_out_) throw DataError("cannot open log files in " + dir_.string());

    train_initial();
    write_initial_summary();
    save_ckpt(0);
    completed_ = 0;
  }

  void restore() {
    std::int64_t newest = -1;
    const auto ckdir = dir_ / "checkpoints";
    if (std::filesystem::is_directory(ckdir)) {
      for (const auto& e : std::filesystem::directory_iterator(ckdir)) {
        const std::string name = e.path().filename().string();
        long long c = -1;
        if (std::sscanf(name.c_str(), "cycle_%lld.ckpt", &c) == 1)
          newest = std::max<std::int64_t>(newest, c);
      }
    }
    if (newest < 0) throw DataError("nothing to resume in " + dir_.string());

    Checkpoint ck = load_checkpoint(ckpt_name(dir_, newest));
    if (!(ck.model.config == cfg_.model))
      throw DataError("checkpoint model configuration does not match config.json");
    if (ck.completed_cycles != newest)
      throw DataError("checkpoint cycle count does not match its filename");
    model_ = std::move(ck.model);
    opt_ = std::move(ck.opt);
    rng_.deserialize(ck.rng_state);
    completed_ = newest;

    LoadedDataset ds = load_dataset(cfg_.dataset_dir);
    pool_ = std::move(ds.pool);
    test_ = std::move(ds.test);
    validation_ = split_validation(pool_, cfg_.trainer.val_fraction);

    truncate_logs();
    for (const CycleLog& c : cycles_) {
      std::vector<Mask> masks;
      masks.reserve(c.selected_ids.size());
      for (const auto& id : c.selected_ids) {
        const auto p = dir_ / "pseudo" / (id + ".rt");
        if (!std::filesystem::exists(p))
          throw DataError("missing pseudo-label for resume: " + p.string());
        masks.push_back(Mask{load_raw_tensor(p)});
      }
      promote(pool_, c.selected_ids, std::move(masks), static_cast<int>(c.cycle));
    }

    epochs_out_.open(dir_ / "epochs.jsonl", std::ios::app);
    cycles_out_.open(dir_ / "cycles.jsonl", std::ios::app);
    if (!epochs_out_ || !cycles_out_) throw DataError("cannot open log files in " + dir_.string());
  }

  RunResult loop() {
    if (!baseline_arm_) {
      const int cap = cfg_.trainer.max_cycles;
      for (std::int64_t c = completed_ + 1;
           !pool_.unlabeled.empty() && (cap == 0 || c <= cap); ++c)
        run_cycle(c);
    }
    std::filesystem::copy_file(ckpt_name(dir_, completed_), dir_ / "checkpoints" / "final.ckpt",
                               std::filesystem::copy_options::overwrite_existing);
    return RunResult{std::move(model_), std::move(cycles_), dir_};
  }

 private:
  void check_pool_fresh() const {
    if (pool_.training.empty()) throw DataError("training pool has no labeled samples");
    std::set<std::string> ids;
    for (const auto& s : pool_.training) {
      if (s.provenance != Provenance::Labeled)
        throw DataError("fresh run requires an all-labeled training pool; sample '" + s.id +
                        "' is " + provenance_name(s.provenance));
      if (!s.mask) throw DataError("training sample '" + s.id + "' has no mask");
      ids.insert(s.id);
    }
    for (const auto& s : pool_.unlabeled) ids.insert(s.id);
    for (const auto& s : validation_) {
      if (ids.count(s.id))
        throw DataError("validation sample '" + s.id + "' also appears in the pool");
      if (!s.mask) throw DataError("validation sample '" + s.id + "' has no mask");
    }
    for (const auto& s : test_)
      if (!s.mask) throw DataError("test sample '" + s.id + "' has no mask");
  }

  std::int64_t ts() const {
    if (cfg_.reproducible) return 0;
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
  }

  static void write_line(std::ofstream& f, const json& j) {
    f << j.dump() << "\n";
    f.flush();
  }

  struct PhaseStats {
    double mean_total = 0.0;
    double mean_reg = 0.0;
  };

  // One optimizer epoch: ceil(|T|/batch) steps, each averaging batch_size
  // sampled items. Gradients accumulate in draw order.
  PhaseStats train_one_epoch() {
    const TrainerConfig& tc = cfg_.trainer;
    const auto t_size = static_cast<std::int64_t>(pool_.training.size());
    const std::int64_t steps = (t_size + tc.batch_size - 1) / tc.batch_size;
    double sum_total = 0.0, sum_reg = 0.0;
    std::int64_t items = 0;
    for (std::int64_t step = 0; step < steps; ++step) {
      Model grads = zero_like(model_);
      for (int b = 0; b < tc.batch_size; ++b) {
        if (cfg_.trainer.strategy == Strategy::Baseline) {
          const SinglePatch sp = sample_single(pool_.training, cfg_.model.patch_size,
                                               cfg_.pairing.positioning, cfg_.augment, rng_);
          sum_total += single_dice_loss_grad(model_, sp.patch, sp.y, grads);
        } else {
          const PairItem pair = sample_pair(pool_.training, cfg_.model.patch_size, cfg_.pairing,
                                            cfg_.augment, rng_);
          const LossReport rep = total_loss_grad(model_, pair, alpha_eff_, grads);
          sum_total += rep.total;
          sum_reg += rep.reg;
        }
        ++items;
      }
      scale_params(grads, 1.0 / static_cast<double>(tc.batch_size));
      apply_gradients(model_, grads, opt_);
    }
    PhaseStats st;
    st.mean_total = sum_total / static_cast<double>(items);
    st.mean_reg = sum_reg / static_cast<double>(items);
    return st;
  }

  std::optional<double> mean_dice(const std::vector<Sample>& samples) {
    if (samples.empty()) return std::nullopt;
    double acc = 0.0;
    for (const auto& s : samples) {
      const Mask pred = predict_mask(model_, s.volume, cfg_.trainer.threshold);
      acc += image_metrics(s.id, pred, *s.mask).dice;
    }
    return acc / static_cast<double>(samples.size());
  }

  void write_epoch(std::int64_t cycle, std::int64_t epoch, const PhaseStats& st,
                   std::optional<double> val_dice) {
    EpochRecord r;
    r.cycle = cycle;
    r.epoch = epoch;
    r.mean_total = st.mean_total;
    if (reg_active_) r.mean_reg = st.mean_reg;
    r.val_dice = val_dice;
    r.ts_ms = ts();
    write_line(epochs_out_, epoch_to_json(r));
  }

  void train_initial() {
    const TrainerConfig& tc = cfg_.trainer;
    if (tc.initial_epochs == 0) return;
    double best = -1.0;
    int wait = 0;
    std::optional<Model> best_model;
    AdamState best_opt;
    for (int e = 1; e <= tc.initial_epochs; ++e) {
      const PhaseStats st = train_one_epoch();
      const std::optional<double> vd = mean_dice(validation_);
      write_epoch(0, e, st, vd);
      if (!vd) continue;
      if (*vd > best + 1e-12) {
        best = *vd;
        best_model = model_;
        best_opt = opt_;
        wait = 0;
      } else if (++wait >= tc.patience) {
        break;
      }
    }
    if (best_model) {
      model_ = std::move(*best_model);
      opt_ = std::move(best_opt);
    }
  }

  void write_initial_summary() {
    json j{{"model_hash", hex64(param_hash(model_))},
           {"t_size", static_cast<std::int64_t>(pool_.training.size())},
           {"u_size", static_cast<std::int64_t>(pool_.unlabeled.size())},
           {"ts_ms", ts()}};
    const auto vd = mean_dice(validation_);
    const auto td = mean_dice(test_);
    if (vd) j["validation_dice"] = *vd;
    if (td) j["test_dice"] = *td;
    std::ofstream f(dir_ / "initial.json", std::ios::trunc);
    if (!f) throw DataError("cannot write initial.json");
    f << j.dump(2) << "\n";
  }

  void save_ckpt(std::int64_t completed) {
    Checkpoint ck;
    ck.model = model_;
    ck.opt = opt_;
    ck.rng_state = rng_.serialize();
    ck.completed_cycles = completed;
    save_checkpoint(ckpt_name(dir_, completed), ck);
  }

  // Selection for one cycle: proximity-ranked, or uniform random without
  // replacement over the lexicographically sorted ids for the random arm.
  std::pair<std::vector<std::string>, std::vector<double>> select_ids() {
    const TrainerConfig& tc = cfg_.trainer;
    if (tc.strategy == Strategy::RandomSelect) {
      std::vector<std::string> ids;
      for (const auto& s : pool_.unlabeled) ids.push_back(s.id);
      std::sort(ids.begin(), ids.end());
      const auto n = static_cast<std::int64_t>(ids.size());
      const auto m = std::min<std::int64_t>(tc.k, n);
      for (std::int64_t i = 0; i < m; ++i) {
        const std::int64_t j = i + rng_.uniform_int(n - i);
        std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(j)]);
      }
      ids.resize(static_cast<std::size_t>(m));
      return {std::move(ids), {}};
    }
    std::map<std::string, std::vector<double>> t_feats, u_feats;
    for (const auto& s : pool_.training) t_feats[s.id] = embed_sample(model_, s).values;
    for (const auto& s : pool_.unlabeled) u_feats[s.id] = embed_sample(model_, s).values;
    const ProximityGraph graph = build_graph(u_feats, t_feats);
    const auto sel = select_candidates(graph, tc.k, tc.p);
    std::vector<std::string> ids;
    std::vector<double> scores;
    for (const auto& [id, score] : sel) {
      ids.push_back(id);
      scores.push_back(score);
    }
    return {std::move(ids), std::move(scores)};
  }

  void run_cycle(std::int64_t cycle) {
    const TrainerConfig& tc = cfg_.trainer;
    CycleLog log;
    log.cycle = cycle;
    log.model_hash = hex64(param_hash(model_));

    auto [ids, scores] = select_ids();
    log.selected_ids = ids;
    log.scores = std::move(scores);

    std::map<std::string, std::size_t> u_index;
    for (std::size_t i = 0; i < pool_.unlabeled.size(); ++i) u_index[pool_.unlabeled[i].id] = i;
    std::vector<Sample> picked;
    picked.reserve(ids.size());
    for (const auto& id : ids) {
      const auto it = u_index.find(id);
      if (it == u_index.end()) throw DataError("selected id '" + id + "' is not unlabeled");
      picked.push_back(pool_.unlabeled[it->second]);
    }
    std::vector<Mask> masks = assign_pseudo_labels(model_, picked, tc.threshold);

    for (std::size_t i = 0; i < ids.size(); ++i)
      save_raw_tensor(dir_ / "pseudo" / (ids[i] + ".rt"), masks[i].voxels, RawDType::F32);
    promote(pool_, ids, std::move(masks), static_cast<int>(cycle));

    double sum_total = 0.0, sum_reg = 0.0;
    for (int e = 1; e <= tc.n; ++e) {
      const PhaseStats st = train_one_epoch();
      write_epoch(cycle, e, st, std::nullopt);
      sum_total += st.mean_total;
      sum_reg += st.mean_reg;
    }
    log.mean_total_loss = sum_total / tc.n;
    if (reg_active_) log.mean_reg_loss = sum_reg / tc.n;
    log.validation_dice = mean_dice(validation_);
    log.test_dice = mean_dice(test_);
    log.t_size = static_cast<std::int64_t>(pool_.training.size());
    log.u_size = static_cast<std::int64_t>(pool_.unlabeled.size());
    log.ts_ms = ts();

    write_line(cycles_out_, cycle_to_json(log));
    cycles_.push_back(std::move(log));
    save_ckpt(cycle);
    completed_ = cycle;
  }

  // Drops log lines beyond the restored cycle count, keeping the committed
  // lines byte-for-byte. A torn trailing line from a crash is dropped too.
  void truncate_logs() {
    cycles_.clear();
    const auto keep_pred = [&](const std::string& line, bool is_cycle) -> bool {
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception&) {
        return false;
      }
      const auto it = j.find("cycle");
      if (it == j.end() || !it->is_number()) return false;
      if (it->get<std::int64_t>() > completed_) return false;
      if (is_cycle) cycles_.push_back(cycle_from_json(j));
      return true;
    };
    for (const bool is_cycle : {false, true}) {
      const auto path = dir_ / (is_cycle ? "cycles.jsonl" : "epochs.jsonl");
      std::ifstream in(path);
      if (!in) throw DataError("cannot open log for resume: " + path.string());
      std::string kept, line;
      while (std::getline(in, line)) {
        if (keep_pred(line, is_cycle)) kept += line + "\n";
      }
      in.close();
      std::ofstream out(path, std::ios::trunc);
      if (!out) throw DataError("cannot rewrite log: " + path.string());
      out << kept;
    }
    std::sort(cycles_.begin(), cycles_.end(),
              [](const CycleLog& a, const CycleLog& b) { return a.cycle < b.cycle; });
  }

  RunConfig cfg_;
  std::filesystem::path dir_;
  std::optional<RunLock> lock_;
  DatasetPool pool_;
  std::vector<Sample> validation_, test_;
  Model model_;
  AdamState opt_;
  Rng rng_;
  std::ofstream cycles_out_, epochs_out_;
  std::vector<CycleLog> cycles_;
  std::int64_t completed_ = -1;
  double alpha_eff_ = 0.0;
  bool baseline_arm_ = false;
  bool reg_active_ = false;
};

}  // namespace

RunResult run(const RunConfig& config, DatasetPool pool, std::vector<Sample> validation,
              const std::vector<Sample>& test, const std::filesystem::path& run_dir) {
  Trainer t(config, run_dir);
  t.fresh(std::move(pool), std::move(validation), test);
  return t.loop();
}

RunResult resume(const std::filesystem::path& run_dir, std::optional<int> max_cycles_override) {
  RunConfig cfg = load_run_config(run_dir / "config.json");
  if (max_cycles_override) cfg.trainer.max_cycles = *max_cycles_override;
  Trainer t(cfg, run_dir);
  t.restore();
  return t.loop();
}

}  // namespace popcorn
