#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "popcorn/config.hpp"
#include "popcorn/data.hpp"
#include "popcorn/unet.hpp"

namespace popcorn {

// One optimizer-epoch summary. cycle 0 is the initial supervised phase;
// cycle c >= 1 is the c-th selection cycle's training. val_dice appears on
// initial-phase records (it drives early stopping); mean_reg appears only
// when the consistency term is active.
struct EpochRecord {
  std::int64_t cycle = 0;
  std::int64_t epoch = 0;  // 1-based within its phase
  double mean_total = 0.0;
  std::optional<double> mean_reg;
  std::optional<double> val_dice;
  std::int64_t ts_ms = 0;
};

// One selection cycle. model_hash identifies the parameters that computed
// the embeddings and pseudo-labels: the state left by the previous cycle's
// training (or by initial training for cycle 1).
struct CycleLog {
  std::int64_t cycle = 0;  // 1-based
  std::vector<std::string> selected_ids;
  std::vector<double> scores;  // empty under random selection
  double mean_total_loss = 0.0;
  std::optional<double> mean_reg_loss;
  std::optional<double> validation_dice;
  std::optional<double> test_dice;
  std::int64_t t_size = 0, u_size = 0;  // pool sizes after promotion
  std::string model_hash;
  std::int64_t ts_ms = 0;
};

nlohmann::json epoch_to_json(const EpochRecord& r);
EpochRecord epoch_from_json(const nlohmann::json& j);
nlohmann::json cycle_to_json(const CycleLog& c);
CycleLog cycle_from_json(const nlohmann::json& j);

// Promotion sizes per cycle for m unlabeled samples and k per cycle:
// ceil(m/k) entries of k with a final remainder entry.
std::vector<std::int64_t> promotion_schedule(std::int64_t m, std::int64_t k);

// Carves a validation split out of pool.training. Samples are ordered by
// (fnv1a64(id), id) and the first max(1, round(fraction*n)) of them move out,
// capped at n-1 so training keeps at least one sample. fraction == 0 moves
// nothing. The choice depends only on the id set, not on file order.
std::vector<Sample> split_validation(DatasetPool& pool, double fraction);

// Pseudo-labels for unlabeled samples with the current model: predict_mask
// per sample, returned in input order. Pure in (model, samples).
std::vector<Mask> assign_pseudo_labels(const Model& m, std::span<const Sample> samples,
                                       double threshold);

struct RunResult {
  Model model;
  std::vector<CycleLog> cycles;
  std::filesystem::path run_dir;
};

// Executes one full run into run_dir:
//   config.json            the effective configuration
//   initial.json           post-initial-phase summary (dice, model hash)
//   epochs.jsonl           one EpochRecord per line
//   cycles.jsonl           one CycleLog per line (empty for baseline arms)
//   checkpoints/cycle_NNNN.ckpt   NNNN = completed cycles (0000 = initial)
//   checkpoints/final.ckpt        copy of the last checkpoint
//   pseudo/<id>.rt         frozen pseudo-label masks
//   .lock                  held exclusively while a process works here
// pool.training must be all-labeled; validation must be disjoint from pool.
// test may be empty; when present, per-cycle test dice is logged.
// In config.reproducible mode every ts_ms field is 0.
RunResult run(const RunConfig& config, DatasetPool pool, std::vector<Sample> validation,
              const std::vector<Sample>& test, const std::filesystem::path& run_dir);

// Continues an interrupted run from its newest checkpoint. The stored
// config.json is the source of truth (max_cycles_override replaces its cap);
// the dataset is reloaded from config.dataset_dir, committed promotions are
// replayed from cycles.jsonl with the frozen pseudo/ masks, and log files are
// truncated to the committed cycles. The resumed process appends exactly the
// bytes the uninterrupted run would have written.
RunResult resume(const std::filesystem::path& run_dir,
                 std::optional<int> max_cycles_override = std::nullopt);

}  // namespace popcorn
