// End-to-end acceptance harness. Each numbered criterion prints exactly one
// PASS/FAIL line; the exit code is 0 only when every criterion holds. Slow
// criteria report their elapsed time so budget regressions stay visible.
// Criterion 9 additionally prints the per-seed comparison tables it builds.

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "popcorn/config.hpp"
#include "popcorn/data.hpp"
#include "popcorn/errors.hpp"
#include "popcorn/losses.hpp"
#include "popcorn/nd.hpp"
#include "popcorn/proximity.hpp"
#include "popcorn/stats.hpp"
#include "popcorn/synth.hpp"
#include "popcorn/trainer.hpp"
#include "popcorn/unet.hpp"

using namespace popcorn;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void need(bool ok, const std::string& what) {
  if (!ok) throw Failure(what);
}

std::string num(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

struct Stopwatch {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

fs::path scratch() {
  static const fs::path root = [] {
    const fs::path p = fs::temp_directory_path() / "popcorn_acceptance";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  need(f.good(), "cannot open " + p.string());
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

bool files_equal(const fs::path& a, const fs::path& b) {
  return fs::exists(a) && fs::exists(b) && slurp(a) == slurp(b);
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)});
}

// Fourth-order central difference; the wide stencil keeps cancellation noise
// below the comparison threshold even for near-zero derivatives.
template <typename F>
double fd4(F&& f, double& coord, double h) {
  const double saved = coord;
  coord = saved + h;
  const double f1 = f();
  coord = saved - h;
  const double f2 = f();
  coord = saved + 2 * h;
  const double f3 = f();
  coord = saved - 2 * h;
  const double f4 = f();
  coord = saved;
  return (8.0 * (f1 - f2) - (f3 - f4)) / (12.0 * h);
}

// Near-zero derivatives are compared absolutely; everything else relatively.
void check_grad(double analytic, double finite, double& worst, const std::string& where) {
  if (std::max(std::abs(analytic), std::abs(finite)) > 1e-7) {
    const double e = rel_err(analytic, finite);
    worst = std::max(worst, e);
    need(e < 1e-5, where + ": rel err " + num(e) + " (analytic " + num(analytic) + ", fd " +
                       num(finite) + ")");
  } else {
    need(std::abs(analytic - finite) < 1e-9, where + ": abs err too large near zero");
  }
}

NdArray rand_probs(const Shape& shape, Rng& rng) {
  NdArray a(shape);
  for (std::int64_t i = 0; i < a.size(); ++i) a[i] = 0.01 + 0.98 * rng.uniform();
  return a;
}

NdArray rand_binary(const Shape& shape, Rng& rng) {
  NdArray a(shape);
  for (std::int64_t i = 0; i < a.size(); ++i) a[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
  return a;
}

std::vector<double> rand_vec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

ModelConfig toy_model_config() {
  ModelConfig c;
  c.dims = 2;
  c.in_channels = 1;
  c.base_filters = 4;
  c.depth = 2;
  c.patch_size = {8, 8};
  return c;
}

PairItem random_pair(const ModelConfig& c, Rng& rng) {
  PairItem p;
  NdArray vi(c.patch_size), vj(c.patch_size);
  for (std::int64_t i = 0; i < vi.size(); ++i) vi[i] = rng.normal();
  for (std::int64_t i = 0; i < vj.size(); ++i) vj[i] = rng.normal();
  p.patch_i = make_volume(std::move(vi));
  p.patch_j = make_volume(std::move(vj));
  p.y_i.voxels = rand_binary(c.patch_size, rng);
  p.y_j.voxels = rand_binary(c.patch_size, rng);
  return p;
}

// The trained objective holds the similarity factor constant, so the finite
// difference reference must too: sim is frozen at the base point.
double frozen_objective(const Model& m, const PairItem& pair, double alpha, double sim0) {
  auto [pred_i, h_i] = forward(m, pair.patch_i);
  auto [pred_j, h_j] = forward(m, pair.patch_j);
  return dice_loss(pred_i.probs, pair.y_i.voxels) + dice_loss(pred_j.probs, pair.y_j.voxels) +
         alpha * sim0 * feature_distance(h_i.values, h_j.values);
}

// ---------------------------------------------------------------------------
// criterion 1: analytic gradients vs central finite differences

std::string c1_gradients() {
  Stopwatch sw;
  Rng rng(11);
  double worst = 0.0;

  for (int t = 0; t < 60; ++t) {
    const Shape shape = {1 + rng.uniform_int(24)};
    NdArray pred = rand_probs(shape, rng);
    const NdArray target = rand_binary(shape, rng);
    const NdArray g = dice_loss_grad(pred, target, 1.0);
    for (std::int64_t i = 0; i < pred.size(); ++i) {
      const double fd = fd4([&] { return dice_loss(pred, target, 1.0); }, pred[i], 1e-4);
      check_grad(g[i], fd, worst, "dice_loss coord");
    }
  }

  for (int t = 0; t < 60; ++t) {
    const std::size_t d = 1 + static_cast<std::size_t>(rng.uniform_int(12));
    std::vector<double> a = rand_vec(d, rng), b = rand_vec(d, rng);
    const FeatureDistanceGrad g = feature_distance_grad(a, b);
    for (std::size_t i = 0; i < d; ++i) {
      double fda = fd4([&] { return feature_distance(a, b); }, a[i], 1e-4);
      check_grad(g.da[i], fda, worst, "feature_distance da");
      double fdb = fd4([&] { return feature_distance(a, b); }, b[i], 1e-4);
      check_grad(g.db[i], fdb, worst, "feature_distance db");
    }
  }

  // consistency: the similarity factor depends only on the predictions, so a
  // direct finite difference over the features sees exactly sim * d(dist).
  for (int t = 0; t < 60; ++t) {
    const Shape ps = {2 + rng.uniform_int(10)};
    const NdArray pi = rand_probs(ps, rng), pj = rand_probs(ps, rng);
    const std::size_t d = 1 + static_cast<std::size_t>(rng.uniform_int(10));
    std::vector<double> hi = rand_vec(d, rng), hj = rand_vec(d, rng);
    const double sim0 = prediction_similarity(pi, pj);
    const FeatureDistanceGrad g = feature_distance_grad(hi, hj);
    for (std::size_t i = 0; i < d; ++i) {
      double fdi = fd4([&] { return consistency_loss(pi, pj, hi, hj); }, hi[i], 1e-4);
      check_grad(sim0 * g.da[i], fdi, worst, "consistency_loss h_i");
      double fdj = fd4([&] { return consistency_loss(pi, pj, hi, hj); }, hj[i], 1e-4);
      check_grad(sim0 * g.db[i], fdj, worst, "consistency_loss h_j");
    }
  }

  const ModelConfig mc = toy_model_config();
  Model m = init_model(mc, 13);
  const double alpha = 0.2;
  int coords_checked = 0;
  for (int t = 0; t < 50; ++t) {
    const PairItem pair = random_pair(mc, rng);
    const double sim0 = [&] {
      auto [pi, hi] = forward(m, pair.patch_i);
      auto [pj, hj] = forward(m, pair.patch_j);
      return prediction_similarity(pi.probs, pj.probs);
    }();
    Model grads = zero_like(m);
    total_loss_grad(m, pair, alpha, grads);

    std::vector<double*> coords, gcoords;
    for_each_param(m, [&](const std::string&, std::span<double> p) {
      for (auto& v : p) coords.push_back(&v);
    });
    for_each_param(grads, [&](const std::string&, std::span<double> p) {
      for (auto& v : p) gcoords.push_back(&v);
    });
    need(coords.size() == gcoords.size(), "parameter layout mismatch");

    for (int k = 0; k < 12; ++k) {
      const auto idx =
          static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(coords.size())));
      const double fd =
          fd4([&] { return frozen_objective(m, pair, alpha, sim0); }, *coords[idx], 1e-4);
      check_grad(*gcoords[idx], fd, worst, "total_loss param");
      ++coords_checked;
    }
  }

  const double secs = sw.seconds();
  need(secs < 60.0, "gradient checks took " + num(secs) + " s, budget is 60");
  return "60+60+60 toy inputs per loss, 50 model instances / " + std::to_string(coords_checked) +
         " params; worst rel err " + num(worst) + "; " + num(secs) + " s";
}

// ---------------------------------------------------------------------------
// criterion 2: closed-form values

std::string c2_closed_forms() {
  const NdArray ones({4, 4}, 1.0), zeros({4, 4}, 0.0);

  const double sim = prediction_similarity(ones, zeros);
  need(std::abs(sim - std::exp(-1.0)) <= 1e-12,
       "similarity(ones, zeros) = " + num(sim) + ", want exp(-1)");

  const std::vector<double> a = {0.3, -1.2, 2.0, 0.7};
  std::vector<double> b(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) b[i] = -a[i];
  const double dist = feature_distance(a, b);
  need(std::abs(dist - 4.0) <= 1e-6, "antipodal feature_distance = " + num(dist) + ", want 4");

  const double dl = dice_loss(ones, zeros, 1.0);
  need(std::abs(dl - 16.0 / 17.0) <= 1e-12,
       "dice(ones, zeros, 16 voxels) = " + num(dl) + ", want 16/17");

  return "sim = exp(-1), antipodal distance = 4, empty-target dice = 16/17";
}

// ---------------------------------------------------------------------------
// criterion 3: selection vs brute-force reference

using Embeds = std::map<std::string, std::vector<double>>;

std::vector<std::pair<std::string, double>> oracle_select(const Embeds& u, const Embeds& t,
                                                          int k, int p) {
  std::vector<std::pair<std::string, double>> scored;
  for (const auto& [uid, uv] : u) {
    std::vector<double> d;
    for (const auto& [tid, tv] : t) {
      double s = 0;
      for (std::size_t i = 0; i < uv.size(); ++i) {
        const double diff = uv[i] - tv[i];
        s += diff * diff;
      }
      d.push_back(s);
    }
    std::sort(d.begin(), d.end());
    const int take = std::min<int>(p, static_cast<int>(d.size()));
    double score = 0;
    for (int i = 0; i < take; ++i) score += d[static_cast<std::size_t>(i)];
    scored.emplace_back(uid, score);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second < b.second;
    return a.first < b.first;
  });
  if (static_cast<int>(scored.size()) > k) scored.resize(static_cast<std::size_t>(k));
  return scored;
}

std::string c3_selection_oracle() {
  Stopwatch sw;
  Rng rng(123);
  int tie_instances = 0;
  for (int inst = 0; inst < 200; ++inst) {
    const int nt = 1 + static_cast<int>(rng.uniform_int(20));
    const int nu = 1 + static_cast<int>(rng.uniform_int(50));
    const int dim = 1 + static_cast<int>(rng.uniform_int(8));
    const bool quantized = inst % 2 == 1;  // half the instances are tie-heavy
    tie_instances += quantized;

    Embeds t, u;
    auto vec = [&](int d) {
      std::vector<double> v(static_cast<std::size_t>(d));
      for (auto& x : v) x = quantized ? static_cast<double>(rng.uniform_int(3)) : rng.normal();
      return v;
    };
    for (int i = 0; i < nt; ++i) t["t" + std::to_string(i)] = vec(dim);
    for (int i = 0; i < nu; ++i) u["u" + std::to_string(i)] = vec(dim);

    const int k = 1 + static_cast<int>(rng.uniform_int(nu + 3));
    const int p = 1 + static_cast<int>(rng.uniform_int(nt + 2));

    const ProximityGraph g = build_graph(u, t);
    const auto got = select_candidates(g, k, p);
    const auto want = oracle_select(u, t, k, p);

    need(got.size() == want.size(), "instance " + std::to_string(inst) + ": size mismatch");
    for (std::size_t i = 0; i < got.size(); ++i) {
      need(got[i].first == want[i].first,
           "instance " + std::to_string(inst) + ": id[" + std::to_string(i) + "] = " +
               got[i].first + ", want " + want[i].first);
      need(std::abs(got[i].second - want[i].second) <=
               1e-12 * std::max(1.0, std::abs(want[i].second)),
           "instance " + std::to_string(inst) + ": score mismatch at rank " + std::to_string(i));
    }
  }
  const double secs = sw.seconds();
  need(secs < 60.0, "selection checks took " + num(secs) + " s, budget is 60");
  return "200 instances (" + std::to_string(tie_instances) + " tie-heavy), ids and scores match; " +
         num(secs) + " s";
}

// ---------------------------------------------------------------------------
// criterion 4: the worked selection instance

std::string c4_worked_instance() {
  const Embeds t = {{"t1", {0.0, 0.0}}, {"t2", {1.0, 0.0}}};
  const Embeds u = {{"u1", {0.2, 0.0}}, {"u2", {5.0, 5.0}}, {"u3", {0.9, 0.0}}};
  const ProximityGraph g = build_graph(u, t);
  const auto sel = select_candidates(g, 2, 2);
  need(sel.size() == 2, "selected " + std::to_string(sel.size()) + " ids, want 2");
  need(sel[0].first == "u1" && sel[1].first == "u3",
       "selected [" + sel[0].first + ", " + sel[1].first + "], want [u1, u3]");
  need(std::abs(sel[0].second - 0.68) <= 1e-12, "u1 score " + num(sel[0].second) + ", want 0.68");
  need(std::abs(sel[1].second - 0.82) <= 1e-12, "u3 score " + num(sel[1].second) + ", want 0.82");
  return "ranked [u1, u3] with scores [0.68, 0.82]";
}

// ---------------------------------------------------------------------------
// criterion 5: promotion schedule conformance on live runs

std::string c5_promotion_coverage() {
  Stopwatch sw;
  Rng rng(31);

  auto sample_at = [&](const std::string& id, bool labeled) {
    Sample s;
    s.id = id;
    NdArray v({8, 8});
    for (std::int64_t i = 0; i < v.size(); ++i) v[i] = rng.normal();
    s.volume = make_volume(std::move(v));
    if (labeled) {
      s.mask = Mask{rand_binary({8, 8}, rng)};
      s.provenance = Provenance::Labeled;
    }
    return s;
  };

  RunConfig cfg;
  cfg.seed_set = true;
  cfg.reproducible = true;
  cfg.model = toy_model_config();
  cfg.trainer.n = 1;
  cfg.trainer.p = 1;
  cfg.trainer.initial_epochs = 0;
  cfg.trainer.patience = 1;
  cfg.trainer.batch_size = 8;
  cfg.trainer.val_fraction = 0.0;
  cfg.trainer.lr = 1e-3;

  int runs = 0;
  for (const std::int64_t m : {5, 50, 101}) {
    for (const std::int64_t k : {2, 10, 20}) {
      const std::string tag = "m" + std::to_string(m) + "_k" + std::to_string(k);
      DatasetPool pool;
      std::vector<std::string> all_ids;
      pool.training.push_back(sample_at(tag + "_t0", true));
      pool.training.push_back(sample_at(tag + "_t1", true));
      for (std::int64_t i = 0; i < m; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "u%03lld", static_cast<long long>(i));
        pool.unlabeled.push_back(sample_at(buf, false));
        all_ids.push_back(buf);
      }

      RunConfig c = cfg;
      c.seed = 1000 + static_cast<std::uint64_t>(10 * m + k);
      c.trainer.k = static_cast<int>(k);
      const fs::path dir = scratch() / "c5" / tag;
      const RunResult res = run(c, std::move(pool), {}, {}, dir);

      const std::int64_t want_cycles = (m + k - 1) / k;
      const auto sched = promotion_schedule(m, k);
      need(static_cast<std::int64_t>(sched.size()) == want_cycles,
           tag + ": schedule has " + std::to_string(sched.size()) + " cycles");
      need(static_cast<std::int64_t>(res.cycles.size()) == want_cycles,
           tag + ": run executed " + std::to_string(res.cycles.size()) + " cycles, want " +
               std::to_string(want_cycles));

      std::vector<std::string> promoted;
      for (std::size_t i = 0; i < res.cycles.size(); ++i) {
        need(static_cast<std::int64_t>(res.cycles[i].selected_ids.size()) == sched[i],
             tag + ": cycle " + std::to_string(i + 1) + " promoted " +
                 std::to_string(res.cycles[i].selected_ids.size()) + ", schedule says " +
                 std::to_string(sched[i]));
        for (const auto& id : res.cycles[i].selected_ids) promoted.push_back(id);
      }
      std::sort(promoted.begin(), promoted.end());
      need(std::set<std::string>(promoted.begin(), promoted.end()).size() == promoted.size(),
           tag + ": an id was promoted more than once");
      need(promoted == all_ids, tag + ": promoted ids differ from the unlabeled pool");
      ++runs;
    }
  }

  // the schedule arithmetic at production scale, checked without a run
  const auto big = promotion_schedule(2901, 200);
  need(big.size() == 15, "schedule(2901, 200) has " + std::to_string(big.size()) + " cycles");
  for (std::size_t i = 0; i + 1 < big.size(); ++i)
    need(big[i] == 200, "schedule(2901, 200) cycle " + std::to_string(i + 1) + " is not 200");
  need(big.back() == 101, "schedule(2901, 200) final promotion is " + std::to_string(big.back()));

  return std::to_string(runs) + " live runs cover every pool exactly once; 2901/200 gives 15 "
         "cycles ending in 101; " + num(sw.seconds()) + " s";
}

// ---------------------------------------------------------------------------
// criterion 6: alpha = 0 collapses onto the no-consistency arm

RunConfig small_run_config(std::uint64_t seed) {
  RunConfig c;
  c.seed = seed;
  c.seed_set = true;
  c.reproducible = true;
  c.synth.n_labeled = 3;
  c.synth.n_unlabeled = 6;
  c.synth.n_test = 2;
  c.synth.image_size = {32, 32};
  c.synth.lesion_radius_min = 3.0;
  c.synth.lesion_radius_max = 6.0;
  c.model.base_filters = 4;
  c.model.depth = 2;
  c.model.patch_size = {16, 16};
  c.trainer.k = 3;
  c.trainer.n = 1;
  c.trainer.p = 2;
  c.trainer.initial_epochs = 2;
  c.trainer.patience = 5;
  c.trainer.batch_size = 2;
  c.trainer.val_fraction = 0.25;
  c.trainer.lr = 1e-3;
  return c;
}

RunResult run_small(const RunConfig& c, const fs::path& dir) {
  SynthResult r = synthesize_dataset(c.synth, c.seed);
  for (auto& s : r.pool.training) normalize_intensities(s.volume);
  for (auto& s : r.pool.unlabeled) normalize_intensities(s.volume);
  for (auto& s : r.test) normalize_intensities(s.volume);
  std::vector<Sample> validation = split_validation(r.pool, c.trainer.val_fraction);
  return run(c, std::move(r.pool), std::move(validation), r.test, dir);
}

std::string c6_alpha_zero() {
  RunConfig a = small_run_config(9);
  a.trainer.strategy = Strategy::NoCr;
  RunConfig b = small_run_config(9);
  b.trainer.strategy = Strategy::Popcorn;
  b.trainer.alpha = 0.0;

  const fs::path da = scratch() / "c6_nocr", db = scratch() / "c6_alpha0";
  run_small(a, da);
  run_small(b, db);

  int compared = 0;
  for (const char* f :
       {"cycle_0000.ckpt", "cycle_0001.ckpt", "cycle_0002.ckpt", "final.ckpt"}) {
    const fs::path rel = fs::path("checkpoints") / f;
    need(fs::exists(da / rel) && fs::exists(db / rel), std::string(f) + " missing");
    need(files_equal(da / rel, db / rel), std::string(f) + " differs between the two arms");
    ++compared;
  }
  return std::to_string(compared) + " checkpoints bit-identical under a shared seed";
}

// ---------------------------------------------------------------------------
// criterion 7: exact Wilcoxon distribution

// Full 2^n sign enumeration over doubled midranks; two-sided tail doubled
// and clipped at 1, the same convention the fast path implements.
double enumerate_p(const std::vector<double>& d0) {
  std::vector<double> d;
  for (double x : d0)
    if (x != 0.0) d.push_back(x);
  const std::size_t n = d.size();
  std::vector<std::size_t> ord(n);
  for (std::size_t i = 0; i < n; ++i) ord[i] = i;
  std::sort(ord.begin(), ord.end(),
            [&](std::size_t x, std::size_t y) { return std::fabs(d[x]) < std::fabs(d[y]); });
  std::vector<std::int64_t> rank2(n, 0);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && std::fabs(d[ord[j]]) == std::fabs(d[ord[i]])) ++j;
    for (std::size_t k = i; k < j; ++k) rank2[ord[k]] = static_cast<std::int64_t>(i + 1 + j);
    i = j;
  }
  std::int64_t wp = 0, wm = 0;
  for (std::size_t i = 0; i < n; ++i) (d[i] > 0 ? wp : wm) += rank2[i];
  const std::int64_t w = std::min(wp, wm);
  std::int64_t count = 0;
  for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << n); ++bits) {
    std::int64_t s = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (bits & (std::uint64_t{1} << i)) s += rank2[i];
    if (s <= w) ++count;
  }
  return std::min(1.0, 2.0 * static_cast<double>(count) / std::pow(2.0, static_cast<double>(n)));
}

std::string c7_wilcoxon_exact() {
  Rng rng(777);
  for (int inst = 0; inst < 100; ++inst) {
    const int n = 5 + static_cast<int>(rng.uniform_int(6));  // 5..10
    std::vector<double> a(static_cast<std::size_t>(n)), b(static_cast<std::size_t>(n), 0.0);
    bool untied = true;
    do {
      for (auto& x : a) x = rng.normal() + 0.3;
      std::set<double> mags;
      untied = true;
      for (double x : a) untied = untied && x != 0.0 && mags.insert(std::fabs(x)).second;
    } while (!untied);

    const WilcoxonResult r = wilcoxon_signed_rank(a, b);
    const double expect = enumerate_p(a);
    need(r.p_value == expect, "instance " + std::to_string(inst) + ": p = " + num(r.p_value) +
                                  ", enumeration gives " + num(expect));
  }

  // six strictly positive differences: W- = 0, p = 2 / 2^6
  const std::vector<double> pos = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  const std::vector<double> zero6(6, 0.0);
  const WilcoxonResult r6 = wilcoxon_signed_rank(pos, zero6);
  need(r6.statistic == 0.0, "all-positive n=6 statistic is " + num(r6.statistic));
  need(r6.p_value == 0.03125, "all-positive n=6 p is " + num(r6.p_value) + ", want 0.03125");

  // below five usable differences the test refuses to conclude
  const std::vector<double> few = {0.4, -0.2, 0.9, 0.1};
  const WilcoxonResult r4 = wilcoxon_signed_rank(few, std::vector<double>(4, 0.0));
  need(r4.inconclusive && r4.p_value == 1.0, "n=4 must be inconclusive with p = 1");
  need(!significant(r4), "inconclusive result must never be significant");

  return "100 untied vectors match 2^n enumeration exactly; n=6 all-positive p = 0.03125";
}

// ---------------------------------------------------------------------------
// criterion 8: SIGKILL mid-run, then resume

int shell(const std::string& cmd) {
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string c8_kill_and_resume() {
  Stopwatch sw;
  const fs::path root = scratch() / "c8";
  fs::create_directories(root);
  const fs::path cfg_path = root / "config.json";
  const fs::path data = root / "data";
  const fs::path run_full = root / "run_full";
  const fs::path run_kill = root / "run_kill";

  const json cfg = {
      {"dataset_dir", data.string()},
      {"synth",
       {{"n_labeled", 3},
        {"n_unlabeled", 12},
        {"n_test", 2},
        {"image_size", {48, 48}},
        {"lesion_radius_min", 3.0},
        {"lesion_radius_max", 6.0}}},
      {"model", {{"base_filters", 4}, {"depth", 2}, {"patch_size", {16, 16}}}},
      {"trainer",
       {{"k", 2},
        {"n", 2},
        {"p", 2},
        {"initial_epochs", 2},
        {"patience", 5},
        {"batch_size", 2},
        {"val_fraction", 0.25},
        {"lr", 1e-3}}}};
  {
    std::ofstream f(cfg_path);
    f << cfg.dump(2) << "\n";
  }

  const std::string cli = POPCORN_CLI_PATH;
  const std::string common = " --config " + cfg_path.string() + " --seed 5 ";
  need(shell(cli + " synth-data" + common + "--out " + data.string() + " > /dev/null") == 0,
       "synth-data failed");
  need(shell(cli + " train" + common + "--reproducible --out " + run_full.string() +
             " > /dev/null") == 0,
       "reference run failed");

  const pid_t pid = fork();
  need(pid >= 0, "fork failed");
  if (pid == 0) {
    // child: quiet stdout, then exec the trainer
    if (!freopen("/dev/null", "w", stdout)) _exit(127);
    execl(cli.c_str(), cli.c_str(), "train", "--config", cfg_path.string().c_str(), "--seed",
          "5", "--reproducible", "--out", run_kill.string().c_str(), (char*)nullptr);
    _exit(127);
  }

  // SIGKILL as soon as the first cycle line lands; with six cycles ahead the
  // child cannot have finished, so the kill interrupts live work.
  const fs::path log = run_kill / "cycles.jsonl";
  bool saw_line = false;
  for (int i = 0; i < 6000; ++i) {
    int st = 0;
    need(waitpid(pid, &st, WNOHANG) == 0, "training exited before it could be interrupted");
    if (fs::exists(log)) {
      std::ifstream f(log);
      std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
      if (text.find('\n') != std::string::npos) {
        saw_line = true;
        break;
      }
    }
    usleep(10000);
  }
  need(saw_line, "no cycle completed within 60 s");
  need(kill(pid, SIGKILL) == 0, "kill failed");
  int st = 0;
  need(waitpid(pid, &st, 0) == pid, "waitpid failed");
  need(WIFSIGNALED(st) && WTERMSIG(st) == SIGKILL, "child was not killed as intended");

  need(shell(cli + " train --resume --out " + run_kill.string() + " > /dev/null") == 0,
       "resume after kill failed");

  for (const char* f : {"cycles.jsonl", "epochs.jsonl", "checkpoints/final.ckpt"}) {
    need(files_equal(run_full / f, run_kill / f),
         std::string(f) + " differs from the uninterrupted run");
  }
  return "killed after the first cycle line; resumed logs and final checkpoint byte-identical; " +
         num(sw.seconds()) + " s";
}

// ---------------------------------------------------------------------------
// criterion 9: the synthetic comparison study

void print_indented(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) std::printf("    %s\n", line.c_str());
}

std::string c9_study() {
  Stopwatch sw;
  RunConfig base = load_run_config(POPCORN_STUDY_CONFIG);
  base.reproducible = true;

  const auto schedule = promotion_schedule(base.synth.n_unlabeled, base.trainer.k);
  const int half_cap = std::max<int>(1, static_cast<int>(schedule.size()) / 2);

  struct ArmSpec {
    const char* label;
    Strategy strategy;
    int max_cycles;
  };
  const std::vector<ArmSpec> arms = {
      {"popcorn", Strategy::Popcorn, 0},       {"popcorn-half", Strategy::Popcorn, half_cap},
      {"no-cr", Strategy::NoCr, 0},            {"random-select", Strategy::RandomSelect, 0},
      {"baseline", Strategy::Baseline, 0},     {"baseline-cr", Strategy::BaselineCr, 0},
  };

  const fs::path root = scratch() / "study";
  int wins = 0, significant_seeds = 0;
  std::ostringstream verdicts;

  for (const std::uint64_t seed : {1, 2, 3}) {
    const fs::path seed_dir = root / ("seed_" + std::to_string(seed));
    const fs::path data_dir = seed_dir / "data";
    RunConfig cfg = base;
    cfg.seed = seed;
    cfg.seed_set = true;

    const SynthResult synth = synthesize_dataset(cfg.synth, seed);
    write_dataset(data_dir, synth, cfg.synth, seed);
    const LoadedDataset ds = load_dataset(data_dir);

    std::vector<StrategyResult> results;
    for (const ArmSpec& arm : arms) {
      RunConfig ac = cfg;
      ac.trainer.strategy = arm.strategy;
      ac.trainer.max_cycles = arm.max_cycles;
      ac.eval_label = arm.label;

      DatasetPool pool = ds.pool;
      std::vector<Sample> validation = split_validation(pool, ac.trainer.val_fraction);
      const fs::path run_dir = seed_dir / ("run_" + std::string(arm.label));
      const RunResult res = run(ac, std::move(pool), std::move(validation), ds.test, run_dir);

      std::vector<ImageMetrics> per;
      for (const Sample& s : ds.test) {
        const Mask pred = predict_mask(res.model, s.volume, ac.trainer.threshold);
        per.push_back(image_metrics(s.id, pred, *s.mask));
      }

      std::vector<std::pair<std::int64_t, double>> curve;
      {
        std::ifstream f(run_dir / "initial.json");
        json j;
        f >> j;
        curve.emplace_back(0, j.at("test_dice").get<double>());
      }
      for (const CycleLog& c : res.cycles) curve.emplace_back(c.cycle, c.test_dice.value());

      results.push_back(make_strategy_result(arm.label, strategy_name(arm.strategy),
                                             std::move(per), std::move(curve)));
    }

    const std::string table = build_report(results, seed_dir / "report");
    std::printf("    --- seed %llu ---\n", static_cast<unsigned long long>(seed));
    print_indented(table);

    const auto find = [&](const std::string& label) -> const StrategyResult& {
      for (const auto& r : results)
        if (r.label == label) return r;
      throw Failure("missing arm " + label);
    };
    const StrategyResult& pop = find("popcorn");
    const StrategyResult& ref = find("baseline");
    need(pop.test_ids == ref.test_ids, "test id lists diverged between arms");

    std::vector<double> pd, bd;
    for (const auto& m : pop.per_image) pd.push_back(m.dice);
    for (const auto& m : ref.per_image) bd.push_back(m.dice);
    const WilcoxonResult w = wilcoxon_signed_rank(pd, bd);

    const bool win = pop.mean_dice > ref.mean_dice;
    wins += win;
    significant_seeds += significant(w);

    std::vector<const StrategyResult*> order;
    for (const auto& r : results) order.push_back(&r);
    std::sort(order.begin(), order.end(),
              [](const StrategyResult* a, const StrategyResult* b) {
                return a->mean_dice > b->mean_dice;
              });
    std::ostringstream ol;
    ol << "ordering (reported, not asserted):";
    for (const auto* r : order) ol << " " << r->label << " " << num(r->mean_dice);
    std::printf("    %s\n", ol.str().c_str());
    std::printf("    popcorn vs baseline: mean %s vs %s, wilcoxon p = %s (n = %d)\n",
                num(pop.mean_dice).c_str(), num(ref.mean_dice).c_str(), num(w.p_value).c_str(),
                w.n_nonzero);
    verdicts << " seed " << seed << ": " << (win ? "win" : "loss") << " p " << num(w.p_value)
             << ";";
  }

  const double secs = sw.seconds();
  need(wins >= 2, "popcorn beat baseline in only " + std::to_string(wins) + "/3 seeds");
  need(significant_seeds >= 1, "no seed reached p < 0.05");
  need(secs <= 2700.0, "study took " + num(secs) + " s, budget is 2700");
  return "wins " + std::to_string(wins) + "/3, significant " +
         std::to_string(significant_seeds) + "/3;" + verdicts.str() + " " + num(secs) +
         " s; reports under " + (root).string();
}

// ---------------------------------------------------------------------------
// criterion 10: dice as the harmonic mean of precision and sensitivity

std::string c10_harmonic_identity() {
  Rng rng(77);
  int checked = 0;
  for (int t = 0; t < 500; ++t) {
    const Shape shape = {1 + rng.uniform_int(64)};
    const double dp = rng.uniform(), dt = rng.uniform();
    NdArray pv(shape), tv(shape);
    for (std::int64_t i = 0; i < pv.size(); ++i) pv[i] = rng.uniform() < dp ? 1.0 : 0.0;
    for (std::int64_t i = 0; i < tv.size(); ++i) tv[i] = rng.uniform() < dt ? 1.0 : 0.0;
    if (t % 7 == 0) pv = NdArray(shape, 0.0);
    if (t % 11 == 0) tv = NdArray(shape, 0.0);

    const ImageMetrics m = image_metrics("x", Mask{pv}, Mask{tv});
    const double p = m.precision, s = m.sensitivity;
    if (p + s > 0.0) {
      const double harmonic = 2.0 * p * s / (p + s);
      need(std::abs(m.dice - harmonic) <= 1e-12,
           "instance " + std::to_string(t) + ": dice " + num(m.dice) + " vs harmonic " +
               num(harmonic));
      ++checked;
    }
  }

  const NdArray empty({4}, 0.0), full({4}, 1.0);
  const ImageMetrics both = image_metrics("e", Mask{empty}, Mask{empty});
  need(both.dice == 1.0 && both.precision == 1.0 && both.sensitivity == 1.0 && both.flagged,
       "all-empty pair must score flagged 1.0 across the board");
  const ImageMetrics pe = image_metrics("p", Mask{empty}, Mask{full});
  need(pe.precision == 1.0 && pe.flagged && pe.sensitivity == 0.0 && pe.dice == 0.0,
       "empty prediction convention violated");
  const ImageMetrics te = image_metrics("t", Mask{full}, Mask{empty});
  need(te.sensitivity == 1.0 && te.flagged && te.precision == 0.0 && te.dice == 0.0,
       "empty truth convention violated");

  return std::to_string(checked) + "/500 pairs had a defined harmonic mean, all within 1e-12; "
         "empty-mask conventions exact";
}

}  // namespace

int main() {
  scratch();  // reset the workspace once

  struct Entry {
    int number;
    const char* name;
    std::function<std::string()> body;
  };
  const std::vector<Entry> entries = {
      {1, "analytic gradients match finite differences", c1_gradients},
      {2, "closed-form loss values", c2_closed_forms},
      {3, "candidate selection matches brute force", c3_selection_oracle},
      {4, "worked selection instance", c4_worked_instance},
      {5, "promotion schedule covers the pool", c5_promotion_coverage},
      {6, "alpha zero equals the no-consistency arm", c6_alpha_zero},
      {7, "exact wilcoxon matches sign enumeration", c7_wilcoxon_exact},
      {8, "killed run resumes to the identical state", c8_kill_and_resume},
      {9, "synthetic study favors progressive training", c9_study},
      {10, "dice is the precision/sensitivity harmonic mean", c10_harmonic_identity},
  };

  int failed = 0;
  for (const Entry& e : entries) {
    std::string detail;
    bool ok = true;
    try {
      detail = e.body();
    } catch (const std::exception& ex) {
      ok = false;
      detail = ex.what();
    }
    std::printf("%s  criterion %2d  %-48s  %s\n", ok ? "PASS" : "FAIL", e.number, e.name,
                detail.c_str());
    std::fflush(stdout);
    failed += !ok;
  }

  if (failed) std::printf("%d of %zu criteria failed\n", failed, entries.size());
  else std::printf("all %zu criteria passed\n", entries.size());
  return failed == 0 ? 0 : 1;
}
