#include "popcorn/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "popcorn/errors.hpp"

namespace popcorn {

using nlohmann::json;

namespace {

void fill_scores(ImageMetrics& m) {
  if (m.tp + m.fp + m.fn == 0) {
    m.dice = m.precision = m.sensitivity = 1.0;
    m.flagged = true;
    return;
  }
  m.dice = 2.0 * static_cast<double>(m.tp) / static_cast<double>(2 * m.tp + m.fp + m.fn);
  if (m.tp + m.fp > 0) {
    m.precision = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
  } else {
    m.precision = 1.0;
    m.flagged = true;
  }
  if (m.tp + m.fn > 0) {
    m.sensitivity = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
  } else {
    m.sensitivity = 1.0;
    m.flagged = true;
  }
}

}  // namespace

ImageMetrics image_metrics(const std::string& id, const Mask& pred, const Mask& truth) {
  if (pred.voxels.shape != truth.voxels.shape)
    throw DataError("image_metrics: shape mismatch for '" + id + "': " +
                    shape_str(pred.voxels.shape) + " vs " + shape_str(truth.voxels.shape));
  ImageMetrics m;
  m.id = id;
  for (std::int64_t i = 0; i < pred.voxels.size(); ++i) {
    const bool p = pred.voxels[i] != 0.0;
    const bool t = truth.voxels[i] != 0.0;
    if (p && t)
      ++m.tp;
    else if (p && !t)
      ++m.fp;
    else if (!p && t)
      ++m.fn;
  }
  fill_scores(m);
  return m;
}

ImageMetrics pooled_metrics(std::span<const ImageMetrics> per_image) {
  ImageMetrics m;
  m.id = "pooled";
  for (const auto& x : per_image) {
    m.tp += x.tp;
    m.fp += x.fp;
    m.fn += x.fn;
  }
  fill_scores(m);
  return m;
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw Error("wilcoxon_signed_rank: samples must have equal length");
  std::vector<double> d;
  d.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double di = a[i] - b[i];
    if (di != 0.0) d.push_back(di);
  }

  WilcoxonResult r;
  r.n_nonzero = static_cast<int>(d.size());
  if (d.size() < 5) {
    r.inconclusive = true;
    return r;
  }
  const std::size_t n = d.size();

  std::vector<std::size_t> ord(n);
  std::iota(ord.begin(), ord.end(), 0);
  std::sort(ord.begin(), ord.end(),
            [&](std::size_t x, std::size_t y) { return std::fabs(d[x]) < std::fabs(d[y]); });

  // doubled midranks: a tied group at 1-based positions i+1..j gets i+1+j,
  // which keeps all rank arithmetic in integers
  std::vector<std::int64_t> rank2(n, 0);
  std::vector<std::size_t> tie_sizes;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && std::fabs(d[ord[j]]) == std::fabs(d[ord[i]])) ++j;
    const auto doubled = static_cast<std::int64_t>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) rank2[ord[k]] = doubled;
    tie_sizes.push_back(j - i);
    i = j;
  }

  std::int64_t wplus2 = 0, wminus2 = 0;
  for (std::size_t i = 0; i < n; ++i) (d[i] > 0.0 ? wplus2 : wminus2) += rank2[i];
  const std::int64_t w2 = std::min(wplus2, wminus2);
  r.statistic = static_cast<double>(w2) / 2.0;

  if (n <= 15) {
    // exact permutation distribution of the doubled statistic
    const std::int64_t total2 = static_cast<std::int64_t>(n) * static_cast<std::int64_t>(n + 1);
    std::vector<std::uint64_t> ways(static_cast<std::size_t>(total2) + 1, 0);
    ways[0] = 1;
    for (std::size_t i = 0; i < n; ++i) {
      const std::int64_t rk = rank2[i];
      for (std::int64_t s = total2 - rk; s >= 0; --s)
        ways[static_cast<std::size_t>(s + rk)] += ways[static_cast<std::size_t>(s)];
    }
    std::uint64_t cum = 0;
    for (std::int64_t s = 0; s <= w2; ++s) cum += ways[static_cast<std::size_t>(s)];
    const double p = 2.0 * static_cast<double>(cum) / std::pow(2.0, static_cast<double>(n));
    r.p_value = std::min(1.0, p);
  } else {
    const double nn = static_cast<double>(n);
    const double mean = nn * (nn + 1.0) / 4.0;
    double tie_term = 0.0;
    for (std::size_t t : tie_sizes) {
      const double td = static_cast<double>(t);
      tie_term += td * td * td - td;
    }
    const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
    if (var <= 0.0) {
      r.inconclusive = true;
      return r;
    }
    const double z = (r.statistic - mean + 0.5) / std::sqrt(var);
    r.p_value = std::min(1.0, std::erfc(-z / std::sqrt(2.0)));
  }
  return r;
}

bool significant(const WilcoxonResult& r) { return !r.inconclusive && r.p_value < 0.05; }

StrategyResult make_strategy_result(std::string label, std::string strategy,
                                    std::vector<ImageMetrics> per_image,
                                    std::vector<std::pair<std::int64_t, double>> curve) {
  if (per_image.empty()) throw DataError("make_strategy_result: no per-image metrics");
  StrategyResult r;
  r.label = std::move(label);
  r.strategy = std::move(strategy);
  r.per_image = std::move(per_image);
  std::sort(r.per_image.begin(), r.per_image.end(),
            [](const ImageMetrics& x, const ImageMetrics& y) { return x.id < y.id; });
  for (std::size_t i = 1; i < r.per_image.size(); ++i)
    if (r.per_image[i].id == r.per_image[i - 1].id)
      throw DataError("make_strategy_result: duplicate test id '" + r.per_image[i].id + "'");
  for (const auto& m : r.per_image) {
    r.test_ids.push_back(m.id);
    r.mean_dice += m.dice;
    r.mean_precision += m.precision;
    r.mean_sensitivity += m.sensitivity;
  }
  const auto n = static_cast<double>(r.per_image.size());
  r.mean_dice /= n;
  r.mean_precision /= n;
  r.mean_sensitivity /= n;
  r.pooled = pooled_metrics(r.per_image);
  r.curve = std::move(curve);
  return r;
}

namespace {

json metrics_to_json(const ImageMetrics& m) {
  return json{{"id", m.id},          {"tp", m.tp},
              {"fp", m.fp},          {"fn", m.fn},
              {"dice", m.dice},      {"precision", m.precision},
              {"sensitivity", m.sensitivity}, {"flagged", m.flagged}};
}

ImageMetrics metrics_from_json(const json& j) {
  ImageMetrics m;
  m.id = j.at("id").get<std::string>();
  m.tp = j.at("tp").get<std::int64_t>();
  m.fp = j.at("fp").get<std::int64_t>();
  m.fn = j.at("fn").get<std::int64_t>();
  m.dice = j.at("dice").get<double>();
  m.precision = j.at("precision").get<double>();
  m.sensitivity = j.at("sensitivity").get<double>();
  m.flagged = j.at("flagged").get<bool>();
  return m;
}

}  // namespace

json strategy_result_to_json(const StrategyResult& r) {
  json per = json::array();
  for (const auto& m : r.per_image) per.push_back(metrics_to_json(m));
  json curve = json::array();
  for (const auto& [c, v] : r.curve) curve.push_back(json::array({c, v}));
  return json{{"label", r.label},
              {"strategy", r.strategy},
              {"test_ids", r.test_ids},
              {"per_image", per},
              {"pooled", metrics_to_json(r.pooled)},
              {"mean_image_level",
               {{"dice", r.mean_dice},
                {"precision", r.mean_precision},
                {"sensitivity", r.mean_sensitivity}}},
              {"curve", curve}};
}

StrategyResult strategy_result_from_json(const json& j) {
  try {
    std::vector<ImageMetrics> per;
    for (const auto& m : j.at("per_image")) per.push_back(metrics_from_json(m));
    std::vector<std::pair<std::int64_t, double>> curve;
    for (const auto& c : j.at("curve"))
      curve.emplace_back(c.at(0).get<std::int64_t>(), c.at(1).get<double>());
    StrategyResult r = make_strategy_result(j.at("label").get<std::string>(),
                                            j.at("strategy").get<std::string>(),
                                            std::move(per), std::move(curve));
    if (r.test_ids != j.at("test_ids").get<std::vector<std::string>>())
      throw DataError("strategy result: test_ids do not match per_image entries");
    return r;
  } catch (const json::exception& e) {
    throw DataError("malformed strategy result: " + std::string(e.what()));
  }
}

ArmDescription describe_arm(const std::string& strategy) {
  if (strategy == "baseline") return {"Lab", "None"};
  if (strategy == "baseline-cr") return {"Lab", "Lab"};
  if (strategy == "no-cr") return {"Lab+Pseudo", "None"};
  if (strategy == "random-select") return {"Lab+Pseudo", "Lab+Pseudo"};
  if (strategy == "popcorn") return {"Lab+Pseudo", "Lab+Pseudo"};
  return {"?", "?"};
}

namespace {

std::string fmt(double v, const char* spec = "%.4f") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::trunc);
  if (!f) throw DataError("cannot write " + p.string());
  f << text;
  if (!f) throw DataError("write failed: " + p.string());
}

std::string pad(const std::string& s, std::size_t w) {
  return s.size() >= w ? s : s + std::string(w - s.size(), ' ');
}

}  // namespace

std::string build_report(const std::vector<StrategyResult>& results,
                         const std::filesystem::path& out_dir) {
  if (results.empty()) throw DataError("build_report: no results");
  for (const auto& r : results)
    if (r.test_ids != results.front().test_ids)
      throw DataError("build_report: '" + r.label + "' covers a different test set than '" +
                      results.front().label + "'");

  std::vector<std::size_t> order(results.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (results[a].mean_dice != results[b].mean_dice)
      return results[a].mean_dice > results[b].mean_dice;
    return results[a].label < results[b].label;
  });

  std::vector<std::vector<std::string>> rows;
  rows.push_back({"Rank", "Strategy", "Trained on", "CR on", "Dice", "Precision",
                  "Sensitivity", "Pooled dice"});
  std::string tsv = "rank\tstrategy\ttrained_on\tcr_on\tmean_dice\tmean_precision"
                    "\tmean_sensitivity\tpooled_dice\tpooled_precision\tpooled_sensitivity\n";
  for (std::size_t k = 0; k < order.size(); ++k) {
    const StrategyResult& r = results[order[k]];
    const ArmDescription arm = describe_arm(r.strategy);
    rows.push_back({std::to_string(k + 1), r.label, arm.trained_on, arm.cr_on,
                    fmt(r.mean_dice), fmt(r.mean_precision), fmt(r.mean_sensitivity),
                    fmt(r.pooled.dice)});
    tsv += std::to_string(k + 1) + "\t" + r.label + "\t" + arm.trained_on + "\t" + arm.cr_on +
           "\t" + fmt(r.mean_dice) + "\t" + fmt(r.mean_precision) + "\t" +
           fmt(r.mean_sensitivity) + "\t" + fmt(r.pooled.dice) + "\t" +
           fmt(r.pooled.precision) + "\t" + fmt(r.pooled.sensitivity) + "\n";
  }

  std::vector<std::size_t> widths(rows[0].size(), 0);
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], row[c].size());
  std::string table;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c)
      table += pad(row[c], widths[c] + (c + 1 < row.size() ? 2 : 0));
    table += "\n";
  }

  // pairwise tests on per-image dice
  const std::size_t n = results.size();
  std::vector<std::vector<double>> dice(n);
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& m : results[i].per_image) dice[i].push_back(m.dice);

  std::vector<std::vector<std::string>> sig(n, std::vector<std::string>(n, "-"));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const WilcoxonResult w = wilcoxon_signed_rank(dice[i], dice[j]);
      sig[i][j] = w.inconclusive ? "n/a" : fmt(w.p_value, "%.4g") + (significant(w) ? "*" : "");
    }

  std::string sig_txt = "Pairwise signed-rank p-values on per-image dice "
                        "(*: p < 0.05; n/a: fewer than 5 nonzero differences)\n\n";
  std::string sig_tsv = "label";
  std::size_t label_w = 0;
  for (const auto& r : results) label_w = std::max(label_w, r.label.size());
  std::vector<std::size_t> col_w(n);
  for (std::size_t j = 0; j < n; ++j) {
    col_w[j] = results[j].label.size();
    for (std::size_t i = 0; i < n; ++i) col_w[j] = std::max(col_w[j], sig[i][j].size());
    sig_tsv += "\t" + results[j].label;
  }
  sig_tsv += "\n";
  sig_txt += pad("", label_w + 2);
  for (std::size_t j = 0; j < n; ++j) sig_txt += pad(results[j].label, col_w[j] + 2);
  sig_txt += "\n";
  for (std::size_t i = 0; i < n; ++i) {
    sig_txt += pad(results[i].label, label_w + 2);
    sig_tsv += results[i].label;
    for (std::size_t j = 0; j < n; ++j) {
      sig_txt += pad(sig[i][j], col_w[j] + 2);
      sig_tsv += "\t" + sig[i][j];
    }
    sig_txt += "\n";
    sig_tsv += "\n";
  }

  std::string curves = "label\tcycle\tval_dice\n";
  for (const auto& r : results)
    for (const auto& [c, v] : r.curve)
      curves += r.label + "\t" + std::to_string(c) + "\t" + fmt(v, "%.6f") + "\n";

  std::filesystem::create_directories(out_dir);
  write_file(out_dir / "table.txt", table);
  write_file(out_dir / "table.tsv", tsv);
  write_file(out_dir / "significance.txt", sig_txt);
  write_file(out_dir / "significance.tsv", sig_tsv);
  write_file(out_dir / "curves.tsv", curves);
  return table;
}

}  // namespace popcorn
