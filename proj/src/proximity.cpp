#include "popcorn/proximity.hpp"

#include <algorithm>
#include <numeric>

#include "popcorn/errors.hpp"
#include "popcorn/kernels.hpp"

namespace popcorn {

ProximityGraph build_graph(const std::map<std::string, std::vector<double>>& unlabeled,
                           const std::map<std::string, std::vector<double>>& training) {
  if (unlabeled.empty()) throw DataError("build_graph: no unlabeled embeddings");
  if (training.empty()) throw DataError("build_graph: no training embeddings");
  for (const auto& [id, emb] : unlabeled)
    if (training.count(id))
      throw DataError("build_graph: id '" + id + "' appears in both unlabeled and training sets");

  ProximityGraph g;
  std::vector<std::vector<double>> u, t;
  for (const auto& [id, emb] : unlabeled) {
    g.u_ids.push_back(id);
    u.push_back(emb);
  }
  for (const auto& [id, emb] : training) {
    g.t_ids.push_back(id);
    t.push_back(emb);
  }
  const std::size_t dim = t.front().size();
  for (const auto& [id, emb] : unlabeled)
    if (emb.size() != dim)
      throw DataError("build_graph: embedding length mismatch for '" + id + "'");
  for (const auto& [id, emb] : training)
    if (emb.size() != dim)
      throw DataError("build_graph: embedding length mismatch for '" + id + "'");

  g.distances = kernels::distance_matrix(u, t);
  return g;
}

double proximity_score(const NdArray& distances, std::int64_t row, int p) {
  if (p < 1) throw ConfigError("proximity_score: p must be >= 1");
  if (distances.rank() != 2) throw Error("proximity_score: distances must be 2-D");
  const std::int64_t cols = distances.shape[1];
  if (row < 0 || row >= distances.shape[0])
    throw Error("proximity_score: row out of range");
  const auto take = static_cast<std::size_t>(std::min<std::int64_t>(p, cols));
  std::vector<double> vals(distances.data.begin() + row * cols,
                           distances.data.begin() + (row + 1) * cols);
  // ascending accumulation over the p nearest; equal values commute bitwise,
  // so the result matches a fully sorted row summed the same way
  std::partial_sort(vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(take), vals.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < take; ++i) acc += vals[i];
  return acc;
}

std::vector<std::pair<std::string, double>> select_candidates(const ProximityGraph& g, int k,
                                                              int p) {
  if (k < 1) throw ConfigError("select_candidates: k must be >= 1");
  if (p < 1) throw ConfigError("select_candidates: p must be >= 1");
  const auto n = static_cast<std::size_t>(g.distances.shape[0]);
  if (n != g.u_ids.size() || static_cast<std::size_t>(g.distances.shape[1]) != g.t_ids.size())
    throw Error("select_candidates: graph id lists do not match the matrix");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i)
    scores[i] = proximity_score(g.distances, static_cast<std::int64_t>(i), p);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] < scores[b];
    return g.u_ids[a] < g.u_ids[b];
  });

  const std::size_t take = std::min(static_cast<std::size_t>(k), n);
  std::vector<std::pair<std::string, double>> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.emplace_back(g.u_ids[order[i]], scores[order[i]]);
  return out;
}

}  // namespace popcorn
