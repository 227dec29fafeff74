#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "popcorn/nd.hpp"

namespace popcorn {

// Pairwise squared euclidean distances between unlabeled and training
// embeddings. Row order follows u_ids, column order t_ids; both are the
// map's (lexicographic) key order.
struct ProximityGraph {
  NdArray distances;  // |U| x |T|
  std::vector<std::string> u_ids;
  std::vector<std::string> t_ids;
};

ProximityGraph build_graph(const std::map<std::string, std::vector<double>>& unlabeled,
                           const std::map<std::string, std::vector<double>>& training);

// Sum of the p smallest entries of row `row`, accumulated in ascending order.
// p is clamped to the row length. Lower means closer to the training set.
double proximity_score(const NdArray& distances, std::int64_t row, int p);

// The min(k, |U|) unlabeled ids with the smallest scores, ordered by
// (score, id) ascending; id breaks exact score ties.
std::vector<std::pair<std::string, double>> select_candidates(const ProximityGraph& g, int k,
                                                              int p);

}  // namespace popcorn
