// Brute-force AUC: probability a random positive outscores a random negative, ties count half.
#pragma once

#include <random>
#include <vector>

namespace decg::testing {

inline double pairwise_auc(const std::vector<double>& scores, const std::vector<bool>& positives) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!positives[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (positives[j]) continue;
      ++pairs;
      wins += scores[i] > scores[j] ? 1.0 : scores[i] == scores[j] ? 0.5 : 0.0;
    }
  }
  return wins / static_cast<double>(pairs);
}

struct RocInstance {
  std::vector<double> scores;
  std::vector<bool> positives;
};

/// 2..40 samples with both labels present; every other instance draws scores from a
/// coarse grid so ties are common.
inline RocInstance random_roc_instance(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> size(2, 40), grid(0, 5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const bool coarse = u(rng) < 0.5;
  RocInstance r;
  const int n = size(rng);
  for (int i = 0; i < n; ++i) {
    r.scores.push_back(coarse ? grid(rng) / 5.0 : u(rng));
    r.positives.push_back(u(rng) < 0.4);
  }
  r.positives[0] = true;
  r.positives[1] = false;
  return r;
}

}  // namespace decg::testing
