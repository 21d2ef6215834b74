#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

namespace testing {

// Direct corpus BLEU-4: BP * (prod p_n)^(1/N) over the orders that have
// hypothesis n-grams, with n-grams keyed by joined strings.
inline double bleu_oracle(const std::vector<std::vector<std::string>>& hyps,
                          const std::vector<std::vector<std::string>>& refs) {
  double num[4] = {0, 0, 0, 0}, den[4] = {0, 0, 0, 0};
  double c = 0, r = 0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    c += static_cast<double>(hyps[s].size());
    r += static_cast<double>(refs[s].size());
    for (int n = 1; n <= 4; ++n) {
      auto grams = [n](const std::vector<std::string>& w) {
        std::unordered_map<std::string, int> m;
        for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= w.size(); ++i) {
          std::string key;
          for (int k = 0; k < n; ++k) key += w[i + static_cast<std::size_t>(k)] + '\x1f';
          ++m[key];
        }
        return m;
      };
      const auto h = grams(hyps[s]);
      const auto g = grams(refs[s]);
      for (const auto& [key, count] : h) {
        den[n - 1] += count;
        auto it = g.find(key);
        num[n - 1] += it == g.end() ? 0 : std::min(count, it->second);
      }
    }
  }
  if (c == 0) return 0.0;
  double product = 1.0;
  int orders = 0;
  for (int n = 0; n < 4; ++n) {
    if (den[n] == 0) continue;
    product *= num[n] / den[n];
    ++orders;
  }
  const double bp = c < r ? std::exp(1 - r / c) : 1.0;
  return bp * std::pow(product, 1.0 / orders);
}

}  // namespace testing
