#include "d3desk/text_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace d3desk::metrics {

namespace {

std::map<std::vector<int>, int> ngrams(const std::vector<int>& seq, int n) {
  std::map<std::vector<int>, int> out;
  for (size_t i = 0; i + static_cast<size_t>(n) <= seq.size(); ++i)
    out[std::vector<int>(seq.begin() + static_cast<long>(i),
                         seq.begin() + static_cast<long>(i + n))] += 1;
  return out;
}

}  // namespace

double bleu4(const std::vector<int>& candidate,
             const std::vector<std::vector<int>>& references, double smooth_eps) {
  if (candidate.empty() || references.empty()) return 0.0;
  const int lc = static_cast<int>(candidate.size());

  // Closest reference length; ties toward the shorter reference.
  int lr = static_cast<int>(references[0].size());
  for (const auto& r : references) {
    const int l = static_cast<int>(r.size());
    if (std::abs(l - lc) < std::abs(lr - lc) || (std::abs(l - lc) == std::abs(lr - lc) && l < lr))
      lr = l;
  }

  double log_p_sum = 0;
  for (int n = 1; n <= 4; ++n) {
    auto cand_counts = ngrams(candidate, n);
    std::map<std::vector<int>, int> max_ref;
    for (const auto& r : references)
      for (const auto& [g, c] : ngrams(r, n))
        max_ref[g] = std::max(max_ref[g], c);
    double matched = 0, total = 0;
    for (const auto& [g, c] : cand_counts) {
      total += c;
      auto it = max_ref.find(g);
      if (it != max_ref.end()) matched += std::min(c, it->second);
    }
    double p;
    if (total == 0)
      p = smooth_eps;  // candidate shorter than n
    else if (matched == 0)
      p = smooth_eps / total;
    else
      p = matched / total;
    log_p_sum += std::log(p);
  }
  const double bp = lc >= lr ? 1.0 : std::exp(1.0 - static_cast<double>(lr) / lc);
  return bp * std::exp(log_p_sum / 4.0);
}

double rouge_l(const std::vector<int>& candidate,
               const std::vector<std::vector<int>>& references, double beta) {
  if (candidate.empty() || references.empty()) return 0.0;
  double best = 0.0;
  for (const auto& ref : references) {
    if (ref.empty()) continue;
    const size_t m = candidate.size(), n = ref.size();
    std::vector<int> prev(n + 1, 0), cur(n + 1, 0);
    for (size_t i = 1; i <= m; ++i) {
      for (size_t j = 1; j <= n; ++j) {
        if (candidate[i - 1] == ref[j - 1])
          cur[j] = prev[j - 1] + 1;
        else
          cur[j] = std::max(prev[j], cur[j - 1]);
      }
      std::swap(prev, cur);
    }
    const double lcs = prev[n];
    const double prec = lcs / static_cast<double>(m);
    const double rec = lcs / static_cast<double>(n);
    if (prec > 0 && rec > 0) {
      const double f = ((1 + beta * beta) * prec * rec) / (rec + beta * beta * prec);
      best = std::max(best, f);
    }
  }
  return best;
}

}  // namespace d3desk::metrics
