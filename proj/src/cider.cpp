#include "d3desk/cider.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

namespace d3desk::metrics {

std::array<CiderCorpus::Counts, 4> CiderCorpus::ngram_counts(
    const std::vector<int>& seq) const {
  std::array<Counts, 4> out;
  for (int n = 1; n <= 4; ++n) {
    for (size_t i = 0; i + n <= seq.size(); ++i) {
      std::vector<int> g(seq.begin() + static_cast<long>(i),
                         seq.begin() + static_cast<long>(i + n));
      out[static_cast<size_t>(n - 1)][g] += 1.0;
    }
  }
  return out;
}

double CiderCorpus::idf(const std::vector<int>& ngram) const {
  auto it = document_frequency_.find(ngram);
  const double df = it == document_frequency_.end() ? 1.0 : std::max(1.0, it->second);
  return log_num_docs_ - std::log(df);
}

CiderCorpus::RefVec CiderCorpus::vectorize(const std::vector<int>& seq) const {
  RefVec v;
  v.length = static_cast<int>(seq.size());
  auto counts = ngram_counts(seq);
  for (int n = 0; n < 4; ++n) {
    for (const auto& [g, c] : counts[static_cast<size_t>(n)]) {
      const double w = c * idf(g);
      v.tfidf[static_cast<size_t>(n)][g] = w;
      v.norm[static_cast<size_t>(n)] += w * w;
    }
    v.norm[static_cast<size_t>(n)] = std::sqrt(v.norm[static_cast<size_t>(n)]);
  }
  return v;
}

CiderCorpus CiderCorpus::fit(
    const std::map<std::string, std::vector<std::vector<int>>>& references,
    double sigma) {
  if (references.empty()) throw std::invalid_argument("cider: empty corpus");
  for (const auto& [key, refs] : references)
    if (refs.empty())
      throw std::invalid_argument("cider: key '" + key + "' has no references");

  CiderCorpus c;
  c.sigma_ = sigma;
  c.num_docs_ = references.size();
  c.log_num_docs_ = std::log(static_cast<double>(c.num_docs_));
  // df counts documents (keys) in which an n-gram appears in any reference.
  for (const auto& [key, refs] : references) {
    std::set<std::vector<int>> seen;
    for (const auto& r : refs) {
      auto counts = c.ngram_counts(r);
      for (int n = 0; n < 4; ++n)
        for (const auto& [g, cnt] : counts[static_cast<size_t>(n)]) seen.insert(g);
    }
    for (const auto& g : seen) c.document_frequency_[g] += 1.0;
  }
  for (const auto& [key, refs] : references) {
    auto& vecs = c.refs_[key];
    for (const auto& r : refs) vecs.push_back(c.vectorize(r));
  }
  return c;
}

double CiderCorpus::score(const std::string& key, const std::vector<int>& candidate) const {
  auto it = refs_.find(key);
  if (it == refs_.end()) throw std::invalid_argument("cider: unknown key '" + key + "'");
  const RefVec cand = vectorize(candidate);

  std::array<double, 4> acc{};
  for (const RefVec& ref : it->second) {
    const double delta = static_cast<double>(cand.length - ref.length);
    const double penalty = std::exp(-(delta * delta) / (2.0 * sigma_ * sigma_));
    for (int n = 0; n < 4; ++n) {
      double val = 0;
      for (const auto& [g, hw] : cand.tfidf[static_cast<size_t>(n)]) {
        auto rit = ref.tfidf[static_cast<size_t>(n)].find(g);
        if (rit == ref.tfidf[static_cast<size_t>(n)].end()) continue;
        val += std::min(hw, rit->second) * rit->second;
      }
      if (cand.norm[static_cast<size_t>(n)] != 0 && ref.norm[static_cast<size_t>(n)] != 0)
        val /= cand.norm[static_cast<size_t>(n)] * ref.norm[static_cast<size_t>(n)];
      acc[static_cast<size_t>(n)] += val * penalty;
    }
  }
  double score = 0;
  for (int n = 0; n < 4; ++n)
    score += acc[static_cast<size_t>(n)] / static_cast<double>(it->second.size());
  return 10.0 * score / 4.0;
}

}  // namespace d3desk::metrics
