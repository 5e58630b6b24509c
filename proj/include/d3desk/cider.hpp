#pragma once

#include <map>
#include <string>
#include <vector>

namespace d3desk::metrics {

// CIDEr-D over token-id sequences: tf-idf n-gram cosine similarity for
// n=1..4 with count clipping, a sigma-gaussian length penalty and the x10
// convention. Corpus statistics are immutable once fitted; scoring is
// thread-safe.
class CiderCorpus {
 public:
  static CiderCorpus fit(
      const std::map<std::string, std::vector<std::vector<int>>>& references,
      double sigma = 6.0);

  double score(const std::string& key, const std::vector<int>& candidate) const;

  size_t num_documents() const { return num_docs_; }
  // log(N) - log(max(df, 1)); absent n-grams fall back to df = 1.
  double idf(const std::vector<int>& ngram) const;

 private:
  using Counts = std::map<std::vector<int>, double>;
  struct RefVec {
    std::array<Counts, 4> tfidf;
    std::array<double, 4> norm{};
    int length = 0;
  };
  std::map<std::string, std::vector<RefVec>> refs_;
  Counts document_frequency_;
  double log_num_docs_ = 0;
  size_t num_docs_ = 0;
  double sigma_ = 6.0;

  std::array<Counts, 4> ngram_counts(const std::vector<int>& seq) const;
  RefVec vectorize(const std::vector<int>& seq) const;
};

}  // namespace d3desk::metrics
