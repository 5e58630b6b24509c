#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "d3desk/cider.hpp"
#include "d3desk/ops.hpp"
#include "d3desk/reward.hpp"
#include "d3desk/rng.hpp"
#include "d3desk/text_metrics.hpp"
#include "oracles.hpp"

using namespace d3desk;
using namespace d3desk::metrics;
using namespace d3desk::rl;

namespace {

std::vector<int> random_seq(Rng& rng, int vocab, int min_len, int max_len) {
  std::vector<int> s(static_cast<size_t>(rng.uniform_int(min_len, max_len)));
  for (auto& t : s) t = rng.pick(vocab);
  return s;
}

std::map<std::string, std::vector<std::vector<int>>> random_corpus(Rng& rng) {
  std::map<std::string, std::vector<std::vector<int>>> refs;
  const int keys = rng.uniform_int(1, 6);
  const int vocab = rng.uniform_int(3, 12);
  for (int k = 0; k < keys; ++k) {
    auto& list = refs["key" + std::to_string(k)];
    const int n = rng.uniform_int(1, 3);
    for (int i = 0; i < n; ++i) list.push_back(random_seq(rng, vocab, 1, 10));
  }
  return refs;
}

}  // namespace

TEST_CASE("cider idf basics") {
  std::map<std::string, std::vector<std::vector<int>>> refs = {{"a", {{5, 6, 7}}}};
  CiderCorpus c = CiderCorpus::fit(refs);
  CHECK(c.idf({5}) == doctest::Approx(0.0));       // log(1/1)
  CHECK(c.idf({5, 6}) == doctest::Approx(0.0));
  CHECK(c.idf({9, 9}) == doctest::Approx(0.0));    // absent: df clipped to 1
  CHECK_THROWS_AS(CiderCorpus::fit({}), std::invalid_argument);
  CHECK_THROWS_AS(c.score("missing", {5}), std::invalid_argument);

  // Three-document corpus: idf = log(3/df) by hand.
  std::map<std::string, std::vector<std::vector<int>>> three = {
      {"a", {{1, 2}}}, {"b", {{1, 3}}}, {"c", {{4, 5}}}};
  CiderCorpus c3 = CiderCorpus::fit(three);
  CHECK(c3.idf({1}) == doctest::Approx(std::log(3.0 / 2.0)));  // in a and b
  CHECK(c3.idf({4}) == doctest::Approx(std::log(3.0)));        // only in c
  CHECK(c3.idf({1, 2}) == doctest::Approx(std::log(3.0)));
}

TEST_CASE("cider zero overlap scores zero, identical is maximal") {
  std::map<std::string, std::vector<std::vector<int>>> refs = {
      {"a", {{1, 2, 3, 4}}}, {"b", {{5, 6, 7}}}, {"c", {{1, 5, 2}}}};
  CiderCorpus c = CiderCorpus::fit(refs);
  CHECK(c.score("a", {8, 9, 8, 9}) == 0.0);
  const double exact = c.score("a", {1, 2, 3, 4});
  CHECK(exact > 0.0);
  Rng rng(3);
  for (int i = 0; i < 50; ++i)
    CHECK(c.score("a", random_seq(rng, 10, 1, 8)) <= exact + 1e-12);
}

TEST_CASE("cider matches the brute-force oracle on random toy corpora") {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    auto refs = random_corpus(rng);
    CiderCorpus c = CiderCorpus::fit(refs);
    const int vocab = 12;
    for (const auto& [key, list] : refs) {
      std::vector<int> cand = rng.uniform() < 0.3 ? list[0] : random_seq(rng, vocab, 1, 10);
      const double got = c.score(key, cand);
      const double want = oracles::cider(refs, key, cand);
      CHECK(got == doctest::Approx(want).epsilon(1e-12));
      CHECK(got >= 0.0);
    }
  }
}

TEST_CASE("cider is invariant under consistent token relabeling") {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    auto refs = random_corpus(rng);
    std::vector<int> cand = random_seq(rng, 12, 2, 9);
    auto relabel = [](const std::vector<int>& s) {
      std::vector<int> out;
      for (int t : s) out.push_back(t * 7 + 1000);
      return out;
    };
    std::map<std::string, std::vector<std::vector<int>>> refs2;
    for (const auto& [k, list] : refs) {
      for (const auto& r : list) refs2[k].push_back(relabel(r));
    }
    CiderCorpus a = CiderCorpus::fit(refs);
    CiderCorpus b = CiderCorpus::fit(refs2);
    const std::string key = refs.begin()->first;
    CHECK(a.score(key, cand) == doctest::Approx(b.score(key, relabel(cand))).epsilon(1e-12));
  }
}

TEST_CASE("bleu4 exact match and oracle equivalence") {
  std::vector<int> ref = {4, 8, 15, 16, 23, 42};
  CHECK(bleu4(ref, {ref}) == doctest::Approx(1.0));
  CHECK(bleu4({}, {ref}) == 0.0);

  Rng rng(29);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> cand = random_seq(rng, 8, 1, 12);
    std::vector<std::vector<int>> refs;
    const int n = rng.uniform_int(1, 3);
    for (int i = 0; i < n; ++i) refs.push_back(random_seq(rng, 8, 1, 12));
    CHECK(bleu4(cand, refs) == doctest::Approx(oracles::bleu4(cand, refs)).epsilon(1e-12));
  }
}

TEST_CASE("rouge_l hand cases and oracle equivalence") {
  CHECK(rouge_l({1, 2, 3}, {{1, 2, 3}}) == doctest::Approx(1.0));
  CHECK(rouge_l({1, 9, 3}, {{1, 2, 3}}) > 0.0);
  CHECK(rouge_l({7, 8}, {{1, 2, 3}}) == 0.0);

  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> cand = random_seq(rng, 6, 1, 10);
    std::vector<std::vector<int>> refs;
    const int n = rng.uniform_int(1, 3);
    for (int i = 0; i < n; ++i) refs.push_back(random_seq(rng, 6, 1, 10));
    CHECK(rouge_l(cand, refs) == doctest::Approx(oracles::rouge_l(cand, refs)).epsilon(1e-12));
  }
}

TEST_CASE("reward arithmetic follows the weighted-sum form") {
  RewardWeights w;  // alpha 0.1, beta 1.0
  CHECK(reward_value(50.0, 1.0, 0.5, w, true) == doctest::Approx(49.85));
  CHECK(reward_value(0.0, 2.0, 1.0, w, false) == doctest::Approx(-0.3));

  // Affine in the listener losses with slopes -alpha and -alpha*beta.
  RewardWeights w2{0.3, 2.0};
  const double base = reward_value(10, 1, 1, w2, true);
  CHECK(reward_value(10, 2, 1, w2, true) - base == doctest::Approx(-0.3));
  CHECK(reward_value(10, 1, 2, w2, true) - base == doctest::Approx(-0.6));
}

TEST_CASE("compute_reward baselines and advantage") {
  std::map<std::string, std::vector<std::vector<int>>> refs = {{"k", {{1, 2, 3}}}};
  CiderCorpus corpus = CiderCorpus::fit(refs);
  RewardWeights w;
  // candidate == baseline -> advantage exactly 0
  RewardRecord same = compute_reward(&corpus, "k", {1, 2, 3}, 0.7, 0.2, {1, 2, 3}, 0.7,
                                     0.2, w);
  CHECK(same.advantage == 0.0);
  // no references: cider term cancelled on both sides
  RewardRecord un = compute_reward(nullptr, "", {1, 2}, 2.0, 1.0, {1, 2, 9}, 1.0, 0.5, w);
  CHECK(un.cider == 0.0);
  CHECK(un.reward == doctest::Approx(-0.3));
  CHECK(un.baseline == doctest::Approx(-0.15));
  CHECK(un.advantage == doctest::Approx(-0.15));
}

TEST_CASE("reinforce_loss arithmetic and gradient routing") {
  using ad::Tensor;
  // all advantages zero -> zero loss and zero gradient
  Tensor lp1 = Tensor::scalar(-3.0, true);
  Tensor lp2 = Tensor::scalar(-1.0, true);
  Tensor loss0 = reinforce_loss({lp1, lp2}, {0.0, 0.0});
  CHECK(loss0.item() == 0.0);
  loss0.backward();
  CHECK(lp1.g()[0] == 0.0);
  CHECK(lp2.g()[0] == 0.0);

  // single sample: advantage 2.0, sum logp -3.0 -> loss 6.0, d/dlogp = -2
  Tensor lp = Tensor::scalar(-3.0, true);
  Tensor loss = reinforce_loss({lp}, {2.0});
  CHECK(loss.item() == doctest::Approx(6.0));
  loss.backward();
  CHECK(lp.g()[0] == doctest::Approx(-2.0));

  CHECK_THROWS_AS(reinforce_loss({}, {}), std::invalid_argument);
  CHECK_THROWS_AS(reinforce_loss({lp}, {1.0, 2.0}), std::invalid_argument);
}
