#pragma once

#include <string>
#include <vector>

#include "d3desk/cider.hpp"
#include "d3desk/tensor.hpp"

namespace d3desk::rl {

struct RewardWeights {
  double alpha = 0.1;
  double beta = 1.0;
};

struct RewardRecord {
  double cider = 0;         // 0 when no references exist
  double loc_loss = 0;
  double lobjcls_loss = 0;
  double reward = 0;        // cider - alpha*(loc + beta*lobjcls); cider dropped without refs
  double baseline = 0;      // same formula on the greedy sequence
  double advantage = 0;     // reward - baseline
};

// Composite reward; when has_references is false the CIDEr term is cancelled
// for both the candidate and the baseline.
double reward_value(double cider, double loc_loss, double lobjcls_loss,
                    const RewardWeights& w, bool has_references);

RewardRecord compute_reward(const metrics::CiderCorpus* corpus, const std::string& key,
                            const std::vector<int>& candidate, double cand_loc,
                            double cand_lobjcls, const std::vector<int>& greedy,
                            double greedy_loc, double greedy_lobjcls,
                            const RewardWeights& w);

// Policy-gradient surrogate: mean over samples of -advantage * sum(logprobs).
// Advantages are constants; gradient flows only through the logprob sums.
ad::Tensor reinforce_loss(const std::vector<ad::Tensor>& sample_logprob_sums,
                          const std::vector<double>& advantages);

}  // namespace d3desk::rl
