#include "d3desk/reward.hpp"

#include <stdexcept>

#include "d3desk/ops.hpp"

namespace d3desk::rl {

double reward_value(double cider, double loc_loss, double lobjcls_loss,
                    const RewardWeights& w, bool has_references) {
  const double listener_term = w.alpha * (loc_loss + w.beta * lobjcls_loss);
  return (has_references ? cider : 0.0) - listener_term;
}

RewardRecord compute_reward(const metrics::CiderCorpus* corpus, const std::string& key,
                            const std::vector<int>& candidate, double cand_loc,
                            double cand_lobjcls, const std::vector<int>& greedy,
                            double greedy_loc, double greedy_lobjcls,
                            const RewardWeights& w) {
  const bool has_refs = corpus != nullptr;
  RewardRecord r;
  r.loc_loss = cand_loc;
  r.lobjcls_loss = cand_lobjcls;
  r.cider = has_refs ? corpus->score(key, candidate) : 0.0;
  r.reward = reward_value(r.cider, cand_loc, cand_lobjcls, w, has_refs);
  const double greedy_cider = has_refs ? corpus->score(key, greedy) : 0.0;
  r.baseline = reward_value(greedy_cider, greedy_loc, greedy_lobjcls, w, has_refs);
  r.advantage = r.reward - r.baseline;
  return r;
}

ad::Tensor reinforce_loss(const std::vector<ad::Tensor>& sample_logprob_sums,
                          const std::vector<double>& advantages) {
  if (sample_logprob_sums.size() != advantages.size())
    throw std::invalid_argument("reinforce_loss: sample/advantage count mismatch");
  if (sample_logprob_sums.empty())
    throw std::invalid_argument("reinforce_loss: no samples");
  ad::Tensor total;
  for (size_t i = 0; i < sample_logprob_sums.size(); ++i) {
    ad::Tensor term = ad::scale(sample_logprob_sums[i],
                                static_cast<ad::Scalar>(-advantages[i]));
    total = i == 0 ? term : ad::add(total, term);
  }
  return ad::scale(total, ad::Scalar(1) / static_cast<ad::Scalar>(advantages.size()));
}

}  // namespace d3desk::rl
