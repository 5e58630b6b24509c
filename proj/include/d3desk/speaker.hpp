#pragma once

#include <string>
#include <vector>

#include "d3desk/detector.hpp"
#include "d3desk/ops.hpp"
#include "d3desk/optim.hpp"
#include "d3desk/rng.hpp"

namespace d3desk::model {

// A decoded description: token ids from sos to eos (or truncation at t_max)
// with the per-step log-probabilities of the chosen tokens.
struct TokenSeq {
  std::vector<int> tokens;
  std::vector<double> logprobs;  // one per token after sos
  double total_logprob() const {
    double s = 0;
    for (double lp : logprobs) s += lp;
    return s;
  }
};

struct SpeakerConfig {
  int proposal_dim = 128;
  int vocab = 0;
  int embed_dim = 32;
  int hidden = 128;
  int att_hidden = 64;
  int edge_hidden = 64;
  int k_neighbors = 5;
  int t_max = 16;  // max tokens including sos and eos
  int sos = 1;
  int eos = 2;
};

struct MessagePassingOut {
  ad::Tensor enhanced;                        // [P, D]
  std::vector<std::pair<int, int>> edges;     // (node, neighbor)
  ad::Tensor edge_orientation_logits;         // [E, 6]; undefined when E == 0
};

struct OrientationLoss {
  ad::Tensor value;  // scalar; zero tensor when nothing matched
  int matched_edges = 0;
};

// Relational graph over proposals plus an attentive recurrent decoder.
class Speaker {
 public:
  Speaker(SpeakerConfig cfg, Rng& rng);

  const SpeakerConfig& config() const { return cfg_; }
  ad::NamedParams named_params(const std::string& prefix = "speaker.") const;

  // One round of kNN message passing with residual aggregation. A single
  // proposal passes through unchanged with zero edges.
  MessagePassingOut message_passing(const std::vector<Proposal>& proposals) const;

  // Cross-entropy against orientation classes of matched GT pairs; edges with
  // either endpoint unmatched (IoU < min_iou) are excluded.
  OrientationLoss orientation_loss(const MessagePassingOut& mp,
                                   const std::vector<Proposal>& proposals,
                                   const std::vector<data::GtObject>& gt,
                                   double min_iou = 0.5) const;

  // Differentiable sum of log p(token_t | ...) over the given sequence,
  // teacher-forced. tokens must start with sos.
  ad::Tensor sequence_logprob(const MessagePassingOut& mp, int target,
                              const std::vector<int>& tokens) const;

  // -sequence_logprob: the MLE captioning loss for one (proposal, reference).
  ad::Tensor mle_loss(const MessagePassingOut& mp, int target,
                      const std::vector<int>& tokens) const;

  TokenSeq decode_greedy(const MessagePassingOut& mp, int target, int t_max) const;
  std::vector<TokenSeq> decode_beam(const MessagePassingOut& mp, int target, int t_max,
                                    int beam) const;

 private:
  SpeakerConfig cfg_;
  // message passing
  ad::Tensor wedge_, bedge_, wmsg_, bmsg_, wori_, bori_;
  // decoder
  ad::Tensor embed_, winit_, binit_;
  ad::Tensor wz_, uz_, bz_, wr_, ur_, br_, wn_, un_, bn_;
  ad::Tensor watt_h_, watt_c_, vatt_;
  ad::Tensor wout_, bout_;

  struct DecodeState {
    ad::Tensor h;          // [hidden]
    ad::Tensor context;    // [Pc, D] rows of non-target proposals; may be empty
  };
  DecodeState init_state(const MessagePassingOut& mp, int target) const;
  // Returns vocab logits [V] and advances the state.
  ad::Tensor step(DecodeState& st, int prev_token) const;
};

}  // namespace d3desk::model
