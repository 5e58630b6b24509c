#pragma once

#include <vector>

#include "d3desk/detector.hpp"
#include "d3desk/ops.hpp"
#include "d3desk/optim.hpp"
#include "d3desk/rng.hpp"

namespace d3desk::model {

struct ListenerConfig {
  int vocab = 0;
  int embed_dim = 32;
  int lang_hidden = 128;
  int width = 128;
  int heads = 4;
  int layers = 2;
  int proposal_dim = 128;
  int num_classes = 10;  // structural classes excluded
};

struct LanguageEncoding {
  ad::Tensor word_states;  // [T, lang_hidden]
  ad::Tensor sentence;     // [lang_hidden]
};

struct FusionOutput {
  ad::Tensor matching_logits;  // [P]
  ad::Tensor class_logits;     // [num_classes]
};

struct ListenerLosses {
  ad::Tensor loc;      // cross-entropy over proposals
  ad::Tensor lobjcls;  // cross-entropy over object classes
};

// GRU language encoder plus a transformer-style fusion: per layer, multi-head
// self-attention over proposals, cross-attention from proposals to words, and
// a feed-forward block, all with residual connections. Proposals are treated
// as a set (no positional encoding).
class Listener {
 public:
  Listener(ListenerConfig cfg, Rng& rng);

  const ListenerConfig& config() const { return cfg_; }
  ad::NamedParams named_params(const std::string& prefix = "listener.") const;

  LanguageEncoding encode_language(const std::vector<int>& tokens) const;

  // proposal_features: [P, proposal_dim + 9] rows of pooled feature plus bbox
  // center/size/min geometry. Built by proposal_inputs().
  FusionOutput fuse(const LanguageEncoding& lang, const ad::Tensor& proposal_features) const;

  ListenerLosses losses(const FusionOutput& out, int target_index, int target_class) const;

  // argmax of matching logits; ties resolved toward the lower index.
  static int ground(const FusionOutput& out);

  ad::Tensor proposal_inputs(const std::vector<Proposal>& proposals) const;

 private:
  ListenerConfig cfg_;
  ad::Tensor embed_;
  ad::Tensor wz_, uz_, bz_, wr_, ur_, br_, wn_, un_, bn_;  // language GRU
  ad::Tensor wproj_, bproj_;                               // proposal projection
  struct Layer {
    ad::Tensor self_q, self_k, self_v, self_o, self_bo;
    ad::Tensor cross_q, cross_k, cross_v, cross_o, cross_bo;
    ad::Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  };
  std::vector<Layer> layers_;
  ad::Tensor wword_, bword_;  // word-state projection to fusion width
  ad::Tensor wmatch_;         // [width, 1]
  ad::Tensor wcls_, bcls_;    // sentence -> class logits

  ad::Tensor attention(const ad::Tensor& q_in, const ad::Tensor& kv_in,
                       const ad::Tensor& wq, const ad::Tensor& wk, const ad::Tensor& wv,
                       const ad::Tensor& wo, const ad::Tensor& bo) const;
};

}  // namespace d3desk::model
