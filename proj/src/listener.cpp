#include "d3desk/listener.hpp"

#include <cmath>
#include <stdexcept>

namespace d3desk::model {

using ad::Tensor;

namespace {

Tensor xavier(Rng& rng, int in, int out) {
  const double s = std::sqrt(6.0 / (in + out));
  std::vector<ad::Scalar> vals(static_cast<size_t>(in) * out);
  for (auto& v : vals) v = static_cast<ad::Scalar>(rng.uniform(-s, s));
  return Tensor::from({in, out}, std::move(vals), true);
}

Tensor zeros_param(int n) { return Tensor::zeros({n}, true); }

}  // namespace

Listener::Listener(ListenerConfig cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.vocab < 4) throw std::invalid_argument("listener: vocab too small");
  if (cfg.width % cfg.heads != 0)
    throw std::invalid_argument("listener: width must divide into heads");
  embed_ = xavier(rng, cfg.vocab, cfg.embed_dim);
  wz_ = xavier(rng, cfg.embed_dim, cfg.lang_hidden);
  uz_ = xavier(rng, cfg.lang_hidden, cfg.lang_hidden);
  bz_ = zeros_param(cfg.lang_hidden);
  wr_ = xavier(rng, cfg.embed_dim, cfg.lang_hidden);
  ur_ = xavier(rng, cfg.lang_hidden, cfg.lang_hidden);
  br_ = zeros_param(cfg.lang_hidden);
  wn_ = xavier(rng, cfg.embed_dim, cfg.lang_hidden);
  un_ = xavier(rng, cfg.lang_hidden, cfg.lang_hidden);
  bn_ = zeros_param(cfg.lang_hidden);
  wproj_ = xavier(rng, cfg.proposal_dim + 9, cfg.width);
  bproj_ = zeros_param(cfg.width);
  wword_ = xavier(rng, cfg.lang_hidden, cfg.width);
  bword_ = zeros_param(cfg.width);
  layers_.resize(static_cast<size_t>(cfg.layers));
  for (auto& l : layers_) {
    l.self_q = xavier(rng, cfg.width, cfg.width);
    l.self_k = xavier(rng, cfg.width, cfg.width);
    l.self_v = xavier(rng, cfg.width, cfg.width);
    l.self_o = xavier(rng, cfg.width, cfg.width);
    l.self_bo = zeros_param(cfg.width);
    l.cross_q = xavier(rng, cfg.width, cfg.width);
    l.cross_k = xavier(rng, cfg.width, cfg.width);
    l.cross_v = xavier(rng, cfg.width, cfg.width);
    l.cross_o = xavier(rng, cfg.width, cfg.width);
    l.cross_bo = zeros_param(cfg.width);
    l.ffn_w1 = xavier(rng, cfg.width, 2 * cfg.width);
    l.ffn_b1 = zeros_param(2 * cfg.width);
    l.ffn_w2 = xavier(rng, 2 * cfg.width, cfg.width);
    l.ffn_b2 = zeros_param(cfg.width);
  }
  wmatch_ = xavier(rng, cfg.width, 1);
  wcls_ = xavier(rng, cfg.lang_hidden, cfg.num_classes);
  bcls_ = zeros_param(cfg.num_classes);
}

ad::NamedParams Listener::named_params(const std::string& p) const {
  ad::NamedParams out = {
      {p + "embed", embed_}, {p + "wz", wz_}, {p + "uz", uz_}, {p + "bz", bz_},
      {p + "wr", wr_},       {p + "ur", ur_}, {p + "br", br_}, {p + "wn", wn_},
      {p + "un", un_},       {p + "bn", bn_}, {p + "wproj", wproj_},
      {p + "bproj", bproj_}, {p + "wword", wword_}, {p + "bword", bword_},
      {p + "wmatch", wmatch_}, {p + "wcls", wcls_}, {p + "bcls", bcls_}};
  for (size_t i = 0; i < layers_.size(); ++i) {
    const std::string lp = p + "layer" + std::to_string(i) + ".";
    const Layer& l = layers_[i];
    out.emplace_back(lp + "self_q", l.self_q);
    out.emplace_back(lp + "self_k", l.self_k);
    out.emplace_back(lp + "self_v", l.self_v);
    out.emplace_back(lp + "self_o", l.self_o);
    out.emplace_back(lp + "self_bo", l.self_bo);
    out.emplace_back(lp + "cross_q", l.cross_q);
    out.emplace_back(lp + "cross_k", l.cross_k);
    out.emplace_back(lp + "cross_v", l.cross_v);
    out.emplace_back(lp + "cross_o", l.cross_o);
    out.emplace_back(lp + "cross_bo", l.cross_bo);
    out.emplace_back(lp + "ffn_w1", l.ffn_w1);
    out.emplace_back(lp + "ffn_b1", l.ffn_b1);
    out.emplace_back(lp + "ffn_w2", l.ffn_w2);
    out.emplace_back(lp + "ffn_b2", l.ffn_b2);
  }
  return out;
}

LanguageEncoding Listener::encode_language(const std::vector<int>& tokens) const {
  if (tokens.empty()) throw std::invalid_argument("encode_language: empty sequence");
  LanguageEncoding out;
  Tensor h = Tensor::zeros({cfg_.lang_hidden});
  std::vector<Tensor> states;
  states.reserve(tokens.size());
  for (int tok : tokens) {
    Tensor e = ad::reshape(ad::embedding(embed_, {tok}), {cfg_.embed_dim});
    Tensor z = ad::sigmoid(ad::add(ad::add(ad::matmul(e, wz_), ad::matmul(h, uz_)), bz_));
    Tensor r = ad::sigmoid(ad::add(ad::add(ad::matmul(e, wr_), ad::matmul(h, ur_)), br_));
    Tensor n = ad::tanh_op(
        ad::add(ad::add(ad::matmul(e, wn_), ad::mul(r, ad::matmul(h, un_))), bn_));
    h = ad::add(ad::mul(ad::add_scalar(ad::neg(z), 1), n), ad::mul(z, h));
    states.push_back(h);
  }
  out.word_states = ad::stack_rows(states);
  out.sentence = h;
  return out;
}

Tensor Listener::attention(const Tensor& q_in, const Tensor& kv_in, const Tensor& wq,
                           const Tensor& wk, const Tensor& wv, const Tensor& wo,
                           const Tensor& bo) const {
  const int dh = cfg_.width / cfg_.heads;
  Tensor q = ad::matmul(q_in, wq);
  Tensor k = ad::matmul(kv_in, wk);
  Tensor v = ad::matmul(kv_in, wv);
  std::vector<Tensor> heads;
  heads.reserve(static_cast<size_t>(cfg_.heads));
  const ad::Scalar inv_sqrt = static_cast<ad::Scalar>(1.0 / std::sqrt(double(dh)));
  for (int h = 0; h < cfg_.heads; ++h) {
    Tensor qh = ad::slice(q, 1, h * dh, dh);
    Tensor kh = ad::slice(k, 1, h * dh, dh);
    Tensor vh = ad::slice(v, 1, h * dh, dh);
    Tensor scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt);
    heads.push_back(ad::matmul(ad::softmax(scores), vh));
  }
  return ad::add(ad::matmul(ad::concat(heads, 1), wo), bo);
}

Tensor Listener::proposal_inputs(const std::vector<Proposal>& proposals) const {
  if (proposals.empty()) throw std::invalid_argument("listener: no proposals");
  std::vector<Tensor> rows;
  rows.reserve(proposals.size());
  for (const auto& p : proposals) {
    const geom::Vec3 c = p.bbox.center();
    const geom::Vec3 s = p.bbox.size();
    std::vector<ad::Scalar> geo = {
        static_cast<ad::Scalar>(c[0]), static_cast<ad::Scalar>(c[1]),
        static_cast<ad::Scalar>(c[2]), static_cast<ad::Scalar>(s[0]),
        static_cast<ad::Scalar>(s[1]), static_cast<ad::Scalar>(s[2]),
        static_cast<ad::Scalar>(p.bbox.mn[0]), static_cast<ad::Scalar>(p.bbox.mn[1]),
        static_cast<ad::Scalar>(p.bbox.mn[2])};
    rows.push_back(ad::concat({p.feature, Tensor::from({9}, std::move(geo))}, 0));
  }
  return ad::stack_rows(rows);
}

FusionOutput Listener::fuse(const LanguageEncoding& lang,
                            const Tensor& proposal_features) const {
  Tensor x = ad::relu(ad::add(ad::matmul(proposal_features, wproj_), bproj_));
  Tensor words = ad::relu(ad::add(ad::matmul(lang.word_states, wword_), bword_));
  for (const auto& l : layers_) {
    x = ad::add(x, attention(x, x, l.self_q, l.self_k, l.self_v, l.self_o, l.self_bo));
    x = ad::add(x, attention(x, words, l.cross_q, l.cross_k, l.cross_v, l.cross_o,
                             l.cross_bo));
    Tensor ff = ad::relu(ad::add(ad::matmul(x, l.ffn_w1), l.ffn_b1));
    x = ad::add(x, ad::add(ad::matmul(ff, l.ffn_w2), l.ffn_b2));
  }
  FusionOutput out;
  out.matching_logits = ad::reshape(ad::matmul(x, wmatch_), {x.dim(0)});
  out.class_logits = ad::add(ad::matmul(lang.sentence, wcls_), bcls_);
  return out;
}

ListenerLosses Listener::losses(const FusionOutput& out, int target_index,
                                int target_class) const {
  const int p = out.matching_logits.dim(0);
  if (target_index < 0 || target_index >= p)
    throw std::invalid_argument("listener: target index out of range");
  if (target_class < 0 || target_class >= cfg_.num_classes)
    throw std::invalid_argument("listener: target class out of range");
  ListenerLosses l;
  l.loc = ad::cross_entropy(out.matching_logits, {target_index});
  l.lobjcls = ad::cross_entropy(out.class_logits, {target_class});
  return l;
}

int Listener::ground(const FusionOutput& out) {
  const auto& v = out.matching_logits.v();
  int best = 0;
  for (size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[static_cast<size_t>(best)]) best = static_cast<int>(i);
  return best;
}

}  // namespace d3desk::model
