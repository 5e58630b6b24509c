#include "d3desk/speaker.hpp"

#include <algorithm>
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

Tensor xavier_vec(Rng& rng, int n) {
  const double s = std::sqrt(3.0 / n);
  std::vector<ad::Scalar> vals(static_cast<size_t>(n));
  for (auto& v : vals) v = static_cast<ad::Scalar>(rng.uniform(-s, s));
  return Tensor::from({n}, std::move(vals), true);
}

Tensor zeros_param(int n) { return Tensor::zeros({n}, true); }

}  // namespace

Speaker::Speaker(SpeakerConfig cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.vocab < 4) throw std::invalid_argument("speaker: vocab too small");
  const int d = cfg.proposal_dim;
  wedge_ = xavier(rng, 2 * d + 4, cfg.edge_hidden);
  bedge_ = zeros_param(cfg.edge_hidden);
  wmsg_ = xavier(rng, cfg.edge_hidden, d);
  bmsg_ = zeros_param(d);
  wori_ = xavier(rng, cfg.edge_hidden, 6);
  bori_ = zeros_param(6);

  embed_ = xavier(rng, cfg.vocab, cfg.embed_dim);
  winit_ = xavier(rng, d, cfg.hidden);
  binit_ = zeros_param(cfg.hidden);
  const int in = cfg.embed_dim + d;
  wz_ = xavier(rng, in, cfg.hidden);
  uz_ = xavier(rng, cfg.hidden, cfg.hidden);
  bz_ = zeros_param(cfg.hidden);
  wr_ = xavier(rng, in, cfg.hidden);
  ur_ = xavier(rng, cfg.hidden, cfg.hidden);
  br_ = zeros_param(cfg.hidden);
  wn_ = xavier(rng, in, cfg.hidden);
  un_ = xavier(rng, cfg.hidden, cfg.hidden);
  bn_ = zeros_param(cfg.hidden);
  watt_h_ = xavier(rng, cfg.hidden, cfg.att_hidden);
  watt_c_ = xavier(rng, d, cfg.att_hidden);
  vatt_ = xavier_vec(rng, cfg.att_hidden);
  wout_ = xavier(rng, cfg.hidden, cfg.vocab);
  bout_ = zeros_param(cfg.vocab);
}

ad::NamedParams Speaker::named_params(const std::string& p) const {
  return {{p + "wedge", wedge_}, {p + "bedge", bedge_}, {p + "wmsg", wmsg_},
          {p + "bmsg", bmsg_},   {p + "wori", wori_},   {p + "bori", bori_},
          {p + "embed", embed_}, {p + "winit", winit_}, {p + "binit", binit_},
          {p + "wz", wz_},       {p + "uz", uz_},       {p + "bz", bz_},
          {p + "wr", wr_},       {p + "ur", ur_},       {p + "br", br_},
          {p + "wn", wn_},       {p + "un", un_},       {p + "bn", bn_},
          {p + "watt_h", watt_h_}, {p + "watt_c", watt_c_}, {p + "vatt", vatt_},
          {p + "wout", wout_},   {p + "bout", bout_}};
}

MessagePassingOut Speaker::message_passing(const std::vector<Proposal>& proposals) const {
  if (proposals.empty()) throw std::invalid_argument("message_passing: no proposals");
  const int p = static_cast<int>(proposals.size());
  MessagePassingOut out;

  std::vector<Tensor> features;
  features.reserve(static_cast<size_t>(p));
  for (const auto& pr : proposals) features.push_back(pr.feature);

  if (p == 1) {
    out.enhanced = ad::reshape(features[0], {1, cfg_.proposal_dim});
    return out;
  }

  // kNN edges by bbox center distance, ties broken by lower index.
  std::vector<geom::Vec3> centers(static_cast<size_t>(p));
  for (int i = 0; i < p; ++i) centers[static_cast<size_t>(i)] = proposals[static_cast<size_t>(i)].bbox.center();
  const int k = std::min(cfg_.k_neighbors, p - 1);
  for (int i = 0; i < p; ++i) {
    std::vector<std::pair<double, int>> dist;
    for (int j = 0; j < p; ++j) {
      if (j == i) continue;
      double d2 = 0;
      for (int d = 0; d < 3; ++d) {
        const double diff = centers[static_cast<size_t>(i)][d] - centers[static_cast<size_t>(j)][d];
        d2 += diff * diff;
      }
      dist.emplace_back(d2, j);
    }
    std::sort(dist.begin(), dist.end());
    for (int e = 0; e < k; ++e) out.edges.emplace_back(i, dist[static_cast<size_t>(e)].second);
  }

  // Edge MLP over [f_i | f_j | delta | dist], messages mean-aggregated per node.
  std::vector<Tensor> edge_hidden;
  edge_hidden.reserve(out.edges.size());
  for (const auto& [i, j] : out.edges) {
    std::vector<ad::Scalar> rel(4);
    double d2 = 0;
    for (int d = 0; d < 3; ++d) {
      const double diff = centers[static_cast<size_t>(j)][d] - centers[static_cast<size_t>(i)][d];
      rel[static_cast<size_t>(d)] = static_cast<ad::Scalar>(diff);
      d2 += diff * diff;
    }
    rel[3] = static_cast<ad::Scalar>(std::sqrt(d2));
    Tensor rel_t = Tensor::from({4}, std::move(rel));
    Tensor in = ad::concat({features[static_cast<size_t>(i)], features[static_cast<size_t>(j)], rel_t}, 0);
    edge_hidden.push_back(ad::relu(ad::add(ad::matmul(in, wedge_), bedge_)));
  }

  std::vector<Tensor> enhanced_rows(static_cast<size_t>(p));
  for (int i = 0; i < p; ++i) {
    std::vector<Tensor> msgs;
    for (size_t e = 0; e < out.edges.size(); ++e)
      if (out.edges[e].first == i)
        msgs.push_back(ad::add(ad::matmul(edge_hidden[e], wmsg_), bmsg_));
    if (msgs.empty()) {
      enhanced_rows[static_cast<size_t>(i)] = features[static_cast<size_t>(i)];
    } else {
      Tensor sum = msgs[0];
      for (size_t m = 1; m < msgs.size(); ++m) sum = ad::add(sum, msgs[m]);
      enhanced_rows[static_cast<size_t>(i)] = ad::add(
          features[static_cast<size_t>(i)],
          ad::scale(sum, ad::Scalar(1) / static_cast<ad::Scalar>(msgs.size())));
    }
  }
  out.enhanced = ad::stack_rows(enhanced_rows);

  if (!edge_hidden.empty()) {
    std::vector<Tensor> ori;
    ori.reserve(edge_hidden.size());
    for (const auto& h : edge_hidden) ori.push_back(ad::add(ad::matmul(h, wori_), bori_));
    out.edge_orientation_logits = ad::stack_rows(ori);
  }
  return out;
}

OrientationLoss Speaker::orientation_loss(const MessagePassingOut& mp,
                                          const std::vector<Proposal>& proposals,
                                          const std::vector<data::GtObject>& gt,
                                          double min_iou) const {
  OrientationLoss out;
  out.value = Tensor::scalar(0);
  if (mp.edges.empty() || gt.empty()) return out;

  // Proposal -> GT assignment by best IoU, requiring at least min_iou.
  std::vector<int> match(proposals.size(), -1);
  for (size_t i = 0; i < proposals.size(); ++i) {
    double best = min_iou;
    for (size_t g = 0; g < gt.size(); ++g) {
      const double v = geom::iou(proposals[i].bbox, gt[g].bbox);
      if (v >= best) {
        best = v;
        match[i] = static_cast<int>(g);
      }
    }
  }

  std::vector<int> edge_rows;
  std::vector<int> targets;
  for (size_t e = 0; e < mp.edges.size(); ++e) {
    const int gi = match[static_cast<size_t>(mp.edges[e].first)];
    const int gj = match[static_cast<size_t>(mp.edges[e].second)];
    if (gi < 0 || gj < 0 || gi == gj) continue;
    edge_rows.push_back(static_cast<int>(e));
    targets.push_back(geom::orientation_class(gt[static_cast<size_t>(gi)].bbox.center(),
                                              gt[static_cast<size_t>(gj)].bbox.center()));
  }
  out.matched_edges = static_cast<int>(edge_rows.size());
  if (edge_rows.empty()) return out;
  out.value = ad::cross_entropy(ad::gather_rows(mp.edge_orientation_logits, edge_rows),
                                targets);
  return out;
}

Speaker::DecodeState Speaker::init_state(const MessagePassingOut& mp, int target) const {
  const int p = mp.enhanced.dim(0);
  if (target < 0 || target >= p)
    throw std::invalid_argument("speaker: target proposal out of range");
  DecodeState st;
  Tensor trow = ad::reshape(ad::gather_rows(mp.enhanced, {target}), {cfg_.proposal_dim});
  st.h = ad::tanh_op(ad::add(ad::matmul(trow, winit_), binit_));
  std::vector<int> others;
  for (int i = 0; i < p; ++i)
    if (i != target) others.push_back(i);
  if (!others.empty()) st.context = ad::gather_rows(mp.enhanced, others);
  return st;
}

Tensor Speaker::step(DecodeState& st, int prev_token) const {
  Tensor e = ad::reshape(ad::embedding(embed_, {prev_token}), {cfg_.embed_dim});
  Tensor ctx;
  if (st.context.defined()) {
    // Additive attention over the context rows.
    Tensor hq = ad::matmul(st.h, watt_h_);                    // [att]
    Tensor keys = ad::add(ad::matmul(st.context, watt_c_), hq);  // [Pc, att]
    Tensor scores = ad::matmul(ad::tanh_op(keys), vatt_);     // [Pc]
    Tensor alpha = ad::softmax(scores);
    const int pc = st.context.dim(0);
    ctx = ad::reshape(ad::matmul(ad::reshape(alpha, {1, pc}), st.context),
                      {cfg_.proposal_dim});
  } else {
    ctx = Tensor::zeros({cfg_.proposal_dim});
  }
  Tensor u = ad::concat({e, ctx}, 0);
  Tensor z = ad::sigmoid(ad::add(ad::add(ad::matmul(u, wz_), ad::matmul(st.h, uz_)), bz_));
  Tensor r = ad::sigmoid(ad::add(ad::add(ad::matmul(u, wr_), ad::matmul(st.h, ur_)), br_));
  Tensor ncand = ad::tanh_op(
      ad::add(ad::add(ad::matmul(u, wn_), ad::mul(r, ad::matmul(st.h, un_))), bn_));
  Tensor one_minus_z = ad::add_scalar(ad::neg(z), 1);
  st.h = ad::add(ad::mul(one_minus_z, ncand), ad::mul(z, st.h));
  return ad::add(ad::matmul(st.h, wout_), bout_);
}

Tensor Speaker::sequence_logprob(const MessagePassingOut& mp, int target,
                                 const std::vector<int>& tokens) const {
  if (tokens.size() < 2 || tokens[0] != cfg_.sos)
    throw std::invalid_argument("speaker: token sequence must start with sos");
  DecodeState st = init_state(mp, target);
  std::vector<Tensor> terms;
  for (size_t t = 0; t + 1 < tokens.size(); ++t) {
    Tensor logits = step(st, tokens[t]);
    Tensor logp = ad::log_softmax(logits);
    terms.push_back(ad::slice(logp, 0, tokens[t + 1], 1));
  }
  Tensor total = terms[0];
  for (size_t i = 1; i < terms.size(); ++i) total = ad::add(total, terms[i]);
  return total;
}

Tensor Speaker::mle_loss(const MessagePassingOut& mp, int target,
                         const std::vector<int>& tokens) const {
  return ad::neg(sequence_logprob(mp, target, tokens));
}

TokenSeq Speaker::decode_greedy(const MessagePassingOut& mp, int target, int t_max) const {
  ad::NoGradGuard ng;
  TokenSeq seq;
  seq.tokens.push_back(cfg_.sos);
  DecodeState st = init_state(mp, target);
  while (static_cast<int>(seq.tokens.size()) < t_max) {
    Tensor logp = ad::log_softmax(step(st, seq.tokens.back()));
    int best = 0;
    for (int v = 1; v < cfg_.vocab; ++v)
      if (logp.v()[static_cast<size_t>(v)] > logp.v()[static_cast<size_t>(best)]) best = v;
    seq.tokens.push_back(best);
    seq.logprobs.push_back(static_cast<double>(logp.v()[static_cast<size_t>(best)]));
    if (best == cfg_.eos) break;
  }
  return seq;
}

std::vector<TokenSeq> Speaker::decode_beam(const MessagePassingOut& mp, int target,
                                           int t_max, int beam) const {
  if (beam < 1) throw std::invalid_argument("speaker: beam must be >= 1");
  ad::NoGradGuard ng;

  struct Candidate {
    TokenSeq seq;
    double logp = 0;
    DecodeState st;
    bool done = false;
  };
  Candidate root;
  root.seq.tokens.push_back(cfg_.sos);
  root.st = init_state(mp, target);
  std::vector<Candidate> pool = {std::move(root)};

  for (int len = 1; len < t_max; ++len) {
    bool any_alive = false;
    struct Expansion {
      double cum_lp;
      double step_lp;
      int token;
      int parent;
    };
    std::vector<Expansion> expansions;
    std::vector<DecodeState> advanced(pool.size());
    for (size_t b = 0; b < pool.size(); ++b) {
      if (pool[b].done) continue;
      any_alive = true;
      DecodeState st = pool[b].st;
      Tensor logp = ad::log_softmax(step(st, pool[b].seq.tokens.back()));
      advanced[b] = st;
      for (int v = 0; v < cfg_.vocab; ++v) {
        const double slp = static_cast<double>(logp.v()[static_cast<size_t>(v)]);
        expansions.push_back({pool[b].logp + slp, slp, v, static_cast<int>(b)});
      }
    }
    if (!any_alive) break;

    std::sort(expansions.begin(), expansions.end(), [](const Expansion& a, const Expansion& b) {
      if (a.cum_lp != b.cum_lp) return a.cum_lp > b.cum_lp;
      if (a.token != b.token) return a.token < b.token;
      return a.parent < b.parent;
    });

    // Finished beams carry over and compete by cumulative logprob.
    std::vector<Candidate> next;
    for (auto& c : pool)
      if (c.done) next.push_back(std::move(c));
    for (const auto& e : expansions) {
      Candidate c;
      c.seq = pool[static_cast<size_t>(e.parent)].seq;
      c.seq.tokens.push_back(e.token);
      c.seq.logprobs.push_back(e.step_lp);
      c.logp = e.cum_lp;
      c.st = advanced[static_cast<size_t>(e.parent)];
      c.done = e.token == cfg_.eos;
      next.push_back(std::move(c));
      if (static_cast<int>(next.size()) >= beam + static_cast<int>(pool.size())) break;
    }
    std::stable_sort(next.begin(), next.end(),
                     [](const Candidate& a, const Candidate& b) { return a.logp > b.logp; });
    if (static_cast<int>(next.size()) > beam) next.resize(static_cast<size_t>(beam));
    pool = std::move(next);
  }

  std::stable_sort(pool.begin(), pool.end(),
                   [](const Candidate& a, const Candidate& b) { return a.logp > b.logp; });
  std::vector<TokenSeq> out;
  for (auto& c : pool) out.push_back(std::move(c.seq));
  return out;
}

}  // namespace d3desk::model
