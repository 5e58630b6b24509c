#include "d3desk/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

#include "d3desk/cider.hpp"

namespace d3desk::train {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using ad::Tensor;

data::Scene augment_scene(const data::Scene& scene, Rng& rng, double jitter_sigma,
                          bool full) {
  data::Scene out = scene;
  const geom::AABB room = geom::bbox_from_points(scene.points);
  const double cx = (room.mn[0] + room.mx[0]) / 2, cy = (room.mn[1] + room.mx[1]) / 2;
  bool mirror = false;
  double theta = 0;
  if (full) {
    mirror = rng.uniform() < 0.5;
    theta = rng.uniform(0, 2 * M_PI);
  }
  const double ct = std::cos(theta), st = std::sin(theta);
  for (int i = 0; i < out.num_points(); ++i) {
    auto& p = out.points[static_cast<size_t>(i)];
    for (int d = 0; d < 3; ++d) p[d] += rng.normal(0, jitter_sigma);
    auto& f = out.features[static_cast<size_t>(i)];
    if (mirror) {
      p[0] = 2 * cx - p[0];
      if (f.size() >= 6) f[3] = -f[3];
    }
    if (theta != 0) {
      const double x = p[0] - cx, y = p[1] - cy;
      p[0] = cx + ct * x - st * y;
      p[1] = cy + st * x + ct * y;
      if (f.size() >= 6) {
        const double nx = f[3], ny = f[4];
        f[3] = ct * nx - st * ny;
        f[4] = st * nx + ct * ny;
      }
    }
  }
  auto members = evals::gt_instance_members(out);
  for (size_t oi = 0; oi < out.gt_objects.size(); ++oi)
    if (!members[oi].empty())
      out.gt_objects[oi].bbox = geom::bbox_from_points(out.points, members[oi]);
  return out;
}

namespace {

std::vector<int> strip_specials(const std::vector<int>& tokens) {
  std::vector<int> out;
  for (int t : tokens)
    if (t != data::Vocabulary::kPad && t != data::Vocabulary::kSos &&
        t != data::Vocabulary::kEos)
      out.push_back(t);
  return out;
}

void check_finite(double v, int stage, int iter, const char* what) {
  if (!std::isfinite(v))
    throw std::runtime_error("stage" + std::to_string(stage) + " diverged at iteration " +
                             std::to_string(iter) + ": non-finite " + what);
}

std::vector<int> annotated_object_indices(const data::Scene& s) {
  std::vector<int> out;
  for (size_t oi = 0; oi < s.gt_objects.size(); ++oi)
    if (!s.gt_objects[oi].descriptions.empty()) out.push_back(static_cast<int>(oi));
  return out;
}

// The highest-IoU proposal for a GT box; -1 when nothing overlaps.
int best_proposal(const std::vector<model::Proposal>& proposals, const geom::AABB& gt) {
  int best = -1;
  double best_iou = 0;
  for (size_t pi = 0; pi < proposals.size(); ++pi) {
    const double v = geom::iou(proposals[pi].bbox, gt);
    if (v > best_iou) {
      best_iou = v;
      best = static_cast<int>(pi);
    }
  }
  return best;
}

}  // namespace

struct Trainer::StageIO {
  int stage = 0;
  std::string dir;
  std::ofstream metrics;
  std::ofstream rewards;
  Rng rng{0};
  int start_iter = 0;
  int budget = 0;
  std::unique_ptr<ad::Adam> main_opt;
  std::unique_ptr<ad::Adam> listener_opt;
  std::vector<Tensor> main_params;
  std::vector<Tensor> listener_params;
};

std::string Trainer::stage_dir(const std::string& run_dir, int stage) {
  return (fs::path(run_dir) / ("stage" + std::to_string(stage))).string();
}

std::string Trainer::final_checkpoint(const std::string& run_dir, int stage) {
  return (fs::path(stage_dir(run_dir, stage)) / "final.ckpt").string();
}

Trainer::Trainer(const data::Dataset& ds, TrainConfig cfg)
    : ds_(ds), cfg_(cfg), models_(pipe::make_models(cfg.model, cfg.seed)) {}

std::vector<std::string> Trainer::sample_batch(const std::vector<std::string>& pool,
                                               Rng& rng) const {
  std::vector<std::string> out;
  for (int b = 0; b < cfg_.batch_scenes; ++b)
    out.push_back(pool[static_cast<size_t>(rng.pick(static_cast<int>(pool.size())))]);
  return out;
}

void Trainer::run_stage(int stage, const std::string& run_dir, int resume_iter) {
  if (stage < 1 || stage > 4) throw std::invalid_argument("trainer: stage must be 1..4");
  StageIO io;
  io.stage = stage;
  io.dir = stage_dir(run_dir, stage);
  fs::create_directories(io.dir);
  const int budgets[4] = {cfg_.iters_stage1, cfg_.iters_stage2, cfg_.iters_stage3,
                          cfg_.iters_stage4};
  io.budget = budgets[stage - 1];
  io.rng = Rng(cfg_.seed * 10007 + static_cast<uint64_t>(stage));

  // Parameter groups per stage.
  auto tensors_of = [](const ad::NamedParams& np) {
    std::vector<Tensor> out;
    for (const auto& [n, t] : np) out.push_back(t);
    return out;
  };
  switch (stage) {
    case 1:
      io.main_params = tensors_of(models_.detector->named_params());
      break;
    case 2: {
      if (!cfg_.freeze_detector_stage2)
        io.main_params = tensors_of(models_.detector->named_params());
      for (auto& [n, t] : models_.speaker->named_params()) io.main_params.push_back(t);
      break;
    }
    case 3:
      io.main_params = tensors_of(models_.listener->named_params());
      break;
    case 4: {
      io.main_params = tensors_of(models_.detector->named_params());
      for (auto& [n, t] : models_.speaker->named_params()) io.main_params.push_back(t);
      io.listener_params = tensors_of(models_.listener->named_params());
      break;
    }
  }
  const double lr = stage == 1 ? cfg_.lr_stage1 : cfg_.lr_later;
  io.main_opt = std::make_unique<ad::Adam>(io.main_params, static_cast<ad::Scalar>(lr));
  if (stage == 4)
    io.listener_opt =
        std::make_unique<ad::Adam>(io.listener_params, static_cast<ad::Scalar>(lr));

  // Parameter restore: resume checkpoint, or the previous stage's final.
  auto opt_state_params = [&](const char* tag, const std::vector<Tensor>& params) {
    ad::NamedParams out;
    for (size_t i = 0; i < params.size(); ++i) {
      out.emplace_back("__opt." + std::string(tag) + ".m." + std::to_string(i),
                       Tensor::zeros(params[i].shape()));
      out.emplace_back("__opt." + std::string(tag) + ".v." + std::to_string(i),
                       Tensor::zeros(params[i].shape()));
    }
    return out;
  };

  if (resume_iter > 0) {
    const std::string ckpt =
        (fs::path(io.dir) / (std::to_string(resume_iter) + ".ckpt")).string();
    if (!fs::exists(ckpt))
      throw std::runtime_error("trainer: resume checkpoint missing: " + ckpt);
    ad::NamedParams params = pipe::all_params(models_);
    ad::NamedParams main_state = opt_state_params("main", io.main_params);
    for (auto& p : main_state) params.push_back(p);
    ad::NamedParams lis_state;
    if (io.listener_opt) {
      lis_state = opt_state_params("listener", io.listener_params);
      for (auto& p : lis_state) params.push_back(p);
    }
    std::map<std::string, std::string> meta;
    ad::load_into(ckpt, params, &meta);
    io.rng.set_state(meta.at("data_rng"));
    io.start_iter = resume_iter;
    ad::Adam::State st;
    st.t = std::stoll(meta.at("opt_main_t"));
    for (size_t i = 0; i < io.main_params.size(); ++i) {
      st.m.push_back(main_state[2 * i].second.v());
      st.v.push_back(main_state[2 * i + 1].second.v());
    }
    io.main_opt->import_state(st);
    if (io.listener_opt) {
      ad::Adam::State ls;
      ls.t = std::stoll(meta.at("opt_listener_t"));
      for (size_t i = 0; i < io.listener_params.size(); ++i) {
        ls.m.push_back(lis_state[2 * i].second.v());
        ls.v.push_back(lis_state[2 * i + 1].second.v());
      }
      io.listener_opt->import_state(ls);
    }
  } else if (stage > 1) {
    const std::string prev = final_checkpoint(run_dir, stage - 1);
    if (!fs::exists(prev))
      throw std::runtime_error("trainer: stage" + std::to_string(stage) +
                               " requires the stage" + std::to_string(stage - 1) +
                               " checkpoint at " + prev);
    pipe::load_models(prev, models_);
  }

  io.metrics.open(fs::path(io.dir) / "metrics.jsonl",
                  resume_iter > 0 ? std::ios::app : std::ios::trunc);
  if (!io.metrics) throw std::runtime_error("trainer: cannot write metrics in " + io.dir);
  if (stage == 4) {
    io.rewards.open(fs::path(io.dir) / "rewards.jsonl",
                    resume_iter > 0 ? std::ios::app : std::ios::trunc);
    if (!io.rewards) throw std::runtime_error("trainer: cannot write rewards in " + io.dir);
  }

  switch (stage) {
    case 1: stage1(io); break;
    case 2: stage2(io); break;
    case 3: stage3(io); break;
    case 4: stage4(io); break;
  }
}

namespace {

// Shared checkpoint writer: params + optimizer state + rng position.
void save_state(const std::string& path, const pipe::Models& models,
                const std::vector<Tensor>& main_params, const ad::Adam& main_opt,
                const std::vector<Tensor>* listener_params, const ad::Adam* listener_opt,
                const Rng& rng, int stage, int iter, uint64_t seed,
                const pipe::ModelConfig& model_cfg) {
  ad::NamedParams extra;
  const ad::Adam::State ms = main_opt.export_state();
  for (size_t i = 0; i < main_params.size(); ++i) {
    extra.emplace_back("__opt.main.m." + std::to_string(i),
                       Tensor::from(main_params[i].shape(), ms.m[i]));
    extra.emplace_back("__opt.main.v." + std::to_string(i),
                       Tensor::from(main_params[i].shape(), ms.v[i]));
  }
  std::map<std::string, std::string> meta = {
      {"stage", std::to_string(stage)},
      {"iteration", std::to_string(iter)},
      {"seed", std::to_string(seed)},
      {"data_rng", rng.state()},
      {"opt_main_t", std::to_string(ms.t)},
      {"model_config", pipe::model_config_to_json(model_cfg)}};
  if (listener_opt) {
    const ad::Adam::State ls = listener_opt->export_state();
    for (size_t i = 0; i < listener_params->size(); ++i) {
      extra.emplace_back("__opt.listener.m." + std::to_string(i),
                         Tensor::from((*listener_params)[i].shape(), ls.m[i]));
      extra.emplace_back("__opt.listener.v." + std::to_string(i),
                         Tensor::from((*listener_params)[i].shape(), ls.v[i]));
    }
    meta["opt_listener_t"] = std::to_string(ls.t);
  }
  pipe::save_models(path, models, extra, meta);
}

}  // namespace

void Trainer::stage1(StageIO& io) {
  std::vector<std::string> pool = ds_.split.train;
  pool.insert(pool.end(), ds_.split.extra.begin(), ds_.split.extra.end());
  for (int iter = io.start_iter + 1; iter <= io.budget; ++iter) {
    Tensor total;
    double sem = 0, oreg = 0, odir = 0, cscore = 0;
    const auto batch = sample_batch(pool, io.rng);
    for (const auto& id : batch) {
      data::Scene aug = augment_scene(ds_.scene(id), io.rng, cfg_.jitter_sigma,
                                      cfg_.full_augment_stage1);
      model::DetectorOutput out = models_.detector->detect(aug, false);
      model::DetectionLoss dl = models_.detector->detection_loss(out, aug);
      total = total.defined() ? ad::add(total, dl.total) : dl.total;
      sem += static_cast<double>(dl.sem.item());
      oreg += static_cast<double>(dl.offset_reg.item());
      odir += static_cast<double>(dl.offset_dir.item());
      cscore += static_cast<double>(dl.cluster_score.item());
    }
    const double b = static_cast<double>(batch.size());
    Tensor loss = ad::scale(total, static_cast<ad::Scalar>(1.0 / b));
    check_finite(static_cast<double>(loss.item()), 1, iter, "loss");
    io.main_opt->zero_grad();
    loss.backward();
    io.main_opt->step();

    if (iter % cfg_.log_every == 0 || iter == io.budget) {
      json line;
      line["stage"] = 1;
      line["iter"] = iter;
      line["loss"] = static_cast<double>(loss.item());
      line["l_sem"] = sem / b;
      line["l_o_reg"] = oreg / b;
      line["l_o_dir"] = odir / b;
      line["l_c_score"] = cscore / b;
      io.metrics << line.dump() << "\n";
    }
    if (cfg_.checkpoint_every > 0 && iter % cfg_.checkpoint_every == 0)
      save_state((fs::path(io.dir) / (std::to_string(iter) + ".ckpt")).string(), models_,
                 io.main_params, *io.main_opt, nullptr, nullptr, io.rng, 1, iter,
                 cfg_.seed, cfg_.model);
  }
  io.metrics.flush();
  save_state((fs::path(io.dir) / "final.ckpt").string(), models_, io.main_params,
             *io.main_opt, nullptr, nullptr, io.rng, 1, io.budget, cfg_.seed, cfg_.model);
}

void Trainer::stage2(StageIO& io) {
  for (int iter = io.start_iter + 1; iter <= io.budget; ++iter) {
    Tensor det_total, mle_total, ori_total;
    int n_pairs = 0, n_ori = 0, n_skipped = 0;
    const auto batch = sample_batch(ds_.split.train, io.rng);
    for (const auto& id : batch) {
      data::Scene aug =
          augment_scene(ds_.scene(id), io.rng, cfg_.jitter_sigma, false);
      model::DetectorOutput out = models_.detector->detect(aug, false);
      model::DetectionLoss dl = models_.detector->detection_loss(out, aug);
      det_total = det_total.defined() ? ad::add(det_total, dl.total) : dl.total;
      if (out.proposals.empty()) {
        n_skipped += cfg_.descriptions_per_scene;
        continue;
      }
      model::MessagePassingOut mp = models_.speaker->message_passing(out.proposals);
      if (cfg_.ori_in_stage2) {
        model::OrientationLoss ol =
            models_.speaker->orientation_loss(mp, out.proposals, aug.gt_objects);
        if (ol.matched_edges > 0) {
          ori_total = ori_total.defined() ? ad::add(ori_total, ol.value) : ol.value;
          ++n_ori;
        }
      }
      const std::vector<int> anns = annotated_object_indices(aug);
      if (anns.empty()) continue;
      for (int k = 0; k < cfg_.descriptions_per_scene; ++k) {
        const int oi = anns[static_cast<size_t>(io.rng.pick(static_cast<int>(anns.size())))];
        const auto& descs = aug.gt_objects[static_cast<size_t>(oi)].descriptions;
        const auto& tokens = descs[static_cast<size_t>(io.rng.pick(static_cast<int>(descs.size())))];
        const int pi = best_proposal(out.proposals, aug.gt_objects[static_cast<size_t>(oi)].bbox);
        if (pi < 0) {
          ++n_skipped;
          continue;
        }
        Tensor loss = models_.speaker->mle_loss(mp, pi, tokens);
        mle_total = mle_total.defined() ? ad::add(mle_total, loss) : loss;
        ++n_pairs;
      }
    }
    Tensor loss = ad::scale(det_total, static_cast<ad::Scalar>(1.0 / batch.size()));
    if (n_pairs > 0)
      loss = ad::add(loss, ad::scale(mle_total, static_cast<ad::Scalar>(1.0 / n_pairs)));
    if (n_ori > 0)
      loss = ad::add(loss, ad::scale(ori_total, static_cast<ad::Scalar>(0.3 / n_ori)));
    check_finite(static_cast<double>(loss.item()), 2, iter, "loss");
    io.main_opt->zero_grad();
    loss.backward();
    io.main_opt->step();

    if (iter % cfg_.log_every == 0 || iter == io.budget) {
      json line;
      line["stage"] = 2;
      line["iter"] = iter;
      line["loss"] = static_cast<double>(loss.item());
      line["l_det"] = static_cast<double>(det_total.item()) / batch.size();
      line["l_spk_xe"] =
          n_pairs > 0 ? static_cast<double>(mle_total.item()) / n_pairs : 0.0;
      line["l_ori"] = n_ori > 0 ? static_cast<double>(ori_total.item()) / n_ori : 0.0;
      line["pairs"] = n_pairs;
      line["skipped_pairs"] = n_skipped;
      io.metrics << line.dump() << "\n";
    }
    if (cfg_.checkpoint_every > 0 && iter % cfg_.checkpoint_every == 0)
      save_state((fs::path(io.dir) / (std::to_string(iter) + ".ckpt")).string(), models_,
                 io.main_params, *io.main_opt, nullptr, nullptr, io.rng, 2, iter,
                 cfg_.seed, cfg_.model);
  }
  io.metrics.flush();
  save_state((fs::path(io.dir) / "final.ckpt").string(), models_, io.main_params,
             *io.main_opt, nullptr, nullptr, io.rng, 2, io.budget, cfg_.seed, cfg_.model);
}

void Trainer::stage3(StageIO& io) {
  for (int iter = io.start_iter + 1; iter <= io.budget; ++iter) {
    Tensor loc_total, cls_total;
    int n_pairs = 0, n_skipped = 0;
    double chance_loc = 0;
    const auto batch = sample_batch(ds_.split.train, io.rng);
    for (const auto& id : batch) {
      data::Scene aug =
          augment_scene(ds_.scene(id), io.rng, cfg_.jitter_sigma, false);
      std::vector<model::Proposal> proposals;
      {
        ad::NoGradGuard ng;  // detector frozen in stage 3
        if (cfg_.stage3_gt_proposals)
          proposals =
              models_.detector->proposals_from_members(aug, evals::gt_instance_members(aug));
        else
          proposals = models_.detector->detect(aug, false).proposals;
      }
      if (proposals.empty()) {
        n_skipped += cfg_.descriptions_per_scene;
        continue;
      }
      Tensor inputs = models_.listener->proposal_inputs(proposals);
      const std::vector<int> anns = annotated_object_indices(aug);
      if (anns.empty()) continue;
      for (int k = 0; k < cfg_.descriptions_per_scene; ++k) {
        const int oi = anns[static_cast<size_t>(io.rng.pick(static_cast<int>(anns.size())))];
        const auto& descs = aug.gt_objects[static_cast<size_t>(oi)].descriptions;
        const auto& tokens = descs[static_cast<size_t>(io.rng.pick(static_cast<int>(descs.size())))];
        const int pi = best_proposal(proposals, aug.gt_objects[static_cast<size_t>(oi)].bbox);
        if (pi < 0) {
          ++n_skipped;
          continue;
        }
        model::LanguageEncoding lang = models_.listener->encode_language(tokens);
        model::FusionOutput fused = models_.listener->fuse(lang, inputs);
        model::ListenerLosses ll = models_.listener->losses(
            fused, pi, aug.gt_objects[static_cast<size_t>(oi)].semantic_class);
        loc_total = loc_total.defined() ? ad::add(loc_total, ll.loc) : ll.loc;
        cls_total = cls_total.defined() ? ad::add(cls_total, ll.lobjcls) : ll.lobjcls;
        chance_loc += std::log(static_cast<double>(proposals.size()));
        ++n_pairs;
      }
    }
    if (n_pairs == 0) {
      json line;
      line["stage"] = 3;
      line["iter"] = iter;
      line["loss"] = 0.0;
      line["pairs"] = 0;
      line["skipped_pairs"] = n_skipped;
      io.metrics << line.dump() << "\n";
      continue;
    }
    Tensor loss = ad::scale(ad::add(loc_total, cls_total),
                            static_cast<ad::Scalar>(1.0 / n_pairs));
    check_finite(static_cast<double>(loss.item()), 3, iter, "loss");
    io.main_opt->zero_grad();
    loss.backward();
    io.main_opt->step();

    if (iter % cfg_.log_every == 0 || iter == io.budget) {
      json line;
      line["stage"] = 3;
      line["iter"] = iter;
      line["loss"] = static_cast<double>(loss.item());
      line["l_loc"] = static_cast<double>(loc_total.item()) / n_pairs;
      line["l_lobjcls"] = static_cast<double>(cls_total.item()) / n_pairs;
      line["chance_loc"] = chance_loc / n_pairs;
      line["pairs"] = n_pairs;
      line["skipped_pairs"] = n_skipped;
      io.metrics << line.dump() << "\n";
    }
    if (cfg_.checkpoint_every > 0 && iter % cfg_.checkpoint_every == 0)
      save_state((fs::path(io.dir) / (std::to_string(iter) + ".ckpt")).string(), models_,
                 io.main_params, *io.main_opt, nullptr, nullptr, io.rng, 3, iter,
                 cfg_.seed, cfg_.model);
  }
  io.metrics.flush();
  save_state((fs::path(io.dir) / "final.ckpt").string(), models_, io.main_params,
             *io.main_opt, nullptr, nullptr, io.rng, 3, io.budget, cfg_.seed, cfg_.model);
}

void Trainer::stage4(StageIO& io) {
  // Reference statistics for the CIDEr reward, fitted on the train split.
  std::map<std::string, std::vector<std::vector<int>>> refs;
  for (const auto& id : ds_.split.train) {
    const data::Scene& s = ds_.scene(id);
    for (size_t oi = 0; oi < s.gt_objects.size(); ++oi) {
      std::vector<std::vector<int>> stripped;
      for (const auto& d : s.gt_objects[oi].descriptions)
        stripped.push_back(strip_specials(d));
      if (!stripped.empty()) refs[id + "#" + std::to_string(oi)] = std::move(stripped);
    }
  }
  const metrics::CiderCorpus corpus = metrics::CiderCorpus::fit(refs);

  // The resampled extra pool is fixed for the whole run.
  std::vector<std::string> extra_pool;
  if (cfg_.extra_ratio > 0) {
    Rng pool_rng(cfg_.seed ^ 0x5bd1e995965d5c2full);
    extra_pool = data::sample_extra(ds_.split.extra, cfg_.extra_ratio,
                                    ds_.split.train.size(), pool_rng);
  }

  const bool listener_reward = cfg_.reward.alpha > 0;
  const int t_max = models_.speaker->config().t_max;

  // One joint batch (annotated or unannotated); returns the logged fields.
  auto run_batch = [&](int iter, bool annotated) {
    const auto batch = sample_batch(annotated ? ds_.split.train : extra_pool, io.rng);
    Tensor det_total, reinforce_total, ori_total;
    std::vector<Tensor> listener_terms;
    int n_obj = 0, n_ori = 0, n_skipped = 0;
    double adv_sum = 0, cider_sum = 0;
    int adv_n = 0;

    for (const auto& id : batch) {
      data::Scene aug =
          augment_scene(ds_.scene(id), io.rng, cfg_.jitter_sigma, false);
      model::DetectorOutput out = models_.detector->detect(aug, false);
      model::DetectionLoss dl = models_.detector->detection_loss(out, aug);
      det_total = det_total.defined() ? ad::add(det_total, dl.total) : dl.total;
      if (out.proposals.empty()) continue;
      model::MessagePassingOut mp = models_.speaker->message_passing(out.proposals);
      model::OrientationLoss ol =
          models_.speaker->orientation_loss(mp, out.proposals, aug.gt_objects);
      if (ol.matched_edges > 0) {
        ori_total = ori_total.defined() ? ad::add(ori_total, ol.value) : ol.value;
        ++n_ori;
      }

      // Described objects: annotated scenes pair GT objects with their best
      // proposals; extra scenes caption randomly selected detections.
      std::vector<std::pair<int, int>> described;  // (object index or -1, proposal)
      if (annotated) {
        const std::vector<int> anns = annotated_object_indices(aug);
        if (anns.empty()) continue;
        for (int k = 0; k < cfg_.descriptions_per_scene; ++k) {
          const int oi = anns[static_cast<size_t>(io.rng.pick(static_cast<int>(anns.size())))];
          const int pi = best_proposal(out.proposals, aug.gt_objects[static_cast<size_t>(oi)].bbox);
          if (pi < 0) {
            ++n_skipped;
            continue;
          }
          described.emplace_back(oi, pi);
        }
      } else {
        std::vector<int> pis(out.proposals.size());
        for (size_t i = 0; i < pis.size(); ++i) pis[i] = static_cast<int>(i);
        io.rng.shuffle(pis);
        const int count =
            std::min<int>(cfg_.descriptions_per_scene, static_cast<int>(pis.size()));
        for (int k = 0; k < count; ++k) described.emplace_back(-1, pis[static_cast<size_t>(k)]);
      }
      if (described.empty()) continue;

      // Candidate pool for the listener: the described proposals, detached so
      // the listener's own update cannot reach detector weights.
      std::vector<int> pool_proposals;
      std::map<int, int> pool_pos;
      for (const auto& [oi, pi] : described)
        if (!pool_pos.count(pi)) {
          pool_pos[pi] = static_cast<int>(pool_proposals.size());
          pool_proposals.push_back(pi);
        }
      std::vector<model::Proposal> cand;
      for (int pi : pool_proposals) {
        model::Proposal p = out.proposals[static_cast<size_t>(pi)];
        p.feature = p.feature.detach();
        cand.push_back(std::move(p));
      }
      Tensor cand_inputs = models_.listener->proposal_inputs(cand);

      auto listener_eval = [&](const std::vector<int>& tokens, int target_pi,
                               int target_class) -> std::pair<double, double> {
        if (!listener_reward) return {0.0, 0.0};
        ad::NoGradGuard ng;
        model::LanguageEncoding lang = models_.listener->encode_language(tokens);
        model::FusionOutput fused = models_.listener->fuse(lang, cand_inputs);
        model::ListenerLosses ll =
            models_.listener->losses(fused, pool_pos.at(target_pi), target_class);
        return {static_cast<double>(ll.loc.item()),
                static_cast<double>(ll.lobjcls.item())};
      };

      for (const auto& [oi, pi] : described) {
        const int target_class =
            annotated ? aug.gt_objects[static_cast<size_t>(oi)].semantic_class
                      : out.proposals[static_cast<size_t>(pi)].predicted_class;
        if (target_class < 0 || target_class >= cfg_.model.listener.num_classes) {
          ++n_skipped;  // e.g. a detection voted into the floor class
          continue;
        }
        model::TokenSeq greedy = models_.speaker->decode_greedy(mp, pi, t_max);
        std::vector<model::TokenSeq> beams =
            models_.speaker->decode_beam(mp, pi, t_max, cfg_.beam);
        const auto [gloc, globj] = listener_eval(greedy.tokens, pi, target_class);
        const std::string key =
            annotated ? id + "#" + std::to_string(oi) : std::string();
        const metrics::CiderCorpus* corpus_ptr =
            annotated && refs.count(key) ? &corpus : nullptr;

        std::vector<Tensor> logprobs;
        std::vector<double> advantages;
        for (size_t s = 0; s < beams.size(); ++s) {
          const auto [loc, lobj] = listener_eval(beams[s].tokens, pi, target_class);
          rl::RewardRecord rec = rl::compute_reward(
              corpus_ptr, key, strip_specials(beams[s].tokens), loc, lobj,
              strip_specials(greedy.tokens), gloc, globj, cfg_.reward);
          logprobs.push_back(models_.speaker->sequence_logprob(mp, pi, beams[s].tokens));
          advantages.push_back(rec.advantage);
          adv_sum += rec.advantage;
          cider_sum += rec.cider;
          ++adv_n;
          json rline;
          rline["iter"] = iter;
          rline["scene"] = id;
          rline["object"] = oi;
          rline["proposal"] = pi;
          rline["sample"] = s;
          rline["cider"] = rec.cider;
          rline["loc_loss"] = rec.loc_loss;
          rline["lobjcls_loss"] = rec.lobjcls_loss;
          rline["reward"] = rec.reward;
          rline["baseline"] = rec.baseline;
          rline["advantage"] = rec.advantage;
          io.rewards << rline.dump() << "\n";
        }
        Tensor r = rl::reinforce_loss(logprobs, advantages);
        reinforce_total = reinforce_total.defined() ? ad::add(reinforce_total, r) : r;
        ++n_obj;

        // Listener fine-tuning pair on the top beam caption.
        if (listener_reward) {
          model::LanguageEncoding lang =
              models_.listener->encode_language(beams[0].tokens);
          model::FusionOutput fused = models_.listener->fuse(lang, cand_inputs);
          model::ListenerLosses ll =
              models_.listener->losses(fused, pool_pos.at(pi), target_class);
          listener_terms.push_back(ad::add(ll.loc, ll.lobjcls));
        }
      }
    }

    Tensor loss = ad::scale(det_total, static_cast<ad::Scalar>(1.0 / batch.size()));
    if (n_obj > 0)
      loss = ad::add(loss,
                     ad::scale(reinforce_total, static_cast<ad::Scalar>(1.0 / n_obj)));
    if (n_ori > 0)
      loss = ad::add(loss, ad::scale(ori_total, static_cast<ad::Scalar>(0.3 / n_ori)));
    check_finite(static_cast<double>(loss.item()), 4, iter, "loss");
    io.main_opt->zero_grad();
    loss.backward();
    io.main_opt->step();

    double listener_loss = 0;
    if (!listener_terms.empty()) {
      Tensor lt = listener_terms[0];
      for (size_t i = 1; i < listener_terms.size(); ++i)
        lt = ad::add(lt, listener_terms[i]);
      lt = ad::scale(lt, static_cast<ad::Scalar>(1.0 / listener_terms.size()));
      listener_loss = static_cast<double>(lt.item());
      check_finite(listener_loss, 4, iter, "listener loss");
      io.listener_opt->zero_grad();
      lt.backward();
      io.listener_opt->step();
    }

    json line;
    line["stage"] = 4;
    line["iter"] = iter;
    line["kind"] = annotated ? "annotated" : "extra";
    line["loss"] = static_cast<double>(loss.item());
    line["l_det"] = static_cast<double>(det_total.item()) / batch.size();
    line["l_spk_r"] =
        n_obj > 0 ? static_cast<double>(reinforce_total.item()) / n_obj : 0.0;
    line["l_ori"] = n_ori > 0 ? static_cast<double>(ori_total.item()) / n_ori : 0.0;
    line["l_listener"] = listener_loss;
    line["mean_advantage"] = adv_n > 0 ? adv_sum / adv_n : 0.0;
    line["mean_cider"] = adv_n > 0 ? cider_sum / adv_n : 0.0;
    line["objects"] = n_obj;
    line["skipped"] = n_skipped;
    io.metrics << line.dump() << "\n";
  };

  long long extra_issued =
      static_cast<long long>(std::floor(io.start_iter * cfg_.extra_ratio + 1e-9));
  for (int iter = io.start_iter + 1; iter <= io.budget; ++iter) {
    run_batch(iter, true);
    const long long extra_due =
        static_cast<long long>(std::floor(iter * cfg_.extra_ratio + 1e-9));
    while (extra_issued < extra_due) {
      run_batch(iter, false);
      ++extra_issued;
    }
    if (cfg_.checkpoint_every > 0 && iter % cfg_.checkpoint_every == 0)
      save_state((fs::path(io.dir) / (std::to_string(iter) + ".ckpt")).string(), models_,
                 io.main_params, *io.main_opt, &io.listener_params,
                 io.listener_opt.get(), io.rng, 4, iter, cfg_.seed, cfg_.model);
  }
  io.metrics.flush();
  io.rewards.flush();
  save_state((fs::path(io.dir) / "final.ckpt").string(), models_, io.main_params,
             *io.main_opt, &io.listener_params, io.listener_opt.get(), io.rng, 4,
             io.budget, cfg_.seed, cfg_.model);
}

}  // namespace d3desk::train
