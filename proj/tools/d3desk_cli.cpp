// Command-line front end. Links only the shared C API plus header-only
// argument/JSON helpers; all pipeline logic lives behind libd3desk.
#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <memory>
#include <string>

#include "d3desk.h"

namespace {

using json = nlohmann::ordered_json;

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream is(path);
  if (!is) throw CLI::ValidationError("--config", "cannot open " + path);
  return json::parse(is);
}

struct Session {
  d3d_session* s = d3d_session_new();
  ~Session() { d3d_session_free(s); }
};

int finish(const Session& session, d3d_status status) {
  if (status != D3D_OK) {
    std::fprintf(stderr, "error (%d): %s\n", static_cast<int>(status),
                 d3d_last_error(session.s));
    return static_cast<int>(status);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"d3desk: detect, describe and discriminate on synthetic 3D scenes"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir, ckpt, task = "captioning", split = "val";
  std::string probe_listener;
  uint64_t seed = 0;
  bool seed_set = false, force = false;
  int stage = 1, objects = 0, iters = 0, resume = 0, beam = -1;
  double extra_ratio = -1, alpha = -1, beta = -1, k = -1;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file (flags win)");
    cmd->add_option("--seed", seed, "master seed")->each([&](const std::string&) {
      seed_set = true;
    });
  };

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(synth);
  synth->add_option("--out", out_dir, "output dataset directory")->required();
  synth->add_flag("--force", force, "overwrite a non-empty output directory");
  synth->add_option("--objects", objects, "fix the per-scene object count");

  CLI::App* train = app.add_subcommand("train", "run one training stage");
  add_common(train);
  train->add_option("--stage", stage, "stage 1..4")->required();
  train->add_option("--data", data_dir, "dataset directory (or $D3DESK_DATA)");
  train->add_option("--out", out_dir, "run directory")->required();
  train->add_option("--extra-ratio", extra_ratio, "unannotated extra data ratio (stage 4)");
  train->add_option("--alpha", alpha, "listener reward weight (default 0.1)");
  train->add_option("--beta", beta, "language-classifier reward weight (default 1.0)");
  train->add_option("--beam", beam, "beam width for sampling (default 3)");
  train->add_option("--iters", iters, "iteration budget override for this stage");
  train->add_option("--resume", resume, "resume from stage{K}/{iter}.ckpt");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval);
  eval->add_option("--task", task, "captioning|grounding|detection|probe")->required();
  eval->add_option("--data", data_dir, "dataset directory (or $D3DESK_DATA)");
  eval->add_option("--ckpt", ckpt, "checkpoint file")->required();
  eval->add_option("--split", split, "train|val|extra (default val)");
  eval->add_option("--out", out_dir, "report directory")->required();
  eval->add_option("--beam", beam, "beam width for caption decoding (0 = greedy)");
  eval->add_option("--k", k, "IoU threshold (default 0.5)");
  eval->add_option("--probe-listener", probe_listener,
                   "frozen listener checkpoint for the probe task");

  CLI11_PARSE(app, argc, argv);

  Session session;
  try {
    json cfg = load_config_file(config_path);
    if (seed_set) cfg["seed"] = seed;

    if (synth->parsed()) {
      if (objects > 0) {
        cfg["min_objects"] = objects;
        cfg["max_objects"] = objects;
      }
      return finish(session,
                    d3d_synth(session.s, cfg.dump().c_str(), out_dir.c_str(), force));
    }
    if (train->parsed()) {
      if (extra_ratio >= 0) cfg["extra_ratio"] = extra_ratio;
      if (alpha >= 0) cfg["alpha"] = alpha;
      if (beta >= 0) cfg["beta"] = beta;
      if (beam >= 0) cfg["beam"] = beam;
      if (iters > 0) cfg["iters_stage" + std::to_string(stage)] = iters;
      if (resume > 0) cfg["resume_iter"] = resume;
      return finish(session, d3d_train(session.s, stage, cfg.dump().c_str(),
                                       data_dir.c_str(), out_dir.c_str()));
    }
    // eval
    if (beam >= 0) cfg["beam"] = beam;
    if (k >= 0) cfg["k"] = k;
    if (!probe_listener.empty()) cfg["probe_listener"] = probe_listener;
    return finish(session,
                  d3d_eval(session.s, task.c_str(), cfg.dump().c_str(), data_dir.c_str(),
                           ckpt.c_str(), split.c_str(), out_dir.c_str(), nullptr));
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
