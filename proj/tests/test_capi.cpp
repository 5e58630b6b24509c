#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>

#include "d3desk.h"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Session {
  d3d_session* s = d3d_session_new();
  ~Session() { d3d_session_free(s); }
};

const fs::path kRoot = fs::temp_directory_path() / "d3desk_capi_test";

const char* kSynthCfg = R"({
  "seed": 9,
  "train_scenes": 5, "val_scenes": 2, "extra_scenes": 3,
  "min_objects": 2, "max_objects": 4,
  "min_points_per_object": 30, "max_points_per_object": 50,
  "floor_points": 60
})";

const char* kTrainCfg = R"({
  "seed": 3,
  "iters_stage1": 10, "iters_stage2": 5, "iters_stage3": 5, "iters_stage4": 3,
  "batch_scenes": 2, "descriptions_per_scene": 3, "beam": 2,
  "det_hidden": 16, "proposal_dim": 20, "min_cluster_points": 10,
  "extra_ratio": 0.5
})";

}  // namespace

TEST_CASE("session lifecycle and version") {
  Session s;
  CHECK(std::strcmp(d3d_last_error(s.s), "") == 0);
  CHECK(d3d_version() != nullptr);
}

TEST_CASE("synth validates arguments and refuses overwrites") {
  Session s;
  fs::remove_all(kRoot);
  fs::create_directories(kRoot);

  CHECK(d3d_synth(s.s, nullptr, nullptr, 0) == D3D_ERR_INVALID_ARGUMENT);
  CHECK(d3d_synth(s.s, "[1,2]", (kRoot / "bad").string().c_str(), 0) ==
        D3D_ERR_INVALID_ARGUMENT);

  const std::string data = (kRoot / "data").string();
  REQUIRE(d3d_synth(s.s, kSynthCfg, data.c_str(), 0) == D3D_OK);
  CHECK(fs::exists(kRoot / "data" / "manifest.json"));
  CHECK(fs::exists(kRoot / "data" / "vocab.json"));

  // Non-empty output without force is refused; force overwrites.
  CHECK(d3d_synth(s.s, kSynthCfg, data.c_str(), 0) == D3D_ERR_IO);
  CHECK(std::string(d3d_last_error(s.s)).find("not empty") != std::string::npos);
  CHECK(d3d_synth(s.s, kSynthCfg, data.c_str(), 1) == D3D_OK);
}

TEST_CASE("train enforces stage prerequisites and records the manifest") {
  Session s;
  const std::string data = (kRoot / "data").string();
  const std::string run = (kRoot / "run").string();
  REQUIRE(fs::exists(kRoot / "data" / "manifest.json"));

  // Stage 4 without stage 3: a state error naming stage3.
  CHECK(d3d_train(s.s, 4, kTrainCfg, data.c_str(), run.c_str()) == D3D_ERR_STATE);
  CHECK(std::string(d3d_last_error(s.s)).find("stage3") != std::string::npos);

  CHECK(d3d_train(s.s, 0, kTrainCfg, data.c_str(), run.c_str()) ==
        D3D_ERR_INVALID_ARGUMENT);

  for (int stage = 1; stage <= 4; ++stage)
    REQUIRE(d3d_train(s.s, stage, kTrainCfg, data.c_str(), run.c_str()) == D3D_OK);
  CHECK(fs::exists(fs::path(run) / "stage4" / "final.ckpt"));
  CHECK(fs::exists(fs::path(run) / "stage4" / "rewards.jsonl"));

  std::ifstream is(fs::path(run) / "manifest.json");
  REQUIRE(is.good());
  json manifest = json::parse(is);
  CHECK(manifest["config"]["extra_ratio"].get<double>() == 0.5);
  CHECK(manifest["config"]["alpha"].get<double>() == 0.1);  // paper default
  CHECK(manifest["config"]["beta"].get<double>() == 1.0);
  CHECK(manifest.contains("dataset_hash"));
}

TEST_CASE("eval writes reports, dumps and tables for every task") {
  Session s;
  const std::string data = (kRoot / "data").string();
  const std::string ckpt = (kRoot / "run" / "stage4" / "final.ckpt").string();
  REQUIRE(fs::exists(ckpt));

  for (const std::string task : {"captioning", "grounding", "detection"}) {
    const std::string out = (kRoot / ("eval_" + task)).string();
    char* report = nullptr;
    REQUIRE(d3d_eval(s.s, task.c_str(), R"({"k":0.5})", data.c_str(), ckpt.c_str(),
                     "val", out.c_str(), &report) == D3D_OK);
    REQUIRE(report != nullptr);
    json r = json::parse(report);
    d3d_string_free(report);
    CHECK(r["task"] == task);
    CHECK(r["k"].get<double>() == 0.5);
    if (task == "captioning") {
      CHECK(r.contains("C"));
      CHECK(r.contains("B4"));
      CHECK(r.contains("R"));
      CHECK(r.contains("mAP"));
      CHECK(fs::exists(fs::path(out) / "captions.json"));
    } else if (task == "grounding") {
      CHECK(r.contains("unique"));
      CHECK(r.contains("multiple"));
      CHECK(r.contains("overall"));
      CHECK(fs::exists(fs::path(out) / "grounding.json"));
      // table mirrors the Unique/Multiple/Overall column layout
      std::ifstream ts(fs::path(out) / "table.txt");
      std::string table((std::istreambuf_iterator<char>(ts)),
                        std::istreambuf_iterator<char>());
      CHECK(table.find("Unique") != std::string::npos);
      CHECK(table.find("Multiple") != std::string::npos);
      CHECK(table.find("Overall") != std::string::npos);
    } else {
      CHECK(r.contains("mAP"));
      CHECK(fs::exists(fs::path(out) / "proposals.json"));
    }
    CHECK(fs::exists(fs::path(out) / "report.json"));
    CHECK(fs::exists(fs::path(out) / "manifest.json"));
  }

  // probe needs its listener checkpoint
  CHECK(d3d_eval(s.s, "probe", "{}", data.c_str(), ckpt.c_str(), "val",
                 (kRoot / "eval_probe").string().c_str(),
                 nullptr) == D3D_ERR_INVALID_ARGUMENT);
  const std::string probe_cfg =
      std::string(R"({"probe_listener":")") + (kRoot / "run" / "stage3" / "final.ckpt").string() +
      "\"}";
  char* report = nullptr;
  REQUIRE(d3d_eval(s.s, "probe", probe_cfg.c_str(), data.c_str(), ckpt.c_str(), "val",
                   (kRoot / "eval_probe").string().c_str(), &report) == D3D_OK);
  json r = json::parse(report);
  d3d_string_free(report);
  CHECK(r["task"] == "probe");
  CHECK(r.contains("overall"));

  CHECK(d3d_eval(s.s, "nonsense", "{}", data.c_str(), ckpt.c_str(), "val",
                 (kRoot / "eval_x").string().c_str(), nullptr) ==
        D3D_ERR_INVALID_ARGUMENT);
}

TEST_CASE("D3DESK_DATA supplies the dataset root") {
  Session s;
  setenv("D3DESK_DATA", (kRoot / "data").string().c_str(), 1);
  const std::string out = (kRoot / "eval_env").string();
  const std::string ckpt = (kRoot / "run" / "stage1" / "final.ckpt").string();
  CHECK(d3d_eval(s.s, "detection", "{}", "", ckpt.c_str(), "val", out.c_str(),
                 nullptr) == D3D_OK);
  unsetenv("D3DESK_DATA");
  CHECK(d3d_eval(s.s, "detection", "{}", "", ckpt.c_str(), "val", out.c_str(),
                 nullptr) == D3D_ERR_INVALID_ARGUMENT);
}
