/* d3desk C API: synthetic-scene dataset synthesis, stage-wise training of the
 * detect/describe/discriminate pipeline, and evaluation, behind an opaque
 * session handle. All functions return a status code; the message for the
 * last failure on a session is available via d3d_last_error(). */
#ifndef D3DESK_H
#define D3DESK_H

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define D3D_API __declspec(dllexport)
#else
#define D3D_API __attribute__((visibility("default")))
#endif

typedef struct d3d_session d3d_session;

typedef enum d3d_status {
  D3D_OK = 0,
  D3D_ERR_INVALID_ARGUMENT = 1,
  D3D_ERR_IO = 2,
  D3D_ERR_STATE = 3, /* missing prerequisite (dataset, checkpoint, stage) */
  D3D_ERR_DIVERGED = 4,
  D3D_ERR_INTERNAL = 5
} d3d_status;

D3D_API d3d_session* d3d_session_new(void);
D3D_API void d3d_session_free(d3d_session* s);

/* Message for the most recent failure on this session; empty string if none.
 * The pointer stays valid until the next call on the session. */
D3D_API const char* d3d_last_error(const d3d_session* s);

D3D_API const char* d3d_version(void);

/* Generates a dataset (scenes/, vocab.json, manifest.json) under out_dir.
 * config_json is a flat JSON object of overrides (may be NULL): seed,
 * train_scenes, val_scenes, extra_scenes, min_objects, max_objects,
 * num_classes, room_extent, min_points_per_object, max_points_per_object,
 * floor_points, point_cap, max_descriptions. Refuses a non-empty out_dir
 * unless force is nonzero. */
D3D_API d3d_status d3d_synth(d3d_session* s, const char* config_json,
                             const char* out_dir, int force);

/* Runs one training stage (1..4) on the dataset at data_dir, writing
 * checkpoints and metric logs under run_dir/stage{K}/. Stages 2-4 require the
 * previous stage's final checkpoint in run_dir. config_json overrides (may be
 * NULL): seed, lr_stage1, lr_later, batch_scenes, descriptions_per_scene,
 * iters_stage1..iters_stage4, extra_ratio, alpha, beta, beam,
 * freeze_detector_stage2, ori_in_stage2, checkpoint_every, log_every,
 * resume_iter, plus architecture dims (det_hidden, proposal_dim, ...). */
D3D_API d3d_status d3d_train(d3d_session* s, int stage, const char* config_json,
                             const char* data_dir, const char* run_dir);

/* task: "captioning" | "grounding" | "detection" | "probe".
 * Writes report.json, a plain-text table and the prediction dumps under
 * out_dir. config_json overrides (may be NULL): k (IoU threshold), beam,
 * probe_listener (checkpoint path; required for the probe task).
 * If report_json is non-NULL it receives a malloc'd copy of the report;
 * release it with d3d_string_free. */
D3D_API d3d_status d3d_eval(d3d_session* s, const char* task, const char* config_json,
                            const char* data_dir, const char* checkpoint,
                            const char* split, const char* out_dir,
                            char** report_json);

D3D_API void d3d_string_free(char* str);

#ifdef __cplusplus
}
#endif

#endif /* D3DESK_H */
