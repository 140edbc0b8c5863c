#ifndef OVLP_OVLP_H
#define OVLP_OVLP_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define OVLP_API __declspec(dllexport)
#else
#define OVLP_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ovlp_status {
  OVLP_OK = 0,
  OVLP_ERR_INVALID_ARGUMENT = 1,
  OVLP_ERR_IO = 2,
  OVLP_ERR_PARSE = 3,
  OVLP_ERR_DEGENERATE_BATCH = 4,
  OVLP_ERR_DIVERGED = 5,
  OVLP_ERR_CONFIG_MISMATCH = 6,
  OVLP_ERR_GENERATION_FAILED = 7,
  OVLP_ERR_GRADCHECK_FAILED = 8,
  OVLP_ERR_INTERNAL = 99
} ovlp_status;

/* Message of the last failing call on this thread; "" after a success. */
OVLP_API const char* ovlp_last_error(void);
OVLP_API const char* ovlp_version(void);

/* Every char* returned through an out-parameter is owned by the caller. */
OVLP_API void ovlp_string_free(char* s);

/* Geometry */

typedef struct ovlp_box {
  double center[3];
  double size[3];
} ovlp_box;

OVLP_API ovlp_status ovlp_box_iou(const ovlp_box* a, const ovlp_box* b, double* out);
/* grad (may be NULL) receives d loss / d pred as {cx, cy, cz, sx, sy, sz}. */
OVLP_API ovlp_status ovlp_box_diou(const ovlp_box* pred, const ovlp_box* gt, double* loss, double grad[6]);

/* IoU filter over precomputed IoUs. weights_out has n entries. */
OVLP_API ovlp_status ovlp_filter_ious(const double* ious, size_t n, double delta, double epsilon, double* weights_out,
                                      size_t* k_out, size_t* argmax_out);

/* Datasets */

typedef struct ovlp_gen_params {
  uint64_t seed;
  int n_scenes;
  int objects_per_scene;
  int jitter_per_object;
  int clutter_per_scene;
  double noise_scale;
  int num_classes;
  int num_colors;
  double attribute_noise;
  double attribute_flip;
  int max_attempts;
} ovlp_gen_params;

typedef struct ovlp_dataset ovlp_dataset;

OVLP_API void ovlp_gen_params_default(ovlp_gen_params* out);
OVLP_API ovlp_status ovlp_dataset_generate(const ovlp_gen_params* params, ovlp_dataset** out);
OVLP_API ovlp_status ovlp_dataset_read(const char* path, ovlp_dataset** out);
OVLP_API ovlp_status ovlp_dataset_write(const ovlp_dataset* ds, const char* path);
OVLP_API ovlp_status ovlp_dataset_audit_json(const ovlp_dataset* ds, char** out);
OVLP_API size_t ovlp_dataset_size(const ovlp_dataset* ds);
OVLP_API void ovlp_dataset_free(ovlp_dataset* ds);

/* Run configuration */

typedef struct ovlp_config ovlp_config;

OVLP_API ovlp_status ovlp_config_default(ovlp_config** out);
OVLP_API ovlp_status ovlp_config_load(const char* path, ovlp_config** out);
OVLP_API ovlp_status ovlp_config_from_json(const char* json, ovlp_config** out);
OVLP_API ovlp_status ovlp_config_to_json(const ovlp_config* cfg, char** out);
OVLP_API ovlp_status ovlp_config_hash(const ovlp_config* cfg, char** out);
OVLP_API ovlp_status ovlp_config_set_seed(ovlp_config* cfg, uint64_t seed);
OVLP_API ovlp_status ovlp_config_set_threads(ovlp_config* cfg, int threads);
/* Datasets named by the config. An empty train path yields the default
   generated set (seed 7) and, with an empty eval path, a held-out set
   (seed 1007); a given train path with an empty eval path evaluates on train. */
OVLP_API ovlp_status ovlp_config_datasets(const ovlp_config* cfg, ovlp_dataset** train, ovlp_dataset** eval);
OVLP_API void ovlp_config_free(ovlp_config* cfg);

/* Training and evaluation */

typedef struct ovlp_model ovlp_model;

/* eval may be NULL (evaluate on train). log_json may be NULL. */
OVLP_API ovlp_status ovlp_train(const ovlp_config* cfg, const ovlp_dataset* train, const ovlp_dataset* eval,
                                ovlp_model** model_out, char** log_json);
OVLP_API ovlp_status ovlp_model_save(const ovlp_model* model, const char* path);
OVLP_API ovlp_status ovlp_model_load(const char* path, ovlp_model** out);
OVLP_API ovlp_status ovlp_model_config_hash(const ovlp_model* model, char** out);
OVLP_API void ovlp_model_free(ovlp_model* model);

/* cfg may be NULL; otherwise its hash must match the model's. */
OVLP_API ovlp_status ovlp_evaluate(const ovlp_model* model, const ovlp_dataset* ds, const ovlp_config* cfg,
                                   char** report_json);
/* Renders a report produced by ovlp_evaluate as a fixed-width table. */
OVLP_API ovlp_status ovlp_report_format(const char* report_json, char** out);

/* Experiments */

/* Runs the none/oid/occ/osc/all grid. text may be NULL. */
OVLP_API ovlp_status ovlp_ablate(const ovlp_config* cfg, const uint64_t* seeds, size_t n_seeds,
                                 const ovlp_dataset* train, const ovlp_dataset* eval, char** table_json,
                                 char** text);

typedef struct ovlp_sweep ovlp_sweep;

OVLP_API ovlp_status ovlp_delta_sweep(const ovlp_config* cfg, const double* deltas, size_t n_deltas,
                                      const uint64_t* seeds, size_t n_seeds, const ovlp_dataset* train,
                                      const ovlp_dataset* eval, ovlp_sweep** out);
OVLP_API ovlp_status ovlp_sweep_json(const ovlp_sweep* sweep, char** out);
/* variant: "full" or "oid_only"; metric: "acc@0.25" or "acc@0.5". */
OVLP_API ovlp_status ovlp_sweep_csv(const ovlp_sweep* sweep, const char* variant, const char* metric, char** out);
OVLP_API void ovlp_sweep_free(ovlp_sweep* sweep);

/* Finite-difference check of the composite loss. A failed check is reported
   through *pass, not the status. */
OVLP_API ovlp_status ovlp_gradcheck(const ovlp_config* cfg, const uint64_t* seeds, size_t n_seeds, double h,
                                    double tol, int corrupt, int* pass, char** report_json);

OVLP_API ovlp_status ovlp_compare_scratch(const ovlp_config* cfg, const uint64_t* seeds, size_t n_seeds,
                                          const ovlp_dataset* train, const ovlp_dataset* eval, char** out);

#ifdef __cplusplus
}
#endif

#endif
