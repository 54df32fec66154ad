#ifndef QSEG_H_
#define QSEG_H_

#include <stddef.h>
#include <stdint.h>

#if defined(QSEG_BUILDING_LIBRARY)
#define QSEG_API __attribute__((visibility("default")))
#else
#define QSEG_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum qseg_status
{
	QSEG_OK = 0,
	QSEG_ERR_INVALID_ARGUMENT = 1, /* bad key, value, shape, object name, class mismatch */
	QSEG_ERR_IO = 2,               /* unreadable, truncated or corrupt file */
	QSEG_ERR_DIVERGED = 3,         /* training aborted by the divergence detector */
	QSEG_ERR_INTERNAL = 4
} qseg_status;

typedef struct qseg_config qseg_config;
typedef struct qseg_dataset qseg_dataset;
typedef struct qseg_model qseg_model;
typedef struct qseg_run qseg_run;
typedef struct qseg_table qseg_table;

/* Message for the last failed call on this thread ("" if none). */
QSEG_API const char *qseg_last_error(void);
QSEG_API const char *qseg_status_name(qseg_status status);

/* Strings are returned through (buf, cap); *needed receives the full length plus the
   terminator. A too-small buffer is filled with a truncated, terminated prefix. */

/* ---- config ---- */
QSEG_API qseg_status qseg_config_create(qseg_config **out);
QSEG_API qseg_status qseg_config_clone(const qseg_config *cfg, qseg_config **out);
QSEG_API void qseg_config_destroy(qseg_config *cfg);
QSEG_API qseg_status qseg_config_set(qseg_config *cfg, const char *key, const char *value);
QSEG_API qseg_status qseg_config_get(const qseg_config *cfg, const char *key, char *buf, size_t cap, size_t *needed);
QSEG_API qseg_status qseg_config_load_file(qseg_config *cfg, const char *path);
QSEG_API qseg_status qseg_config_to_text(const qseg_config *cfg, char *buf, size_t cap, size_t *needed);
QSEG_API qseg_status qseg_config_validate(const qseg_config *cfg);
QSEG_API size_t qseg_config_key_count(void);
QSEG_API const char *qseg_config_key_name(size_t index);

/* ---- dataset ---- */
QSEG_API qseg_status qseg_dataset_generate(uint64_t seed, size_t samples, size_t size, size_t classes, qseg_dataset **out);
QSEG_API qseg_status qseg_dataset_load(const char *path, qseg_dataset **out);
/* Writes the binary file and a text manifest at manifest_path (may be NULL). */
QSEG_API qseg_status qseg_dataset_save(const qseg_dataset *ds, const char *path, const char *manifest_path);
QSEG_API size_t qseg_dataset_size(const qseg_dataset *ds);
QSEG_API size_t qseg_dataset_classes(const qseg_dataset *ds);
QSEG_API void qseg_dataset_destroy(qseg_dataset *ds);

/* ---- training ---- */
typedef struct qseg_step_record
{
	size_t step;
	double loss;
	double lr;
	double lr_fp;
	double g_scale_max;
	double g_scale_min;
	size_t g_concentrated;
	size_t g_clipped;
} qseg_step_record;

/* val may be NULL. On divergence returns QSEG_ERR_DIVERGED and still sets *out. */
QSEG_API qseg_status qseg_train(const qseg_config *cfg, const qseg_dataset *train, const qseg_dataset *val, qseg_run **out);
QSEG_API size_t qseg_run_step_count(const qseg_run *run);
QSEG_API qseg_status qseg_run_step(const qseg_run *run, size_t index, qseg_step_record *out);
QSEG_API int qseg_run_diverged(const qseg_run *run);
/* mIoU of the last evaluation; QSEG_ERR_INVALID_ARGUMENT if the run has none. */
QSEG_API qseg_status qseg_run_final_miou(const qseg_run *run, double *miou);
/* run.csv, eval.csv, config.resolved and checkpoint.qckpt. */
QSEG_API qseg_status qseg_run_write_artifacts(const qseg_run *run, const char *dir);
QSEG_API qseg_status qseg_run_model(const qseg_run *run, qseg_model **out);
QSEG_API void qseg_run_destroy(qseg_run *run);

/* ---- model (network + the config it was built from) ---- */
QSEG_API qseg_status qseg_model_init(const qseg_config *cfg, size_t classes, qseg_model **out);
QSEG_API qseg_status qseg_model_load(const char *path, qseg_model **out);
QSEG_API qseg_status qseg_model_save(const qseg_model *model, const char *path);
QSEG_API qseg_status qseg_model_config(const qseg_model *model, qseg_config **out);
QSEG_API size_t qseg_model_classes(const qseg_model *model);
QSEG_API size_t qseg_model_parameter_count(const qseg_model *model);
QSEG_API void qseg_model_destroy(qseg_model *model);

typedef struct qseg_eval_result
{
	double miou;
	double pixel_accuracy;
	size_t classes;
} qseg_eval_result;

/* iou (length iou_cap, may be NULL) receives per-class IoU, NaN for absent classes.
   per_image selects per-image mIoU averaging. */
QSEG_API qseg_status qseg_evaluate(qseg_model *model, const qseg_dataset *ds, int per_image, qseg_eval_result *out,
		double *iou, size_t iou_cap);

typedef struct qseg_profile_summary
{
	size_t layers;
	double scale_max;
	double scale_min;
} qseg_profile_summary;

/* object: W A E1 E2 G mu sigma gamma beta xhat. cfg may be NULL (use the model's).
   out_dir may be NULL (no files). */
QSEG_API qseg_status qseg_profile(const qseg_model *model, const qseg_config *cfg, const qseg_dataset *ds,
		const char *object, const char *out_dir, qseg_profile_summary *out);

/* ---- sweeps (runs cfg.seeds seeds per arm; out_dir may be NULL) ---- */
QSEG_API qseg_status qseg_sweep_ku(const qseg_config *cfg, const int *k_u, size_t count, const qseg_dataset *train,
		const qseg_dataset *val, const char *out_dir, qseg_table **out);
QSEG_API qseg_status qseg_sweep_scaling(const qseg_config *cfg, const qseg_dataset *train, const qseg_dataset *val,
		const char *out_dir, qseg_table **out);
QSEG_API qseg_status qseg_sweep_structure(const qseg_config *cfg, const qseg_dataset *train, const qseg_dataset *val,
		const char *out_dir, qseg_table **out);
QSEG_API size_t qseg_table_rows(const qseg_table *table);
/* Row label as "key=value;key=value". */
QSEG_API qseg_status qseg_table_label(const qseg_table *table, size_t row, char *buf, size_t cap, size_t *needed);
QSEG_API qseg_status qseg_table_mean(const qseg_table *table, size_t row, double *mean);
QSEG_API qseg_status qseg_table_write_csv(const qseg_table *table, const char *path);
QSEG_API void qseg_table_destroy(qseg_table *table);

/* ---- buffer-level quantizers ---- */
QSEG_API qseg_status qseg_quant_step(int bits, double *step);
/* mode: uniform, scale, stochastic, constant2 (off copies). seed drives stochastic mode.
   scale (may be NULL) receives the scale factor used. */
QSEG_API qseg_status qseg_quantize(const double *in, double *out, size_t n, int bits, const char *mode, uint64_t seed,
		double *scale);

#ifdef __cplusplus
}
#endif

#endif /* QSEG_H_ */
