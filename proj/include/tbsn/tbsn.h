/* C interface to the blind-spot denoising laboratory.
 *
 * Every function returns a tbsn_status; on failure, tbsn_last_error()
 * describes what went wrong (thread-local, valid until the next call on the
 * same thread). Handles are opaque and must be released with
 * tbsn_model_free.
 */
#ifndef TBSN_TBSN_H
#define TBSN_TBSN_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum tbsn_status {
  TBSN_OK = 0,
  TBSN_VERIFY_FAIL = 1,    /* certification ran and did not pass */
  TBSN_CONFIG_ERROR = 2,   /* bad config, schema violation, bad usage */
  TBSN_NUMERIC_ERROR = 3,  /* non-finite values, diverged training */
  TBSN_IO_ERROR = 4,       /* unreadable/unwritable files, bad containers */
  TBSN_INVALID_ARGUMENT = 5
} tbsn_status;

const char* tbsn_last_error(void);

typedef struct tbsn_model tbsn_model;

/* Loads a trained checkpoint ("tbsn" or "student" kind). */
tbsn_status tbsn_model_load(const char* checkpoint_path, tbsn_model** out);

/* Builds an untrained network from the "model" section of a run-config JSON
 * document, then randomizes every parameter (including the projections that
 * initialize to zero) so certification probes exercise each architectural
 * path. */
tbsn_status tbsn_model_build_random(const char* run_config_json, uint64_t seed,
                                    tbsn_model** out);

void tbsn_model_free(tbsn_model* model);

tbsn_status tbsn_model_kind(const tbsn_model* model, char* buf, size_t buflen);
tbsn_status tbsn_model_param_count(const tbsn_model* model, uint64_t* count);
tbsn_status tbsn_model_fingerprint(const tbsn_model* model, char* buf, size_t buflen);

/* Denoises one PNG. pd_factor 1 applies the network directly; students
 * should use 1 and r3_replicas 0. r3_replicas > 0 enables random-replacement
 * refinement with the given replica count and replacement probability. */
tbsn_status tbsn_denoise_image(tbsn_model* model, const char* input_png,
                               const char* output_png, int pd_factor, int r3_replicas,
                               double r3_p, uint64_t seed);

/* Receptive-field certification. mode is "strict" or "parity". Runs the
 * gradient oracle always and the perturbation oracle when size <= 32; both
 * must pass. Writes a JSON report when report_path is non-NULL. On a clean
 * run *passed is 1/0; the status is TBSN_OK even when certification fails,
 * so callers distinguish infrastructure errors from verification verdicts. */
tbsn_status tbsn_verify(tbsn_model* model, const char* mode, int size, double tolerance,
                        uint64_t probe_seed, const char* report_path, int* passed,
                        double* leakage_ratio);

/* Exports the autodiff receptive-field map. format: "pfm" or "png". */
tbsn_status tbsn_rf_map(tbsn_model* model, int size, uint64_t probe_seed,
                        const char* out_path, const char* format);

/* Self-supervised training driven by a run-config JSON document (text, not a
 * path). Writes checkpoints, metrics.csv and resolved-config.json under the
 * config's io.out_dir. */
tbsn_status tbsn_train(const char* run_config_json, double* final_val_psnr,
                       double* noisy_val_psnr);

/* Knowledge distillation from a trained teacher checkpoint into the student
 * described by the config. cache_teacher != 0 reuses teacher outputs across
 * runs via PFM files in <out_dir>/teacher_cache. */
tbsn_status tbsn_distill(const char* run_config_json, const char* teacher_checkpoint,
                         int cache_teacher, double* student_val_psnr,
                         double* teacher_val_psnr);

/* Synthesizes noisy images from the clean directory per the config's noise
 * section, denoises them with the model, and writes a per-image psnr/ssim
 * CSV. pd_factor 0 means plain application. */
tbsn_status tbsn_evaluate(tbsn_model* model, const char* run_config_json,
                          const char* clean_dir, int pd_factor, int r3_replicas,
                          double r3_p, const char* out_csv, double* mean_psnr,
                          double* mean_ssim);

/* Writes `count` procedurally generated clean RGB PNGs into dir. */
tbsn_status tbsn_generate_dataset(const char* dir, int count, int size, uint64_t seed);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* TBSN_TBSN_H */
