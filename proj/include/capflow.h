#ifndef CAPFLOW_H
#define CAPFLOW_H

/* C surface of the capacitive pouring library.  Functions returning int
 * yield CAPFLOW_OK on success and a nonzero code on failure; the failure
 * message is kept per thread and read back with capflow_last_error.
 * Strings handed out through char** are heap blocks owned by the caller;
 * release them with capflow_free_string, nothing else. */

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

enum {
  CAPFLOW_OK = 0,
  CAPFLOW_EINVAL = 1, /* bad argument or malformed config */
  CAPFLOW_EIO = 2,    /* file could not be read or written */
  CAPFLOW_EFAIL = 3   /* computation reported failure */
};

const char* capflow_version(void);
/* message of the last failure on this thread, "" when none */
const char* capflow_last_error(void);
void capflow_free_string(char* s);

/* An experiment bundles the substance catalog with suite settings.
 * Freshly created ones carry the built-in defaults. */
typedef struct capflow_experiment capflow_experiment;

capflow_experiment* capflow_experiment_new(void);
void capflow_experiment_free(capflow_experiment* e);

/* replace the catalog with one parsed from a config file */
int capflow_experiment_load_catalog(capflow_experiment* e, const char* path);
int capflow_experiment_set_seed(capflow_experiment* e, uint64_t seed);
/* directory for suite artifacts; "" keeps results in memory only */
int capflow_experiment_set_out_dir(capflow_experiment* e, const char* dir);
/* comma-separated subset of: full,no_owe,no_offsets,elec6,elec2,bc */
int capflow_experiment_set_variants(capflow_experiment* e, const char* csv);
/* integer knobs by name: train_days, iterations, noise_free,
 * chance_shuffles, scaling_chains, trials_per_cell, pwp_train_trials,
 * pwp_epochs, pwp_batch, owe_reps, bc_demos_per_cell, bc_epochs */
int capflow_experiment_set_field(capflow_experiment* e, const char* key, long long value);
/* canonical text of the current settings, catalog included */
char* capflow_experiment_describe(const capflow_experiment* e);

/* Grasp classification suite: accuracy, chance floor, electrode ablation,
 * class-count scaling.  Pouring suite: the configured variants end to end.
 * Both write artifact files when an out_dir is set and return a short
 * plain-text summary either way. */
int capflow_run_classification(const capflow_experiment* e, char** summary);
int capflow_run_pouring(const capflow_experiment* e, char** summary);

/* A trained poured-weight predictor. */
typedef struct capflow_model capflow_model;

capflow_model* capflow_model_load(const char* path);
void capflow_model_free(capflow_model* m);

/* Train a predictor on freshly simulated pours.  electrode_set is one of
 * "10", "6", "2", "1" (NULL means "10"); offsets toggles the learned
 * start/end-shift outputs.  The model is written to model_path when that
 * is non-NULL.  A summary line lands in *summary when it is non-NULL. */
int capflow_train_pwp(const capflow_experiment* e, const char* electrode_set, int offsets,
                      const char* model_path, char** summary);

/* Overpour calibration for every pourable substance; *csv receives
 * "substance,a,b,c,rmse,n" rows. */
int capflow_fit_owe(const capflow_experiment* e, const capflow_model* m, char** csv);

/* One closed-loop pour on a held-out day.  use_owe runs the calibration
 * stage first and corrects the stop threshold.  *log_csv receives summary
 * comment lines and then the per-tick log table. */
int capflow_pour_once(const capflow_experiment* e, const capflow_model* m,
                      const char* substance, double target_g, int use_owe, char** log_csv);

/* Simulate a single trial and hand back its canonical text form.
 * container NULL or "none": a scripted pour of duration_s seconds;
 * otherwise a 2 s grasp cycle of that filled container. */
int capflow_sim_trial(const capflow_experiment* e, const char* substance,
                      const char* container, int64_t day, double duration_s,
                      char** trial_text);

#ifdef __cplusplus
}
#endif

#endif /* CAPFLOW_H */
