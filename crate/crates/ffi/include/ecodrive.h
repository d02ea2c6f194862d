#ifndef ECODRIVE_H
#define ECODRIVE_H

/* Generated by cbindgen from the ecodrive-ffi crate; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of a fallible call.
 */
typedef enum {
  ECODRIVE_STATUS_OK = 0,
  ECODRIVE_STATUS_NULL_ARGUMENT = 1,
  ECODRIVE_STATUS_INVALID_ARGUMENT = 2,
  ECODRIVE_STATUS_IO = 3,
  ECODRIVE_STATUS_RUN_FAILED = 4,
  ECODRIVE_STATUS_COLLISION = 5,
} EcodriveStatus;

/**
 * Opaque plant model handle (vehicle, battery, motors, fitted polynomials).
 */
typedef struct EcodriveModel EcodriveModel;

/**
 * Opaque closed-loop (or baseline) history handle.
 */
typedef struct EcodriveRunLog EcodriveRunLog;

/**
 * Opaque scenario handle.
 */
typedef struct EcodriveScenario EcodriveScenario;

/**
 * One plant step of a run history, by value.
 */
typedef struct {
  double t;
  double d;
  double v;
  double soc;
  double a;
  double t_f;
  double t_r;
  double p_bat;
  double f_b;
  double s1;
  double s2;
} EcodriveLogRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string.
 */
const char *ecodrive_version(void);

/**
 * Message of the most recent error on this thread; empty when none.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *ecodrive_last_error(void);

/**
 * Builds the default plant model (generates maps, fits polynomials).
 *
 * # Safety
 * `out` must be a valid pointer; the returned handle must be released with
 * [`ecodrive_model_free`].
 */
EcodriveStatus ecodrive_model_default(EcodriveModel **out);

/**
 * # Safety
 * `model` must come from [`ecodrive_model_default`] and not be freed twice.
 */
void ecodrive_model_free(EcodriveModel *model);

/**
 * Generates the default synthetic signalized corridor for `seed`.
 *
 * # Safety
 * `out` must be valid; release the handle with [`ecodrive_scenario_free`].
 */
EcodriveStatus ecodrive_scenario_generate(uint64_t seed, EcodriveScenario **out);

/**
 * Loads a scenario from CSV files; `signals_csv` and `grade_csv` may be NULL.
 *
 * # Safety
 * Strings must be NUL-terminated; `out` must be valid.
 */
EcodriveStatus ecodrive_scenario_load(const char *scenario_csv,
                                      const char *signals_csv,
                                      const char *grade_csv,
                                      double v_max,
                                      EcodriveScenario **out);

/**
 * Writes the scenario CSV files; `signals_csv`/`grade_csv` may be NULL.
 *
 * # Safety
 * `scenario` must be a live handle; strings NUL-terminated.
 */
EcodriveStatus ecodrive_scenario_save(const EcodriveScenario *scenario,
                                      const char *scenario_csv,
                                      const char *signals_csv,
                                      const char *grade_csv);

/**
 * Scenario length in seconds.
 *
 * # Safety
 * `scenario` must be a live handle.
 */
double ecodrive_scenario_duration(const EcodriveScenario *scenario);

/**
 * # Safety
 * `scenario` must come from a scenario constructor and not be freed twice.
 */
void ecodrive_scenario_free(EcodriveScenario *scenario);

/**
 * Runs the receding-horizon closed loop with the given seed and prediction
 * uncertainty (`sigma`, `mu` on acceleration; `p_s` shift magnitude in s).
 *
 * # Safety
 * Handles must be live; `out` must be valid; release the log with
 * [`ecodrive_runlog_free`].
 */
EcodriveStatus ecodrive_run_optimal(const EcodriveScenario *scenario,
                                    const EcodriveModel *model,
                                    uint64_t seed,
                                    double sigma,
                                    double mu,
                                    double p_s,
                                    EcodriveRunLog **out);

/**
 * Replays the preceding vehicle through the same powertrain (1:1 split).
 *
 * # Safety
 * Handles must be live; `out` must be valid.
 */
EcodriveStatus ecodrive_run_baseline(const EcodriveScenario *scenario,
                                     const EcodriveModel *model,
                                     double initial_soc,
                                     EcodriveRunLog **out);

/**
 * Number of plant steps in the log.
 *
 * # Safety
 * `log` must be a live handle.
 */
uintptr_t ecodrive_runlog_len(const EcodriveRunLog *log);

/**
 * # Safety
 * `log` must be a live handle.
 */
double ecodrive_runlog_final_soc(const EcodriveRunLog *log);

/**
 * Median NLP wall time per MPC cycle (0 for baseline logs).
 *
 * # Safety
 * `log` must be a live handle.
 */
double ecodrive_runlog_median_solve_time(const EcodriveRunLog *log);

/**
 * Copies row `index` into `out`.
 *
 * # Safety
 * `log` must be live and `out` valid.
 */
EcodriveStatus ecodrive_runlog_row(const EcodriveRunLog *log, uintptr_t index, EcodriveLogRow *out);

/**
 * Writes the full log as CSV.
 *
 * # Safety
 * `log` must be live; `path` NUL-terminated.
 */
EcodriveStatus ecodrive_runlog_write_csv(const EcodriveRunLog *log, const char *path);

/**
 * # Safety
 * `log` must come from a run constructor and not be freed twice.
 */
void ecodrive_runlog_free(EcodriveRunLog *log);

/**
 * Relative SOC improvement (percent) of an ego run against a baseline.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
EcodriveStatus ecodrive_r_soc(double soc_ego,
                              double soc_preceding,
                              double soc_initial,
                              double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ECODRIVE_H */
