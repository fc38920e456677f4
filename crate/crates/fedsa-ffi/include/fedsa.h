#ifndef FEDSA_H
#define FEDSA_H

/* Generated by cbindgen from the fedsa-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FedsaStatus {
  FEDSA_STATUS_OK = 0,
  FEDSA_STATUS_NULL_ARGUMENT = 1,
  FEDSA_STATUS_INVALID_UTF8 = 2,
  FEDSA_STATUS_PARSE_ERROR = 3,
  FEDSA_STATUS_RUN_ERROR = 4,
  FEDSA_STATUS_OUT_OF_RANGE = 5,
} FedsaStatus;

/**
 * Parsed experiment manifest.
 */
typedef struct FedsaManifest FedsaManifest;

/**
 * Results of one manifest run.
 */
typedef struct FedsaReport FedsaReport;

/**
 * Per-experiment outcome snapshot.
 */
typedef struct FedsaExperimentStats {
  /**
   * False when this experiment failed; see `fedsa_report_entry_error`.
   */
  bool ok;
  /**
   * Final global accuracy, percent.
   */
  double final_accuracy_pct;
  /**
   * Signed percent deviation from the objective.
   */
  double final_delta_pct;
  uint32_t rounds;
  /**
   * Fraction of rounds with a surviving malicious model; negative when
   * the aggregation rule exposes no selection.
   */
  double detection_rate;
} FedsaExperimentStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. The pointer
 * stays valid until the next fedsa call on the same thread.
 */
const char *fedsa_last_error(void);

/**
 * Crate version as a static string; never freed.
 */
const char *fedsa_version(void);

/**
 * Parse a manifest file into a handle.
 *
 * # Safety
 * `path` must point to a NUL-terminated string and `out` to writable
 * pointer storage; both stay borrowed only for the duration of the call.
 */
enum FedsaStatus fedsa_manifest_parse(const char *path, struct FedsaManifest **out);

/**
 * Parse a manifest from TOML text instead of a file.
 *
 * # Safety
 * As for `fedsa_manifest_parse`.
 */
enum FedsaStatus fedsa_manifest_parse_str(const char *text, struct FedsaManifest **out);

/**
 * Number of experiments in the manifest; zero for a null handle.
 *
 * # Safety
 * `m` must be a live handle from a parse call or null.
 */
uintptr_t fedsa_manifest_experiment_count(const struct FedsaManifest *m);

/**
 * Fetch an experiment id by index as a newly allocated string.
 *
 * # Safety
 * `m` must be a live handle; `out` must point to writable pointer storage.
 * Free the result with `fedsa_string_free`.
 */
enum FedsaStatus fedsa_manifest_experiment_id(const struct FedsaManifest *m,
                                              uintptr_t index,
                                              char **out);

/**
 * Run every experiment in the manifest. Individual experiment failures do
 * not abort the batch; they surface as entries with `ok == false`. When
 * `out_dir` is non-null, per-round CSVs and summary JSONs are written
 * there, overriding the manifest's own output directory.
 *
 * # Safety
 * `m` must be a live manifest handle; `out_dir` null or NUL-terminated;
 * `out` must point to writable pointer storage. Free the result with
 * `fedsa_report_free`.
 */
enum FedsaStatus fedsa_manifest_run(const struct FedsaManifest *m,
                                    const char *out_dir,
                                    struct FedsaReport **out);

/**
 * Number of entries in a run report.
 *
 * # Safety
 * `r` must be a live report handle or null.
 */
uintptr_t fedsa_report_len(const struct FedsaReport *r);

/**
 * Copy one entry's stats into caller storage.
 *
 * # Safety
 * `r` must be a live report handle; `stats` must point to writable storage
 * for one `FedsaExperimentStats`.
 */
enum FedsaStatus fedsa_report_entry(const struct FedsaReport *r,
                                    uintptr_t index,
                                    struct FedsaExperimentStats *stats);

/**
 * Fetch an entry's experiment id as a newly allocated string.
 *
 * # Safety
 * As for `fedsa_report_entry`; free the result with `fedsa_string_free`.
 */
enum FedsaStatus fedsa_report_entry_id(const struct FedsaReport *r, uintptr_t index, char **out);

/**
 * Fetch an entry's failure message (empty string when it succeeded).
 *
 * # Safety
 * As for `fedsa_report_entry_id`.
 */
enum FedsaStatus fedsa_report_entry_error(const struct FedsaReport *r, uintptr_t index, char **out);

/**
 * RMS deviation of the discrete sliding-mode scalar plant from the
 * closed-form error trajectory; a dependency-free smoke test for bindings.
 *
 * # Safety
 * `rms_out` must point to writable storage for one double.
 */
enum FedsaStatus fedsa_scalar_plant_rms(double k,
                                        double c,
                                        double e0,
                                        double control_gain,
                                        double dt,
                                        uintptr_t steps,
                                        double *rms_out);

/**
 * Release a manifest handle.
 *
 * # Safety
 * `m` must be null or a pointer from a parse call, not yet freed.
 */
void fedsa_manifest_free(struct FedsaManifest *m);

/**
 * Release a report handle.
 *
 * # Safety
 * `r` must be null or a pointer from `fedsa_manifest_run`, not yet freed.
 */
void fedsa_report_free(struct FedsaReport *r);

/**
 * Release a string handed out by this library.
 *
 * # Safety
 * `s` must be null or a pointer from a fedsa function, not yet freed.
 */
void fedsa_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDSA_H */
