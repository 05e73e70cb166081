/* C interface for the bsde-rep laboratory.
 *
 * Conventions:
 *  - every function returns a bsde_rep_status; out-parameters are written
 *    only on BSDE_REP_OK;
 *  - handles are opaque and must be released with the matching _free;
 *  - strings written through out-parameters are NUL-terminated, owned by
 *    the caller, and released with bsde_rep_string_free;
 *  - bsde_rep_last_error_message returns a thread-local message describing
 *    the most recent failure on the calling thread; do not free it;
 *  - panics never cross the boundary (surfaced as BSDE_REP_PANIC).
 */

#ifndef BSDE_REP_H
#define BSDE_REP_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum bsde_rep_status {
  BSDE_REP_OK = 0,
  BSDE_REP_NULL_POINTER = 1,
  BSDE_REP_INVALID_UTF8 = 2,
  /* Malformed configuration (schema, values, or window geometry). */
  BSDE_REP_CONFIG = 3,
  /* A declared assumption failed its sampled check. */
  BSDE_REP_COMPLIANCE = 4,
  /* Numerical failure (singular regression, non-finite evaluation, ...). */
  BSDE_REP_RUNTIME = 5,
  BSDE_REP_PANIC = 6,
} bsde_rep_status;

typedef struct BsdeRepConfig BsdeRepConfig;
typedef struct BsdeRepReport BsdeRepReport;

/* Most recent error message on this thread; valid until the next failing
 * call on the same thread. Never NULL. */
const char *bsde_rep_last_error_message(void);

/* Parse a JSON experiment configuration. */
bsde_rep_status bsde_rep_config_parse(const char *json, BsdeRepConfig **out);
void bsde_rep_config_free(BsdeRepConfig *cfg);

/* Run the representation ladder described by the configuration. */
bsde_rep_status bsde_rep_run_representation(const BsdeRepConfig *cfg,
                                            BsdeRepReport **out);
void bsde_rep_report_free(BsdeRepReport *report);

/* Verdict of a completed run: 0 pass, 2 a checked bound failed, 3 the
 * solver did not converge everywhere; -1 on NULL. Mirrors the CLI exit
 * codes. */
int32_t bsde_rep_report_verdict(const BsdeRepReport *report);

/* Fitted convergence order of the ladder error (NaN on NULL). */
double bsde_rep_report_fitted_order(const BsdeRepReport *report);

/* Serialize the report. The string is owned by the caller. */
bsde_rep_status bsde_rep_report_to_json(const BsdeRepReport *report,
                                        char **out);
bsde_rep_status bsde_rep_report_to_csv(const BsdeRepReport *report,
                                       char **out);
void bsde_rep_string_free(char *s);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* BSDE_REP_H */
