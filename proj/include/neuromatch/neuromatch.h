#ifndef NEUROMATCH_H
#define NEUROMATCH_H

/*
 * C interface to the neuromatch pipeline. A session collects string options
 * (the same vocabulary the command line tool exposes as flags) and runs one
 * of the four batch commands against them. All functions are safe to call
 * with a NULL session except nm_session_create and nm_version.
 */

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes, chosen to double as process exit codes. */
#define NM_OK 0     /* success */
#define NM_ERROR 1  /* runtime failure: bad data, io, diverged training, ... */
#define NM_USAGE 2  /* malformed request: unknown option, bad value, missing required option */

typedef struct nm_session nm_session;

/* Create a session with no options set. Returns NULL only on allocation failure. */
nm_session* nm_session_create(void);

void nm_session_destroy(nm_session* session);

/*
 * Set one option. Keys use the command line spelling without dashes, e.g.
 * "manifest", "out", "seed", "protocol", "trials", "lambda", "lambdas",
 * "sim", "context", "folds", "test-per-fold", "word-boundaries", "regions",
 * "jobs". The value is validated immediately; on NM_USAGE the option is not
 * stored and nm_last_error describes the problem. Setting a key twice
 * replaces the previous value.
 */
int nm_set_option(nm_session* session, const char* key, const char* value);

/* Remove every stored option. */
void nm_clear_options(nm_session* session);

/*
 * Run one command: "synth", "preprocess", "train" or "evaluate", using the
 * options stored on the session. Returns NM_OK, NM_ERROR or NM_USAGE; on
 * failure nm_last_error describes it. Options that do not apply to the
 * command are rejected as NM_USAGE.
 */
int nm_run(nm_session* session, const char* command);

/* Message for the most recent failure on this session; "" when none. */
const char* nm_last_error(const nm_session* session);

/*
 * Primary artifact of the most recent successful nm_run: the manifest path
 * for synth/preprocess, the output directory for train/evaluate. "" before
 * the first successful run.
 */
const char* nm_last_output(const nm_session* session);

/* Library version as "major.minor.patch". */
const char* nm_version(void);

#ifdef __cplusplus
}
#endif

#endif /* NEUROMATCH_H */
