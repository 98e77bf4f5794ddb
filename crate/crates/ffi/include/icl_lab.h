/* C interface for icl-lab: HMM-mixture in-context learning laboratory. */

#ifndef ICL_LAB_H
#define ICL_LAB_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible function.
 */
typedef enum {
  ICL_STATUS_OK = 0,
  ICL_STATUS_NULL_POINTER = 1,
  ICL_STATUS_INVALID_UTF8 = 2,
  ICL_STATUS_INVALID_ARGUMENT = 3,
  ICL_STATUS_IO = 4,
  ICL_STATUS_PARSE_ERROR = 5,
  ICL_STATUS_UNLABELABLE_INPUT = 6,
  ICL_STATUS_IMPOSSIBLE_INPUT = 7,
  ICL_STATUS_DEGENERATE_KERNEL_MASS = 8,
  ICL_STATUS_ENUMERATION_CAP = 9,
  ICL_STATUS_SINGULAR_MATRIX = 10,
  ICL_STATUS_NON_COMPLIANT = 11,
  ICL_STATUS_BUFFER_TOO_SMALL = 12,
  ICL_STATUS_INTERNAL = 13,
} IclStatus;

/**
 * Opaque HMM handle.
 */
typedef struct IclHmm IclHmm;

/**
 * Opaque prompt handle.
 */
typedef struct IclPrompt IclPrompt;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *icl_version(void);

/**
 * Message for the most recent error on this thread, or an empty string.
 * Valid until the next failing call on the same thread.
 */
const char *icl_last_error_message(void);

/**
 * Release a string returned by this library.
 *
 * # Safety
 * `s` must have been returned by an icl-lab function and not freed before.
 */
void icl_string_free(char *s);

/**
 * Generate an assumption-compliant HMM.
 * `shared_anchors` nonzero keeps the anchor pool shared across tasks
 * (finite task distinguishability); zero gives each task a private anchor.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
IclStatus icl_hmm_generate(uintptr_t num_tasks,
                           uintptr_t d_per_task,
                           uintptr_t m,
                           double epsilon_r_target,
                           double epsilon_d_target,
                           double separation_target,
                           uintptr_t num_labels,
                           double label_margin,
                           int32_t shared_anchors,
                           uint64_t seed,
                           IclHmm **out);

/**
 * Load an HMM from the structured text format.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string, `out` a valid pointer.
 */
IclStatus icl_hmm_load(const char *path, IclHmm **out);

/**
 * Parse an HMM from in-memory text.
 *
 * # Safety
 * `text` must be a valid NUL-terminated string, `out` a valid pointer.
 */
IclStatus icl_hmm_parse(const char *text, IclHmm **out);

/**
 * Write an HMM to a file in the structured text format.
 *
 * # Safety
 * `hmm` must be a live handle and `path` a valid NUL-terminated string.
 */
IclStatus icl_hmm_save(const IclHmm *hmm, const char *path);

/**
 * Serialize an HMM to a newly-allocated string (free with icl_string_free).
 *
 * # Safety
 * `hmm` must be a live handle, `out` a valid pointer.
 */
IclStatus icl_hmm_to_text(const IclHmm *hmm, char **out);

/**
 * Release an HMM handle.
 *
 * # Safety
 * `hmm` must come from this library and not be freed twice.
 */
void icl_hmm_free(IclHmm *hmm);

uintptr_t icl_hmm_num_states(const IclHmm *hmm);

uintptr_t icl_hmm_num_obs(const IclHmm *hmm);

uintptr_t icl_hmm_num_tasks(const IclHmm *hmm);

uint32_t icl_hmm_delimiter(const IclHmm *hmm);

/**
 * Copy the label set into `buf`; `written` receives the label count.
 * Fails with BufferTooSmall when `cap` is insufficient.
 *
 * # Safety
 * Pointers must be valid for the stated capacities.
 */
IclStatus icl_hmm_label_set(const IclHmm *hmm, uint32_t *buf, uintptr_t cap, uintptr_t *written);

/**
 * P(tokens | p_pre-train) by the forward recursion.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
IclStatus icl_forward_likelihood(const IclHmm *hmm,
                                 const uint32_t *tokens,
                                 uintptr_t len,
                                 double *out);

/**
 * P(tokens | p_pre-train) by observable-operator products.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
IclStatus icl_operator_likelihood(const IclHmm *hmm,
                                  const uint32_t *tokens,
                                  uintptr_t len,
                                  double *out);

/**
 * ln P(tokens | p_pre-train); -inf for impossible sequences.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
IclStatus icl_log_likelihood(const IclHmm *hmm, const uint32_t *tokens, uintptr_t len, double *out);

/**
 * Dot product of the two inputs' next-token predictive distributions.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
IclStatus icl_prediction_similarity(const IclHmm *hmm,
                                    const uint32_t *a,
                                    uintptr_t a_len,
                                    const uint32_t *b,
                                    uintptr_t b_len,
                                    double *out);

/**
 * Sample an in-context prompt: n demonstrations of fixed length plus a
 * test input, all from `task`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
IclStatus icl_build_prompt(const IclHmm *hmm,
                           uintptr_t task,
                           uintptr_t n,
                           uintptr_t demo_length,
                           uint64_t seed,
                           IclPrompt **out);

/**
 * Release a prompt handle.
 *
 * # Safety
 * `prompt` must come from this library and not be freed twice.
 */
void icl_prompt_free(IclPrompt *prompt);

/**
 * Number of tokens in the flattened prompt.
 *
 * # Safety
 * `prompt` must be a live handle.
 */
uintptr_t icl_prompt_token_count(const IclPrompt *prompt);

/**
 * Copy the flattened prompt tokens into `buf`.
 *
 * # Safety
 * Pointers must be valid for the stated capacities.
 */
IclStatus icl_prompt_tokens(const IclPrompt *prompt,
                            uint32_t *buf,
                            uintptr_t cap,
                            uintptr_t *written);

/**
 * Exact Bayesian posterior prediction over the prompt. `scores` receives
 * one probability per label (label-set order); `out_label` the argmax
 * label token.
 *
 * # Safety
 * Pointers must be valid for the stated capacities.
 */
IclStatus icl_bayes_predict(const IclHmm *hmm,
                            const IclPrompt *prompt,
                            uint32_t *out_label,
                            double *scores,
                            uintptr_t scores_cap);

/**
 * Kernel-regression prediction with pre-training-moment weights.
 * Moment matrices are enumerated exactly up to `exact_cap` sequences per
 * length; `lambda_rel` is the ridge weight relative to trace/dim.
 *
 * # Safety
 * Pointers must be valid for the stated capacities.
 */
IclStatus icl_kernel_predict(const IclHmm *hmm,
                             const IclPrompt *prompt,
                             double lambda_rel,
                             uint64_t exact_cap,
                             uint32_t *out_label,
                             double *scores,
                             uintptr_t scores_cap);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* ICL_LAB_H */
