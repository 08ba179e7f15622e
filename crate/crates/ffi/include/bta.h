#ifndef BTA_H
#define BTA_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Status codes. 2, 3 and 4 agree with the exit codes of the `bta` binary.
 */
typedef enum BtaStatus {
  BTA_STATUS_OK = 0,
  /**
   * Bad configuration value or unknown stage name.
   */
  BTA_STATUS_VALIDATION = 2,
  /**
   * A required artifact from an earlier stage is missing.
   */
  BTA_STATUS_DEPENDENCY = 3,
  /**
   * Any other library failure (shape mismatch, rejected trade, I/O, ...).
   */
  BTA_STATUS_RUNTIME = 4,
  BTA_STATUS_NULL_POINTER = 5,
  /**
   * A string argument was not UTF-8, or a length did not match.
   */
  BTA_STATUS_INVALID_ARGUMENT = 6,
  BTA_STATUS_PANIC = 7,
} BtaStatus;

/**
 * Opaque market state with its own spend ledger.
 */
typedef struct BtaMarket BtaMarket;

/**
 * Opaque trained forecaster.
 */
typedef struct BtaModel BtaModel;

typedef struct BtaStockMeta {
  /**
   * NUL-terminated ticker; copied on construction.
   */
  const char *ticker;
  double shares_outstanding;
  double adv;
  double lambda_impact;
  double half_spread;
} BtaStockMeta;

typedef struct BtaFill {
  size_t stock;
  double shares;
  double price_before;
  double price_change;
  double cost;
} BtaFill;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL after a success.
 * The pointer stays valid until the next `bta_*` call on the same thread.
 */
const char *bta_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *bta_version(void);

/**
 * Parses a model from its JSON artifact text.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum BtaStatus bta_model_from_json(const char *json, struct BtaModel **out);

/**
 * Loads a model JSON file such as `surrogate.json` from a run directory.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum BtaStatus bta_model_load(const char *path, struct BtaModel **out);

/**
 * # Safety
 * `model` must come from a `bta_model_*` constructor and not be used again.
 */
void bta_model_free(struct BtaModel *model);

/**
 * Window length and number of inputs per step.
 *
 * # Safety
 * `model` must be a live handle; the out pointers must be valid.
 */
enum BtaStatus bta_model_shape(const struct BtaModel *model, size_t *window_len, size_t *n_inputs);

/**
 * Predicted next-step index log-return for a row-major `W×N` window.
 *
 * # Safety
 * `x` must point to `len` doubles; `out` must be valid.
 */
enum BtaStatus bta_model_predict(const struct BtaModel *model,
                                 const double *x,
                                 size_t len,
                                 double *out);

/**
 * Gradient of the prediction with respect to the window; `grad` holds `len` doubles.
 *
 * # Safety
 * `x` and `grad` must each point to `len` doubles.
 */
enum BtaStatus bta_model_gradient(const struct BtaModel *model,
                                  const double *x,
                                  size_t len,
                                  double *grad);

/**
 * One-step untargeted FGSM pushing the prediction down. `mask` may be NULL
 * (every coordinate editable) or point to `len` bytes, nonzero meaning
 * editable. Writes δ into `delta` and the attacked prediction into `y_after`.
 *
 * # Safety
 * `x` and `delta` must point to `len` doubles; `mask` to `len` bytes if set.
 */
enum BtaStatus bta_model_fgsm(const struct BtaModel *model,
                              const double *x,
                              size_t len,
                              double eps,
                              const uint8_t *mask,
                              double *delta,
                              double *y_after);

/**
 * Builds a market from `n` stocks and their starting prices.
 *
 * # Safety
 * `meta` and `prices` must each point to `n` elements; `out` must be valid.
 */
enum BtaStatus bta_market_new(const struct BtaStockMeta *meta,
                              const double *prices,
                              size_t n,
                              struct BtaMarket **out);

/**
 * # Safety
 * `market` must come from `bta_market_new` and not be used again.
 */
void bta_market_free(struct BtaMarket *market);

/**
 * Buys (`shares > 0`) or sells at the current step and bills the cost. A
 * rejected trade leaves the market untouched.
 *
 * # Safety
 * `market` must be a live handle; `fill` may be NULL.
 */
enum BtaStatus bta_market_trade(struct BtaMarket *market,
                                size_t stock,
                                double shares,
                                struct BtaFill *fill);

/**
 * Signed share count that moves `stock` by `fraction` of its price.
 *
 * # Safety
 * `market` must be a live handle; `shares` must be valid.
 */
enum BtaStatus bta_market_invert_impact(struct BtaMarket *market,
                                        size_t stock,
                                        double fraction,
                                        double *shares);

/**
 * Estimated cost of moving `stock` by `fraction`, without trading.
 *
 * # Safety
 * `market` must be a live handle; `cost` must be valid.
 */
enum BtaStatus bta_market_move_cost(struct BtaMarket *market,
                                    size_t stock,
                                    double fraction,
                                    double *cost);

/**
 * Current price of `stock`.
 *
 * # Safety
 * `market` must be a live handle; `price` must be valid.
 */
enum BtaStatus bta_market_price(struct BtaMarket *market, size_t stock, double *price);

/**
 * Total cost billed so far.
 *
 * # Safety
 * `market` must be a live handle; `spend` must be valid.
 */
enum BtaStatus bta_market_spend(struct BtaMarket *market, double *spend);

/**
 * Checks a scenario TOML document.
 *
 * # Safety
 * `toml` must be a NUL-terminated string.
 */
enum BtaStatus bta_config_validate(const char *toml);

/**
 * Runs one pipeline stage (`"generate"`, ..., `"report"`) into `run_dir`.
 * `config_path` may be NULL to use the built-in demo scenario.
 *
 * # Safety
 * String arguments must be NUL-terminated; `config_path` may be NULL.
 */
enum BtaStatus bta_run_stage(const char *config_path, const char *run_dir, const char *stage);

/**
 * Per-stage seed derived from the master seed and a stage name.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum BtaStatus bta_sub_seed(uint64_t master, const char *name, uint64_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BTA_H */
