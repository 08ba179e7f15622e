#include <math.h>
#include <stdio.h>
#include <string.h>

#include "bta.h"

#define CHECK(cond)                                                       \
  do {                                                                    \
    if (!(cond)) {                                                        \
      const char *msg = bta_last_error_message();                         \
      fprintf(stderr, "line %d: %s (%s)\n", __LINE__, #cond,             \
              msg ? msg : "no error");                                    \
      return 1;                                                           \
    }                                                                     \
  } while (0)

static const char *MODEL =
    "{\"kind\":\"LINEAR\",\"W\":2,\"N\":2,\"H\":0,"
    "\"params\":[0.5,-0.25,1.0,0.0,0.001],\"train_seed\":0,\"train_mse\":0.0}";

int main(void) {
  BtaModel *model = NULL;
  CHECK(bta_model_from_json(MODEL, &model) == BTA_STATUS_OK);

  size_t w = 0, n = 0;
  CHECK(bta_model_shape(model, &w, &n) == BTA_STATUS_OK && w == 2 && n == 2);

  double x[4] = {0.01, 0.02, -0.01, 0.03};
  double y = 0.0;
  CHECK(bta_model_predict(model, x, 4, &y) == BTA_STATUS_OK);
  CHECK(fabs(y - (0.005 - 0.005 - 0.01 + 0.001)) < 1e-15);

  double delta[4];
  double y_after = 0.0;
  uint8_t mask[4] = {1, 1, 1, 0};
  CHECK(bta_model_fgsm(model, x, 4, 0.01, mask, delta, &y_after) == BTA_STATUS_OK);
  CHECK(delta[0] == -0.01 && delta[1] == 0.01 && delta[2] == -0.01 && delta[3] == 0.0);
  CHECK(fabs(y_after - (y - 0.01 * 1.75)) < 1e-15);

  CHECK(bta_model_predict(model, x, 3, &y) == BTA_STATUS_INVALID_ARGUMENT);
  CHECK(strstr(bta_last_error_message(), "expected 4") != NULL);
  bta_model_free(model);

  BtaStockMeta meta[1] = {{"AAA", 1e8, 5e5, 0.1, 0.0}};
  double prices[1] = {40.0};
  BtaMarket *market = NULL;
  CHECK(bta_market_new(meta, prices, 1, &market) == BTA_STATUS_OK);
  double q = 0.0;
  CHECK(bta_market_invert_impact(market, 0, 0.01, &q) == BTA_STATUS_OK);
  CHECK(fabs(q - 0.01 * 5e5 / 0.1) < 1e-6);
  BtaFill fill;
  CHECK(bta_market_trade(market, 0, q, &fill) == BTA_STATUS_OK);
  double spend = 0.0;
  CHECK(bta_market_spend(market, &spend) == BTA_STATUS_OK && spend == fill.cost);
  /* No spread, so the whole cost is the linear impact term q * dp / 2. */
  CHECK(fabs(fill.cost - q * 0.4 / 2.0) < 1e-9 * fill.cost);
  bta_market_free(market);

  CHECK(bta_run_stage(NULL, "/nonexistent-dir-for-bta", "report") == BTA_STATUS_DEPENDENCY);

  printf("ok %s\n", bta_version());
  return 0;
}
