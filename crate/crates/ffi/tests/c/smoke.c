#include <stdio.h>
#include <stdlib.h>
#include "gnnkit.h"

#define CHECK(call)                                                        \
  do {                                                                     \
    GnnkitStatus s_ = (call);                                              \
    if (s_ != GNNKIT_STATUS_OK) {                                          \
      fprintf(stderr, "%s -> %d: %s\n", #call, (int)s_, gnnkit_last_error()); \
      return 10 + (int)s_;                                                 \
    }                                                                      \
  } while (0)

int main(int argc, char **argv) {
  if (argc != 3) return 2;
  GnnkitDataset *ds = NULL;
  GnnkitModel *model = NULL;
  char *cfg = NULL;
  char *report = NULL;
  CHECK(gnnkit_dataset_load(argv[1], &ds));
  CHECK(gnnkit_preset_config(ds, "gcn-cora", 0, 1, &cfg));
  CHECK(gnnkit_train(ds, argv[2], &model, &report));
  size_t n = gnnkit_dataset_num_nodes(ds);
  unsigned *pred = calloc(n, sizeof *pred);
  CHECK(gnnkit_model_predict(model, ds, pred, n));
  double train = 0, val = 0, test = 0;
  CHECK(gnnkit_model_evaluate(model, ds, &train, &val, &test));
  if (gnnkit_dataset_load("/nonexistent", &ds) != GNNKIT_STATUS_IO) return 3;
  printf("nodes=%zu train=%.4f first=%u\n", n, train, pred[0]);
  free(pred);
  gnnkit_string_free(cfg);
  gnnkit_string_free(report);
  gnnkit_model_free(model);
  gnnkit_dataset_free(ds);
  return 0;
}
