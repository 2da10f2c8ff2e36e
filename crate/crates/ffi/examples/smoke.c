/* Minimal C consumer: clusters three well separated groups of cells. */
#include <stdio.h>
#include "cutclust.h"

#define N 30
#define G 6

int main(void) {
    double data[N * G];
    size_t truth[N];
    for (size_t i = 0; i < N; i++) {
        truth[i] = i % 3;
        for (size_t g = 0; g < G; g++) {
            double base = (g / 2 == truth[i]) ? 200.0 : 2.0;
            data[i * G + g] = base + (double)((i * 7 + g * 3) % 5);
        }
    }

    CcMatrix *m = NULL;
    CcConfig *cfg = NULL;
    CcResult *res = NULL;
    const char *json = "{\"pretrain_epochs\": 20, \"train_epochs\": 20, \"layers\": [16, 3], \"k\": 3}";
    if (cc_matrix_from_dense(data, N, G, &m) != CC_STATUS_OK ||
        cc_config_from_json(json, &cfg) != CC_STATUS_OK ||
        cc_run(m, cfg, truth, N, &res) != CC_STATUS_OK) {
        fprintf(stderr, "error: %s\n", cc_last_error());
        return 1;
    }
    size_t labels[N];
    CcMetrics metrics;
    if (cc_result_labels(res, labels, N) != CC_STATUS_OK || cc_result_metrics(res, &metrics) != CC_STATUS_OK) {
        fprintf(stderr, "error: %s\n", cc_last_error());
        return 1;
    }
    printf("cutclust %s acc=%.3f nmi=%.3f ari=%.3f\n", cc_version(), metrics.acc, metrics.nmi, metrics.ari);

    CcStatus bad = cc_config_set_k(cfg, 1);
    printf("k=1 -> status %d\n", (int)bad);

    cc_result_free(res);
    cc_config_free(cfg);
    cc_matrix_free(m);
    return bad == CC_STATUS_CONFIG_ERROR ? 0 : 1;
}
