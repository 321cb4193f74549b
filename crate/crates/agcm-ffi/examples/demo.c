/* End-to-end demo of the C interface: generate data, train the base head,
 * adapt it on a few shots, and score the eval split.
 *
 * Build from the workspace root:
 *   cargo build --release -p agcm-ffi
 *   cc crates/agcm-ffi/examples/demo.c -Icrates/agcm-ffi/include \
 *      -Ltarget/release -lagcm_ffi -lm -o demo
 *   LD_LIBRARY_PATH=target/release ./demo
 */
#include <stdio.h>
#include <stdlib.h>

#include "agcm.h"

static void check(AgcmStatus status, const char *what) {
    if (status != AGCM_STATUS_OK) {
        fprintf(stderr, "%s failed (%d): %s\n", what, (int)status,
                agcm_last_error_message());
        exit(1);
    }
}

int main(void) {
    printf("agcm %s\n", agcm_version());

    AgcmDatasetSpec spec = {
        .dim = 16,
        .n_base = 3,
        .n_novel = 2,
        .samples_per_class = 40,
        .eval_per_class = 20,
        .intra_sigma = 0.2,
        .min_angle_deg = 30.0,
        .background_rate = 0.1,
        .confusable = NULL,
        .confusable_len = 0,
    };

    AgcmDataset *train = NULL, *pool = NULL, *eval = NULL;
    check(agcm_dataset_generate(&spec, 42, &train, &pool, &eval), "generate");

    AgcmHead *base = NULL;
    double base_loss = 0.0;
    check(agcm_base_train(train, 1, 60, 32, 0.02, &base_loss, &base),
          "base_train");
    printf("base training loss: %.4f\n", base_loss);

    AgcmDataset *shots = NULL;
    check(agcm_kshot_sample(pool, 5, 7, &shots), "kshot_sample");

    AgcmHead *head = NULL;
    double adapt_loss = 0.0;
    check(agcm_few_shot_adapt(base, shots, 2, 80, 8, 0.02, 0.8, 0.2,
                              AGCM_METRIC_COSINE, &adapt_loss, &head),
          "few_shot_adapt");
    printf("adaptation loss:    %.4f\n", adapt_loss);

    size_t rows = 0, dim = 0, classes = 0;
    check(agcm_dataset_shape(eval, &rows, &dim, &classes), "dataset_shape");

    double *x = malloc(rows * dim * sizeof *x);
    int64_t *labels = malloc(rows * sizeof *labels);
    uint32_t *pred = malloc(rows * sizeof *pred);
    if (!x || !labels || !pred) {
        fprintf(stderr, "out of memory\n");
        return 1;
    }
    check(agcm_dataset_features(eval, x), "dataset_features");
    check(agcm_dataset_labels(eval, labels), "dataset_labels");
    check(agcm_head_predict(head, x, rows, pred, NULL), "head_predict");

    size_t hits = 0, foreground = 0;
    for (size_t i = 0; i < rows; i++) {
        if (labels[i] < 0) {
            continue; /* background proposals have no class label */
        }
        foreground++;
        if ((int64_t)pred[i] == labels[i]) {
            hits++;
        }
    }
    printf("eval accuracy:      %zu/%zu (%.1f%%) over %zu classes\n", hits,
           foreground, 100.0 * (double)hits / (double)foreground, classes);

    free(x);
    free(labels);
    free(pred);
    agcm_head_free(base);
    agcm_head_free(head);
    agcm_dataset_free(train);
    agcm_dataset_free(pool);
    agcm_dataset_free(eval);
    agcm_dataset_free(shots);
    return 0;
}
