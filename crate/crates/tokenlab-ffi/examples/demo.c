#include <math.h>
#include <stdio.h>

#include "tokenlab.h"

int main(void) {
    LabTask *task = NULL;
    if (lab_task_new(4, 1, 4.0, 0.5, 100, &task) != LAB_STATUS_OK) {
        fprintf(stderr, "%s\n", lab_last_error());
        return 1;
    }
    double pooled = 0.0, vec = 0.0, limit = 0.0;
    bool positive = false;
    lab_capacity(LAB_MODEL_POOLED, task, &pooled);
    lab_capacity(LAB_MODEL_VECTORIZED, task, &vec);
    lab_limit_optimal_error(LAB_MODEL_POOLED, 2.0, 0.5, -1.0, &limit, &positive);
    printf("tokenlab %s\n", lab_version());
    printf("capacity pooled %.6f vectorized %.6f\n", pooled, vec);
    printf("pooled limit at SNR 2: %.6f\n", limit);
    lab_task_free(task);
    return 0;
}
