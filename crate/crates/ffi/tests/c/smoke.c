#include <math.h>
#include <stdio.h>
#include "tensortree.h"

int main(void) {
    enum { N = 200, D = 3 };
    double xs[N * D], ys[N];
    unsigned s = 12345;
    for (int i = 0; i < N * D; i++) {
        s = s * 1103515245u + 12345u;
        xs[i] = ((s >> 8) % 20001) / 10000.0 - 1.0;
    }
    for (int i = 0; i < N; i++) ys[i] = xs[3 * i] * xs[3 * i + 1] + xs[3 * i + 2];

    TtModel *m = NULL;
    if (tt_fit(xs, ys, N, D, 2, 1, NULL, &m) != TT_STATUS_OK) {
        fprintf(stderr, "fit: %s\n", tt_last_error());
        return 1;
    }
    double x[D] = {0.5, -0.5, 0.25}, y;
    if (tt_model_evaluate(m, x, 1, D, &y) != TT_STATUS_OK) return 2;
    if (fabs(y - 0.0) > 1e-8) return 3;
    if (tt_model_evaluate(NULL, x, 1, D, &y) != TT_STATUS_NULL_POINTER) return 4;
    tt_model_free(m);
    printf("ok\n");
    return 0;
}
