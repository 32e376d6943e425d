#include <math.h>
#include <stdio.h>
#include <string.h>

#include "fdmu.h"

int main(void) {
    double kl = 0.0;
    if (fdmu_divergence_closed_form("kl", 1.0, 1.0, 0.0, 1.0, &kl) != FDMU_STATUS_OK) return 1;
    if (fabs(kl - 0.5) > 1e-12) return 2;

    double bad = 0.0;
    if (fdmu_divergence_closed_form("nope", 1.0, 1.0, 0.0, 1.0, &bad) != FDMU_STATUS_UNKNOWN_DIVERGENCE) return 3;
    char msg[256];
    size_t needed = 0;
    if (fdmu_last_error_message(msg, sizeof msg, &needed) != FDMU_STATUS_OK || strlen(msg) == 0) return 4;

    FdmuGame *game = NULL;
    if (fdmu_game_new("hellinger2", 0.5, 1.0, &game) != FDMU_STATUS_OK) return 5;
    double re[8], im[8];
    size_t count = 0;
    if (fdmu_game_eigenvalues(game, re, im, 8, &count) != FDMU_STATUS_OK || count != 3) return 6;
    for (size_t i = 0; i < count; ++i)
        if (!(re[i] < 0.0)) return 7;
    fdmu_game_free(game);

    printf("ok %s kl=%.3f eig0=%.4f\n", fdmu_version(), kl, re[0]);
    return 0;
}
