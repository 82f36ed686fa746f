#include <math.h>
#include <stdio.h>
#include "kolmo.h"

int main(void) {
    double p[3] = {1.0, 2.0, 0.5}, inv[3], out[3];
    if (kolmo_inverse(1, p, inv) != KOLMO_STATUS_OK) return 1;
    if (kolmo_compose(1, p, inv, out) != KOLMO_STATUS_OK) return 2;
    for (int i = 0; i < 3; i++)
        if (fabs(out[i]) > 1e-12) return 3;
    if (kolmo_inverse(1, NULL, out) != KOLMO_STATUS_NULL_POINTER) return 4;
    if (kolmo_last_error() == NULL) return 5;
    KolmoDomain *d = NULL;
    if (kolmo_domain_flat(1, &d) != KOLMO_STATUS_OK) return 6;
    kolmo_domain_free(d);
    printf("kolmo %s ok\n", kolmo_version());
    return 0;
}
