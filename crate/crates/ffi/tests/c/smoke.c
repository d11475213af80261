#include <stdio.h>
#include <string.h>
#include "mammoview.h"

int main(void) {
    double s1[] = {0.9, 0.8, 0.3, 0.2, 0.6, 0.4};
    double s2[] = {0.7, 0.4, 0.5, 0.1, 0.6, 0.3};
    uint8_t y[] = {1, 1, 0, 0, 1, 0};
    MvScores *a = NULL, *b = NULL;
    if (mv_scores_new(s1, y, 6, &a) != MV_STATUS_OK) return 1;
    if (mv_scores_new(s2, y, 6, &b) != MV_STATUS_OK) return 2;
    MvAucReport r;
    if (mv_auc_report(a, &r) != MV_STATUS_OK) return 3;
    MvDelongResult d;
    if (mv_delong(a, a, &d) != MV_STATUS_OK || !d.zero_difference || d.p_one_tailed != 0.5) return 4;
    MvZTestResult z;
    if (mv_z_test(0.8325, 0.0171, 0.8033, 0.0183, 0.5, &z) != MV_STATUS_OK) return 5;
    if (mv_scores_new(s1, y, 6, NULL) != MV_STATUS_NULL_POINTER) return 6;
    char msg[128];
    if (mv_last_error(msg, sizeof msg) == 0 || strstr(msg, "out") == NULL) return 7;
    mv_scores_free(a);
    mv_scores_free(b);
    printf("%s %.4f %.4f\n", mv_version(), r.auc, z.p_one_tailed);
    return 0;
}
