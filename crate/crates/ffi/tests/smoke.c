#include <stdio.h>
#include "adamemento.h"

int main(void) {
    AmEnv *env = NULL;
    if (am_env_new("cliff_walking", 0, 0, &env) != AM_STATUS_OK) {
        fprintf(stderr, "%s\n", am_last_error());
        return 1;
    }
    uint32_t start = 0;
    AmStep step;
    am_env_reset(env, &start);
    /* Up, away from the cliff. */
    if (am_env_step(env, 0, &step) != AM_STATUS_OK) return 1;
    if (am_env_step(env, 9, &step) != AM_STATUS_USAGE) return 1;
    am_env_free(env);
    uint64_t failures = 1;
    if (am_verify(1, 0, 20, &failures) != AM_STATUS_OK) return 1;
    printf("start=%u reward=%g done=%d theorem1_failures=%llu\n", start, step.reward, step.terminated,
           (unsigned long long)failures);
    return 0;
}
