/* Minimal consumer of the C API: creates a simulator from the grid
 * fixtures, drives one episode with a first-allowed-slot policy, and prints
 * per-agent travel times.
 *
 * Build from the repository root after `cargo build -p reled-ffi`:
 *
 *   cc crates/ffi/examples/roundtrip.c \
 *      -Icrates/ffi/include target/debug/libreled_ffi.a \
 *      -lssl -lcrypto -lpthread -ldl -lm -o roundtrip
 *   ./roundtrip crates/core/fixtures/grid5_network.json \
 *               crates/core/fixtures/grid5_scenario_small.json
 */
#include "reled.h"

#include <stdio.h>
#include <stdlib.h>

static void check(ReledStatus status, const char *what) {
    if (status != RELED_STATUS_OK) {
        fprintf(stderr, "%s failed (%d): %s\n", what, (int)status, reled_last_error());
        exit(1);
    }
}

int main(int argc, char **argv) {
    if (argc != 3) {
        fprintf(stderr, "usage: %s <network.json> <scenario.json>\n", argv[0]);
        return 2;
    }
    if (reled_abi_version() != RELED_ABI_VERSION) {
        fprintf(stderr, "ABI mismatch\n");
        return 1;
    }

    ReledEnv *env = NULL;
    check(reled_env_create(argv[1], argv[2], &env), "create");

    size_t agents = 0;
    check(reled_env_agent_count(env, &agents), "agent_count");
    size_t values_len = 0, mask_len = 0;
    check(reled_env_observation_dims(env, &values_len, &mask_len), "observation_dims");

    double *values = malloc(values_len * sizeof *values);
    bool *mask = malloc(mask_len * sizeof *mask);
    bool *awaiting = malloc(agents * sizeof *awaiting);
    int32_t *actions = malloc(agents * sizeof *actions);
    double *rewards = malloc(agents * sizeof *rewards);

    check(reled_env_reset(env, 99, true), "reset");

    bool done = false;
    while (!done) {
        check(reled_env_awaiting(env, awaiting, agents), "awaiting");
        for (size_t i = 0; i < agents; i++) {
            actions[i] = -1;
            if (!awaiting[i]) {
                continue;
            }
            check(reled_env_observe(env, i, values, values_len, mask, mask_len), "observe");
            for (size_t slot = 0; slot < mask_len; slot++) {
                if (mask[slot]) {
                    actions[i] = (int32_t)slot;
                    break;
                }
            }
        }
        check(reled_env_step(env, actions, agents, rewards, &done), "step");
    }

    for (size_t i = 0; i < agents; i++) {
        bool arrived = false;
        uint64_t seconds = 0;
        check(reled_env_agent_arrived(env, i, &arrived), "arrived");
        check(reled_env_travel_time(env, i, &seconds), "travel_time");
        printf("agent %zu: %s after %llu s\n", i, arrived ? "arrived" : "did not arrive",
               (unsigned long long)seconds);
    }

    free(values);
    free(mask);
    free(awaiting);
    free(actions);
    free(rewards);
    reled_env_destroy(env);
    return 0;
}
