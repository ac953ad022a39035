/* Usage: recommend CATALOG GENRE_MODEL MODEL INDEX SEED_ID [SEED_ID...] */
#include <stdio.h>

#include "fusionrec.h"

int main(int argc, char **argv) {
    if (argc < 6) {
        fprintf(stderr, "usage: %s CATALOG GENRE_MODEL MODEL INDEX SEED_ID...\n", argv[0]);
        return 2;
    }
    FrEngine *engine = NULL;
    FrStatus st = fr_engine_open(argv[1], argv[2], argv[3], argv[4], NULL, &engine);
    if (st != FR_STATUS_OK) {
        fprintf(stderr, "open failed (%d): %s\n", st, fr_last_error_message());
        return 4;
    }
    FrResults *results = NULL;
    st = fr_recommend(engine, (const char *const *)&argv[5], (size_t)(argc - 5), 10, NULL, &results);
    if (st != FR_STATUS_OK) {
        fprintf(stderr, "recommend failed (%d): %s\n", st, fr_last_error_message());
        fr_engine_free(engine);
        return 4;
    }
    for (size_t i = 0; i < fr_results_len(results); i++) {
        FrScore s;
        fr_results_score(results, i, &s);
        printf("%zu\t%s\t%.4f\n", i + 1, fr_results_id(results, i), s.combined);
    }
    fr_results_free(results);
    fr_engine_free(engine);
    return 0;
}
