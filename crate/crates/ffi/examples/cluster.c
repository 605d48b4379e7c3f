#include <stdio.h>
#include <stdlib.h>

#include "dbc.h"

int main(void) {
    double values[20];
    for (int i = 0; i < 10; i++) {
        values[2 * i] = (i < 5 ? 0.0 : 10.0) + 0.01 * i;
        values[2 * i + 1] = 0.02 * i;
    }
    DbcStore *store = NULL;
    if (dbc_store_new(values, 10, 2, &store) != DBC_STATUS_OK) {
        fprintf(stderr, "%s\n", dbc_last_error_message());
        return 1;
    }
    DbcClusterOptions opts = dbc_cluster_options_default();
    opts.merge_percent = 0.1;
    opts.target_clusters = 2;
    DbcClustering *run = NULL;
    if (dbc_cluster(store, &opts, &run) != DBC_STATUS_OK) {
        fprintf(stderr, "%s\n", dbc_last_error_message());
        return 1;
    }
    size_t n, clusters, merges;
    dbc_clustering_counts(run, &n, &clusters, &merges);
    size_t labels[10];
    dbc_clustering_labels(run, labels, n);
    for (size_t i = 0; i < n; i++) {
        printf("%zu%c", labels[i], i + 1 == n ? '\n' : ' ');
    }
    printf("clusters %zu merges %zu\n", clusters, merges);

    DbcStatus bad = dbc_store_new(NULL, 3, 2, &store);
    printf("null status %d: %s\n", (int)bad, dbc_last_error_message());

    dbc_clustering_free(run);
    dbc_store_free(store);
    return 0;
}
