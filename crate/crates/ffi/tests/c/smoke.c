#include "kasgcn.h"

#include <math.h>
#include <stdio.h>
#include <string.h>

#define CHECK(call)                                                              \
  do {                                                                           \
    KasgcnStatus s_ = (call);                                                    \
    if (s_ != KASGCN_STATUS_OK) {                                                \
      fprintf(stderr, "%s:%d: %s -> %d (%s)\n", __FILE__, __LINE__, #call, s_,   \
              kasgcn_last_error());                                              \
      return 1;                                                                  \
    }                                                                            \
  } while (0)

int main(void) {
  /* Two positive triangles joined by negative edges. */
  int64_t src[] = {1, 1, 2, 4, 4, 5, 1, 2, 3};
  int64_t dst[] = {2, 3, 3, 5, 6, 6, 4, 5, 6};
  double w[] = {1, 1, 1, 1, 1, 1, -1, -1, -1};
  KasgcnGraph *g = NULL;
  CHECK(kasgcn_graph_from_edges(src, dst, w, 9, &g));

  size_t nodes = 0, edges = 0;
  CHECK(kasgcn_graph_size(g, &nodes, &edges));
  if (nodes != 6 || edges != 9) {
    fprintf(stderr, "size %zu %zu\n", nodes, edges);
    return 1;
  }

  char *json = NULL;
  CHECK(kasgcn_graph_stats_json(g, &json));
  if (strstr(json, "\"vertices\":6") == NULL) {
    fprintf(stderr, "stats %s\n", json);
    return 1;
  }
  kasgcn_string_free(json);

  KasgcnModel *m = NULL;
  CHECK(kasgcn_train(g,
                     "variant = \"kasgcn-fourier\"\nepochs = 3\n"
                     "layers = [4, 4]\nreduction_dimensions = 3\n",
                     &m));
  size_t rows = 0, cols = 0;
  CHECK(kasgcn_model_embedding_shape(m, &rows, &cols));
  if (rows != 6 || cols != 8) {
    fprintf(stderr, "shape %zu x %zu\n", rows, cols);
    return 1;
  }
  double z[48];
  if (kasgcn_model_embeddings(m, z, 10) != KASGCN_STATUS_BUFFER_TOO_SMALL) {
    return 1;
  }
  CHECK(kasgcn_model_embeddings(m, z, 48));

  size_t labels[6];
  CHECK(kasgcn_kmeans(z, rows, cols, 2, 7, labels));
  KasgcnClusterQuality q;
  CHECK(kasgcn_cluster_quality(g, labels, 6, &q));
  if (fabs(q.q - (q.pos_in + q.neg_out)) > 1e-12) {
    return 1;
  }

  double mean = 0.0;
  size_t skipped = 99;
  CHECK(kasgcn_cosine_similarity(z, z, rows, cols, &mean, &skipped));
  if (fabs(mean - 1.0) > 1e-12 || skipped != 0) {
    return 1;
  }

  KasgcnModel *bad = NULL;
  if (kasgcn_train(g, "bogus = 1\n", &bad) != KASGCN_STATUS_CONFIG ||
      strstr(kasgcn_last_error(), "bogus") == NULL) {
    return 1;
  }

  kasgcn_model_free(m);
  kasgcn_graph_free(g);
  printf("ok %s\n", kasgcn_version());
  return 0;
}
