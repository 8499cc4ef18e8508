#ifndef LINEAGE_H
#define LINEAGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LineageStatus {
  LINEAGE_STATUS_OK = 0,
  // Bad configuration, input, dimensions or file contents.
  LINEAGE_STATUS_INVALID = 1,
  // Non-finite values during training.
  LINEAGE_STATUS_NUMERICAL = 2,
  // Fingerprint or checksum mismatch.
  LINEAGE_STATUS_INTEGRITY = 3,
  LINEAGE_STATUS_IO = 4,
  LINEAGE_STATUS_NULL_POINTER = 5,
  // A Rust panic was caught at the boundary.
  LINEAGE_STATUS_PANIC = 6,
} LineageStatus;

// Trained autoencoder, including its preprocessing parameters.
typedef struct LineageAutoencoder LineageAutoencoder;

// Trained feed-forward or attention classifier.
typedef struct LineageClassifier LineageClassifier;

// Matrix with per-row labels and a population tag.
typedef struct LineageDataset LineageDataset;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the most recent failure on this thread; empty if none. The
// pointer stays valid until the next failing call on this thread.
const char *lineage_last_error(void);

// Library version as a static NUL-terminated string.
const char *lineage_version(void);

// Reads a native matrix file.
enum LineageStatus lineage_dataset_load(const char *path, struct LineageDataset **out);

// Copies a row-major `rows × cols` matrix and `rows` labels into a new
// dataset. `cell_type` is 0 progenitor, 1 monocyte, 2 lymphocyte.
enum LineageStatus lineage_dataset_create(size_t rows,
                                          size_t cols,
                                          const float *values,
                                          const uint32_t *labels,
                                          uint8_t cell_type,
                                          struct LineageDataset **out);

enum LineageStatus lineage_dataset_save(const struct LineageDataset *ds, const char *path);

// Writes the row count, column count and cell type code; any output
// pointer may be null.
enum LineageStatus lineage_dataset_shape(const struct LineageDataset *ds,
                                         size_t *rows,
                                         size_t *cols,
                                         uint8_t *cell_type);

// Copies the values (row-major) into `buf`, which must hold `len` floats
// with `len == rows · cols`.
enum LineageStatus lineage_dataset_values(const struct LineageDataset *ds, float *buf, size_t len);

// Copies the labels into `buf`, which must hold exactly `rows` entries.
enum LineageStatus lineage_dataset_labels(const struct LineageDataset *ds,
                                          uint32_t *buf,
                                          size_t len);

void lineage_dataset_free(struct LineageDataset *ds);

// Generates the three synthetic populations. `config_toml` holds the
// synthetic generator settings as TOML (null for defaults); `out` receives
// progenitor, monocyte and lymphocyte handles in that order.
enum LineageStatus lineage_synthesize(const char *config_toml, struct LineageDataset **out);

enum LineageStatus lineage_autoencoder_load(const char *path, struct LineageAutoencoder **out);

enum LineageStatus lineage_autoencoder_widths(const struct LineageAutoencoder *ae,
                                              size_t *input_width,
                                              size_t *latent_width);

// Embeds raw expression values (preprocessing included) into a new dataset
// carrying the input's labels and population.
enum LineageStatus lineage_autoencoder_embed(const struct LineageAutoencoder *ae,
                                             const struct LineageDataset *ds,
                                             struct LineageDataset **out);

void lineage_autoencoder_free(struct LineageAutoencoder *ae);

enum LineageStatus lineage_classifier_load(const char *path, struct LineageClassifier **out);

enum LineageStatus lineage_classifier_num_classes(const struct LineageClassifier *clf, size_t *out);

// Predicted class per row of an embedding dataset; `buf` must hold
// exactly `rows` entries.
enum LineageStatus lineage_classifier_predict(const struct LineageClassifier *clf,
                                              const struct LineageDataset *ds,
                                              uint32_t *buf,
                                              size_t len);

void lineage_classifier_free(struct LineageClassifier *clf);

// Runs every stage into `out_dir`. `config_path` names a TOML run
// configuration, or is null for defaults.
enum LineageStatus lineage_run_pipeline(const char *config_path, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LINEAGE_H */
