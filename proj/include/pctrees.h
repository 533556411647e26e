/* pctrees C API: tree-species classification from airborne LiDAR point
 * clouds. The library owns all pipeline state behind opaque handles; every
 * entry point returns a status code and leaves a human-readable message in
 * thread-local storage (pct_last_error). */
#ifndef PCTREES_H
#define PCTREES_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#ifndef PCT_API
#define PCT_API __attribute__((visibility("default")))
#endif

typedef enum pct_status {
    PCT_OK = 0,
    PCT_ERR_IO = 1,     /* file open/read/write failures */
    PCT_ERR_FORMAT = 2, /* malformed input data */
    PCT_ERR_SHAPE = 3,  /* geometric or tensor shape violations */
    PCT_ERR_CONFIG = 4, /* invalid parameter values or unknown keys */
} pct_status;

PCT_API const char* pct_status_name(pct_status s);

/* Message for the most recent failure on this thread; valid until the next
 * API call from the same thread. */
PCT_API const char* pct_last_error(void);

PCT_API const char* pct_version(void);

/* ---------------- configuration ---------------- */

/* Flat key=value run configuration. Unknown keys are rejected. Keys mirror
 * the CLI flags: seed, out, manifest, census, checkpoint, model, tiny,
 * epochs, batch_size, lr, split_fraction, resample, optimizer, min_points,
 * filter_stage, res, extent, mode, cell_size, include_dead, top_k, post_x,
 * post_y, per_class, n_points, rescale, previews, input_points. */
typedef struct pct_config pct_config;

PCT_API pct_config* pct_config_new(void);
PCT_API void pct_config_free(pct_config* cfg);
/* Loads "key=value" lines; '#' starts a comment. Values already set stay
 * overridable by later pct_config_set calls. */
PCT_API pct_status pct_config_load_file(pct_config* cfg, const char* path);
PCT_API pct_status pct_config_set(pct_config* cfg, const char* key, const char* value);
/* NULL when the key was never set. */
PCT_API const char* pct_config_get(const pct_config* cfg, const char* key);

/* ---------------- point clouds ---------------- */

typedef struct pct_cloud pct_cloud;

/* xyz: n_points consecutive (x, y, z) triples in meters. */
PCT_API pct_status pct_cloud_create(const char* id, const double* xyz, size_t n_points,
                                    pct_cloud** out);
PCT_API pct_status pct_cloud_read_xyz(const char* path, pct_cloud** out);
PCT_API pct_status pct_cloud_write_xyz(const pct_cloud* cloud, const char* path);
PCT_API void pct_cloud_free(pct_cloud* cloud);

PCT_API size_t pct_cloud_size(const pct_cloud* cloud);
PCT_API const char* pct_cloud_id(const pct_cloud* cloud);
/* out_xyz must hold 3 * pct_cloud_size(cloud) doubles. */
PCT_API pct_status pct_cloud_copy_points(const pct_cloud* cloud, double* out_xyz);

PCT_API pct_status pct_cloud_centroid(const pct_cloud* cloud, double out_xyz[3]);
PCT_API pct_status pct_cloud_center(const pct_cloud* cloud, pct_cloud** out);
PCT_API pct_status pct_cloud_normalize_unit(const pct_cloud* cloud, pct_cloud** out);
/* Deterministic farthest point sampling (canonical seed + tie-breaks). */
PCT_API pct_status pct_cloud_fps(const pct_cloud* cloud, size_t n, pct_cloud** out);
/* out_indices must hold k entries; ascending distance, ties to the smaller
 * index. */
PCT_API pct_status pct_cloud_knn(const pct_cloud* cloud, const double query_xyz[3], size_t k,
                                 size_t* out_indices);
PCT_API pct_status pct_cloud_resample(const pct_cloud* cloud, size_t n, uint64_t seed,
                                      pct_cloud** out);

/* Six orthogonal single-channel projections (top, bottom, front, back,
 * left, right); out_values must hold 6 * res * res floats. mode is
 * "density" or "occupancy". */
PCT_API pct_status pct_cloud_project6(const pct_cloud* cloud, uint32_t res, double extent,
                                      const char* mode, float* out_values);

/* ---------------- pipeline commands ---------------- */

typedef struct pct_match_stats {
    uint64_t pairs;
    uint64_t ambiguous_cells;
    uint64_t unmatched_clouds;
    uint64_t unmatched_records;
    double match_rate;
} pct_match_stats;

/* Each command reads its inputs and destinations from the config handle and
 * writes a run_manifest.txt of resolved values into the output directory. */
PCT_API pct_status pct_run_synth(const pct_config* cfg);
PCT_API pct_status pct_run_match(const pct_config* cfg, pct_match_stats* out_stats);
PCT_API pct_status pct_run_project(const pct_config* cfg);
PCT_API pct_status pct_run_train(const pct_config* cfg);
/* Evaluation report text is returned on the heap; release it with
 * pct_string_free. */
PCT_API pct_status pct_run_eval(const pct_config* cfg, char** out_report);
PCT_API pct_status pct_run_predict(const pct_config* cfg);

PCT_API void pct_string_free(char* s);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* PCTREES_H */
