#ifndef MCMCNET_H
#define MCMCNET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum McnStatus {
  MCN_STATUS_OK = 0,
  MCN_STATUS_NULL_POINTER = 1,
  MCN_STATUS_INVALID_ARGUMENT = 2,
  // Output buffer shorter than the result; the needed length is reported
  // through the length out-parameter.
  MCN_STATUS_BUFFER_TOO_SMALL = 3,
  MCN_STATUS_MESH = 4,
  MCN_STATUS_SOLVER = 5,
  MCN_STATUS_MODEL = 6,
  MCN_STATUS_PANIC = 7,
} McnStatus;

// Disk mesh.
typedef struct McnMesh McnMesh;

// Trained surrogate network.
typedef struct McnNet McnNet;

// CEM solver bound to a mesh and electrode layout, driven by trigonometric
// current patterns.
typedef struct McnSolver McnSolver;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message on this thread into `buf` as a
// NUL-terminated string, truncating to `len - 1` bytes. Returns the full
// message length in bytes.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t mcn_last_error(char *buf, size_t len);

// Builds the disk mesh at `refinement` levels.
//
// # Safety
// `out` must be a valid pointer to write the handle to.
enum McnStatus mcn_mesh_new(uint32_t refinement, struct McnMesh **out);

// # Safety
// `mesh` must be null or a handle from [`mcn_mesh_new`] not yet freed.
void mcn_mesh_free(struct McnMesh *mesh);

// Node count, or 0 for a null handle.
//
// # Safety
// `mesh` must be null or a live mesh handle.
size_t mcn_mesh_node_count(const struct McnMesh *mesh);

// Triangle count, or 0 for a null handle.
//
// # Safety
// `mesh` must be null or a live mesh handle.
size_t mcn_mesh_triangle_count(const struct McnMesh *mesh);

// Solver for `electrodes` equally spaced electrodes covering `coverage` of
// the boundary with uniform contact impedance. The mesh may be freed
// afterwards.
//
// # Safety
// `mesh` must be a live mesh handle and `out` a valid pointer.
enum McnStatus mcn_solver_new(const struct McnMesh *mesh,
                              size_t electrodes,
                              double coverage,
                              double contact_impedance,
                              struct McnSolver **out);

// # Safety
// `solver` must be null or a handle from [`mcn_solver_new`] not yet freed.
void mcn_solver_free(struct McnSolver *solver);

// Electrode voltages for per-triangle conductivities `sigma`, row-major
// with one row of electrode voltages per current pattern.
//
// # Safety
// `sigma` must point to `sigma_len` doubles, `out` to `*out_len` writable
// doubles.
enum McnStatus mcn_solver_solve(const struct McnSolver *solver,
                                const double *sigma,
                                size_t sigma_len,
                                double *out,
                                size_t *out_len);

// Loads a model file written by the `train` command.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum McnStatus mcn_net_load(const char *path, struct McnNet **out);

// # Safety
// `net` must be null or a handle from [`mcn_net_load`] not yet freed.
void mcn_net_free(struct McnNet *net);

// Expected input length, or 0 for a null handle.
//
// # Safety
// `net` must be null or a live net handle.
size_t mcn_net_input_dim(const struct McnNet *net);

// Length of every prediction: the 16×16 output plane.
size_t mcn_net_output_len(void);

// Surrogate prediction on the output plane, in physical units.
//
// # Safety
// `input` must point to `input_len` doubles, `out` to `*out_len` writable
// doubles.
enum McnStatus mcn_net_predict(const struct McnNet *net,
                               const double *input,
                               size_t input_len,
                               double *out,
                               size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MCMCNET_H */
