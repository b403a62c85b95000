#ifndef LID_ALIGN_H
#define LID_ALIGN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LidStatus {
  LID_STATUS_OK = 0,
  LID_STATUS_NULL_POINTER = 1,
  LID_STATUS_INVALID_ARGUMENT = 2,
  LID_STATUS_SHAPE_MISMATCH = 3,
  LID_STATUS_IO = 4,
  LID_STATUS_FORMAT = 5,
  // Zero, equal or tied neighbor distances, or k out of range.
  LID_STATUS_DEGENERATE = 6,
  LID_STATUS_EMPTY = 7,
  LID_STATUS_INTERNAL = 8,
} LidStatus;

// Opaque f32 tensor.
typedef struct LidTensor LidTensor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. Valid until the
// next failing call on the same thread.
const char *lid_last_error(void);

// Copies `len` floats from `data` into a new tensor of the given shape.
//
// # Safety
// `shape` must point to `ndim` values and `data` to `len` floats.
enum LidStatus lid_tensor_new(const size_t *shape,
                              size_t ndim,
                              const float *data,
                              size_t len,
                              struct LidTensor **out);

// Reads a `.dt` tensor file.
//
// # Safety
// `path` must be a NUL-terminated string.
enum LidStatus lid_tensor_load(const char *path, struct LidTensor **out);

// Writes a `.dt` tensor file.
//
// # Safety
// `t` must be a live handle and `path` a NUL-terminated string.
enum LidStatus lid_tensor_save(const struct LidTensor *t, const char *path);

// Releases a handle; NULL is ignored.
//
// # Safety
// `t` must come from this library and not be used afterwards.
void lid_tensor_free(struct LidTensor *t);

// Number of dimensions, or 0 for NULL.
//
// # Safety
// `t` must be NULL or a live handle.
size_t lid_tensor_ndim(const struct LidTensor *t);

// Pointer to the shape, valid while the handle lives.
//
// # Safety
// `t` must be NULL or a live handle.
const size_t *lid_tensor_shape(const struct LidTensor *t);

// Number of elements, or 0 for NULL.
//
// # Safety
// `t` must be NULL or a live handle.
size_t lid_tensor_len(const struct LidTensor *t);

// Pointer to the row-major data, valid while the handle lives.
//
// # Safety
// `t` must be NULL or a live handle.
const float *lid_tensor_data(const struct LidTensor *t);

// LID estimate from `k` ascending neighbor distances.
//
// # Safety
// `distances` must point to `k` values.
enum LidStatus lid_mle(const double *distances, size_t k, double *out);

// LID of vector `y` against the rows of `z` (`N x D`).
//
// # Safety
// `y` and `z` must be live handles.
enum LidStatus lid_ilid(const struct LidTensor *y,
                        const struct LidTensor *z,
                        size_t k,
                        double *out);

// Mean LID of each row of `y` against the rows of `z`.
//
// # Safety
// `y` and `z` must be live handles.
enum LidStatus lid_ilid_loss(const struct LidTensor *y,
                             const struct LidTensor *z,
                             size_t k,
                             double *out);

// LID of patch vector `p` against the patch rows of `q`.
//
// # Safety
// `p` and `q` must be live handles.
enum LidStatus lid_plid(const struct LidTensor *p,
                        const struct LidTensor *q,
                        size_t k,
                        double *out);

// Patch loss over `n` image pairs: `p_sets[i]` and `q_sets[i]` hold the
// original and restored-region patch rows of image `i`.
//
// # Safety
// Both arrays must hold `n` live handles.
enum LidStatus lid_plid_loss(const struct LidTensor *const *p_sets,
                             const struct LidTensor *const *q_sets,
                             size_t n,
                             size_t k,
                             double *out);

// PSNR in dB; `+inf` for identical images.
//
// # Safety
// `a` and `b` must be live handles.
enum LidStatus lid_psnr(const struct LidTensor *a,
                        const struct LidTensor *b,
                        double peak,
                        double *out);

// Mean SSIM over channels of two `H x W` or `H x W x C` images.
//
// # Safety
// `a` and `b` must be live handles.
enum LidStatus lid_ssim(const struct LidTensor *a, const struct LidTensor *b, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LID_ALIGN_H */
