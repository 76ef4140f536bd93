#ifndef ELAB_H
#define ELAB_H

/* Generated by cbindgen from crates/elab-ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

#define ELAB_OK 0

/*
 A required pointer argument was null.
 */
#define ELAB_ERR_NULL 1

#define ELAB_ERR_INVALID_ARGUMENT 2

/*
 A caller buffer has the wrong length.
 */
#define ELAB_ERR_BUFFER 3

#define ELAB_ERR_PARSE 4

/*
 The lattice is too coarse for the request.
 */
#define ELAB_ERR_RESOLUTION 5

#define ELAB_ERR_POLE 6

#define ELAB_ERR_SOLVER 7

#define ELAB_ERR_GEOMETRY 8

#define ELAB_ERR_PANIC 9

#define ELAB_ERR_OTHER 10

/*
 A voxel domain.
 */
typedef struct ElabDomain ElabDomain;

/*
 An assembled and factored divergence-form operator on a domain.
 */
typedef struct ElabOperator ElabOperator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Copies the last error message of this thread into `buf` (NUL-terminated,
 truncated to `len`) and returns the full message length in bytes.

 # Safety
 `buf` must be null or point to `len` writable bytes.
 */
uintptr_t elab_last_error(char *buf, uintptr_t len);

/*
 Builds a domain from a shape name (`square`, `disk`, `lipschitz_graph(s)`,
 `koch(d)`, `slit`, `cube`, `ball`) on `n` lattice nodes per axis.

 # Safety
 `shape` must be a NUL-terminated string; `out` must be writable.
 */
int32_t elab_domain_new(const char *shape, uint32_t n, struct ElabDomain **out);

/*
 # Safety
 `domain` must be null or a handle from [`elab_domain_new`] not yet freed.
 */
void elab_domain_free(struct ElabDomain *domain);

/*
 Spatial dimension, interior cell count and boundary face count.

 # Safety
 `domain` must be a live handle; the out-pointers must be writable.
 */
int32_t elab_domain_info(const struct ElabDomain *domain,
                         uintptr_t *dim,
                         uintptr_t *cells,
                         uintptr_t *faces);

/*
 Interior cell containing `(x, y, z)`.

 # Safety
 `domain` must be a live handle; `cell` must be writable.
 */
int32_t elab_domain_locate(const struct ElabDomain *domain,
                           double x,
                           double y,
                           double z,
                           uintptr_t *cell);

/*
 The operator `-div(A∇·)` with `A = I + eps·E·φ`, where `φ` is the smooth bump
 on `B(center, radius)` and `E` the row-major `dim×dim` matrix `direction`.
 `eps = 0` gives the Laplacian.

 # Safety
 `domain` must be a live handle; `direction` must hold `direction_len`
 doubles and `center` three; `out` must be writable.
 */
int32_t elab_operator_new_bump(const struct ElabDomain *domain,
                               double eps,
                               const double *direction,
                               uintptr_t direction_len,
                               const double *center,
                               double radius,
                               struct ElabOperator **out);

/*
 # Safety
 `op` must be null or a handle from [`elab_operator_new_bump`] not yet freed.
 */
void elab_operator_free(struct ElabOperator *op);

/*
 Elliptic measure of the pole cell, one value per boundary face.

 # Safety
 `op` must be a live handle; `omega` must hold `len` doubles, and `len`
 must equal the face count.
 */
int32_t elab_elliptic_measure(const struct ElabOperator *op,
                              uintptr_t pole,
                              double *omega,
                              uintptr_t len);

/*
 Solves `Lu = 0` with boundary data `data` (one value per face) into `u`
 (one value per interior cell).

 # Safety
 `op` must be a live handle; `data` must hold `data_len` doubles and `u`
 `u_len` doubles.
 */
int32_t elab_solve_dirichlet(const struct ElabOperator *op,
                             const double *data,
                             uintptr_t data_len,
                             double *u,
                             uintptr_t u_len);

/*
 Capacity density ratio at boundary face `face` and radius `r`.

 # Safety
 `domain` must be a live handle; `ratio` must be writable.
 */
int32_t elab_cdc_ratio(const struct ElabDomain *domain, uintptr_t face, double r, double *ratio);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ELAB_H */
