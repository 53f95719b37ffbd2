#ifndef COULOMB_LAB_H
#define COULOMB_LAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of a call.
typedef enum CoulombStatus {
  COULOMB_STATUS_OK = 0,
  COULOMB_STATUS_NULL_POINTER = 1,
  COULOMB_STATUS_INVALID_ARGUMENT = 2,
  COULOMB_STATUS_DOMAIN = 3,
  COULOMB_STATUS_ITERATION_LIMIT = 4,
  COULOMB_STATUS_CONFIG = 5,
  COULOMB_STATUS_NUMERIC = 6,
  COULOMB_STATUS_DEGENERATE_FIELD = 7,
  COULOMB_STATUS_INCOMPATIBLE = 8,
  COULOMB_STATUS_FORMAT = 9,
  COULOMB_STATUS_IO = 10,
  COULOMB_STATUS_PANIC = 11,
} CoulombStatus;

// An equilibrium measure on a grid.
typedef struct CoulombEquilibrium CoulombEquilibrium;

// A confinement potential.
typedef struct CoulombPotential CoulombPotential;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Length in bytes of the last error message of this thread, without the
// terminating nul; 0 if the last call succeeded.
size_t coulomb_last_error_length(void);

// Copies the last error message of this thread into `buf` (nul
// terminated, truncated to `len - 1` bytes). Returns the full message
// length, so a return value `>= len` signals truncation.
//
// # Safety
// `buf` must point to `len` writable bytes or be null with `len == 0`.
size_t coulomb_last_error_message(char *buf, size_t len);

// Library version as a static nul-terminated string.
const char *coulomb_version(void);

// Creates a potential from a tag: `quadratic`, `quartic` or `grid:<path>`.
//
// # Safety
// `tag` must be a nul-terminated string; `out` must be writable.
enum CoulombStatus coulomb_potential_new(const char *tag, struct CoulombPotential **out);

// Releases a potential; null is ignored.
//
// # Safety
// `p` must come from [`coulomb_potential_new`] and not be used afterwards.
void coulomb_potential_free(struct CoulombPotential *p);

// `V(x, y)`.
//
// # Safety
// `p` must be a live handle and `out` writable.
enum CoulombStatus coulomb_potential_value(const struct CoulombPotential *p,
                                           double x,
                                           double y,
                                           double *out);

// Solves the obstacle problem on an `m x m` grid of half-width
// `half_width`; a non-positive half-width picks one from the potential.
//
// # Safety
// `p` must be a live handle and `out` writable.
enum CoulombStatus coulomb_equilibrium_solve(const struct CoulombPotential *p,
                                             size_t m,
                                             double half_width,
                                             struct CoulombEquilibrium **out);

// Releases an equilibrium measure; null is ignored.
//
// # Safety
// `eq` must come from this library and not be used afterwards.
void coulomb_equilibrium_free(struct CoulombEquilibrium *eq);

// The constant `c_V`.
//
// # Safety
// `eq` must be a live handle and `out` writable.
enum CoulombStatus coulomb_equilibrium_c_v(const struct CoulombEquilibrium *eq, double *out);

// Total mass of the discrete density.
//
// # Safety
// `eq` must be a live handle and `out` writable.
enum CoulombStatus coulomb_equilibrium_mass(const struct CoulombEquilibrium *eq, double *out);

// Largest distance from the origin of a droplet node.
//
// # Safety
// `eq` must be a live handle and `out` writable.
enum CoulombStatus coulomb_equilibrium_support_radius(const struct CoulombEquilibrium *eq,
                                                      double *out);

// Grid resolution and half-width.
//
// # Safety
// `eq` must be a live handle; `m` and `half_width` writable.
enum CoulombStatus coulomb_equilibrium_grid(const struct CoulombEquilibrium *eq,
                                            size_t *m,
                                            double *half_width);

// Bilinear interpolation of the density; 0 outside the grid.
//
// # Safety
// `eq` must be a live handle and `out` writable.
enum CoulombStatus coulomb_equilibrium_density(const struct CoulombEquilibrium *eq,
                                               double x,
                                               double y,
                                               double *out);

// `h0 = -∫ log|x - y| dμ(y)` at `(x, y)`.
//
// # Safety
// `eq` must be a live handle and `out` writable.
enum CoulombStatus coulomb_equilibrium_background_potential(const struct CoulombEquilibrium *eq,
                                                            double x,
                                                            double y,
                                                            double *out);

// Writes the binary `EQM1` representation to `path`.
//
// # Safety
// `eq` must be a live handle and `path` a nul-terminated string.
enum CoulombStatus coulomb_equilibrium_save(const struct CoulombEquilibrium *eq, const char *path);

// Reads an `EQM1` file; the potential is copied into the new handle.
//
// # Safety
// `p` must be a live handle, `path` a nul-terminated string and `out` writable.
enum CoulombStatus coulomb_equilibrium_load(const struct CoulombPotential *p,
                                            const char *path,
                                            struct CoulombEquilibrium **out);

// Eigenvalues of an `n x n` Ginibre matrix drawn with `seed`: an exact
// `β = 2` sample for `V = |x|²/2`, written to `xy` (length `2 n`).
//
// # Safety
// `xy` must point to `2 n` writable doubles.
enum CoulombStatus coulomb_ginibre(size_t n, uint64_t seed, double *xy);

// `H_N = ½ Σ_{i≠j} -log|x_i - x_j| + N Σ V(x_i)`; `+∞` if two points coincide.
//
// # Safety
// `p` must be a live handle, `xy` must hold `2 n` doubles and `out` be writable.
enum CoulombStatus coulomb_hamiltonian(const struct CoulombPotential *p,
                                       const double *xy,
                                       size_t n,
                                       double *out);

// Maximum of `Pot_N(z) = Σ log|z - x_i| + N h0(z)` over a `resolution x
// resolution` grid on the disk `D((cx, cy), radius)`, skipping nodes
// within `delta` of a particle.
//
// # Safety
// `eq` must be a live handle, `xy` must hold `2 n` doubles and the
// outputs must be writable (`arg_x`, `arg_y` may be null).
enum CoulombStatus coulomb_potential_field_max(const struct CoulombEquilibrium *eq,
                                               const double *xy,
                                               size_t n,
                                               double cx,
                                               double cy,
                                               double radius,
                                               size_t resolution,
                                               double delta,
                                               double *max,
                                               double *arg_x,
                                               double *arg_y);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COULOMB_LAB_H */
