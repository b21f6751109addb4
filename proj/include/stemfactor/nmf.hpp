#pragma once

// Multiplicative-update NMF (Lee & Seung, Frobenius objective), the
// K-component loss and the k sweep.

#include <cstdint>
#include <string>
#include <vector>

#include "stemfactor/stem_io.hpp"

namespace stemfactor {

enum class InitMethod { UniformRandom };

struct NmfConfig {
  int k = 1;
  int max_iter = 300;
  double tol = 1e-5;       // relative Frobenius-loss change that counts as converged
  double epsilon = 1e-12;  // added to update denominators only
  std::uint64_t seed = 0;
  InitMethod init = InitMethod::UniformRandom;

  /// Throws InvalidArgument when an invariant is violated.
  void validate() const;
};

/// V ~= W H. After a run, W columns have unit sum (or are all zero) and H rows
/// carry the scale, so H(c, j) is the intensity of component c in pattern j.
struct Factorization {
  Matrix W;  // (px*py, k)
  Matrix H;  // (k, m*n)
  std::vector<double> loss_history;  // ||V - WH||_F after each iteration
  double initial_loss = 0.0;         // ||V - WH||_F at the random start
  double k_component_loss = 0.0;
  bool converged = false;
  int iterations_run = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;

  int k() const noexcept { return static_cast<int>(W.cols()); }
};

/// Rescales W columns to unit sum and H rows by the inverse factor. Zero
/// columns are left untouched. WH is unchanged up to rounding.
void normalize_gauge(Matrix& W, Matrix& H);

/// Throws EmptyMatrix, InvalidArgument (bad config) or NonFinite (with the
/// iteration at which the loss stopped being finite).
Factorization nmf_factorize(const DataMatrix& V, const NmfConfig& config);

/// Lower-level entry point: runs the updates from the given non-negative
/// starting point. Used by nmf_factorize and by tests.
Factorization nmf_iterate(const Matrix& V, Matrix W, Matrix H, const NmfConfig& config);

/// Mean absolute elementwise deviation (1 / (rows * cols)) sum |V - WH|.
double k_component_loss(const Matrix& V, const Matrix& W, const Matrix& H);
inline double k_component_loss(const DataMatrix& V, const Factorization& fac) {
  return k_component_loss(V.values(), fac.W, fac.H);
}

struct SweepResult {
  std::vector<int> k_values;
  std::vector<double> losses;
  std::vector<Factorization> factorizations;
  NmfConfig config;  // shared fields; `k` and `seed` are per run (seed = base + k)

  const Factorization& at(int k) const;
  std::string loss_curve_csv() const;
};

/// Derived per-k seed used by every sweep.
inline std::uint64_t sweep_seed(std::uint64_t base, int k) noexcept {
  return base + static_cast<std::uint64_t>(k);
}

/// Runs nmf_factorize for every k in [k_min, k_max] with seed = config.seed + k.
/// Runs are distributed over `threads` workers; results do not depend on it.
SweepResult sweep(const DataMatrix& V, int k_min, int k_max, const NmfConfig& config, int threads = 1);

}  // namespace stemfactor
