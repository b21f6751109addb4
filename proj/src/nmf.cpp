#include "stemfactor/nmf.hpp"

#include <algorithm>
#include <atomic>
#include <cassert>
#include <cmath>
#include <cstdio>
#include <exception>
#include <random>
#include <sstream>
#include <thread>

#include "stemfactor/error.hpp"

namespace stemfactor {

void NmfConfig::validate() const {
  if (k < 1) fail(ErrorCode::InvalidArgument, "k must be >= 1, got " + std::to_string(k));
  if (max_iter < 1) fail(ErrorCode::InvalidArgument, "max_iter must be >= 1");
  if (!(tol >= 0.0)) fail(ErrorCode::InvalidArgument, "tol must be >= 0");
  if (!(epsilon > 0.0)) fail(ErrorCode::InvalidArgument, "epsilon must be > 0");
}

void normalize_gauge(Matrix& W, Matrix& H) {
  for (Eigen::Index c = 0; c < W.cols(); ++c) {
    const double s = W.col(c).sum();
    if (s > 0.0) {
      W.col(c) /= s;
      H.row(c) *= s;
    }
  }
}

double k_component_loss(const Matrix& V, const Matrix& W, const Matrix& H) {
  if (W.rows() != V.rows() || H.cols() != V.cols() || W.cols() != H.rows())
    fail(ErrorCode::ShapeMismatch, "factor shapes do not conform to V");
  if (V.size() == 0) fail(ErrorCode::EmptyMatrix, "V is empty");
  const Matrix wh = W * H;
  return (V - wh).cwiseAbs().sum() / static_cast<double>(V.size());
}

Factorization nmf_iterate(const Matrix& V, Matrix W, Matrix H, const NmfConfig& config) {
  config.validate();
  if (V.size() == 0) fail(ErrorCode::EmptyMatrix, "V is empty");
  if (W.rows() != V.rows() || H.cols() != V.cols() || W.cols() != H.rows() || W.cols() != config.k)
    fail(ErrorCode::ShapeMismatch, "initial factors do not conform to V and k");

  Factorization fac;
  fac.seed = config.seed;
  if (config.k > std::min(V.rows(), V.cols()))
    fac.warnings.push_back("k = " + std::to_string(config.k) + " exceeds min(rows, cols) of V");

  const double eps = config.epsilon;
  const double v_norm2 = V.squaredNorm();
  Matrix wtv(config.k, V.cols());
  Matrix vht(V.rows(), config.k);
  Matrix wtw(config.k, config.k);
  Matrix hht(config.k, config.k);
  Matrix denom_h(config.k, V.cols());
  Matrix denom_w(V.rows(), config.k);

  // ||V - WH||^2 = ||V||^2 - 2 <W'V, H> + <W'W, HH'>, which reuses the
  // products the updates need anyway. Expects wtv, wtw and hht to be current.
  // Near an exact fit the expansion cancels badly, so the residual is formed
  // explicitly there.
  auto frobenius_loss = [&] {
    const double sq = v_norm2 - 2.0 * (wtv.array() * H.array()).sum() + (wtw.array() * hht.array()).sum();
    if (sq > 1e-6 * v_norm2) return std::sqrt(sq);
    return (V - W * H).norm();
  };

  wtv.noalias() = W.transpose() * V;
  wtw.noalias() = W.transpose() * W;
  hht.noalias() = H * H.transpose();
  double previous = frobenius_loss();
  fac.initial_loss = previous;
  fac.loss_history.reserve(static_cast<std::size_t>(config.max_iter));
  for (int it = 1; it <= config.max_iter; ++it) {
    // H first, then W with the fresh H.
    denom_h.noalias() = wtw * H;
    H.array() *= wtv.array() / (denom_h.array() + eps);

    vht.noalias() = V * H.transpose();
    hht.noalias() = H * H.transpose();
    denom_w.noalias() = W * hht;
    W.array() *= vht.array() / (denom_w.array() + eps);

    assert((W.array() >= 0.0).all() && (H.array() >= 0.0).all());

    wtv.noalias() = W.transpose() * V;
    wtw.noalias() = W.transpose() * W;
    const double loss = frobenius_loss();
    if (!std::isfinite(loss))
      fail(ErrorCode::NonFinite, "loss became non-finite at iteration " + std::to_string(it) +
                                     " (k = " + std::to_string(config.k) + ")");
    fac.loss_history.push_back(loss);
    fac.iterations_run = it;
    if (std::abs(previous - loss) / std::max(previous, eps) < config.tol) {
      fac.converged = true;
      break;
    }
    previous = loss;
  }

  normalize_gauge(W, H);
  fac.W = std::move(W);
  fac.H = std::move(H);
  fac.k_component_loss = k_component_loss(V, fac.W, fac.H);
  return fac;
}

Factorization nmf_factorize(const DataMatrix& V, const NmfConfig& config) {
  config.validate();
  const Matrix& v = V.values();
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(std::nextafter(0.0, 1.0), 1.0);
  const double scale = std::sqrt(v.mean() / config.k);
  Matrix W(v.rows(), config.k);
  Matrix H(config.k, v.cols());
  for (Eigen::Index i = 0; i < W.size(); ++i) W.data()[i] = unit(rng) * scale;
  for (Eigen::Index i = 0; i < H.size(); ++i) H.data()[i] = unit(rng) * scale;
  return nmf_iterate(v, std::move(W), std::move(H), config);
}

const Factorization& SweepResult::at(int k) const {
  const auto it = std::find(k_values.begin(), k_values.end(), k);
  if (it == k_values.end()) fail(ErrorCode::InvalidArgument, "k = " + std::to_string(k) + " not in sweep");
  return factorizations[static_cast<std::size_t>(it - k_values.begin())];
}

std::string SweepResult::loss_curve_csv() const {
  std::ostringstream os;
  os << "k,k_component_loss,iterations,converged\n";
  char buf[64];
  for (std::size_t i = 0; i < k_values.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", losses[i]);
    os << k_values[i] << "," << buf << "," << factorizations[i].iterations_run << ","
       << (factorizations[i].converged ? "true" : "false") << "\n";
  }
  return os.str();
}

SweepResult sweep(const DataMatrix& V, int k_min, int k_max, const NmfConfig& config, int threads) {
  if (k_min < 1 || k_max < k_min)
    fail(ErrorCode::InvalidArgument, "sweep needs 1 <= k_min <= k_max, got [" + std::to_string(k_min) + ", " +
                                         std::to_string(k_max) + "]");
  const auto count = static_cast<std::size_t>(k_max - k_min + 1);
  SweepResult result;
  result.config = config;
  result.factorizations.resize(count);
  std::vector<std::exception_ptr> errors(count);

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      NmfConfig run = config;
      run.k = k_min + static_cast<int>(i);
      run.seed = sweep_seed(config.seed, run.k);
      try {
        result.factorizations[i] = nmf_factorize(V, run);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto workers = static_cast<std::size_t>(std::clamp(threads, 1, static_cast<int>(count)));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(worker);
  }

  for (std::size_t i = 0; i < count; ++i) {
    if (!errors[i]) continue;
    const int k = k_min + static_cast<int>(i);
    try {
      std::rethrow_exception(errors[i]);
    } catch (const Error& e) {
      throw Error(e.code(), "sweep at k = " + std::to_string(k) + ": " + e.message());
    }
  }
  for (std::size_t i = 0; i < count; ++i) {
    result.k_values.push_back(k_min + static_cast<int>(i));
    result.losses.push_back(result.factorizations[i].k_component_loss);
  }
  return result;
}

}  // namespace stemfactor
