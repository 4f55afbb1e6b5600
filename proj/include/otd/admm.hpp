#pragma once

// Tensor nuclear norm through the cubic-penalty factorization
//
//   minimize (1/3) Σ_p (‖u_p‖³ + ‖v_p‖³ + ‖w_p‖³)  s.t.  T = Σ_p u_p ⊗ v_p ⊗ w_p
//
// solved by ADMM on the augmented Lagrangian
//
//   L = f(X) + ⟨Λ, T − Σ X_p⟩ + (ρ/2) ‖T − Σ X_p‖²_F,   X_p = u_p ⊗ v_p ⊗ w_p,
//
// with exact cyclic block minimization over every u_p, v_p, w_p followed by
// dual ascent Λ ← Λ + ρ (T − Σ X_p).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "otd/factor_model.hpp"
#include "otd/random.hpp"
#include "otd/tensor.hpp"

namespace otd {

/// Unnormalized factors; column p of u/v/w is one atom, magnitudes carry the weight.
struct RawFactors {
  Matrix u, v, w;

  RawFactors() = default;
  RawFactors(Matrix u_, Matrix v_, Matrix w_) : u(std::move(u_)), v(std::move(v_)), w(std::move(w_)) {
    if (u.cols() < 1 || v.cols() != u.cols() || w.cols() != u.cols())
      throw DimensionError("RawFactors: u, v, w need the same positive column count");
  }
  static RawFactors zeros(Dims3 d, Eigen::Index r) {
    return RawFactors(Matrix::Zero(Eigen::Index(d.n1), r), Matrix::Zero(Eigen::Index(d.n2), r),
                      Matrix::Zero(Eigen::Index(d.n3), r));
  }

  Eigen::Index rank() const noexcept { return u.cols(); }
  Dims3 dims() const noexcept {
    return {std::size_t(u.rows()), std::size_t(v.rows()), std::size_t(w.rows())};
  }
  Matrix& mode(int m) { return m == 0 ? u : (m == 1 ? v : w); }
  const Matrix& mode(int m) const { return m == 0 ? u : (m == 1 ? v : w); }

  Tensor3 synthesize() const {
    Tensor3 t(dims());
    for (Eigen::Index p = 0; p < rank(); ++p) t.add_outer(1.0, u.col(p), v.col(p), w.col(p));
    return t;
  }
};

inline double bm_objective(const RawFactors& raw) {
  double s = 0.0;
  for (int m = 0; m < 3; ++m)
    for (Eigen::Index p = 0; p < raw.rank(); ++p) s += std::pow(raw.mode(m).col(p).norm(), 3);
  return s / 3.0;
}

class EmptyDecompositionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, int iteration)
      : std::runtime_error(what + " (iteration " + std::to_string(iteration) + ")"),
        iteration_(iteration) {}
  int iteration() const noexcept { return iteration_; }

 private:
  int iteration_;
};

/// λ_p = ‖u_p‖‖v_p‖‖w_p‖; atoms with λ_p ≤ prune_tol are dropped, the rest normalized.
/// Only cube-shaped factors can be represented by a FactorSet.
inline FactorSet rescale_to_unit(const RawFactors& raw, double prune_tol = 0.0) {
  const Dims3 d = raw.dims();
  if (d.n1 != d.n2 || d.n2 != d.n3)
    throw DimensionError("rescale_to_unit: FactorSet needs n1 = n2 = n3");
  std::vector<Eigen::Index> keep;
  std::vector<double> lam;
  for (Eigen::Index p = 0; p < raw.rank(); ++p) {
    const double l = raw.u.col(p).norm() * raw.v.col(p).norm() * raw.w.col(p).norm();
    if (l > prune_tol && l > 0.0) {
      keep.push_back(p);
      lam.push_back(l);
    }
  }
  if (keep.empty()) throw EmptyDecompositionError("rescale_to_unit: every atom was pruned");
  const auto r = Eigen::Index(keep.size());
  const auto n = Eigen::Index(d.n1);
  Matrix u(n, r), v(n, r), w(n, r);
  for (Eigen::Index q = 0; q < r; ++q) {
    const Eigen::Index p = keep[std::size_t(q)];
    u.col(q) = raw.u.col(p).normalized();
    v.col(q) = raw.v.col(p).normalized();
    w.col(q) = raw.w.col(p).normalized();
  }
  return FactorSet(std::move(u), std::move(v), std::move(w), Eigen::Map<const Vector>(lam.data(), r));
}

/// Greedy deflation with alternating rank-one power iteration; atom p is
/// emitted as λ_p^{1/3} (u_p, v_p, w_p). A vanished residual leaves zero atoms.
inline RawFactors power_init(const Tensor3& t, Eigen::Index r_tilde, int inner_iters = 100,
                             int restarts = 10, std::uint64_t seed = 0) {
  if (r_tilde < 1) throw std::invalid_argument("power_init: r_tilde must be >= 1");
  RawFactors raw = RawFactors::zeros(t.dims(), r_tilde);
  Tensor3 residual = t;
  const double scale = t.max_abs();
  for (Eigen::Index p = 0; p < r_tilde; ++p) {
    if (residual.max_abs() <= 1e-15 * scale || scale == 0.0) break;
    SpectralOptions opt;
    opt.restarts = restarts;
    opt.max_iter = inner_iters;
    opt.tol = 0.0;
    opt.seed = hash_combine(seed, std::uint64_t(p));
    SpectralEstimate est = spectral_norm_estimate(residual, opt);
    double lam = est.value;
    if (lam < 0) {
      est.u = -est.u;
      lam = -lam;
    }
    if (lam == 0.0) break;
    residual.add_outer(-lam, est.u, est.v, est.w);
    const double s = std::cbrt(lam);
    raw.u.col(p) = s * est.u;
    raw.v.col(p) = s * est.v;
    raw.w.col(p) = s * est.w;
  }
  return raw;
}

enum class InitMethod { random, power };

struct AdmmConfig {
  double rho = 100.0;  ///< penalty for the unit-Frobenius-normalized tensor
  int max_iter = 5000;
  double primal_tol = 1e-9;  ///< on ‖T − Σ X_p‖_F / ‖T‖_F
  double obj_tol = 1e-12;    ///< on relative change of the objective between sweeps
  std::uint64_t seed = 0;
  InitMethod init = InitMethod::power;
  int power_restarts = 10;
  int power_inner_iters = 100;
  double prune_tol = kSurplusAtomTolerance;

  void validate() const {
    if (!(rho > 0.0)) throw std::invalid_argument("AdmmConfig: rho must be positive");
    if (!(primal_tol > 0.0) || !(obj_tol > 0.0))
      throw std::invalid_argument("AdmmConfig: tolerances must be positive");
    if (max_iter < 1) throw std::invalid_argument("AdmmConfig: max_iter must be >= 1");
  }
};

struct DecompositionResult {
  FactorSet factors;   ///< sorted by λ descending
  double objective = 0.0;  ///< Σ λ_p
  double residual = 0.0;   ///< ‖T − synthesize(factors)‖_F / ‖T‖_F
  int iterations = 0;
  bool converged = false;
  RawFactors raw;      ///< final iterate, unpruned
  Tensor3 dual;        ///< final Λ
};

/// Positive root t of t² + c t = g (stationarity of t³/3 + c t²/2 − g t).
inline double cubic_prox_magnitude(double c, double g) {
  if (!(g > 0.0)) return 0.0;
  // Rationalized form avoids cancellation when c² ≫ g.
  return 2.0 * g / (c + std::sqrt(c * c + 4.0 * g));
}

namespace detail {

inline FactorSet sorted_by_weight(const FactorSet& fs) {
  std::vector<Eigen::Index> order(std::size_t(fs.r()));
  std::iota(order.begin(), order.end(), Eigen::Index(0));
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return fs.lambda()[a] > fs.lambda()[b]; });
  Matrix u(fs.n(), fs.r()), v(fs.n(), fs.r()), w(fs.n(), fs.r());
  Vector lam(fs.r());
  for (Eigen::Index q = 0; q < fs.r(); ++q) {
    const Eigen::Index p = order[std::size_t(q)];
    u.col(q) = fs.U().col(p);
    v.col(q) = fs.V().col(p);
    w.col(q) = fs.W().col(p);
    lam[q] = fs.lambda()[p];
  }
  return FactorSet(std::move(u), std::move(v), std::move(w), std::move(lam));
}

}  // namespace detail

/// Exact minimizer of the augmented Lagrangian over one block (atom p, mode m),
/// given `shifted` = T − Σ_q X_q + Λ/ρ (all atoms, including p). Updates both
/// the factors and `shifted` in place.
inline void admm_block_update(RawFactors& x, Tensor3& shifted, Eigen::Index p, int m, double rho) {
  Matrix& self = x.mode(m);
  const Matrix& a = x.mode(m == 0 ? 1 : 0);
  const Matrix& b = x.mode(m == 2 ? 1 : 2);
  const Vector old = self.col(p);
  const double ab2 = a.col(p).squaredNorm() * b.col(p).squaredNorm();
  const ModePair pair = m == 0 ? ModePair::k23 : (m == 1 ? ModePair::k13 : ModePair::k12);
  // R̃ = shifted + X_p, so R̃(·, a, b) = shifted(·, a, b) + old ‖a‖²‖b‖².
  Vector g = contract(shifted, pair, a.col(p), b.col(p)) + ab2 * old;
  g *= rho;
  const double gn = g.norm();
  const double t = cubic_prox_magnitude(rho * ab2, gn);
  Vector fresh = t > 0.0 ? Vector(g * (t / gn)) : Vector::Zero(old.size());
  const Vector delta = fresh - old;
  if (delta.squaredNorm() > 0.0) {
    if (m == 0)
      shifted.add_outer(-1.0, delta, x.v.col(p), x.w.col(p));
    else if (m == 1)
      shifted.add_outer(-1.0, x.u.col(p), delta, x.w.col(p));
    else
      shifted.add_outer(-1.0, x.u.col(p), x.v.col(p), delta);
  }
  self.col(p) = std::move(fresh);
}

/// Augmented Lagrangian value, used by tests to check block exactness.
inline double augmented_lagrangian(const Tensor3& t, const RawFactors& x, const Tensor3& lambda,
                                   double rho) {
  Tensor3 resid = t - x.synthesize();
  return bm_objective(x) + inner(lambda, resid) + 0.5 * rho * inner(resid, resid);
}

inline DecompositionResult admm_solve(const Tensor3& t, const RawFactors& raw0, const AdmmConfig& cfg) {
  cfg.validate();
  if (!(raw0.dims() == t.dims())) throw DimensionError("admm_solve: factor dims do not match tensor");
  const double tnorm = t.frobenius_norm();
  const double denom = tnorm > 0.0 ? tnorm : 1.0;

  // Iterate on T/‖T‖_F so that rho is dimensionless; factors scale by ‖T‖^{1/3}.
  const double fscale = std::cbrt(denom);
  Tensor3 that = t;
  that *= 1.0 / denom;
  RawFactors x = raw0;
  for (int m = 0; m < 3; ++m) x.mode(m) /= fscale;
  Tensor3 scaled_dual(t.dims());  // Λ/ρ
  Tensor3 shifted = that - x.synthesize();

  DecompositionResult res;
  double prev_obj = bm_objective(x);
  double residual = (that - x.synthesize()).frobenius_norm();
  int it = 0;
  while (it < cfg.max_iter) {
    ++it;
    for (Eigen::Index p = 0; p < x.rank(); ++p)
      for (int m = 0; m < 3; ++m) admm_block_update(x, shifted, p, m, cfg.rho);

    // primal residual P = shifted − Λ/ρ; Λ/ρ += P and shifted += P.
    Tensor3 primal = shifted - scaled_dual;
    scaled_dual += primal;
    shifted += primal;
    residual = primal.frobenius_norm();
    const double obj = bm_objective(x);
    if (!std::isfinite(obj) || !std::isfinite(residual))
      throw DivergenceError("admm_solve: non-finite iterate", it);
    if (residual < cfg.primal_tol) break;
    if (std::abs(obj - prev_obj) < cfg.obj_tol * std::max(obj, 1e-300)) break;
    prev_obj = obj;
  }

  res.iterations = it;
  res.converged = residual < cfg.primal_tol;
  for (int m = 0; m < 3; ++m) x.mode(m) *= fscale;
  res.raw = x;
  res.dual = scaled_dual;
  res.dual *= cfg.rho;
  res.factors = detail::sorted_by_weight(rescale_to_unit(x, cfg.prune_tol));
  res.objective = res.factors.lambda().sum();
  res.residual = (t - synthesize(res.factors)).frobenius_norm() / denom;
  return res;
}

/// Random start: i.i.d. Gaussian columns with norm about (‖T‖_F / r̃)^{1/3}.
inline RawFactors random_init(const Tensor3& t, Eigen::Index r_tilde, std::uint64_t seed) {
  if (r_tilde < 1) throw std::invalid_argument("random_init: r_tilde must be >= 1");
  Rng rng(seed);
  const double s = std::cbrt(t.frobenius_norm() / double(r_tilde));
  RawFactors raw = RawFactors::zeros(t.dims(), r_tilde);
  for (int m = 0; m < 3; ++m) {
    Matrix& x = raw.mode(m);
    const double entry_scale = s / std::sqrt(double(x.rows()));
    for (Eigen::Index p = 0; p < r_tilde; ++p)
      for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, p) = entry_scale * rng.normal();
  }
  return raw;
}

inline DecompositionResult decompose(const Tensor3& t, Eigen::Index r_tilde, const AdmmConfig& cfg) {
  if (r_tilde < 1) throw std::invalid_argument("decompose: r_tilde must be >= 1");
  const RawFactors raw0 = cfg.init == InitMethod::power
                              ? power_init(t, r_tilde, cfg.power_inner_iters, cfg.power_restarts, cfg.seed)
                              : random_init(t, r_tilde, cfg.seed);
  return admm_solve(t, raw0, cfg);
}

}  // namespace otd
