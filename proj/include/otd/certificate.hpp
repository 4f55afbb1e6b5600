#pragma once

// Minimal-energy dual certificate for a planted decomposition.
//
// The certificate tensor has the form
//
//   Q = Σ_p (α_p ⊗ v_p ⊗ w_p + u_p ⊗ β_p ⊗ w_p + u_p ⊗ v_p ⊗ γ_p)
//
// with coefficient matrices A = [α_p], B = [β_p], C = [γ_p] chosen so that
// Q(I, v_p, w_p) = u_p, Q(u_p, I, w_p) = v_p, Q(u_p, v_p, I) = w_p for every p
// and ‖Q‖_F is minimal. Everything here works with the n x r coefficient
// matrices and r x r Gram matrices; Q is only materialized on request.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "otd/factor_model.hpp"
#include "otd/random.hpp"
#include "otd/tensor.hpp"

namespace otd {

struct Coefficients {
  Matrix a, b, c;

  const Matrix& mode(int m) const { return m == 0 ? a : (m == 1 ? b : c); }
  Matrix& mode(int m) { return m == 0 ? a : (m == 1 ? b : c); }
};

enum class CertMethod { direct, iterative };
enum class CertStatus { converged, max_iter, diverged };

inline const char* to_string(CertMethod m) { return m == CertMethod::direct ? "direct" : "iterative"; }
inline const char* to_string(CertStatus s) {
  switch (s) {
    case CertStatus::converged: return "converged";
    case CertStatus::max_iter: return "max_iter";
    case CertStatus::diverged: return "diverged";
  }
  return "?";
}

struct Certificate {
  Coefficients coeffs;
  CertMethod method = CertMethod::direct;
  double solve_residual = 0.0;  ///< ‖operator(coeffs) − (U, V, W)‖_F
  int iterations = 0;
  CertStatus status = CertStatus::converged;
  Eigen::Index null_dim = 0;  ///< eigenvalues under the cutoff (direct only)

  const Matrix& A() const noexcept { return coeffs.a; }
  const Matrix& B() const noexcept { return coeffs.b; }
  const Matrix& C() const noexcept { return coeffs.c; }
};

class InconsistentSystemError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct Grams {
  std::array<Matrix, 3> g;  // XᵀX per mode
  explicit Grams(const FactorSet& fs)
      : g{Matrix(fs.U().transpose() * fs.U()), Matrix(fs.V().transpose() * fs.V()),
          Matrix(fs.W().transpose() * fs.W())} {}
};

inline void check_coeff_dims(const FactorSet& fs, const Coefficients& k) {
  for (int m = 0; m < 3; ++m)
    if (k.mode(m).rows() != fs.n() || k.mode(m).cols() != fs.r())
      throw DimensionError("certificate coefficients must be n x r");
}

// Output of mode `out`: Q contracted with the other two factors of atom q, for all q.
inline Matrix gram_operator_mode(const FactorSet& fs, const Grams& gr, const Coefficients& k, int out) {
  const int m1 = out == 0 ? 1 : 0;
  const int m2 = out == 2 ? 1 : 2;
  const Matrix& g1 = gr.g[std::size_t(m1)];
  const Matrix& g2 = gr.g[std::size_t(m2)];
  // own coefficient: K_out [(G1)⊙(G2)]
  Matrix res = k.mode(out) * g1.cwiseProduct(g2);
  // coefficient in m1: X_out [(K_m1ᵀ X_m1) ⊙ G2]
  res += fs.mode(out) * (k.mode(m1).transpose() * fs.mode(m1)).cwiseProduct(g2);
  // coefficient in m2: X_out [G1 ⊙ (K_m2ᵀ X_m2)]
  res += fs.mode(out) * g1.cwiseProduct(k.mode(m2).transpose() * fs.mode(m2));
  return res;
}

}  // namespace detail

/// The three stationarity left-hand sides, Q(I,v_q,w_q), Q(u_q,I,w_q) and
/// Q(u_q,v_q,I) stacked as columns, evaluated from the coefficients alone.
inline Coefficients apply_gram_operator(const FactorSet& fs, const Coefficients& k) {
  detail::check_coeff_dims(fs, k);
  const detail::Grams gr(fs);
  return {detail::gram_operator_mode(fs, gr, k, 0), detail::gram_operator_mode(fs, gr, k, 1),
          detail::gram_operator_mode(fs, gr, k, 2)};
}

/// Q = Σ_p (α_p⊗v_p⊗w_p + u_p⊗β_p⊗w_p + u_p⊗v_p⊗γ_p)
inline Tensor3 build_Q(const Coefficients& k, const FactorSet& fs) {
  detail::check_coeff_dims(fs, k);
  Tensor3 q(Dims3::cube(std::size_t(fs.n())));
  for (Eigen::Index p = 0; p < fs.r(); ++p) {
    q.add_outer(1.0, k.a.col(p), fs.V().col(p), fs.W().col(p));
    q.add_outer(1.0, fs.U().col(p), k.b.col(p), fs.W().col(p));
    q.add_outer(1.0, fs.U().col(p), fs.V().col(p), k.c.col(p));
  }
  return q;
}
inline Tensor3 build_Q(const Certificate& cert, const FactorSet& fs) { return build_Q(cert.coeffs, fs); }

/// Stacked coordinates: [vec A; vec B; vec C], each column-major.
inline Vector stack(const Coefficients& k) {
  const Eigen::Index nr = k.a.size();
  Vector x(3 * nr);
  x.segment(0, nr) = Eigen::Map<const Vector>(k.a.data(), nr);
  x.segment(nr, nr) = Eigen::Map<const Vector>(k.b.data(), nr);
  x.segment(2 * nr, nr) = Eigen::Map<const Vector>(k.c.data(), nr);
  return x;
}

inline Coefficients unstack(const Vector& x, Eigen::Index n, Eigen::Index r) {
  const Eigen::Index nr = n * r;
  if (x.size() != 3 * nr) throw DimensionError("unstack: length is not 3nr");
  return {Eigen::Map<const Matrix>(x.data(), n, r), Eigen::Map<const Matrix>(x.data() + nr, n, r),
          Eigen::Map<const Matrix>(x.data() + 2 * nr, n, r)};
}

/// Dense symmetric 3nr x 3nr matrix of apply_gram_operator in stacked coordinates.
///   same mode a:      δ_ij Π_{c≠a} G_c(p,q)
///   modes a ≠ b:      X_a(i,p) X_b(j,q) G_c(p,q),  c the remaining mode
/// for row (a, i, q) and column (b, j, p).
inline Matrix assemble_gram_operator(const FactorSet& fs) {
  const Eigen::Index n = fs.n(), r = fs.r(), nr = n * r;
  const detail::Grams gr(fs);
  Matrix m = Matrix::Zero(3 * nr, 3 * nr);
  auto idx = [&](int mode, Eigen::Index i, Eigen::Index p) { return mode * nr + p * n + i; };
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      if (a == b) {
        const int c1 = a == 0 ? 1 : 0, c2 = a == 2 ? 1 : 2;
        for (Eigen::Index q = 0; q < r; ++q)
          for (Eigen::Index p = 0; p < r; ++p) {
            const double val = gr.g[std::size_t(c1)](p, q) * gr.g[std::size_t(c2)](p, q);
            for (Eigen::Index i = 0; i < n; ++i) m(idx(a, i, q), idx(b, i, p)) = val;
          }
        continue;
      }
      const int c = 3 - a - b;
      const Matrix& xa = fs.mode(a);
      const Matrix& xb = fs.mode(b);
      const Matrix& gc = gr.g[std::size_t(c)];
      for (Eigen::Index q = 0; q < r; ++q)
        for (Eigen::Index p = 0; p < r; ++p) {
          const double gpq = gc(p, q);
          for (Eigen::Index j = 0; j < n; ++j) {
            const double bj = xb(j, q) * gpq;
            for (Eigen::Index i = 0; i < n; ++i) m(idx(a, i, q), idx(b, j, p)) = xa(i, p) * bj;
          }
        }
    }
  }
  return m;
}

/// Orthonormal basis (3nr x 2r) of the coefficient directions that leave Q unchanged:
/// (u_p e_pᵀ, −v_p e_pᵀ, 0)/√2 and (u_p e_pᵀ, v_p e_pᵀ, −2 w_p e_pᵀ)/√6.
inline Matrix null_space_basis(const FactorSet& fs) {
  const Eigen::Index n = fs.n(), r = fs.r(), nr = n * r;
  Matrix basis = Matrix::Zero(3 * nr, 2 * r);
  const double s2 = 1.0 / std::sqrt(2.0), s6 = 1.0 / std::sqrt(6.0);
  for (Eigen::Index p = 0; p < r; ++p) {
    basis.col(2 * p).segment(p * n, n) = s2 * fs.U().col(p);
    basis.col(2 * p).segment(nr + p * n, n) = -s2 * fs.V().col(p);
    basis.col(2 * p + 1).segment(p * n, n) = s6 * fs.U().col(p);
    basis.col(2 * p + 1).segment(nr + p * n, n) = s6 * fs.V().col(p);
    basis.col(2 * p + 1).segment(2 * nr + p * n, n) = -2.0 * s6 * fs.W().col(p);
  }
  return basis;
}

/// Remove the null_space_basis component; applied blockwise without forming the basis.
inline void project_out_null_space(const FactorSet& fs, Coefficients& k) {
  const double s2 = 1.0 / std::sqrt(2.0), s6 = 1.0 / std::sqrt(6.0);
  for (Eigen::Index p = 0; p < fs.r(); ++p) {
    const double da = k.a.col(p).dot(fs.U().col(p));
    const double db = k.b.col(p).dot(fs.V().col(p));
    const double dc = k.c.col(p).dot(fs.W().col(p));
    const double c1 = s2 * (da - db);
    const double c2 = s6 * (da + db - 2.0 * dc);
    k.a.col(p) -= (c1 * s2 + c2 * s6) * fs.U().col(p);
    k.b.col(p) -= (-c1 * s2 + c2 * s6) * fs.V().col(p);
    k.c.col(p) -= (-2.0 * c2 * s6) * fs.W().col(p);
  }
}

inline Coefficients target_rhs(const FactorSet& fs) { return {fs.U(), fs.V(), fs.W()}; }

inline double operator_residual(const FactorSet& fs, const Coefficients& k) {
  const Coefficients out = apply_gram_operator(fs, k);
  double s = 0.0;
  for (int m = 0; m < 3; ++m) s += (out.mode(m) - fs.mode(m)).squaredNorm();
  return std::sqrt(s);
}

inline constexpr double kPseudoInverseCutoff = 1e-10;
inline constexpr double kInconsistencyTolerance = 1e-6;

/// Min-norm solution of the normal equations via a full symmetric
/// eigendecomposition. O((nr)³); meant for n·r up to a few thousand.
inline Certificate solve_certificate_direct(const FactorSet& fs) {
  const Matrix m = assemble_gram_operator(fs);
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("solve_certificate_direct: eigendecomposition failed");
  const Vector& evals = es.eigenvalues();
  const double cutoff = kPseudoInverseCutoff * std::max(std::abs(evals.maxCoeff()), 1e-300);
  const Vector s = stack(target_rhs(fs));
  Vector proj = es.eigenvectors().transpose() * s;
  Certificate cert;
  cert.method = CertMethod::direct;
  for (Eigen::Index k = 0; k < evals.size(); ++k) {
    if (evals[k] > cutoff) {
      proj[k] /= evals[k];
    } else {
      proj[k] = 0.0;
      ++cert.null_dim;
    }
  }
  const Vector x = es.eigenvectors() * proj;
  cert.coeffs = unstack(x, fs.n(), fs.r());
  cert.solve_residual = operator_residual(fs, cert.coeffs);
  if (cert.solve_residual > kInconsistencyTolerance)
    throw InconsistentSystemError("solve_certificate_direct: normal equations are inconsistent (residual " +
                                  std::to_string(cert.solve_residual) + ")");
  return cert;
}

struct IterativeOptions {
  double rho = 0.5;
  int max_iter = 10000;
  double tol = 1e-12;
  /// Block changes above this are treated as divergence.
  double blowup = 1e8;
};

/// Block Gauss-Seidel form of the fixed-point iteration
///   A ← A − ρ (Q(I,v_q,w_q) − u_q)   then B with the new A, then C with the new A, B,
/// started from (U, V, W)/3. The iterates can drift along the 2r null directions,
/// so the result is projected onto their orthogonal complement, which picks the
/// min-norm solution.
inline Certificate solve_certificate_iterative(const FactorSet& fs, const IterativeOptions& opt = {}) {
  if (!(opt.rho > 0.0) || opt.rho > 1.0)
    throw std::invalid_argument("solve_certificate_iterative: rho must lie in (0, 1]");
  const detail::Grams gr(fs);
  Coefficients k{fs.U() / 3.0, fs.V() / 3.0, fs.W() / 3.0};
  Certificate cert;
  cert.method = CertMethod::iterative;
  cert.status = CertStatus::max_iter;
  const double scale = std::sqrt(double(fs.r()));
  for (int it = 1; it <= opt.max_iter; ++it) {
    double change = 0.0;
    for (int m = 0; m < 3; ++m) {
      const Matrix step = opt.rho * (detail::gram_operator_mode(fs, gr, k, m) - fs.mode(m));
      k.mode(m) -= step;
      change = std::max(change, step.norm());
    }
    cert.iterations = it;
    if (!std::isfinite(change) || change > opt.blowup * scale) {
      cert.status = CertStatus::diverged;
      break;
    }
    if (change < opt.tol) {
      cert.status = CertStatus::converged;
      break;
    }
  }
  if (cert.status != CertStatus::diverged) project_out_null_space(fs, k);
  cert.coeffs = std::move(k);
  cert.solve_residual = cert.status == CertStatus::diverged ? std::numeric_limits<double>::infinity()
                                                             : operator_residual(fs, cert.coeffs);
  return cert;
}

// ---- the dual polynomial ------------------------------------------------------------

/// Precomputed projections so that q and its partial gradients cost O(nr).
class DualPolynomial {
 public:
  DualPolynomial(const Coefficients& k, const FactorSet& fs) : k_(k), fs_(fs) {
    detail::check_coeff_dims(fs, k);
  }

  /// q(u, v, w) = Σ_p [⟨α_p,u⟩⟨v_p,v⟩⟨w_p,w⟩ + ⟨u_p,u⟩⟨β_p,v⟩⟨w_p,w⟩ + ⟨u_p,u⟩⟨v_p,v⟩⟨γ_p,w⟩]
  double operator()(const Vector& u, const Vector& v, const Vector& w) const {
    const Vector au = k_.a.transpose() * u, uu = fs_.U().transpose() * u;
    const Vector bv = k_.b.transpose() * v, vv = fs_.V().transpose() * v;
    const Vector cw = k_.c.transpose() * w, ww = fs_.W().transpose() * w;
    return (au.cwiseProduct(vv).cwiseProduct(ww) + uu.cwiseProduct(bv).cwiseProduct(ww) +
            uu.cwiseProduct(vv).cwiseProduct(cw))
        .sum();
  }

  /// ∂q/∂(mode m) at (u, v, w); q is linear in each argument, so q = ⟨grad, x_m⟩.
  Vector gradient(int m, const Vector& u, const Vector& v, const Vector& w) const {
    const std::array<const Vector*, 3> x{&u, &v, &w};
    const int m1 = m == 0 ? 1 : 0, m2 = m == 2 ? 1 : 2;
    const Vector f1 = fs_.mode(m1).transpose() * *x[std::size_t(m1)];
    const Vector f2 = fs_.mode(m2).transpose() * *x[std::size_t(m2)];
    const Vector k1 = k_.mode(m1).transpose() * *x[std::size_t(m1)];
    const Vector k2 = k_.mode(m2).transpose() * *x[std::size_t(m2)];
    return k_.mode(m) * f1.cwiseProduct(f2) + fs_.mode(m) * (k1.cwiseProduct(f2) + f1.cwiseProduct(k2));
  }

 private:
  const Coefficients& k_;
  const FactorSet& fs_;
};

inline void require_unit(const Vector& x, const char* name) {
  if (std::abs(x.norm() - 1.0) > UnitVector::kTolerance)
    throw std::invalid_argument(std::string("q_eval: ") + name + " is not a unit vector");
}

inline double q_eval(const Certificate& cert, const FactorSet& fs, const Vector& u, const Vector& v,
                     const Vector& w) {
  if (u.size() != fs.n() || v.size() != fs.n() || w.size() != fs.n())
    throw DimensionError("q_eval: argument length must be n");
  require_unit(u, "u");
  require_unit(v, "v");
  require_unit(w, "w");
  return DualPolynomial(cert.coeffs, fs)(u, v, w);
}

// ---- region constants ------------------------------------------------------------

struct RegionParams {
  double gamma = 0.0;      ///< 6√τ
  double d = 0.0;          ///< far-region correlation level γ n^{−r_c/2} − 6κ(√r/n + c r n^{−1.5})
  double delta = 0.0;      ///< near-region radius √(80τ/3) n^{−r_c/2}
  double rank_cap = 0.0;   ///< min(n^{1.25−1.5 r_c}, n^{1+r_c/2}/(2c²γ))
  double far_bound = 0.0;  ///< [d + 6κ(√r/n + c r/n^{1.5})](1 + c√(r/n))²
  bool degenerate = false; ///< d ≤ 0
  bool covers = false;     ///< δ ≤ d, so near and far regions cover the product of spheres
};

inline RegionParams region_parameters(double n, double r, double r_c, double tau, double kappa, double c) {
  if (!(n > 0) || !(r > 0) || !(tau > 0) || kappa < 0 || c < 0)
    throw std::invalid_argument("region_parameters: need n, r, tau > 0 and kappa, c >= 0");
  if (!(r_c > 0.0 && r_c < 1.0 / 6.0)) throw std::invalid_argument("region_parameters: r_c must lie in (0, 1/6)");
  RegionParams rp;
  const double coupling = 6.0 * kappa * (std::sqrt(r) / n + c * r / std::pow(n, 1.5));
  rp.gamma = 6.0 * std::sqrt(tau);
  rp.d = rp.gamma * std::pow(n, -r_c / 2.0) - coupling;
  rp.delta = std::sqrt(80.0 / 3.0 * tau) * std::pow(n, -0.5 * r_c);
  const double spread = 1.0 + c * std::sqrt(r / n);
  rp.far_bound = (rp.d + coupling) * spread * spread;
  const double cap_far = c > 0.0 ? std::pow(n, 1.0 + r_c / 2.0) / (2.0 * c * c * rp.gamma)
                                  : std::numeric_limits<double>::infinity();
  rp.rank_cap = std::min(std::pow(n, 1.25 - 1.5 * r_c), cap_far);
  rp.degenerate = rp.d <= 0.0;
  rp.covers = !rp.degenerate && rp.delta <= rp.d;
  return rp;
}

// ---- verification -----------------------------------------------------------------

struct VerifyOptions {
  int samples = 10000;
  int ascent_restarts = 50;
  int ascent_max_iter = 1000;
  std::uint64_t seed = 0;
  double exclusion_radius = 1e-3;
  double r_c = 0.125;
  /// Overrides for τ̂, κ̂, ĉ; the implied constants are used otherwise.
  std::optional<AssumptionThresholds> constants;
  int threads = 1;
};

struct CertificateReport {
  double interp_err = 0.0;
  double stationarity_err = 0.0;
  std::array<double, 3> coeff_dev{};
  double lemma3_rhs = 0.0;
  double boundedness_max = -std::numeric_limits<double>::infinity();
  bool boundedness_ok = false;
  int excluded = 0;  ///< sampled or ascended triples dropped near the support orbit
  double tau_hat = 0.0, kappa_hat = 0.0, c_hat = 0.0;
  double r_c = 0.125;
  std::optional<RegionParams> region;  ///< absent when τ̂ = 0 (r = 1)
};

/// True when (u,v,w) is within `radius` (per mode) of an even sign flip of a support triple.
inline bool near_support_orbit(const FactorSet& fs, const Vector& u, const Vector& v, const Vector& w,
                               double radius) {
  for (Eigen::Index p = 0; p < fs.r(); ++p) {
    for (const SignTriple& s : kEvenSignFlips) {
      if ((s.s1 * u - fs.U().col(p)).norm() <= radius && (s.s2 * v - fs.V().col(p)).norm() <= radius &&
          (s.s3 * w - fs.W().col(p)).norm() <= radius)
        return true;
    }
  }
  return false;
}

namespace detail {

struct BoundednessPartial {
  double max = -std::numeric_limits<double>::infinity();
  int excluded = 0;
};

inline BoundednessPartial boundedness_chunk(const DualPolynomial& q, const FactorSet& fs, int samples,
                                            int restarts, int max_iter, double radius, std::uint64_t seed) {
  BoundednessPartial out;
  Rng rng(seed);
  const Eigen::Index n = fs.n();
  auto consider = [&](const Vector& u, const Vector& v, const Vector& w, double val) {
    if (near_support_orbit(fs, u, v, w, radius))
      ++out.excluded;
    else
      out.max = std::max(out.max, val);
  };
  for (int s = 0; s < samples; ++s) {
    Vector u = rng.unit_vector(n), v = rng.unit_vector(n), w = rng.unit_vector(n);
    consider(u, v, w, q(u, v, w));
  }
  for (int s = 0; s < restarts; ++s) {
    std::array<Vector, 3> x{rng.unit_vector(n), rng.unit_vector(n), rng.unit_vector(n)};
    double val = q(x[0], x[1], x[2]);
    for (int it = 0; it < max_iter; ++it) {
      for (int m = 0; m < 3; ++m) {
        Vector g = q.gradient(m, x[0], x[1], x[2]);
        const double gn = g.norm();
        if (gn > 0) x[std::size_t(m)] = g / gn;
      }
      const double next = q(x[0], x[1], x[2]);
      const bool done = std::abs(next - val) <= 1e-14 * std::max(1.0, std::abs(next));
      val = next;
      if (done) break;
    }
    consider(x[0], x[1], x[2], val);
  }
  return out;
}

}  // namespace detail

/// Sampling plus alternating ascent of q away from the support orbit. Work is
/// split into fixed chunks seeded by splitmix64(seed + chunk) so the answer does
/// not depend on the thread count.
inline std::pair<double, int> boundedness_scan(const Certificate& cert, const FactorSet& fs,
                                               const VerifyOptions& opt) {
  const DualPolynomial q(cert.coeffs, fs);
  constexpr int kChunk = 1000;
  struct Job {
    int samples, restarts;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  const int sample_chunks = (opt.samples + kChunk - 1) / kChunk;
  for (int c = 0; c < sample_chunks; ++c)
    jobs.push_back({std::min(kChunk, opt.samples - c * kChunk), 0, splitmix64(opt.seed + std::uint64_t(c))});
  jobs.push_back({0, opt.ascent_restarts, splitmix64(opt.seed + std::uint64_t(sample_chunks))});

  std::vector<detail::BoundednessPartial> parts(jobs.size());
  auto run = [&](std::size_t j) {
    parts[j] = detail::boundedness_chunk(q, fs, jobs[j].samples, jobs[j].restarts, opt.ascent_max_iter,
                                         opt.exclusion_radius, jobs[j].seed);
  };
  const int threads = std::max(1, opt.threads);
  if (threads == 1) {
    for (std::size_t j = 0; j < jobs.size(); ++j) run(j);
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t j = std::size_t(t); j < jobs.size(); j += std::size_t(threads)) run(j);
      });
  }
  double mx = -std::numeric_limits<double>::infinity();
  int excluded = 0;
  for (const auto& p : parts) {
    mx = std::max(mx, p.max);
    excluded += p.excluded;
  }
  return {mx, excluded};
}

inline CertificateReport verify_certificate(const Certificate& cert, const FactorSet& fs,
                                            const VerifyOptions& opt = {}) {
  CertificateReport rep;
  const Coefficients out = apply_gram_operator(fs, cert.coeffs);
  for (int m = 0; m < 3; ++m)
    rep.stationarity_err = std::max(rep.stationarity_err, (out.mode(m) - fs.mode(m)).cwiseAbs().maxCoeff());
  const DualPolynomial q(cert.coeffs, fs);
  for (Eigen::Index p = 0; p < fs.r(); ++p)
    rep.interp_err = std::max(rep.interp_err, std::abs(q(fs.U().col(p), fs.V().col(p), fs.W().col(p)) - 1.0));
  for (int m = 0; m < 3; ++m)
    rep.coeff_dev[std::size_t(m)] = spectral_norm(Matrix(cert.coeffs.mode(m) - fs.mode(m) / 3.0));

  const AssumptionReport ar = assumption_report(fs);
  rep.tau_hat = opt.constants ? opt.constants->tau : ar.implied_tau;
  rep.kappa_hat = opt.constants ? opt.constants->kappa : ar.implied_kappa;
  rep.c_hat = opt.constants ? opt.constants->c : ar.implied_c;
  rep.r_c = opt.r_c;
  const double n = double(fs.n()), r = double(fs.r());
  rep.lemma3_rhs = 2.0 * rep.kappa_hat * (std::sqrt(r) / n + rep.c_hat * r / std::pow(n, 1.5));
  if (rep.tau_hat > 0.0) rep.region = region_parameters(n, r, opt.r_c, rep.tau_hat, rep.kappa_hat, rep.c_hat);

  const auto [mx, excluded] = boundedness_scan(cert, fs, opt);
  rep.boundedness_max = mx;
  rep.excluded = excluded;
  rep.boundedness_ok = mx < 1.0;
  return rep;
}

// ---- near region -----------------------------------------------------------------

struct NearRegionReport {
  double expansion_err = 0.0;   ///< max |8-term expansion − q| over grid and trials
  double cross_term_max = 0.0;  ///< max |q(u*,v*,z)|, |q(u*,y,w*)|, |q(x,v*,w*)|
  double max_excess = -std::numeric_limits<double>::infinity();  ///< max of q − bound over the grid
  double q_at_origin = 0.0;
  double bound_slack = 0.0;  ///< 4 τ̂ n^{−r_c}
  bool bound_ok = false;
};

/// Unit vector orthogonal to `axis`.
inline Vector random_orthogonal(Rng& rng, const Vector& axis) {
  for (;;) {
    Vector g = rng.gaussian_vector(axis.size());
    g -= g.dot(axis) * axis;
    const double nrm = g.norm();
    if (nrm > 1e-8) return g / nrm;
  }
}

/// Along u(θ₁) = u_p cos θ₁ + x sin θ₁ (and likewise v, w) with θ on a uniform
/// grid over [0, π]: checks the trilinear 8-term expansion against direct
/// evaluation, that the single-sine coefficients vanish, and the
/// cos·cos·cos + sin·sin·sin + 4τ̂n^{−r_c} upper bound.
inline NearRegionReport near_region_check(const Certificate& cert, const FactorSet& fs, Eigen::Index p,
                                          int trials, int theta_grid, std::uint64_t seed, double tau_hat,
                                          double r_c = 0.125) {
  if (p < 0 || p >= fs.r()) throw std::out_of_range("near_region_check: atom index");
  if (fs.n() < 2) throw std::invalid_argument("near_region_check: needs n >= 2");
  if (theta_grid < 2) throw std::invalid_argument("near_region_check: theta_grid must be >= 2");
  const DualPolynomial q(cert.coeffs, fs);
  const Vector us = fs.U().col(p), vs = fs.V().col(p), ws = fs.W().col(p);
  NearRegionReport rep;
  rep.q_at_origin = q(us, vs, ws);
  rep.bound_slack = 4.0 * tau_hat * std::pow(double(fs.n()), -r_c);
  Rng rng(seed);
  const auto grid_len = std::size_t(theta_grid);
  std::vector<double> cs(grid_len), sn(grid_len);
  for (int g = 0; g < theta_grid; ++g) {
    const double th = std::numbers::pi * g / (theta_grid - 1);
    cs[std::size_t(g)] = std::cos(th);
    sn[std::size_t(g)] = std::sin(th);
  }
  for (int t = 0; t < trials; ++t) {
    const Vector x = random_orthogonal(rng, us), y = random_orthogonal(rng, vs), z = random_orthogonal(rng, ws);
    // coefficient of cos^{1−a} sin^a per mode, indexed by the bit pattern (a1 a2 a3)
    std::array<double, 8> coef{};
    for (int bits = 0; bits < 8; ++bits)
      coef[std::size_t(bits)] = q(bits & 4 ? x : us, bits & 2 ? y : vs, bits & 1 ? z : ws);
    rep.cross_term_max = std::max({rep.cross_term_max, std::abs(coef[1]), std::abs(coef[2]), std::abs(coef[4])});
    for (int g1 = 0; g1 < theta_grid; ++g1)
      for (int g2 = 0; g2 < theta_grid; ++g2)
        for (int g3 = 0; g3 < theta_grid; ++g3) {
          const double c1 = cs[std::size_t(g1)], s1 = sn[std::size_t(g1)];
          const double c2 = cs[std::size_t(g2)], s2 = sn[std::size_t(g2)];
          const double c3 = cs[std::size_t(g3)], s3 = sn[std::size_t(g3)];
          const Vector u = us * c1 + x * s1, v = vs * c2 + y * s2, w = ws * c3 + z * s3;
          const double direct = q(u, v, w);
          double expansion = 0.0;
          for (int bits = 0; bits < 8; ++bits)
            expansion += coef[std::size_t(bits)] * (bits & 4 ? s1 : c1) * (bits & 2 ? s2 : c2) * (bits & 1 ? s3 : c3);
          rep.expansion_err = std::max(rep.expansion_err, std::abs(expansion - direct));
          rep.max_excess = std::max(rep.max_excess, direct - (c1 * c2 * c3 + s1 * s2 * s3 + rep.bound_slack));
        }
  }
  rep.bound_ok = rep.max_excess <= 1e-12;  // direct evaluation carries roundoff
  return rep;
}

// ---- scalar inequalities -------------------------------------------------------------

struct InequalityCheck {
  std::string name;
  double lo = 0.0, hi = 0.0;
  long violations = 0;
  std::optional<double> first_offender;
};

struct ScalarInequalityReport {
  InequalityCheck cubic_sum;       ///< sin³x + cos³x ≤ 1 − 0.15x² on (0, π/4]
  InequalityCheck quartic;         ///< 1 − 1.5x² + x³ + 0.875x⁴ ≤ 1 − 0.15x² on [0, 2(√2290−20)/35]
  InequalityCheck hessian_sign;    ///< 9θ² + 6θ − 1 < 0 on [0, (√2−1)/3), ≥ 0 at the endpoint
  double quartic_root = 0.0;       ///< positive root of 0.875x² + x − 1.35
  long total_violations() const { return cubic_sum.violations + quartic.violations + hessian_sign.violations; }
};

inline ScalarInequalityReport scalar_inequality_checks(long grid) {
  if (grid < 1000) throw std::invalid_argument("scalar_inequality_checks: grid must be >= 1000");
  ScalarInequalityReport rep;
  auto flag = [](InequalityCheck& c, double x) {
    if (c.violations++ == 0) c.first_offender = x;
  };
  constexpr double kRoundoff = 1e-15;

  rep.cubic_sum = {"sin^3+cos^3 <= 1-0.15x^2", 0.0, std::numbers::pi / 4.0, 0, {}};
  for (long k = 1; k <= grid; ++k) {
    const double x = rep.cubic_sum.hi * double(k) / double(grid);
    const double s = std::sin(x), c = std::cos(x);
    if (s * s * s + c * c * c - (1.0 - 0.15 * x * x) > kRoundoff) flag(rep.cubic_sum, x);
  }

  const double sqrt2290 = std::sqrt(2290.0);
  rep.quartic_root = (sqrt2290 - 20.0) / 35.0;
  rep.quartic = {"1-1.5x^2+x^3+0.875x^4 <= 1-0.15x^2", 0.0, 2.0 * (sqrt2290 - 20.0) / 35.0, 0, {}};
  for (long k = 0; k <= grid; ++k) {
    const double x = rep.quartic.hi * double(k) / double(grid);
    const double x2 = x * x;
    const double lhs = 1.0 - 1.5 * x2 + x2 * x + 0.875 * x2 * x2;
    if (lhs - (1.0 - 0.15 * x2) > kRoundoff) flag(rep.quartic, x);
  }

  const double end = (std::sqrt(2.0) - 1.0) / 3.0;
  rep.hessian_sign = {"9t^2+6t-1 < 0 below (sqrt2-1)/3", 0.0, end, 0, {}};
  for (long k = 0; k < grid; ++k) {
    const double th = end * double(k) / double(grid);
    if (!(9.0 * th * th + 6.0 * th - 1.0 < 0.0)) flag(rep.hessian_sign, th);
  }
  if (9.0 * end * end + 6.0 * end - 1.0 < -1e-12) flag(rep.hessian_sign, end);
  return rep;
}

// ---- spectral bounds -----------------------------------------------------------------

struct SpectralBoundReport {
  double tensor_norm = 0.0;        ///< estimate of ‖Σ u_p⊗v_p⊗w_p‖
  double tensor_rhs = 0.0;         ///< 1 + 2τ̂ n^{−r_c}
  std::array<double, 3> norm_23{}; ///< ‖Xᵀ‖_{2→3} for U, V, W
  std::array<double, 3> norm_24{}; ///< ‖Xᵀ‖_{2→4}
  double pnorm_rhs = 0.0;          ///< 1 + (τ̂/3) n^{−r_c}
  double chain_rhs = 0.0;          ///< Π ‖Xᵀ‖_{2→3}
  bool tensor_ok = false, pnorm_ok = false, chain_ok = false;
};

inline SpectralBoundReport spectral_bound_checks(const FactorSet& fs, double r_c, double tau_hat,
                                                 std::uint64_t seed = 0, double chain_slack = 1e-6) {
  SpectralBoundReport rep;
  const double n = double(fs.n());
  Tensor3 t(Dims3::cube(std::size_t(fs.n())));
  for (Eigen::Index p = 0; p < fs.r(); ++p) t.add_outer(1.0, fs.U().col(p), fs.V().col(p), fs.W().col(p));
  SpectralOptions sopt;
  sopt.seed = seed;
  rep.tensor_norm = spectral_norm_estimate(t, sopt).value;
  rep.tensor_rhs = 1.0 + 2.0 * tau_hat * std::pow(n, -r_c);
  rep.pnorm_rhs = 1.0 + tau_hat / 3.0 * std::pow(n, -r_c);
  rep.chain_rhs = 1.0;
  rep.pnorm_ok = true;
  for (int m = 0; m < 3; ++m) {
    rep.norm_23[std::size_t(m)] = operator_2p_norm(fs.mode(m), 3, 50, hash_combine(seed, std::uint64_t(2 * m))).value;
    rep.norm_24[std::size_t(m)] = operator_2p_norm(fs.mode(m), 4, 50, hash_combine(seed, std::uint64_t(2 * m + 1))).value;
    rep.chain_rhs *= rep.norm_23[std::size_t(m)];
    rep.pnorm_ok = rep.pnorm_ok && rep.norm_23[std::size_t(m)] <= rep.pnorm_rhs &&
                   rep.norm_24[std::size_t(m)] <= rep.pnorm_rhs;
  }
  rep.tensor_ok = rep.tensor_norm <= rep.tensor_rhs;
  rep.chain_ok = rep.tensor_norm <= rep.chain_rhs + chain_slack;
  return rep;
}

// ---- serialization -------------------------------------------------------------------

inline nlohmann::json to_json(const RegionParams& rp, double r_c) {
  return {{"r_c", r_c},           {"gamma", rp.gamma},         {"d", rp.d},
          {"delta", rp.delta},    {"rank_cap", rp.rank_cap},   {"far_bound", rp.far_bound},
          {"degenerate", rp.degenerate}, {"covers", rp.covers}};
}

inline nlohmann::json to_json(const CertificateReport& rep) {
  nlohmann::json j;
  j["interp_err"] = rep.interp_err;
  j["stationarity_err"] = rep.stationarity_err;
  j["coeff_dev"] = rep.coeff_dev;
  j["lemma3_rhs"] = rep.lemma3_rhs;
  j["boundedness_max"] = rep.boundedness_max;
  j["boundedness_ok"] = rep.boundedness_ok;
  j["excluded"] = rep.excluded;
  j["implied_constants"] = {{"tau", rep.tau_hat}, {"kappa", rep.kappa_hat}, {"c", rep.c_hat}};
  j["region_params"] = rep.region ? to_json(*rep.region, rep.r_c) : nlohmann::json(nullptr);
  return j;
}

inline nlohmann::json to_json(const Certificate& cert) {
  auto mat = [](const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      std::vector<double> row(std::size_t(m.cols()));
      for (Eigen::Index j = 0; j < m.cols(); ++j) row[std::size_t(j)] = m(i, j);
      rows.push_back(row);
    }
    return rows;
  };
  return {{"method", to_string(cert.method)}, {"status", to_string(cert.status)},
          {"solve_residual", cert.solve_residual}, {"iterations", cert.iterations},
          {"null_dim", cert.null_dim}, {"A", mat(cert.A())}, {"B", mat(cert.B())}, {"C", mat(cert.C())}};
}

inline nlohmann::json to_json(const InequalityCheck& c) {
  return {{"name", c.name}, {"lo", c.lo}, {"hi", c.hi}, {"violations", c.violations},
          {"first_offender", c.first_offender ? nlohmann::json(*c.first_offender) : nlohmann::json(nullptr)}};
}

inline nlohmann::json to_json(const ScalarInequalityReport& r) {
  return {{"cubic_sum", to_json(r.cubic_sum)}, {"quartic", to_json(r.quartic)},
          {"hessian_sign", to_json(r.hessian_sign)}, {"quartic_root", r.quartic_root}};
}

inline nlohmann::json to_json(const SpectralBoundReport& r) {
  return {{"tensor_norm", r.tensor_norm}, {"tensor_rhs", r.tensor_rhs}, {"norm_23", r.norm_23},
          {"norm_24", r.norm_24},         {"pnorm_rhs", r.pnorm_rhs},   {"chain_rhs", r.chain_rhs},
          {"tensor_ok", r.tensor_ok},     {"pnorm_ok", r.pnorm_ok},     {"chain_ok", r.chain_ok}};
}

inline nlohmann::json to_json(const NearRegionReport& r) {
  return {{"expansion_err", r.expansion_err}, {"cross_term_max", r.cross_term_max},
          {"max_excess", r.max_excess},       {"q_at_origin", r.q_at_origin},
          {"bound_slack", r.bound_slack},     {"bound_ok", r.bound_ok}};
}

}  // namespace otd
