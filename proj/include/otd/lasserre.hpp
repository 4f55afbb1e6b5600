#pragma once

// Degree-2d Lasserre moment relaxation for the atomic measure behind a
// third-order tensor. Variables are the moments m_α = ∫ ξ^α dμ with
// ξ = [u; v; w] ∈ R^{3n}, |α| ≤ 2d.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "otd/factor_model.hpp"
#include "otd/tensor.hpp"

namespace otd {

using Exponent = std::vector<int>;

/// All exponent vectors of `vars` variables with total degree ≤ max_degree, in
/// graded-lex order: by degree, then by descending exponent of x1, x2, ...
/// (so degree 2 starts x1², x1x2, x1x3).
inline std::vector<Exponent> graded_lex_monomials(int vars, int max_degree) {
  if (vars < 1 || max_degree < 0) throw std::invalid_argument("graded_lex_monomials: need vars >= 1, degree >= 0");
  std::vector<Exponent> out;
  Exponent cur(std::size_t(vars), 0);
  // fill position `pos` onward with exactly `left` units, largest first
  auto rec = [&](auto&& self, std::size_t pos, int left) -> void {
    if (pos + 1 == cur.size()) {
      cur[pos] = left;
      out.push_back(cur);
      return;
    }
    for (int e = left; e >= 0; --e) {
      cur[pos] = e;
      self(self, pos + 1, left - e);
    }
    cur[pos] = 0;
  };
  for (int deg = 0; deg <= max_degree; ++deg) rec(rec, 0, deg);
  return out;
}

inline std::size_t binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  std::size_t r = 1;
  for (std::size_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

/// Bidirectional exponent ↔ flat index lookup for one (vars, degree) family.
class MonomialBasis {
 public:
  MonomialBasis(int vars, int max_degree) : vars_(vars), degree_(max_degree) {
    monomials_ = graded_lex_monomials(vars, max_degree);
    for (std::size_t i = 0; i < monomials_.size(); ++i) lookup_.emplace(monomials_[i], i);
  }

  int vars() const noexcept { return vars_; }
  int max_degree() const noexcept { return degree_; }
  std::size_t size() const noexcept { return monomials_.size(); }
  const Exponent& exponent(std::size_t i) const { return monomials_.at(i); }

  std::size_t index(const Exponent& e) const {
    auto it = lookup_.find(e);
    if (it == lookup_.end()) throw std::out_of_range("MonomialBasis: exponent outside the basis");
    return it->second;
  }

  static int degree(const Exponent& e) {
    int s = 0;
    for (int x : e) s += x;
    return s;
  }

 private:
  int vars_, degree_;
  std::vector<Exponent> monomials_;
  std::map<Exponent, std::size_t> lookup_;
};

struct MomentVector {
  int n = 0;
  int d = 2;
  Vector values;
};

/// m_α = Σ_p λ_p ξ_p^α with ξ_p = [u_p; v_p; w_p].
inline MomentVector true_moment_vector(const FactorSet& fs, int d = 2) {
  if (d < 1) throw std::invalid_argument("true_moment_vector: d must be >= 1");
  const int n = int(fs.n());
  const MonomialBasis basis(3 * n, 2 * d);
  MomentVector m{n, d, Vector::Zero(Eigen::Index(basis.size()))};
  for (Eigen::Index p = 0; p < fs.r(); ++p) {
    Vector xi(3 * n);
    xi << fs.U().col(p), fs.V().col(p), fs.W().col(p);
    for (std::size_t a = 0; a < basis.size(); ++a) {
      double term = fs.lambda()[p];
      const Exponent& e = basis.exponent(a);
      for (std::size_t k = 0; k < e.size(); ++k)
        for (int t = 0; t < e[k]; ++t) term *= xi[Eigen::Index(k)];
      m.values[Eigen::Index(a)] += term;
    }
  }
  return m;
}

/// Average of the moment vector over the even sign flips (s₁u, s₂v, s₃w),
/// s₁s₂s₃ = 1, which all yield the same tensor. Only monomials whose u-, v- and
/// w-degrees share one parity survive.
inline MomentVector sign_symmetrized(const MomentVector& m) {
  const MonomialBasis basis(3 * m.n, 2 * m.d);
  if (std::size_t(m.values.size()) != basis.size()) throw DimensionError("sign_symmetrized: wrong moment count");
  MomentVector out = m;
  for (std::size_t a = 0; a < basis.size(); ++a) {
    const Exponent& e = basis.exponent(a);
    std::array<int, 3> deg{};
    for (std::size_t k = 0; k < e.size(); ++k) deg[k / std::size_t(m.n)] += e[k];
    if (deg[0] % 2 != deg[1] % 2 || deg[1] % 2 != deg[2] % 2) out.values[Eigen::Index(a)] = 0.0;
  }
  return out;
}

inline MomentVector symmetric_moment_vector(const FactorSet& fs, int d = 2) {
  return sign_symmetrized(true_moment_vector(fs, d));
}

struct SparseRow {
  std::vector<std::pair<std::size_t, double>> terms;
  double rhs = 0.0;
};

struct MomentSDP {
  int n = 0;
  int d = 2;
  std::size_t num_moments = 0;
  std::size_t matrix_dim = 0;
  /// matrix_index[i * matrix_dim + j] = flat moment index of row monomial i + column monomial j.
  std::vector<std::size_t> matrix_index;
  std::vector<SparseRow> equalities;
  std::size_t tensor_constraints = 0;
  std::size_t sphere_constraints = 0;
  std::size_t objective_index = 0;  ///< minimize m at this index (the constant monomial)

  std::size_t constraint_count() const noexcept { return equalities.size(); }
};

inline Exponent unit_exponent(int vars, int k) {
  Exponent e(std::size_t(vars), 0);
  e[std::size_t(k)] = 1;
  return e;
}

inline MomentSDP build_moment_sdp(const Tensor3& t, int n, int d = 2) {
  if (t.dims() != Dims3::cube(std::size_t(n))) throw DimensionError("build_moment_sdp: tensor must be n x n x n");
  if (d < 2) throw std::invalid_argument("build_moment_sdp: third moments need d >= 2");
  const int vars = 3 * n;
  const MonomialBasis basis(vars, 2 * d);
  MomentSDP sdp;
  sdp.n = n;
  sdp.d = d;
  sdp.num_moments = basis.size();
  sdp.matrix_dim = binomial(std::size_t(vars + d), std::size_t(d));
  sdp.matrix_index.resize(sdp.matrix_dim * sdp.matrix_dim);
  for (std::size_t i = 0; i < sdp.matrix_dim; ++i)
    for (std::size_t j = 0; j < sdp.matrix_dim; ++j) {
      Exponent e = basis.exponent(i);
      const Exponent& f = basis.exponent(j);
      for (std::size_t k = 0; k < e.size(); ++k) e[k] += f[k];
      sdp.matrix_index[i * sdp.matrix_dim + j] = basis.index(e);
    }

  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        Exponent e(std::size_t(vars), 0);
        e[std::size_t(i)] += 1;
        e[std::size_t(n + j)] += 1;
        e[std::size_t(2 * n + k)] += 1;
        sdp.equalities.push_back({{{basis.index(e), 1.0}}, t(std::size_t(i), std::size_t(j), std::size_t(k))});
      }
  sdp.tensor_constraints = sdp.equalities.size();

  for (std::size_t b = 0; b < basis.size(); ++b) {
    const Exponent& beta = basis.exponent(b);
    if (MonomialBasis::degree(beta) > 2 * d - 2) break;  // graded order
    for (int block = 0; block < 3; ++block) {
      SparseRow row;
      for (int i = 0; i < n; ++i) {
        Exponent e = beta;
        e[std::size_t(block * n + i)] += 2;
        row.terms.emplace_back(basis.index(e), 1.0);
      }
      row.terms.emplace_back(b, -1.0);
      sdp.equalities.push_back(std::move(row));
    }
  }
  sdp.sphere_constraints = sdp.equalities.size() - sdp.tensor_constraints;
  sdp.objective_index = 0;
  return sdp;
}

inline Matrix moment_matrix(const MomentSDP& sdp, const Vector& m) {
  if (std::size_t(m.size()) != sdp.num_moments) throw DimensionError("moment_matrix: wrong moment count");
  const auto dim = Eigen::Index(sdp.matrix_dim);
  Matrix out(dim, dim);
  for (Eigen::Index i = 0; i < dim; ++i)
    for (Eigen::Index j = 0; j < dim; ++j)
      out(i, j) = m[Eigen::Index(sdp.matrix_index[std::size_t(i * dim + j)])];
  return out;
}

/// max |row·m − rhs| over the equality constraints.
inline double equality_residual(const MomentSDP& sdp, const Vector& m) {
  double worst = 0.0;
  for (const auto& row : sdp.equalities) {
    double s = -row.rhs;
    for (const auto& [idx, coef] : row.terms) s += coef * m[Eigen::Index(idx)];
    worst = std::max(worst, std::abs(s));
  }
  return worst;
}

struct SdpConfig {
  double rho = 1.0;
  int max_iter = 20000;
  double primal_tol = 1e-7;
  double dual_tol = 1e-7;
  /// Iterations between stagnation checks.
  int stall_window = 2000;
};

enum class SdpStatus { solved, max_iter, infeasible_suspected };

inline const char* to_string(SdpStatus s) {
  switch (s) {
    case SdpStatus::solved: return "solved";
    case SdpStatus::max_iter: return "max_iter";
    case SdpStatus::infeasible_suspected: return "infeasible_suspected";
  }
  return "?";
}

struct SdpResult {
  MomentVector m;
  SdpStatus status = SdpStatus::max_iter;
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double objective = 0.0;
};

inline Matrix project_psd(const Matrix& x) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(x);
  if (es.info() != Eigen::Success) throw std::runtime_error("project_psd: eigendecomposition failed");
  const Vector clipped = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().transpose();
}

/// ADMM on  min m_0  s.t.  M(m) = S,  S ⪰ 0,  E m = b.
/// The m-step minimizes the augmented Lagrangian over the affine set {E m = b};
/// since MᵀM is diagonal (each moment appears `count` times) this is a
/// weighted projection whose small Schur complement is pseudo-inverted once.
inline SdpResult sdp_solve(const MomentSDP& sdp, const SdpConfig& cfg = {}) {
  if (!(cfg.rho > 0) || cfg.max_iter < 1 || !(cfg.primal_tol > 0) || !(cfg.dual_tol > 0))
    throw std::invalid_argument("sdp_solve: bad configuration");
  const auto nm = Eigen::Index(sdp.num_moments);
  const auto dim = Eigen::Index(sdp.matrix_dim);
  const auto ne = Eigen::Index(sdp.equalities.size());

  Vector count = Vector::Zero(nm);
  for (std::size_t idx : sdp.matrix_index) count[Eigen::Index(idx)] += 1.0;
  for (Eigen::Index a = 0; a < nm; ++a)
    if (count[a] == 0.0) throw std::invalid_argument("sdp_solve: moment absent from the moment matrix");
  const Vector inv_count = count.cwiseInverse();

  Matrix e = Matrix::Zero(ne, nm);
  Vector b(ne);
  for (Eigen::Index r = 0; r < ne; ++r) {
    for (const auto& [idx, coef] : sdp.equalities[std::size_t(r)].terms) e(r, Eigen::Index(idx)) += coef;
    b[r] = sdp.equalities[std::size_t(r)].rhs;
  }
  // pseudo-inverse of E D⁻¹ Eᵀ; sphere constraints are linearly dependent
  const Matrix schur = e * inv_count.asDiagonal() * e.transpose();
  Eigen::SelfAdjointEigenSolver<Matrix> es(schur);
  if (es.info() != Eigen::Success) throw std::runtime_error("sdp_solve: eigendecomposition failed");
  const double cutoff = 1e-10 * std::max(es.eigenvalues().cwiseAbs().maxCoeff(), 1e-300);
  Vector inv_eval(es.eigenvalues().size());
  for (Eigen::Index k = 0; k < inv_eval.size(); ++k)
    inv_eval[k] = es.eigenvalues()[k] > cutoff ? 1.0 / es.eigenvalues()[k] : 0.0;
  const Matrix schur_pinv = es.eigenvectors() * inv_eval.asDiagonal() * es.eigenvectors().transpose();

  auto adjoint = [&](const Matrix& x) {  // Mᵀ(X)
    Vector out = Vector::Zero(nm);
    for (Eigen::Index i = 0; i < dim; ++i)
      for (Eigen::Index j = 0; j < dim; ++j) out[Eigen::Index(sdp.matrix_index[std::size_t(i * dim + j)])] += x(i, j);
    return out;
  };

  const double rho = cfg.rho;
  Vector m = Vector::Zero(nm);
  Matrix s = Matrix::Zero(dim, dim);
  Matrix y = Matrix::Zero(dim, dim);
  SdpResult res;
  res.status = SdpStatus::max_iter;
  double window_start = std::numeric_limits<double>::infinity();

  for (int it = 1; it <= cfg.max_iter; ++it) {
    Vector g = adjoint(s - y / rho);
    g[Eigen::Index(sdp.objective_index)] -= 1.0 / rho;
    // m = D⁻¹(g − Eᵀν) with ν chosen so that E m = b
    const Vector dg = inv_count.cwiseProduct(g);
    const Vector nu = schur_pinv * (e * dg - b);
    m = dg - inv_count.cwiseProduct(e.transpose() * nu);

    const Matrix mm = moment_matrix(sdp, m);
    const Matrix s_prev = s;
    s = project_psd(mm + y / rho);
    y += rho * (mm - s);

    const double scale = std::max({1.0, mm.norm(), s.norm()});
    res.primal_residual = (mm - s).norm() / scale;
    res.dual_residual = rho * adjoint(s - s_prev).norm() / std::max(1.0, y.norm());
    res.iterations = it;
    if (!m.allFinite()) throw std::runtime_error("sdp_solve: iterates became non-finite");
    if (res.primal_residual < cfg.primal_tol && res.dual_residual < cfg.dual_tol) {
      res.status = SdpStatus::solved;
      break;
    }
    if (cfg.stall_window > 0 && it % cfg.stall_window == 0) {
      if (res.primal_residual > 1e2 * cfg.primal_tol && res.primal_residual > 0.99 * window_start) {
        res.status = SdpStatus::infeasible_suspected;
        break;
      }
      window_start = res.primal_residual;
    }
  }
  res.m = MomentVector{sdp.n, sdp.d, m};
  res.objective = m[Eigen::Index(sdp.objective_index)];
  return res;
}

inline double moment_distance(const MomentVector& a, const MomentVector& b) {
  if (a.n != b.n || a.d != b.d || a.values.size() != b.values.size())
    throw DimensionError("moment_distance: moment vectors index different monomials");
  return (a.values - b.values).norm();
}

inline nlohmann::json to_json(const MomentVector& m) {
  nlohmann::json j;
  j["n"] = m.n;
  j["d"] = m.d;
  j["values"] = std::vector<double>(m.values.data(), m.values.data() + m.values.size());
  return j;
}

inline MomentVector moment_vector_from_json(const nlohmann::json& j) {
  MomentVector m;
  m.n = j.at("n").get<int>();
  m.d = j.at("d").get<int>();
  const auto vals = j.at("values").get<std::vector<double>>();
  if (vals.size() != binomial(std::size_t(3 * m.n + 2 * m.d), std::size_t(2 * m.d)))
    throw DimensionError("moment vector length does not match its (n, d) header");
  m.values = Eigen::Map<const Vector>(vals.data(), Eigen::Index(vals.size()));
  return m;
}

}  // namespace otd
