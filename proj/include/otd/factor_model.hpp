#pragma once

// Rank-one factor sets: synthesis, random instances, the incoherence /
// spectral / Gram-isometry measurements, and alignment of an estimate with
// planted factors modulo permutation and even sign flips.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "otd/random.hpp"
#include "otd/tensor.hpp"

namespace otd {

/// Unit-norm columns U, V, W (n x r) with positive weights λ.
class FactorSet {
 public:
  static constexpr double kUnitTolerance = 1e-9;

  FactorSet() = default;
  FactorSet(Matrix u, Matrix v, Matrix w, Vector lambda)
      : modes_{std::move(u), std::move(v), std::move(w)}, lambda_(std::move(lambda)) {
    validate();
  }

  Eigen::Index n() const noexcept { return modes_[0].rows(); }
  Eigen::Index r() const noexcept { return modes_[0].cols(); }

  const Matrix& U() const noexcept { return modes_[0]; }
  const Matrix& V() const noexcept { return modes_[1]; }
  const Matrix& W() const noexcept { return modes_[2]; }
  const Matrix& mode(int m) const { return modes_.at(std::size_t(m)); }
  const Vector& lambda() const noexcept { return lambda_; }

  friend bool operator==(const FactorSet& a, const FactorSet& b) {
    return a.lambda_ == b.lambda_ && a.modes_[0] == b.modes_[0] && a.modes_[1] == b.modes_[1] &&
           a.modes_[2] == b.modes_[2];
  }

 private:
  void validate() const {
    const Eigen::Index n = modes_[0].rows(), r = modes_[0].cols();
    if (n < 1 || r < 1) throw std::invalid_argument("FactorSet: need n >= 1 and r >= 1");
    for (const Matrix& m : modes_)
      if (m.rows() != n || m.cols() != r)
        throw DimensionError("FactorSet: U, V, W must all be n x r");
    if (lambda_.size() != r) throw DimensionError("FactorSet: lambda must have length r");
    for (int m = 0; m < 3; ++m) {
      if (!modes_[std::size_t(m)].allFinite())
        throw std::invalid_argument("FactorSet: non-finite factor entry");
      for (Eigen::Index p = 0; p < r; ++p) {
        const double nrm = modes_[std::size_t(m)].col(p).norm();
        if (std::abs(nrm - 1.0) > kUnitTolerance)
          throw std::invalid_argument("FactorSet: column " + std::to_string(p) + " of mode " +
                                      std::to_string(m) + " has norm " + std::to_string(nrm));
      }
    }
    for (Eigen::Index p = 0; p < r; ++p)
      if (!(lambda_[p] > 0.0) || !std::isfinite(lambda_[p]))
        throw std::invalid_argument("FactorSet: lambda must be positive and finite");
  }

  std::array<Matrix, 3> modes_;
  Vector lambda_;
};

enum class CoeffScheme {
  paper_half_plus_chi2,  ///< λ = (1 + ε²)/2, ε ~ N(0,1)
  unit,
};

/// Columns are normalized Gaussians drawn atom by atom (u_p, v_p, w_p), then
/// the r coefficients.
inline FactorSet random_factor_set(Eigen::Index n, Eigen::Index r, std::uint64_t seed,
                                   CoeffScheme scheme = CoeffScheme::paper_half_plus_chi2) {
  if (n < 1 || r < 1) throw std::invalid_argument("random_factor_set: need n, r >= 1");
  Rng rng(seed);
  Matrix u(n, r), v(n, r), w(n, r);
  for (Eigen::Index p = 0; p < r; ++p) {
    u.col(p) = rng.unit_vector(n);
    v.col(p) = rng.unit_vector(n);
    w.col(p) = rng.unit_vector(n);
  }
  Vector lambda = Vector::Ones(r);
  if (scheme == CoeffScheme::paper_half_plus_chi2) {
    for (Eigen::Index p = 0; p < r; ++p) {
      const double eps = rng.normal();
      lambda[p] = 0.5 * (1.0 + eps * eps);
    }
  }
  return FactorSet(std::move(u), std::move(v), std::move(w), std::move(lambda));
}

/// T = Σ_p λ_p u_p ⊗ v_p ⊗ w_p
inline Tensor3 synthesize(const FactorSet& fs) {
  const auto n = std::size_t(fs.n());
  Tensor3 t(Dims3::cube(n));
  for (Eigen::Index p = 0; p < fs.r(); ++p)
    t.add_outer(fs.lambda()[p], fs.U().col(p), fs.V().col(p), fs.W().col(p));
  return t;
}

/// Spectral norm of a symmetric matrix.
inline double symmetric_norm(const Matrix& s) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(s, Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

inline double spectral_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  // Gram of the smaller side keeps the eigenproblem small.
  const Matrix g = m.rows() <= m.cols() ? Matrix(m * m.transpose()) : Matrix(m.transpose() * m);
  Eigen::SelfAdjointEigenSolver<Matrix> es(g, Eigen::EigenvaluesOnly);
  return std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
}

/// Optional user constants for τ, κ and c; without them the report only
/// carries the implied constants.
struct AssumptionThresholds {
  double tau = 0.0;
  double kappa = 0.0;
  double c = 0.0;
};

struct AssumptionReport {
  double delta = 0.0;
  std::array<double, 3> spec_norms{};
  double gram_dev = 0.0;
  double implied_tau = 0.0;
  double implied_kappa = 0.0;
  double implied_c = 0.0;
  /// n^{17/16} / (12 c² √τ); +inf when c²√τ = 0 (the bound is vacuous).
  double rank_bound = 0.0;
  std::optional<bool> incoherence_ok, spectral_ok, gram_ok;
};

/// max_{p≠q} |⟨x_p, x_q⟩| over the three modes.
inline double incoherence(const FactorSet& fs) {
  double delta = 0.0;
  for (int m = 0; m < 3; ++m) {
    const Matrix& x = fs.mode(m);
    for (Eigen::Index p = 0; p < x.cols(); ++p)
      for (Eigen::Index q = p + 1; q < x.cols(); ++q) delta = std::max(delta, std::abs(x.col(p).dot(x.col(q))));
  }
  return delta;
}

/// max over mode pairs of ‖(XᵀX)⊙(YᵀY) − I‖.
inline double gram_deviation(const FactorSet& fs) {
  const std::array<Matrix, 3> grams{Matrix(fs.U().transpose() * fs.U()),
                                    Matrix(fs.V().transpose() * fs.V()),
                                    Matrix(fs.W().transpose() * fs.W())};
  const Matrix id = Matrix::Identity(fs.r(), fs.r());
  double dev = 0.0;
  for (auto [a, b] : {std::pair{0, 1}, std::pair{0, 2}, std::pair{1, 2}})
    dev = std::max(dev, symmetric_norm(Matrix(grams[std::size_t(a)].cwiseProduct(grams[std::size_t(b)]) - id)));
  return dev;
}

inline double theorem_rank_bound(double n, double c, double tau) {
  const double denom = 12.0 * c * c * std::sqrt(tau);
  if (!(denom > 0.0)) return std::numeric_limits<double>::infinity();
  return std::pow(n, 17.0 / 16.0) / denom;
}

inline AssumptionReport assumption_report(const FactorSet& fs,
                                          const std::optional<AssumptionThresholds>& thr = {}) {
  AssumptionReport rep;
  const double n = double(fs.n()), r = double(fs.r());
  rep.delta = fs.r() >= 2 ? incoherence(fs) : 0.0;
  for (int m = 0; m < 3; ++m) rep.spec_norms[std::size_t(m)] = spectral_norm(fs.mode(m));
  rep.gram_dev = gram_deviation(fs);
  const double max_spec = *std::max_element(rep.spec_norms.begin(), rep.spec_norms.end());
  rep.implied_tau = rep.delta * std::sqrt(n);
  rep.implied_kappa = rep.gram_dev * n / std::sqrt(r);
  rep.implied_c = std::max(0.0, max_spec - 1.0) * std::sqrt(n / r);
  if (thr) {
    rep.incoherence_ok = rep.delta <= thr->tau / std::sqrt(n);
    rep.spectral_ok = max_spec <= 1.0 + thr->c * std::sqrt(r / n);
    rep.gram_ok = rep.gram_dev <= thr->kappa * std::sqrt(r) / n;
    rep.rank_bound = theorem_rank_bound(n, thr->c, thr->tau);
  } else {
    rep.rank_bound = theorem_rank_bound(n, rep.implied_c, rep.implied_tau);
  }
  return rep;
}

inline nlohmann::json to_json(const AssumptionReport& rep) {
  auto opt = [](const std::optional<bool>& b) { return b ? nlohmann::json(*b) : nlohmann::json(nullptr); };
  nlohmann::json j;
  j["delta"] = rep.delta;
  j["spec_norms"] = rep.spec_norms;
  j["gram_dev"] = rep.gram_dev;
  j["implied_tau"] = rep.implied_tau;
  j["implied_kappa"] = rep.implied_kappa;
  j["implied_c"] = rep.implied_c;
  j["rank_bound"] = std::isfinite(rep.rank_bound) ? nlohmann::json(rep.rank_bound) : nlohmann::json(nullptr);
  j["incoherence_ok"] = opt(rep.incoherence_ok);
  j["spectral_ok"] = opt(rep.spectral_ok);
  j["gram_ok"] = opt(rep.gram_ok);
  return j;
}

// ---- alignment -----------------------------------------------------------------

struct SignTriple {
  int s1 = 1, s2 = 1, s3 = 1;
  friend bool operator==(const SignTriple&, const SignTriple&) = default;
};

/// The four sign patterns that leave u⊗v⊗w unchanged.
inline constexpr std::array<SignTriple, 4> kEvenSignFlips{
    SignTriple{1, 1, 1}, SignTriple{1, -1, -1}, SignTriple{-1, 1, -1}, SignTriple{-1, -1, 1}};

struct Alignment {
  /// perm[q] = index of the estimated atom matched to true atom q.
  std::vector<Eigen::Index> perm;
  std::vector<SignTriple> signs;  ///< per true atom
  double max_err = 0.0;
  double coeff_err = 0.0;
};

class AlignmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kSurplusAtomTolerance = 1e-6;

/// Greedy matching by |⟨u,u'⟩⟨v,v'⟩⟨w,w'⟩|, then the best even sign flip per pair.
inline Alignment align_and_error(const FactorSet& est, const FactorSet& truth) {
  if (est.n() != truth.n()) throw DimensionError("align_and_error: n mismatch");
  std::vector<Eigen::Index> kept;
  for (Eigen::Index p = 0; p < est.r(); ++p)
    if (est.lambda()[p] >= kSurplusAtomTolerance) kept.push_back(p);
  const auto rt = truth.r();
  if (Eigen::Index(kept.size()) < rt)
    throw AlignmentError("align_and_error: estimate has " + std::to_string(kept.size()) +
                         " atoms above tolerance, truth has " + std::to_string(rt));

  const Matrix su = est.U().transpose() * truth.U();
  const Matrix sv = est.V().transpose() * truth.V();
  const Matrix sw = est.W().transpose() * truth.W();

  struct Cand {
    double score;
    Eigen::Index e, t;
  };
  std::vector<Cand> cands;
  cands.reserve(kept.size() * std::size_t(rt));
  for (Eigen::Index e : kept)
    for (Eigen::Index t = 0; t < rt; ++t)
      cands.push_back({std::abs(su(e, t) * sv(e, t) * sw(e, t)), e, t});
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.t != b.t) return a.t < b.t;
    return a.e < b.e;
  });

  Alignment out;
  out.perm.assign(std::size_t(rt), -1);
  out.signs.assign(std::size_t(rt), SignTriple{});
  std::vector<bool> used(std::size_t(est.r()), false);
  Eigen::Index matched = 0;
  for (const Cand& c : cands) {
    if (matched == rt) break;
    if (used[std::size_t(c.e)] || out.perm[std::size_t(c.t)] >= 0) continue;
    used[std::size_t(c.e)] = true;
    out.perm[std::size_t(c.t)] = c.e;
    ++matched;
  }

  for (Eigen::Index t = 0; t < rt; ++t) {
    const Eigen::Index e = out.perm[std::size_t(t)];
    double best = std::numeric_limits<double>::infinity();
    for (const SignTriple& s : kEvenSignFlips) {
      const double err = std::max({(s.s1 * est.U().col(e) - truth.U().col(t)).norm(),
                                   (s.s2 * est.V().col(e) - truth.V().col(t)).norm(),
                                   (s.s3 * est.W().col(e) - truth.W().col(t)).norm()});
      if (err < best) {
        best = err;
        out.signs[std::size_t(t)] = s;
      }
    }
    out.max_err = std::max(out.max_err, best);
    out.coeff_err = std::max(out.coeff_err, std::abs(est.lambda()[e] - truth.lambda()[t]));
  }
  return out;
}

// ---- fset-json -------------------------------------------------------------------

inline std::string to_fset_json(const FactorSet& fs) {
  std::ostringstream os;
  os << "{\"n\":" << fs.n() << ",\"r\":" << fs.r() << ",\"lambda\":[";
  for (Eigen::Index p = 0; p < fs.r(); ++p) os << (p ? "," : "") << format_double(fs.lambda()[p]);
  os << "]";
  const char* names[3] = {"U", "V", "W"};
  for (int m = 0; m < 3; ++m) {
    os << ",\"" << names[m] << "\":[";
    const Matrix& x = fs.mode(m);
    // column-major, matching Eigen storage
    for (Eigen::Index t = 0; t < x.size(); ++t) os << (t ? "," : "") << format_double(x.data()[t]);
    os << "]";
  }
  os << "}\n";
  return os.str();
}

inline FactorSet from_fset_json(const nlohmann::json& j) {
  const auto n = j.at("n").get<Eigen::Index>();
  const auto r = j.at("r").get<Eigen::Index>();
  if (n < 1 || r < 1) throw std::invalid_argument("fset-json: n and r must be positive");
  auto mat = [&](const char* key) {
    const auto v = j.at(key).get<std::vector<double>>();
    if (Eigen::Index(v.size()) != n * r)
      throw std::invalid_argument(std::string("fset-json: \"") + key + "\" must hold n*r values");
    return Matrix(Eigen::Map<const Matrix>(v.data(), n, r));
  };
  const auto lam = j.at("lambda").get<std::vector<double>>();
  if (Eigen::Index(lam.size()) != r)
    throw std::invalid_argument("fset-json: \"lambda\" must hold r values");
  return FactorSet(mat("U"), mat("V"), mat("W"), Eigen::Map<const Vector>(lam.data(), r));
}

inline FactorSet read_fset_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open factor file '" + path + "'");
  try {
    return from_fset_json(nlohmann::json::parse(in));
  } catch (const std::exception& e) {
    throw std::runtime_error("'" + path + "': " + e.what());
  }
}

inline void write_fset_json(const FactorSet& fs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write factor file '" + path + "'");
  out << to_fset_json(fs);
}

}  // namespace otd
