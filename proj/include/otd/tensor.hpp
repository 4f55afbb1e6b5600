#pragma once

// Dense third-order tensors, multilinear contractions and the norm
// estimators (tensor spectral norm, 2->p operator norms) used throughout.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "otd/random.hpp"

namespace otd {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Dims3 {
  std::size_t n1 = 0, n2 = 0, n3 = 0;

  constexpr std::size_t size() const noexcept { return n1 * n2 * n3; }
  constexpr std::size_t operator[](int mode) const noexcept {
    return mode == 0 ? n1 : (mode == 1 ? n2 : n3);
  }
  friend constexpr bool operator==(const Dims3&, const Dims3&) = default;

  static constexpr Dims3 cube(std::size_t n) noexcept { return {n, n, n}; }
};

inline std::string to_string(const Dims3& d) {
  return std::to_string(d.n1) + "x" + std::to_string(d.n2) + "x" + std::to_string(d.n3);
}

/// Dense real n1 x n2 x n3 array, row-major: (i,j,k) -> (i*n2 + j)*n3 + k.
class Tensor3 {
 public:
  Tensor3() = default;

  explicit Tensor3(Dims3 dims) : dims_(dims), data_(dims.size(), 0.0) {
    if (dims.n1 == 0 || dims.n2 == 0 || dims.n3 == 0)
      throw DimensionError("Tensor3: dimensions must be positive");
  }

  Tensor3(Dims3 dims, std::vector<double> data) : dims_(dims), data_(std::move(data)) {
    if (dims.n1 == 0 || dims.n2 == 0 || dims.n3 == 0)
      throw DimensionError("Tensor3: dimensions must be positive");
    if (data_.size() != dims.size())
      throw DimensionError("Tensor3: data length " + std::to_string(data_.size()) +
                           " does not match dims " + to_string(dims));
    for (double x : data_)
      if (!std::isfinite(x)) throw std::invalid_argument("Tensor3: non-finite entry");
  }

  static Tensor3 cube(std::size_t n) { return Tensor3(Dims3::cube(n)); }

  const Dims3& dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t offset(std::size_t i, std::size_t j, std::size_t k) const noexcept {
    return (i * dims_.n2 + j) * dims_.n3 + k;
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const noexcept {
    return data_[offset(i, j, k)];
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) noexcept {
    return data_[offset(i, j, k)];
  }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
  }

  Tensor3& operator+=(const Tensor3& o) {
    require_same(o, "operator+=");
    for (std::size_t t = 0; t < data_.size(); ++t) data_[t] += o.data_[t];
    return *this;
  }
  Tensor3& operator-=(const Tensor3& o) {
    require_same(o, "operator-=");
    for (std::size_t t = 0; t < data_.size(); ++t) data_[t] -= o.data_[t];
    return *this;
  }
  Tensor3& operator*=(double s) noexcept {
    for (double& x : data_) x *= s;
    return *this;
  }
  friend Tensor3 operator+(Tensor3 a, const Tensor3& b) { return a += b; }
  friend Tensor3 operator-(Tensor3 a, const Tensor3& b) { return a -= b; }
  friend Tensor3 operator*(double s, Tensor3 a) { return a *= s; }

  double frobenius_norm() const noexcept {
    double s = 0.0;
    for (double x : data_) s += x * x;
    return std::sqrt(s);
  }
  double max_abs() const noexcept {
    double m = 0.0;
    for (double x : data_) m = std::max(m, std::abs(x));
    return m;
  }

  /// this += scale * (u ⊗ v ⊗ w)
  void add_outer(double scale, const Vector& u, const Vector& v, const Vector& w) {
    check_factor_dims(u, v, w);
    for (std::size_t i = 0; i < dims_.n1; ++i) {
      const double su = scale * u[Eigen::Index(i)];
      if (su == 0.0) continue;
      for (std::size_t j = 0; j < dims_.n2; ++j) {
        const double suv = su * v[Eigen::Index(j)];
        double* row = &data_[offset(i, j, 0)];
        for (std::size_t k = 0; k < dims_.n3; ++k) row[k] += suv * w[Eigen::Index(k)];
      }
    }
  }

  void check_factor_dims(const Vector& u, const Vector& v, const Vector& w) const {
    if (std::size_t(u.size()) != dims_.n1 || std::size_t(v.size()) != dims_.n2 ||
        std::size_t(w.size()) != dims_.n3)
      throw DimensionError("factor lengths (" + std::to_string(u.size()) + "," +
                           std::to_string(v.size()) + "," + std::to_string(w.size()) +
                           ") do not match tensor dims " + to_string(dims_));
  }

 private:
  void require_same(const Tensor3& o, const char* what) const {
    if (!(dims_ == o.dims_))
      throw DimensionError(std::string("Tensor3::") + what + ": dims " + to_string(dims_) +
                           " vs " + to_string(o.dims_));
  }

  Dims3 dims_{};
  std::vector<double> data_;
};

/// A point of S^{n-1}; construction rejects vectors whose norm is off by more than 1e-9.
class UnitVector {
 public:
  static constexpr double kTolerance = 1e-9;

  explicit UnitVector(Vector entries) : entries_(std::move(entries)) {
    if (entries_.size() == 0) throw DimensionError("UnitVector: empty");
    if (!entries_.allFinite() || std::abs(entries_.norm() - 1.0) > kTolerance)
      throw std::invalid_argument("UnitVector: norm " + std::to_string(entries_.norm()) +
                                  " is not 1");
  }
  static UnitVector normalized(const Vector& v) {
    const double nrm = v.norm();
    if (!(nrm > 0.0)) throw std::invalid_argument("UnitVector: cannot normalize zero vector");
    return UnitVector(v / nrm);
  }

  const Vector& vec() const noexcept { return entries_; }
  Eigen::Index size() const noexcept { return entries_.size(); }
  operator const Vector&() const noexcept { return entries_; }

 private:
  Vector entries_;
};

inline Tensor3 outer3(const Vector& u, const Vector& v, const Vector& w) {
  Tensor3 t(Dims3{std::size_t(u.size()), std::size_t(v.size()), std::size_t(w.size())});
  t.add_outer(1.0, u, v, w);
  return t;
}

/// outer3 checked against the dims of the tensor it is meant to live with.
inline Tensor3 outer3(const Vector& u, const Vector& v, const Vector& w, const Dims3& target) {
  Tensor3 t(target);
  t.add_outer(1.0, u, v, w);
  return t;
}

inline double inner(const Tensor3& q, const Tensor3& t) {
  if (!(q.dims() == t.dims()))
    throw DimensionError("inner: dims " + to_string(q.dims()) + " vs " + to_string(t.dims()));
  const auto a = q.data();
  const auto b = t.data();
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// The two modes that are contracted away; the remaining mode indexes the output.
enum class ModePair { k23, k13, k12 };

/// Contract Q against a and b on the given mode pair. For k23 this is
/// out[i] = Σ_{j,k} Q[i,j,k] a[j] b[k]; a always belongs to the lower mode.
inline Vector contract(const Tensor3& q, ModePair modes, const Vector& a, const Vector& b) {
  const Dims3& d = q.dims();
  auto need = [&](const Vector& x, std::size_t n, const char* which) {
    if (std::size_t(x.size()) != n)
      throw DimensionError(std::string("contract: vector ") + which + " has length " +
                           std::to_string(x.size()) + ", expected " + std::to_string(n));
  };
  switch (modes) {
    case ModePair::k23: {
      need(a, d.n2, "a");
      need(b, d.n3, "b");
      Vector out = Vector::Zero(Eigen::Index(d.n1));
      for (std::size_t i = 0; i < d.n1; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d.n2; ++j) {
          const double* row = &q.data()[q.offset(i, j, 0)];
          double t = 0.0;
          for (std::size_t k = 0; k < d.n3; ++k) t += row[k] * b[Eigen::Index(k)];
          s += a[Eigen::Index(j)] * t;
        }
        out[Eigen::Index(i)] = s;
      }
      return out;
    }
    case ModePair::k13: {
      need(a, d.n1, "a");
      need(b, d.n3, "b");
      Vector out = Vector::Zero(Eigen::Index(d.n2));
      for (std::size_t i = 0; i < d.n1; ++i) {
        const double ai = a[Eigen::Index(i)];
        for (std::size_t j = 0; j < d.n2; ++j) {
          const double* row = &q.data()[q.offset(i, j, 0)];
          double t = 0.0;
          for (std::size_t k = 0; k < d.n3; ++k) t += row[k] * b[Eigen::Index(k)];
          out[Eigen::Index(j)] += ai * t;
        }
      }
      return out;
    }
    case ModePair::k12: {
      need(a, d.n1, "a");
      need(b, d.n2, "b");
      Vector out = Vector::Zero(Eigen::Index(d.n3));
      for (std::size_t i = 0; i < d.n1; ++i) {
        for (std::size_t j = 0; j < d.n2; ++j) {
          const double c = a[Eigen::Index(i)] * b[Eigen::Index(j)];
          if (c == 0.0) continue;
          const double* row = &q.data()[q.offset(i, j, 0)];
          for (std::size_t k = 0; k < d.n3; ++k) out[Eigen::Index(k)] += c * row[k];
        }
      }
      return out;
    }
  }
  throw std::logic_error("contract: bad mode pair");
}

/// ⟨Q, u⊗v⊗w⟩ without materializing the rank-one tensor.
inline double multilinear(const Tensor3& q, const Vector& u, const Vector& v, const Vector& w) {
  return u.dot(contract(q, ModePair::k23, v, w));
}

struct SpectralOptions {
  int restarts = 20;
  int max_iter = 1000;
  double tol = 1e-10;
  std::uint64_t seed = 0;
};

struct SpectralEstimate {
  double value = 0.0;
  Vector u, v, w;
  bool degenerate = false;
};

/// Alternating maximization of ⟨Q, u⊗v⊗w⟩ over unit triples, best of several
/// random starts. The value is attained by the returned triple, so it is a
/// lower bound on ‖Q‖ and usually equal to it.
inline SpectralEstimate spectral_norm_estimate(const Tensor3& q, const SpectralOptions& opt = {}) {
  if (opt.restarts < 1) throw std::invalid_argument("spectral_norm_estimate: restarts must be >= 1");
  const Dims3& d = q.dims();
  SpectralEstimate best;
  if (q.max_abs() == 0.0) {
    best.u = Vector::Unit(Eigen::Index(d.n1), 0);
    best.v = Vector::Unit(Eigen::Index(d.n2), 0);
    best.w = Vector::Unit(Eigen::Index(d.n3), 0);
    best.degenerate = true;
    return best;
  }
  Rng rng(opt.seed);
  best.value = -std::numeric_limits<double>::infinity();
  for (int s = 0; s < opt.restarts; ++s) {
    Vector u = rng.unit_vector(Eigen::Index(d.n1));
    Vector v = rng.unit_vector(Eigen::Index(d.n2));
    Vector w = rng.unit_vector(Eigen::Index(d.n3));
    double prev = -std::numeric_limits<double>::infinity();
    for (int it = 0; it < opt.max_iter; ++it) {
      Vector g = contract(q, ModePair::k23, v, w);
      if (g.norm() > 0) u = g.normalized();
      g = contract(q, ModePair::k13, u, w);
      if (g.norm() > 0) v = g.normalized();
      g = contract(q, ModePair::k12, u, v);
      const double gn = g.norm();
      if (gn > 0) w = g / gn;
      if (std::abs(gn - prev) <= opt.tol * std::max(1.0, gn)) break;
      prev = gn;
    }
    const double val = multilinear(q, u, v, w);
    if (val > best.value) {
      best.value = val;
      best.u = std::move(u);
      best.v = std::move(v);
      best.w = std::move(w);
    }
  }
  return best;
}

struct OperatorNormEstimate {
  double value = 0.0;
  Vector x;  ///< maximizer on the unit sphere, ‖Mᵀx‖_p = value
};

inline double lp_norm(const Vector& y, int p) {
  if (p == 2) return y.norm();
  double s = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) s += std::pow(std::abs(y[i]), p);
  return std::pow(s, 1.0 / p);
}

/// Estimate of sup_{‖x‖₂=1} ‖Mᵀx‖_p for M of size n x r, p in {2,3,4}.
/// p = 2 is the exact largest singular value; p = 3, 4 use multi-start
/// projected gradient ascent with backtracking on Σ|(Mᵀx)_i|^p.
inline OperatorNormEstimate operator_2p_norm(const Matrix& m, int p, int restarts = 50,
                                             std::uint64_t seed = 0) {
  if (m.size() == 0) throw DimensionError("operator_2p_norm: empty matrix");
  if (p < 2 || p > 4) throw std::invalid_argument("operator_2p_norm: p must be 2, 3 or 4");
  OperatorNormEstimate best;
  if (p == 2) {
    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU);
    best.x = svd.matrixU().col(0);
    best.value = lp_norm(m.transpose() * best.x, 2);
    return best;
  }
  auto objective = [&](const Vector& x) {
    const Vector y = m.transpose() * x;
    double s = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) s += std::pow(std::abs(y[i]), p);
    return s;
  };
  auto gradient = [&](const Vector& x) {
    const Vector y = m.transpose() * x;
    Vector g(y.size());
    for (Eigen::Index i = 0; i < y.size(); ++i)
      g[i] = p * std::pow(std::abs(y[i]), p - 1) * (y[i] < 0 ? -1.0 : 1.0);
    return Vector(m * g);
  };
  Rng rng(seed);
  best.value = -1.0;
  for (int s = 0; s < std::max(1, restarts); ++s) {
    Vector x = rng.unit_vector(m.rows());
    double f = objective(x);
    double step = 1.0;
    for (int it = 0; it < 2000; ++it) {
      const Vector g = gradient(x);
      const Vector tangent = g - g.dot(x) * x;
      if (tangent.norm() <= 1e-13 * std::max(1.0, g.norm())) break;
      bool improved = false;
      for (int bt = 0; bt < 60; ++bt) {
        Vector trial = (x + step * g).normalized();
        const double ft = objective(trial);
        if (ft > f) {
          const double gain = ft - f;
          x = std::move(trial);
          f = ft;
          improved = gain > 1e-15 * std::max(1.0, f);
          step *= 2.0;
          break;
        }
        step *= 0.5;
      }
      if (!improved) break;
    }
    const double val = lp_norm(m.transpose() * x, p);
    if (val > best.value) {
      best.value = val;
      best.x = x;
    }
  }
  return best;
}

// ---- t3d-json ---------------------------------------------------------------

/// Shortest form is not used on purpose: the format promises 17 significant digits.
inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string to_t3d_json(const Tensor3& t) {
  std::ostringstream os;
  const Dims3& d = t.dims();
  os << "{\"dims\":[" << d.n1 << "," << d.n2 << "," << d.n3 << "],\"data\":[";
  const auto data = t.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (i) os << ",";
    os << format_double(data[i]);
  }
  os << "]}\n";
  return os.str();
}

inline Tensor3 from_t3d_json(const nlohmann::json& j) {
  const auto& dims = j.at("dims");
  if (!dims.is_array() || dims.size() != 3)
    throw std::invalid_argument("t3d-json: \"dims\" must be an array of three integers");
  Dims3 d{dims[0].get<std::size_t>(), dims[1].get<std::size_t>(), dims[2].get<std::size_t>()};
  return Tensor3(d, j.at("data").get<std::vector<double>>());
}

inline Tensor3 read_t3d_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open tensor file '" + path + "'");
  try {
    return from_t3d_json(nlohmann::json::parse(in));
  } catch (const std::exception& e) {
    throw std::runtime_error("'" + path + "': " + e.what());
  }
}

inline void write_t3d_json(const Tensor3& t, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write tensor file '" + path + "'");
  out << to_t3d_json(t);
}

}  // namespace otd
