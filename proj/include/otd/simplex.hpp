#pragma once

// Nuclear norm of a 2x2x2 tensor restricted to an angular grid of atoms,
// solved as the LP  min Σλ  s.t.  Σ λ_a a = vec(T), λ ≥ 0.
// The grid has angular_steps³ columns, so the revised simplex method below
// never stores them: the entering column comes from a pricing search over
// the grid.

#include <array>
#include <cmath>
#include <numbers>
#include <set>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "otd/tensor.hpp"

namespace otd {

struct GridAtom {
  int a = 0, b = 0, c = 0;  ///< angle indices: θ = 2π·index/angular_steps
  double weight = 0.0;
};

struct OracleResult {
  double value = 0.0;
  std::vector<GridAtom> atoms;
  int pivots = 0;
};

class OracleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

using Vec8 = Eigen::Matrix<double, 8, 1>;
using Mat8 = Eigen::Matrix<double, 8, 8>;

class AngularGrid {
 public:
  explicit AngularGrid(int steps) : steps_(steps), cos_(std::size_t(steps)), sin_(std::size_t(steps)) {
    for (int g = 0; g < steps; ++g) {
      const double th = 2.0 * std::numbers::pi * g / steps;
      cos_[std::size_t(g)] = std::cos(th);
      sin_[std::size_t(g)] = std::sin(th);
    }
  }

  int steps() const noexcept { return steps_; }
  double c(int g) const { return cos_[std::size_t(g)]; }
  double s(int g) const { return sin_[std::size_t(g)]; }

  /// vec(u⊗v⊗w) with index 4i + 2j + k.
  Vec8 column(int a, int b, int cc) const {
    const std::array<double, 2> u{c(a), s(a)}, v{c(b), s(b)}, w{c(cc), s(cc)};
    Vec8 col;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        for (int k = 0; k < 2; ++k) col[4 * i + 2 * j + k] = u[std::size_t(i)] * v[std::size_t(j)] * w[std::size_t(k)];
    return col;
  }

  /// For each u angle, the (v, w) grid pair maximizing ⟨y, column⟩. For fixed
  /// (u, v) the best w is the grid angle nearest atan2 of the contracted
  /// 2-vector; neighbours are checked to absorb rounding.
  std::vector<std::pair<GridAtom, double>> price(const Vec8& y) const {
    std::vector<std::pair<GridAtom, double>> out(static_cast<std::size_t>(steps_));
    const double step = 2.0 * std::numbers::pi / steps_;
    for (int a = 0; a < steps_; ++a) {
      // m(j,k) = Σ_i u_i y(i,j,k)
      const double m00 = c(a) * y[0] + s(a) * y[4], m01 = c(a) * y[1] + s(a) * y[5];
      const double m10 = c(a) * y[2] + s(a) * y[6], m11 = c(a) * y[3] + s(a) * y[7];
      auto& [best, best_val] = out[std::size_t(a)];
      best_val = -std::numeric_limits<double>::infinity();
      for (int b = 0; b < steps_; ++b) {
        const double z0 = c(b) * m00 + s(b) * m10;
        const double z1 = c(b) * m01 + s(b) * m11;
        double phi = std::atan2(z1, z0);
        if (phi < 0) phi += 2.0 * std::numbers::pi;
        const int g0 = int(std::lround(phi / step)) % steps_;
        for (int dg = -1; dg <= 1; ++dg) {
          const int g = ((g0 + dg) % steps_ + steps_) % steps_;
          const double val = z0 * c(g) + z1 * s(g);
          if (val > best_val) {
            best_val = val;
            best = {a, b, g, 0.0};
          }
        }
      }
    }
    return out;
  }

 private:
  int steps_;
  std::vector<double> cos_, sin_;
};

}  // namespace detail

/// Column generation around a revised simplex. The restricted problem keeps
/// a pool of grid columns; each full-grid pricing pass adds the best column for
/// every u angle that has negative reduced cost, and the restricted problem is
/// re-optimized over the pool. The start basis is the signed coordinate atoms
/// ±e_i⊗e_j⊗e_k, which lie on the grid when angular_steps is a multiple of 4.
/// The right-hand side is perturbed by distinct tiny amounts so no basic
/// variable sits at zero and pivots cannot cycle; the final basis is re-solved
/// against the unperturbed tensor.
inline OracleResult nuclear_norm_oracle(const Tensor3& t, int angular_steps = 720, int max_pivots = 100000) {
  using detail::Mat8;
  using detail::Vec8;
  if (t.dims() != Dims3::cube(2)) throw DimensionError("nuclear_norm_oracle: tensor must be 2x2x2");
  if (angular_steps < 180 || angular_steps % 4 != 0)
    throw std::invalid_argument("nuclear_norm_oracle: angular_steps must be a multiple of 4 and >= 180");
  const detail::AngularGrid grid(angular_steps);

  Vec8 rhs;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k) rhs[4 * i + 2 * j + k] = t(std::size_t(i), std::size_t(j), std::size_t(k));
  const double scale = std::max(1e-300, rhs.cwiseAbs().maxCoeff());
  Vec8 perturbed = rhs;
  for (int k = 0; k < 8; ++k) perturbed[k] += 1e-10 * scale * (1.0 + 0.1 * k) * (rhs[k] < 0 ? -1.0 : 1.0);

  std::vector<GridAtom> pool;
  std::vector<Vec8> columns;
  std::set<std::array<int, 3>> seen;
  auto add = [&](const GridAtom& a) {
    if (!seen.insert({a.a, a.b, a.c}).second) return false;
    pool.push_back(a);
    columns.push_back(grid.column(a.a, a.b, a.c));
    return true;
  };

  const int quarter = angular_steps / 4;
  std::array<std::size_t, 8> basic{};
  Mat8 basis;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k) {
        const int slot = 4 * i + 2 * j + k;
        // a negative entry flips u by π
        const int a = i * quarter + (perturbed[slot] < 0 ? 2 * quarter : 0);
        add({a, j * quarter, k * quarter, 0.0});
        basic[std::size_t(slot)] = pool.size() - 1;
        basis.col(slot) = columns.back();
      }

  OracleResult out;
  Eigen::PartialPivLU<Mat8> lu(basis);
  Vec8 x = lu.solve(perturbed);
  constexpr double kReducedTol = 1e-12;
  for (;;) {
    // optimize over the pool
    for (;;) {
      if (out.pivots >= max_pivots) throw OracleError("nuclear_norm_oracle: pivot limit reached");
      const Vec8 y = lu.transpose().solve(Vec8::Ones());
      std::size_t enter = pool.size();
      double most_negative = -kReducedTol;
      for (std::size_t c = 0; c < pool.size(); ++c) {
        const double rc = 1.0 - y.dot(columns[c]);
        if (rc < most_negative) {
          most_negative = rc;
          enter = c;
        }
      }
      if (enter == pool.size()) break;
      const Vec8 d = lu.solve(columns[enter]);
      int leave = -1;
      double best_ratio = std::numeric_limits<double>::infinity();
      for (int k = 0; k < 8; ++k) {
        if (d[k] > 1e-12) {
          const double ratio = std::max(x[k], 0.0) / d[k];
          if (ratio < best_ratio) {
            best_ratio = ratio;
            leave = k;
          }
        }
      }
      if (leave < 0) throw OracleError("nuclear_norm_oracle: LP unbounded");
      basis.col(leave) = columns[enter];
      basic[std::size_t(leave)] = enter;
      lu.compute(basis);
      x = lu.solve(perturbed);
      ++out.pivots;
    }
    // price the full grid
    const Vec8 y = lu.transpose().solve(Vec8::Ones());
    bool added = false;
    for (const auto& [atom, yta] : grid.price(y))
      if (1.0 - yta < -kReducedTol) added = add(atom) || added;
    if (!added) break;
  }

  x = lu.solve(rhs);
  const double tol = 1e-9 * scale;
  for (int k = 0; k < 8; ++k) {
    if (x[k] < -tol) throw OracleError("nuclear_norm_oracle: final basis infeasible for the unperturbed tensor");
    if (x[k] <= tol) continue;
    GridAtom a = pool[basic[std::size_t(k)]];
    a.weight = x[k];
    out.atoms.push_back(a);
    out.value += x[k];
  }
  return out;
}

}  // namespace otd
