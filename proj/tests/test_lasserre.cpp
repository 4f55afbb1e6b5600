#include <gtest/gtest.h>

#include "otd/lasserre.hpp"

using namespace otd;

namespace {

// Σ_p λ_p Π_k ξ_p[k]^{e_k}, evaluated from scratch for one exponent.
double moment_of(const FactorSet& fs, const Exponent& e) {
  const Eigen::Index n = fs.n();
  double s = 0.0;
  for (Eigen::Index p = 0; p < fs.r(); ++p) {
    double term = fs.lambda()[p];
    for (std::size_t k = 0; k < e.size(); ++k) {
      const int block = int(k) / int(n);
      term *= std::pow(fs.mode(block)(Eigen::Index(k) % n, p), e[k]);
    }
    s += term;
  }
  return s;
}

double min_eig(const Matrix& m) {
  return Eigen::SelfAdjointEigenSolver<Matrix>(m, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

}  // namespace

TEST(Monomials, CountsAndOrder) {
  for (int vars = 1; vars <= 12; ++vars)
    for (int deg = 0; deg <= 4; ++deg)
      EXPECT_EQ(graded_lex_monomials(vars, deg).size(), binomial(std::size_t(vars + deg), std::size_t(deg)));
  const auto m = graded_lex_monomials(3, 2);
  EXPECT_EQ(m[0], (Exponent{0, 0, 0}));
  EXPECT_EQ(m[1], (Exponent{1, 0, 0}));
  EXPECT_EQ(m[3], (Exponent{0, 0, 1}));
  EXPECT_EQ(m[4], (Exponent{2, 0, 0}));
  EXPECT_EQ(m[5], (Exponent{1, 1, 0}));
  EXPECT_EQ(m.back(), (Exponent{0, 0, 2}));
  for (std::size_t i = 1; i < m.size(); ++i) {
    const int d0 = MonomialBasis::degree(m[i - 1]), d1 = MonomialBasis::degree(m[i]);
    EXPECT_TRUE(d0 < d1 || (d0 == d1 && m[i - 1] > m[i]));
  }
  EXPECT_EQ(binomial(6 + 4, 4), 210u);
}

TEST(Monomials, IndexRoundTrip) {
  for (int n = 1; n <= 4; ++n) {
    const MonomialBasis basis(3 * n, 4);
    for (std::size_t i = 0; i < basis.size(); ++i) EXPECT_EQ(basis.index(basis.exponent(i)), i);
  }
  EXPECT_THROW(MonomialBasis(3, 2).index(Exponent{3, 0, 0}), std::out_of_range);
}

TEST(TrueMoments, Examples) {
  const FactorSet fs = random_factor_set(2, 3, 4);
  const MomentVector m = true_moment_vector(fs);
  EXPECT_EQ(std::size_t(m.values.size()), binomial(6 + 4, 4));
  EXPECT_NEAR(m.values[0], fs.lambda().sum(), 1e-15);
  const MonomialBasis basis(6, 4);
  const Tensor3 t = synthesize(fs);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t k = 0; k < 2; ++k) {
        Exponent e(6, 0);
        e[i] = e[2 + j] = e[4 + k] = 1;
        EXPECT_NEAR(m.values[Eigen::Index(basis.index(e))], t(i, j, k), 1e-14);
      }
  for (std::size_t a = 0; a < basis.size(); ++a)
    EXPECT_NEAR(m.values[Eigen::Index(a)], moment_of(fs, basis.exponent(a)), 1e-13);

  const Matrix e1 = Vector::Unit(2, 0);
  const MomentVector axis = true_moment_vector(FactorSet(e1, e1, e1, Vector::Ones(1)));
  for (std::size_t a = 0; a < basis.size(); ++a) {
    const Exponent& e = basis.exponent(a);
    const bool on_axes = e[1] == 0 && e[3] == 0 && e[5] == 0;
    EXPECT_EQ(axis.values[Eigen::Index(a)], on_axes ? 1.0 : 0.0);
  }
}

TEST(TrueMoments, SignSymmetrizationKeepsEqualParities) {
  const FactorSet fs = random_factor_set(2, 2, 1);
  const MomentVector sym = symmetric_moment_vector(fs);
  const MomentVector raw = true_moment_vector(fs);
  const MonomialBasis basis(6, 4);
  // average over the four even flips of every atom, computed directly
  for (std::size_t a = 0; a < basis.size(); ++a) {
    double avg = 0.0;
    for (const SignTriple& s : kEvenSignFlips) {
      Matrix u = fs.U() * double(s.s1), v = fs.V() * double(s.s2), w = fs.W() * double(s.s3);
      avg += 0.25 * moment_of(FactorSet(u, v, w, fs.lambda()), basis.exponent(a));
    }
    EXPECT_NEAR(sym.values[Eigen::Index(a)], avg, 1e-13);
  }
  EXPECT_EQ(sym.values[0], raw.values[0]);
}

TEST(MomentSDPBuild, Dimensions) {
  const MomentSDP one = build_moment_sdp(Tensor3::cube(1), 1);
  EXPECT_EQ(one.matrix_dim, 10u);  // C(3+2, 2) monomials of degree ≤ 2 in three variables
  const MomentSDP two = build_moment_sdp(Tensor3::cube(2), 2);
  EXPECT_EQ(two.matrix_dim, 28u);
  EXPECT_EQ(two.num_moments, 210u);
  EXPECT_EQ(two.tensor_constraints, 8u);
  EXPECT_EQ(two.sphere_constraints, 3u * binomial(6 + 2, 2));
  for (const SparseRow& row : two.equalities)
    for (const auto& [idx, coef] : row.terms) EXPECT_LT(idx, two.num_moments);
  for (std::size_t idx : two.matrix_index) EXPECT_LT(idx, two.num_moments);
  EXPECT_EQ(two.objective_index, 0u);
  EXPECT_THROW(build_moment_sdp(Tensor3::cube(3), 2), DimensionError);
}

TEST(MomentSDPBuild, OneDimensionalSpheres) {
  // n = 1: each sphere is {±1}, so u² = v² = w² = m₀ on the moment level
  const MomentSDP sdp = build_moment_sdp(Tensor3::cube(1), 1);
  const MonomialBasis basis(3, 4);
  Vector m = Vector::Zero(Eigen::Index(sdp.num_moments));
  // moments of the two-point measure 0.5δ(1,1,1) + 0.5δ(−1,−1,1): T = 1
  for (std::size_t a = 0; a < basis.size(); ++a) {
    const Exponent& e = basis.exponent(a);
    m[Eigen::Index(a)] = 0.5 + 0.5 * std::pow(-1.0, e[0] + e[1]);
  }
  Tensor3 t = Tensor3::cube(1);
  t(0, 0, 0) = 1.0;
  EXPECT_LT(equality_residual(build_moment_sdp(t, 1), m), 1e-15);
  m[Eigen::Index(basis.index({2, 0, 0}))] = 0.9;
  EXPECT_GT(equality_residual(build_moment_sdp(t, 1), m), 0.05);
}

TEST(MomentSDPBuild, PlantedMomentsAreFeasible) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Eigen::Index n = 2 + Eigen::Index(seed % 3), r = 1 + Eigen::Index(seed % 5);
    const FactorSet fs = random_factor_set(n, r, seed);
    const MomentSDP sdp = build_moment_sdp(synthesize(fs), int(n));
    for (const MomentVector& m : {true_moment_vector(fs), symmetric_moment_vector(fs)}) {
      EXPECT_LT(equality_residual(sdp, m.values), 1e-12);
      EXPECT_GE(min_eig(moment_matrix(sdp, m.values)), -1e-10);
    }
  }
}

TEST(MomentMatrix, EntriesAreSummedExponents) {
  const MomentSDP sdp = build_moment_sdp(Tensor3::cube(2), 2);
  const MonomialBasis full(6, 4), half(6, 2);
  for (std::size_t i = 0; i < sdp.matrix_dim; ++i)
    for (std::size_t j = 0; j < sdp.matrix_dim; ++j) {
      Exponent e = half.exponent(i);
      for (std::size_t k = 0; k < e.size(); ++k) e[k] += half.exponent(j)[k];
      EXPECT_EQ(sdp.matrix_index[i * sdp.matrix_dim + j], full.index(e));
    }
}

TEST(ProjectPsd, Properties) {
  Matrix x(3, 3);
  x << 1, 2, 0, 2, -3, 1, 0, 1, 0.5;
  const Matrix p = project_psd(x);
  EXPECT_GE(min_eig(p), -1e-14);
  EXPECT_LT((project_psd(p) - p).cwiseAbs().maxCoeff(), 1e-13);
  EXPECT_LT((project_psd(Matrix::Identity(3, 3)) - Matrix::Identity(3, 3)).norm(), 1e-15);
}

TEST(SdpSolve, ZeroTensorGivesZeroMeasure) {
  const SdpResult res = sdp_solve(build_moment_sdp(Tensor3::cube(2), 2));
  EXPECT_EQ(res.status, SdpStatus::solved);
  EXPECT_LT(std::abs(res.objective), 1e-6);
  EXPECT_LT(res.m.values.cwiseAbs().maxCoeff(), 1e-5);
}

TEST(SdpSolve, RankOneRecovery) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const FactorSet fs = random_factor_set(2, 1, seed);
    const SdpResult res = sdp_solve(build_moment_sdp(synthesize(fs), 2));
    EXPECT_EQ(res.status, SdpStatus::solved);
    EXPECT_NEAR(res.objective, fs.lambda()[0], 1e-5);
    EXPECT_LT(moment_distance(res.m, symmetric_moment_vector(fs)), 1e-4);
    EXPECT_LT(equality_residual(build_moment_sdp(synthesize(fs), 2), res.m.values), 1e-5);
  }
}

TEST(SdpSolve, RelaxationIsALowerBound) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const FactorSet fs = random_factor_set(2, 3, seed + 40);
    const SdpResult res = sdp_solve(build_moment_sdp(synthesize(fs), 2));
    EXPECT_LE(res.objective, fs.lambda().sum() + 1e-5);
  }
}

TEST(SdpSolve, CoordinateRelabelingPermutesMoments) {
  const FactorSet fs = random_factor_set(2, 1, 6);
  Matrix u = fs.U();
  u.row(0).swap(u.row(1));
  const FactorSet swapped(u, fs.V(), fs.W(), fs.lambda());
  const SdpResult a = sdp_solve(build_moment_sdp(synthesize(fs), 2));
  const SdpResult b = sdp_solve(build_moment_sdp(synthesize(swapped), 2));
  const MonomialBasis basis(6, 4);
  for (std::size_t i = 0; i < basis.size(); ++i) {
    Exponent e = basis.exponent(i);
    std::swap(e[0], e[1]);
    EXPECT_NEAR(a.m.values[Eigen::Index(i)], b.m.values[Eigen::Index(basis.index(e))], 1e-5);
  }
}

TEST(MomentDistance, Examples) {
  const MomentVector a = true_moment_vector(random_factor_set(2, 2, 3));
  EXPECT_EQ(moment_distance(a, a), 0.0);
  MomentVector b = a;
  b.values[0] += 0.5;
  EXPECT_EQ(moment_distance(a, b), 0.5);
  EXPECT_THROW(moment_distance(a, true_moment_vector(random_factor_set(3, 1, 1))), DimensionError);
}

TEST(MomentJson, RoundTrip) {
  const MomentVector a = true_moment_vector(random_factor_set(2, 2, 3));
  const MomentVector b = moment_vector_from_json(nlohmann::json::parse(to_json(a).dump()));
  EXPECT_EQ(a.n, b.n);
  EXPECT_EQ(a.values, b.values);
}
