#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "otd/certificate.hpp"
#include "otd/factor_model.hpp"

using namespace otd;

namespace {

FactorSet orthonormal_set(Eigen::Index n, Eigen::Index r, std::uint64_t seed) {
  Rng rng(seed);
  auto q = [&] {
    Matrix g(n, n);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
    Eigen::HouseholderQR<Matrix> qr(g);
    return Matrix(Matrix(qr.householderQ()).leftCols(r));
  };
  Matrix u = q(), v = q(), w = q();
  return FactorSet(u, v, w, Vector::Ones(r));
}

Coefficients random_coeffs(Eigen::Index n, Eigen::Index r, std::uint64_t seed) {
  Rng rng(seed);
  Coefficients k{Matrix(n, r), Matrix(n, r), Matrix(n, r)};
  for (int m = 0; m < 3; ++m)
    for (Eigen::Index i = 0; i < k.mode(m).size(); ++i) k.mode(m).data()[i] = rng.normal();
  return k;
}

// Q from the three-term sum, element by element.
std::vector<double> dense_q(const Coefficients& k, const FactorSet& fs) {
  const Eigen::Index n = fs.n();
  std::vector<double> q(std::size_t(n * n * n), 0.0);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index l = 0; l < n; ++l) {
        double s = 0.0;
        for (Eigen::Index p = 0; p < fs.r(); ++p)
          s += k.a(i, p) * fs.V()(j, p) * fs.W()(l, p) + fs.U()(i, p) * k.b(j, p) * fs.W()(l, p) +
               fs.U()(i, p) * fs.V()(j, p) * k.c(l, p);
        q[std::size_t((i * n + j) * n + l)] = s;
      }
  return q;
}

// Minimum-Frobenius-norm Q satisfying every contraction condition, by a
// complete orthogonal decomposition of the n³-variable constraint system.
std::vector<double> min_norm_q(const FactorSet& fs) {
  const Eigen::Index n = fs.n(), r = fs.r(), n3 = n * n * n;
  Matrix c = Matrix::Zero(3 * n * r, n3);
  Vector b(3 * n * r);
  Eigen::Index row = 0;
  for (int m = 0; m < 3; ++m)
    for (Eigen::Index p = 0; p < r; ++p)
      for (Eigen::Index free = 0; free < n; ++free, ++row) {
        b[row] = fs.mode(m)(free, p);
        for (Eigen::Index a = 0; a < n; ++a)
          for (Eigen::Index bb = 0; bb < n; ++bb) {
            Eigen::Index i, j, l;
            double coef;
            if (m == 0) {
              i = free, j = a, l = bb, coef = fs.V()(a, p) * fs.W()(bb, p);
            } else if (m == 1) {
              i = a, j = free, l = bb, coef = fs.U()(a, p) * fs.W()(bb, p);
            } else {
              i = a, j = bb, l = free, coef = fs.U()(a, p) * fs.V()(bb, p);
            }
            c(row, (i * n + j) * n + l) += coef;
          }
      }
  const Vector x = Eigen::CompleteOrthogonalDecomposition<Matrix>(c).solve(b);
  return {x.data(), x.data() + x.size()};
}

double coeff_distance(const Coefficients& x, const Coefficients& y) {
  double s = 0.0;
  for (int m = 0; m < 3; ++m) s += (x.mode(m) - y.mode(m)).squaredNorm();
  return std::sqrt(s);
}

}  // namespace

TEST(GramOperator, MatchesDenseContraction) {
  for (auto [n, r] : {std::pair{4, 3}, std::pair{5, 7}, std::pair{6, 2}}) {
    const FactorSet fs = random_factor_set(n, r, std::uint64_t(n * 10 + r));
    const Coefficients k = random_coeffs(n, r, 3);
    const std::vector<double> q = dense_q(k, fs);
    const Coefficients out = apply_gram_operator(fs, k);
    for (Eigen::Index p = 0; p < r; ++p)
      for (Eigen::Index f = 0; f < n; ++f) {
        double s1 = 0.0, s2 = 0.0, s3 = 0.0;
        for (Eigen::Index a = 0; a < n; ++a)
          for (Eigen::Index b = 0; b < n; ++b) {
            s1 += q[std::size_t((f * n + a) * n + b)] * fs.V()(a, p) * fs.W()(b, p);
            s2 += q[std::size_t((a * n + f) * n + b)] * fs.U()(a, p) * fs.W()(b, p);
            s3 += q[std::size_t((a * n + b) * n + f)] * fs.U()(a, p) * fs.V()(b, p);
          }
        EXPECT_NEAR(out.a(f, p), s1, 1e-12);
        EXPECT_NEAR(out.b(f, p), s2, 1e-12);
        EXPECT_NEAR(out.c(f, p), s3, 1e-12);
      }
    const Tensor3 built = build_Q(k, fs);
    for (std::size_t t = 0; t < built.size(); ++t) EXPECT_NEAR(built.data()[t], q[t], 1e-12);
    const Matrix m = assemble_gram_operator(fs);
    EXPECT_LT((m * stack(k) - stack(out)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((m - m.transpose()).cwiseAbs().maxCoeff(), 1e-13);
  }
}

TEST(GramOperator, TrivialCases) {
  const FactorSet one = random_factor_set(5, 1, 2);
  Coefficients third{one.U() / 3.0, one.V() / 3.0, one.W() / 3.0};
  Coefficients out = apply_gram_operator(one, third);
  EXPECT_LT((out.a - one.U()).norm(), 1e-15);
  EXPECT_LT((out.b - one.V()).norm(), 1e-15);
  EXPECT_LT((out.c - one.W()).norm(), 1e-15);

  const FactorSet orth = orthonormal_set(6, 4, 1);
  out = apply_gram_operator(orth, Coefficients{orth.U() / 3.0, orth.V() / 3.0, orth.W() / 3.0});
  EXPECT_LT((out.a - orth.U()).norm(), 1e-14);
  EXPECT_THROW(apply_gram_operator(orth, random_coeffs(5, 4, 0)), DimensionError);
}

TEST(NullSpace, BasisIsAnnihilatedAndOrthonormal) {
  const FactorSet fs = random_factor_set(5, 4, 8);
  const Matrix m = assemble_gram_operator(fs);
  const Matrix basis = null_space_basis(fs);
  ASSERT_EQ(basis.cols(), 8);
  EXPECT_LT((basis.transpose() * basis - Matrix::Identity(8, 8)).cwiseAbs().maxCoeff(), 1e-14);
  const double op_norm = Eigen::SelfAdjointEigenSolver<Matrix>(m, Eigen::EigenvaluesOnly).eigenvalues().cwiseAbs().maxCoeff();
  for (Eigen::Index c = 0; c < basis.cols(); ++c) EXPECT_LE((m * basis.col(c)).norm(), 1e-8 * op_norm);

  Coefficients k = random_coeffs(5, 4, 1);
  project_out_null_space(fs, k);
  EXPECT_LT((basis.transpose() * stack(k)).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(DirectSolve, RankOneIsThirdOfFactors) {
  const FactorSet fs = random_factor_set(3, 1, 5);
  const Certificate cert = solve_certificate_direct(fs);
  EXPECT_LT((cert.A() - fs.U() / 3.0).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((cert.B() - fs.V() / 3.0).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((cert.C() - fs.W() / 3.0).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_EQ(cert.null_dim, 2);
  const std::vector<double> q = min_norm_q(fs);
  const Tensor3 built = build_Q(cert, fs);
  for (std::size_t t = 0; t < q.size(); ++t) EXPECT_NEAR(built.data()[t], q[t], 1e-12);
}

TEST(DirectSolve, OrthonormalIsExact) {
  const FactorSet fs = orthonormal_set(7, 5, 4);
  const Certificate cert = solve_certificate_direct(fs);
  EXPECT_LT((cert.A() - fs.U() / 3.0).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((cert.C() - fs.W() / 3.0).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(cert.solve_residual, 1e-12);
}

TEST(DirectSolve, MatchesMinimumNormTensorOracle) {
  for (auto [n, r] : {std::pair{4, 3}, std::pair{5, 6}, std::pair{6, 4}}) {
    const FactorSet fs = random_factor_set(n, r, std::uint64_t(n + 100 * r));
    const Certificate cert = solve_certificate_direct(fs);
    EXPECT_EQ(cert.null_dim, 2 * r);
    EXPECT_LT(cert.solve_residual, 1e-10);
    const std::vector<double> q = min_norm_q(fs);
    const Tensor3 built = build_Q(cert, fs);
    double err = 0.0;
    for (std::size_t t = 0; t < q.size(); ++t) err = std::max(err, std::abs(built.data()[t] - q[t]));
    EXPECT_LT(err, 1e-10) << n << " " << r;
    // stacked coefficients carry no null-space component
    EXPECT_LT((null_space_basis(fs).transpose() * stack(cert.coeffs)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(DirectSolve, InconsistentSystemThrows) {
  // n = 1, r = 2: two atoms collapse onto the same scalar, so the constraints disagree
  Matrix one(1, 2);
  one << 1.0, -1.0;
  Matrix pos(1, 2);
  pos << 1.0, 1.0;
  const FactorSet fs(one, pos, pos, Vector::Ones(2));
  EXPECT_THROW(solve_certificate_direct(fs), InconsistentSystemError);
}

TEST(IterativeSolve, OrthonormalConvergesImmediately) {
  const FactorSet fs = orthonormal_set(6, 3, 2);
  const Certificate cert = solve_certificate_iterative(fs);
  EXPECT_EQ(cert.status, CertStatus::converged);
  EXPECT_EQ(cert.iterations, 1);
  EXPECT_LT((cert.A() - fs.U() / 3.0).norm(), 1e-14);
}

TEST(IterativeSolve, AgreesWithDirect) {
  const FactorSet fs = random_factor_set(12, 10, 6);
  const Certificate direct = solve_certificate_direct(fs);
  IterativeOptions opt;
  opt.rho = 0.5;
  const Certificate iter = solve_certificate_iterative(fs, opt);
  ASSERT_EQ(iter.status, CertStatus::converged);
  EXPECT_LT(coeff_distance(direct.coeffs, iter.coeffs), 1e-6);
  const Matrix basis = null_space_basis(fs);
  EXPECT_LT((basis.transpose() * stack(iter.coeffs)).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT((basis.transpose() * stack(direct.coeffs)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(IterativeSolve, LargeStepDivergesOnCoherentFactors) {
  // four nearly parallel atoms: the Gram operator has an eigenvalue far above 2
  Rng rng(3);
  const Vector base = rng.unit_vector(5);
  Matrix u(5, 4);
  for (Eigen::Index p = 0; p < 4; ++p) u.col(p) = (base + 0.01 * rng.gaussian_vector(5)).normalized();
  const FactorSet fs(u, u, u, Vector::Ones(4));
  const double lmax =
      Eigen::SelfAdjointEigenSolver<Matrix>(assemble_gram_operator(fs), Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
  ASSERT_GT(lmax, 2.0);
  IterativeOptions opt;
  opt.rho = 1.0;
  EXPECT_EQ(solve_certificate_iterative(fs, opt).status, CertStatus::diverged);
  opt.rho = 0.0;
  EXPECT_THROW(solve_certificate_iterative(fs, opt), std::invalid_argument);
  opt.rho = 1.5;
  EXPECT_THROW(solve_certificate_iterative(fs, opt), std::invalid_argument);
}

TEST(DualPolynomialTest, InterpolationAndSigns) {
  const FactorSet fs = random_factor_set(6, 4, 12);
  const Certificate cert = solve_certificate_direct(fs);
  const Tensor3 q = build_Q(cert, fs);
  for (Eigen::Index p = 0; p < 4; ++p) {
    const Vector u = fs.U().col(p), v = fs.V().col(p), w = fs.W().col(p);
    EXPECT_NEAR(q_eval(cert, fs, u, v, w), 1.0, 1e-10);
    EXPECT_NEAR(q_eval(cert, fs, -u, -v, w), 1.0, 1e-10);
  }
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    const Vector u = rng.unit_vector(6), v = rng.unit_vector(6), w = rng.unit_vector(6);
    const double val = q_eval(cert, fs, u, v, w);
    EXPECT_NEAR(val, inner(q, outer3(u, v, w)), 1e-12);
    for (int s1 : {-1, 1})
      for (int s2 : {-1, 1})
        for (int s3 : {-1, 1}) EXPECT_EQ(q_eval(cert, fs, s1 * u, s2 * v, s3 * w), s1 * s2 * s3 * val);
    const DualPolynomial dq(cert.coeffs, fs);
    for (int m = 0; m < 3; ++m) {
      const Vector& x = m == 0 ? u : (m == 1 ? v : w);
      EXPECT_NEAR(dq.gradient(m, u, v, w).dot(x), val, 1e-12);
    }
  }
  EXPECT_THROW(q_eval(cert, fs, 2.0 * fs.U().col(0), fs.V().col(0), fs.W().col(0)), std::invalid_argument);
  EXPECT_THROW(q_eval(cert, fs, Vector::Unit(5, 0), fs.V().col(0), fs.W().col(0)), DimensionError);
}

TEST(DualPolynomialTest, RankOneIsProductOfCorrelations) {
  const FactorSet fs = random_factor_set(4, 1, 9);
  const Certificate cert = solve_certificate_direct(fs);
  Rng rng(1);
  const Vector x = random_orthogonal(rng, fs.U().col(0));
  EXPECT_NEAR(q_eval(cert, fs, x, fs.V().col(0), fs.W().col(0)), 0.0, 1e-14);
  const Vector u = rng.unit_vector(4), v = rng.unit_vector(4), w = rng.unit_vector(4);
  EXPECT_NEAR(q_eval(cert, fs, u, v, w), u.dot(fs.U().col(0)) * v.dot(fs.V().col(0)) * w.dot(fs.W().col(0)), 1e-14);
}

TEST(Verify, RankOneBounded) {
  for (Eigen::Index n : {2, 5, 9}) {
    const FactorSet fs = random_factor_set(n, 1, std::uint64_t(n));
    const Certificate cert = solve_certificate_direct(fs);
    VerifyOptions opt;
    opt.samples = 2000;
    opt.ascent_restarts = 10;
    const CertificateReport rep = verify_certificate(cert, fs, opt);
    EXPECT_TRUE(rep.boundedness_ok);
    EXPECT_LT(rep.boundedness_max, 1.0);
    EXPECT_FALSE(rep.region.has_value());
  }
}

TEST(Verify, OrthonormalFactors) {
  const FactorSet fs = orthonormal_set(10, 5, 3);
  const Certificate cert = solve_certificate_direct(fs);
  const CertificateReport rep = verify_certificate(cert, fs);
  EXPECT_LT(rep.interp_err, 1e-10);
  EXPECT_TRUE(rep.boundedness_ok);
  for (double d : rep.coeff_dev) EXPECT_LT(d, 1e-12);
  EXPECT_GT(rep.excluded, 0);
}

TEST(Verify, InterpolationImpliedByStationarity) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const FactorSet fs = random_factor_set(8, 6, seed);
    const Certificate cert = solve_certificate_direct(fs);
    VerifyOptions opt;
    opt.samples = 500;
    opt.ascent_restarts = 5;
    const CertificateReport rep = verify_certificate(cert, fs, opt);
    EXPECT_LE(rep.interp_err, double(fs.n()) * rep.stationarity_err + 1e-15);
    EXPECT_GE(rep.stationarity_err, 0.0);
    EXPECT_NEAR(rep.tau_hat, assumption_report(fs).implied_tau, 0.0);
  }
}

TEST(Verify, ThreadCountDoesNotChangeTheResult) {
  const FactorSet fs = random_factor_set(8, 6, 4);
  const Certificate cert = solve_certificate_direct(fs);
  VerifyOptions opt;
  opt.samples = 3500;
  opt.ascent_restarts = 8;
  opt.seed = 77;
  const CertificateReport one = verify_certificate(cert, fs, opt);
  opt.threads = 3;
  const CertificateReport three = verify_certificate(cert, fs, opt);
  EXPECT_EQ(one.boundedness_max, three.boundedness_max);
  EXPECT_EQ(one.excluded, three.excluded);
}

TEST(NearRegion, OriginAndExpansion) {
  const FactorSet fs = random_factor_set(10, 5, 2);
  const Certificate cert = solve_certificate_direct(fs);
  const double tau = assumption_report(fs).implied_tau;
  const NearRegionReport rep = near_region_check(cert, fs, 0, 3, 11, 1, tau);
  EXPECT_NEAR(rep.q_at_origin, 1.0, 1e-12);
  EXPECT_LT(rep.expansion_err, 1e-10);
  EXPECT_LT(rep.cross_term_max, 1e-10);
  EXPECT_NEAR(rep.bound_slack, 4.0 * tau * std::pow(10.0, -0.125), 1e-12);
  EXPECT_THROW(near_region_check(cert, fs, 5, 1, 11, 1, tau), std::out_of_range);
}

TEST(NearRegion, RankOneIsCosineProduct) {
  const FactorSet fs = random_factor_set(5, 1, 3);
  const Certificate cert = solve_certificate_direct(fs);
  const NearRegionReport rep = near_region_check(cert, fs, 0, 4, 9, 2, 0.0);
  // q = cos cos cos exactly, which never exceeds cos cos cos + sin sin sin on [0, π]³
  EXPECT_LT(rep.expansion_err, 1e-14);
  EXPECT_LT(rep.cross_term_max, 1e-14);
  EXPECT_TRUE(rep.bound_ok);
}

TEST(Region, Examples) {
  const RegionParams rp = region_parameters(256, 10, 0.125, 1.0, 0.0, 0.0);
  const double s = std::pow(256.0, -1.0 / 16.0);
  EXPECT_NEAR(rp.delta, std::sqrt(80.0 / 3.0) * s, 1e-14);
  EXPECT_NEAR(rp.d, 6.0 * s, 1e-14);
  EXPECT_NEAR(rp.gamma, 6.0, 0.0);
  EXPECT_NEAR(rp.delta / rp.d, std::sqrt(80.0 / 3.0) / 6.0, 1e-14);
  EXPECT_TRUE(rp.covers);
  EXPECT_FALSE(rp.degenerate);
  EXPECT_NEAR(rp.far_bound, rp.d, 1e-15);
  EXPECT_TRUE(region_parameters(256, 10, 0.125, 1.0, 1e6, 0.0).degenerate);
  EXPECT_THROW(region_parameters(256, 10, 0.2, 1.0, 0.0, 0.0), std::invalid_argument);
  EXPECT_THROW(region_parameters(256, 10, 0.0, 1.0, 0.0, 0.0), std::invalid_argument);
}

TEST(ScalarInequalities, PointExamples) {
  EXPECT_EQ(std::pow(std::sin(0.0), 3) + std::pow(std::cos(0.0), 3) - 1.0, 0.0);
  const double x = std::numbers::pi / 4.0;
  EXPECT_NEAR(std::pow(std::sin(x), 3) + std::pow(std::cos(x), 3), std::sqrt(2.0) / 2.0, 1e-15);
  EXPECT_LT(std::sqrt(2.0) / 2.0, 1.0 - 0.15 * x * x);
  const double th = (std::sqrt(2.0) - 1.0) / 3.0;
  EXPECT_NEAR(9.0 * th * th + 6.0 * th - 1.0, 0.0, 1e-12);
}

TEST(ScalarInequalities, GridReport) {
  const ScalarInequalityReport rep = scalar_inequality_checks(100000);
  EXPECT_EQ(rep.cubic_sum.violations, 0);
  EXPECT_EQ(rep.hessian_sign.violations, 0);
  // The quartic gap x²(0.875x² + x − 1.35) is ≤ 0 only up to the positive root
  // of 0.875x² + x − 1.35, i.e. (√2290 − 20)/35; the stated interval is twice that.
  const double root = (-1.0 + std::sqrt(1.0 + 4.0 * 0.875 * 1.35)) / (2.0 * 0.875);
  EXPECT_NEAR(rep.quartic_root, root, 1e-14);
  EXPECT_NEAR(rep.quartic.hi, 2.0 * root, 1e-14);
  ASSERT_TRUE(rep.quartic.first_offender.has_value());
  EXPECT_GT(*rep.quartic.first_offender, root);
  EXPECT_LT(*rep.quartic.first_offender, root + 2.0 * root / 100000.0 + 1e-12);
  EXPECT_NEAR(double(rep.quartic.violations), 50000.0, 2.0);
  EXPECT_THROW(scalar_inequality_checks(999), std::invalid_argument);
}

TEST(SpectralBounds, TrivialCases) {
  const SpectralBoundReport orth = spectral_bound_checks(orthonormal_set(6, 4, 2), 0.125, 0.0);
  EXPECT_NEAR(orth.tensor_norm, 1.0, 1e-10);
  for (double x : orth.norm_23) EXPECT_NEAR(x, 1.0, 1e-8);
  for (double x : orth.norm_24) EXPECT_NEAR(x, 1.0, 1e-8);
  const SpectralBoundReport one = spectral_bound_checks(random_factor_set(5, 1, 1), 0.125, 0.0);
  EXPECT_NEAR(one.tensor_norm, 1.0, 1e-12);
  EXPECT_NEAR(one.chain_rhs, 1.0, 1e-10);
  EXPECT_TRUE(one.chain_ok);
}

TEST(SpectralBounds, ChainInequalityOvercomplete) {
  const FactorSet fs = random_factor_set(50, 60, 7);
  const SpectralBoundReport rep = spectral_bound_checks(fs, 0.125, assumption_report(fs).implied_tau);
  EXPECT_TRUE(rep.chain_ok);
  EXPECT_LE(rep.tensor_norm, rep.chain_rhs + 1e-6);
}

TEST(CertificateJson, Fields) {
  const FactorSet fs = random_factor_set(4, 2, 1);
  const Certificate cert = solve_certificate_direct(fs);
  const auto j = to_json(cert);
  EXPECT_EQ(j.at("method"), "direct");
  VerifyOptions opt;
  opt.samples = 200;
  opt.ascent_restarts = 2;
  const auto jr = to_json(verify_certificate(cert, fs, opt));
  EXPECT_TRUE(jr.contains("interp_err"));
  EXPECT_TRUE(jr.contains("boundedness_max"));
}
