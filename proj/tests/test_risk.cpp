#include <r4/estimators.hpp>
#include <r4/risk.hpp>
#include <r4/synth.hpp>

#include <gtest/gtest.h>

#include <memory>
#include <random>

using namespace r4;

namespace {

MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    CounterRng rng(seed);
    std::normal_distribution<double> nd;
    MatrixXd M(rows, cols);
    for (Eigen::Index i = 0; i < M.size(); ++i) M.data()[i] = nd(rng);
    return M;
}

SingularSpectrum<double> spectrum_of(std::initializer_list<double> values) {
    SingularSpectrum<double> s;
    s.sigmas = VectorXd(static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (double v : values) s.sigmas(i++) = v;
    return s;
}

SketchSpec sketch_spec(int r, int s, int p, std::uint64_t seed, SketchDistribution dist) {
    SketchSpec spec;
    spec.rank = r;
    spec.oversampling = s;
    spec.power = p;
    spec.distribution = dist;
    spec.seed = seed;
    return spec;
}

struct Data {
    MatrixXd X, Y;
    GramBundle<double> g;
};

Data linear_data(int n, int d, std::uint64_t seed, double noise = 0.3) {
    Data D;
    D.X = normal_matrix(n, d, seed);
    VectorXd decay(d);
    for (int i = 0; i < d; ++i) decay(i) = std::pow(0.7, i);
    D.Y = D.X * normal_matrix(d, d, seed + 1) * decay.asDiagonal() + noise * normal_matrix(n, d, seed + 2);
    D.g = make_gram_bundle(KernelSpec::linear(), D.X, KernelSpec::linear(), D.Y);
    return D;
}

MatrixXd inv_sqrt_shifted(const MatrixXd& C, double gamma) {
    MatrixXd Cg = C;
    Cg.diagonal().array() += gamma;
    return Eigen::SelfAdjointEigenSolver<MatrixXd>(Cg).operatorInverseSqrt();
}

} // namespace

TEST(SingularSpectrum, HalfIdentity) {
    GramBundle<double> g;
    g.K = g.L = 0.5 * MatrixXd::Identity(2, 2);
    const MatrixXd B = lemma_matrix_B(g, 0.5);
    EXPECT_LE((B - 0.5 * MatrixXd::Identity(2, 2)).norm(), 1e-15);
    const auto s = singular_spectrum(g, 0.5);
    EXPECT_NEAR(s[0], 0.5, 1e-15);
    EXPECT_NEAR(s[1], 0.5, 1e-15);
}

TEST(SingularSpectrum, ZeroOutputs) {
    GramBundle<double> g;
    g.K = gram(KernelSpec::gaussian(1.0), normal_matrix(6, 2, 1));
    g.L = MatrixXd::Zero(6, 6);
    EXPECT_EQ(singular_spectrum(g, 1e-3).sigmas.norm(), 0.0);
    EXPECT_EQ(optimal_risk(g, 1e-3, 2), 0.0);
}

TEST(SingularSpectrum, MatchesNonsymmetricGepOracle) {
    const MatrixXd X = normal_matrix(20, 3, 2), Y = normal_matrix(20, 2, 3);
    const auto g = make_gram_bundle(KernelSpec::gaussian(1.2), X, KernelSpec::gaussian(0.8), Y);
    const double gamma = 1e-2;
    MatrixXd Kg = g.K;
    Kg.diagonal().array() += gamma;
    const auto oracle = dense_nonsym_eig(MatrixXd(Kg.inverse() * g.L * g.K));
    const auto s = singular_spectrum(g, gamma);
    for (int i = 0; i < 20; ++i) EXPECT_NEAR(s[i] * s[i], oracle.values(i).real(), 1e-9);
}

TEST(SingularSpectrum, RejectsIndefiniteGram) {
    GramBundle<double> g;
    g.K = MatrixXd::Identity(2, 2);
    g.L = -MatrixXd::Identity(2, 2);
    EXPECT_THROW(singular_spectrum(g, 1e-3), NumericalError);
    EXPECT_THROW(singular_spectrum(g, 0.0), InputError);
}

TEST(SingularSpectrum, LemmaNormIdentity) {
    // ‖⟦Ĉ_γ^{-1/2}Ĉ_XY⟧_r‖² from covariances equals ‖⟦B⟧_r‖² from Gram matrices.
    const Data D = linear_data(40, 6, 5);
    const double gamma = 1e-3;
    const double n = 40.0;
    const MatrixXd Cx = D.X.transpose() * D.X / n, Cxy = D.X.transpose() * D.Y / n;
    const VectorXd op = Eigen::BDCSVD<MatrixXd>(inv_sqrt_shifted(Cx, gamma) * Cxy).singularValues();
    const auto s = singular_spectrum(D.g, gamma);
    for (int r = 1; r <= 6; ++r) EXPECT_NEAR(s.sigmas.head(r).squaredNorm(), op.head(r).squaredNorm(), 1e-8);
    EXPECT_LE(s.sigmas.tail(34).norm(), 1e-7);
}

TEST(OptimalRisk, Examples) {
    const Data D = linear_data(15, 3, 7);
    const auto s = singular_spectrum(D.g, 1e-4);
    EXPECT_NEAR(optimal_risk(D.g.L.trace(), s, 15), D.g.L.trace() - s.sigmas.squaredNorm(), 1e-15);
    EXPECT_THROW(optimal_risk(D.g.L.trace(), s, 16), InputError);
}

TEST(OptimalRisk, MatchesExactDualOnSigmoidSystem) {
    SyntheticLinearConfig cfg;
    cfg.n_train = 1000;
    cfg.n_test = 1;
    cfg.seed = 1;
    const auto data = synth_linear(cfg);
    const auto g = make_gram_bundle(KernelSpec::linear(), data.Xtrain, KernelSpec::linear(), data.Ytrain);
    const double gamma = 1e-6;
    const double opt = optimal_risk(g, gamma, 10);
    const auto est = fit_dual_exact(g, gamma, 10);
    EXPECT_NEAR(empirical_risk_dual(est, g, true), opt, 1e-7 * opt);
}

TEST(EmpiricalRiskDual, ZeroEstimatorIsOutputEnergy) {
    const Data D = linear_data(25, 4, 9);
    const MatrixXd Z = MatrixXd::Zero(25, 2);
    EXPECT_EQ(empirical_risk_dual(Z, Z, 1e-3, D.g, true), D.g.L.trace());
    EXPECT_EQ(empirical_risk_dual(Z, Z, 1e-3, D.g, false), D.g.L.trace());
    EXPECT_THROW(empirical_risk_dual(Z, MatrixXd(MatrixXd::Zero(25, 3)), 1e-3, D.g, true), InputError);
}

TEST(EmpiricalRiskDual, MatchesExplicitMatrixRisk) {
    const Data D = linear_data(40, 4, 11);
    const double gamma = 1e-2;
    // Any coefficients work; use a randomized fit to stay away from the optimum.
    const SketchSpec spec = sketch_spec(2, 2, 1, 3, SketchDistribution::Isotropic);
    const auto est = fit_dual_r4(D.g, gamma, spec, gaussian_sketch<double>(40, spec));
    const MatrixXd G = D.Y.transpose() * est.Ur * est.Vr.transpose() * D.X / 40.0;
    const double mse = (D.Y - D.X * G.transpose()).squaredNorm() / 40.0;
    EXPECT_NEAR(empirical_risk_dual(est, D.g, false), mse, 1e-9 * mse);
    const double reg = mse + gamma * G.squaredNorm();
    EXPECT_NEAR(empirical_risk_dual(est, D.g, true), reg, 1e-9 * reg);
}

TEST(EmpiricalRiskDual, ExactEstimatorIsOptimal) {
    const Data D = linear_data(50, 5, 13);
    const auto est = fit_dual_exact(D.g, 1e-4, 3);
    const double opt = optimal_risk(D.g, 1e-4, 3);
    EXPECT_NEAR(empirical_risk_dual(est, D.g, true), opt, 1e-8);
    const auto rep = make_risk_report(est, D.g, opt);
    EXPECT_NEAR(rep.gap, 0.0, 1e-8);
    EXPECT_LE(rep.empirical_risk, rep.regularized_risk);
}

TEST(EmpiricalRiskPrimal, Examples) {
    const Data D = linear_data(60, 5, 15);
    const double gamma = 1e-3;
    PrimalEstimator<double> zero;
    zero.Vr = MatrixXd::Zero(5, 2);
    zero.gamma = gamma;
    zero.rank = 2;
    EXPECT_NEAR(empirical_risk_primal(zero, D.X, D.Y, true), D.Y.squaredNorm() / 60.0, 1e-12);

    const auto problem = PrimalProblem<double>::from_features(D.X, D.Y);
    const auto exact = fit_primal_exact(problem, gamma, 2);
    const double n = 60.0;
    const MatrixXd Cx = D.X.transpose() * D.X / n, Cxy = D.X.transpose() * D.Y / n;
    const VectorXd sv = Eigen::BDCSVD<MatrixXd>(inv_sqrt_shifted(Cx, gamma) * Cxy).singularValues();
    const double opt = D.Y.squaredNorm() / n - sv.head(2).squaredNorm();
    EXPECT_NEAR(empirical_risk_primal(exact, D.X, D.Y, true), opt, 1e-8);

    // Arbitrary rank-2 estimator: the internal decomposition check must hold.
    PrimalEstimator<double> rnd = exact;
    rnd.Vr = normal_matrix(5, 2, 16);
    const MatrixXd G = Cxy.transpose() * rnd.Vr * rnd.Vr.transpose();
    const double direct = (D.Y - D.X * G.transpose()).squaredNorm() / n + gamma * G.squaredNorm();
    EXPECT_NEAR(empirical_risk_primal(rnd, D.X, D.Y, true), direct, 1e-8 * direct);
}

TEST(Bounds, CorrelatedHandValue) {
    const auto rep = bound_thm_correlated(spectrum_of({1.0, 0.5}), 1, 2, 1);
    EXPECT_NEAR(rep.a_r, 0.015625, 1e-15);
    EXPECT_NEAR(rep.b_r, 0.015625, 1e-15);
    EXPECT_NEAR(rep.bound, 0.015625 / 1.015625, 1e-15);
    EXPECT_NEAR(rep.bound, 0.0153846, 1e-7);
    EXPECT_EQ(rep.theorem, BoundTheorem::CorrelatedSketch);
}

TEST(Bounds, IsotropicHandValue) {
    const auto rep = bound_thm_isotropic(spectrum_of({1.0, 0.5}), 1.0, 1, 2, 1);
    EXPECT_NEAR(rep.a_r, 0.125, 1e-15);
    EXPECT_NEAR(rep.b_r, 0.125, 1e-15);
    EXPECT_NEAR(rep.bound, 0.125 / 1.125, 1e-15);
    EXPECT_EQ(to_string(rep.theorem), "isotropic");
}

TEST(Bounds, ZeroWhenExactlyLowRank) {
    EXPECT_EQ(bound_thm_correlated(spectrum_of({1.0, 0.0}), 1, 2, 1).bound, 0.0);
    EXPECT_EQ(bound_thm_isotropic(spectrum_of({1.0, 0.0}), 2.0, 1, 2, 1).bound, 0.0);
    EXPECT_EQ(bound_thm_correlated(spectrum_of({1.0, 0.5}), 2, 2, 1).bound, 0.0);
}

TEST(Bounds, RejectsBadArguments) {
    const auto s = spectrum_of({1.0, 0.5, 0.0});
    EXPECT_THROW(bound_thm_correlated(s, 3, 2, 1), InputError);
    EXPECT_THROW(bound_thm_correlated(s, 0, 2, 1), InputError);
    EXPECT_THROW(bound_thm_correlated(s, 1, 1, 1), InputError);
    EXPECT_THROW(bound_thm_isotropic(s, 1.0, 1, 2, 0), InputError);
    EXPECT_THROW(bound_thm_isotropic(s, -1.0, 1, 2, 1), InputError);
    EXPECT_THROW(bound_thm_correlated(spectrum_of({0.5, 1.0}), 1, 2, 1), InputError);
}

TEST(Bounds, SigmoidSpectrumFiniteAndMonotone) {
    const VectorXd sig = sigmoid_spectrum(100, 10, 5.0);
    SingularSpectrum<double> s{sig};
    const auto iso = bound_thm_isotropic(s, 1.0, 5, 5, 1);
    EXPECT_TRUE(std::isfinite(iso.bound));
    EXPECT_GE(iso.bound, 0.0);
    for (int r : {1, 5, 15}) {
        for (int p = 1; p < 4; ++p) {
            EXPECT_LT(bound_thm_correlated(s, r, 5, p + 1).bound, bound_thm_correlated(s, r, 5, p).bound);
            EXPECT_LT(bound_thm_isotropic(s, 1.0, r, 5, p + 1).bound, bound_thm_isotropic(s, 1.0, r, 5, p).bound);
        }
        for (int o : {2, 5, 10}) {
            EXPECT_LT(bound_thm_correlated(s, r, o + 1, 1).bound, bound_thm_correlated(s, r, o, 1).bound);
            EXPECT_LE(bound_thm_isotropic(s, 1.0, r, o + 1, 1).bound, bound_thm_isotropic(s, 1.0, r, o, 1).bound);
        }
    }
}

TEST(Bounds, LinearDecayRateInPower) {
    // Trailing spectrum dominated by σ_{r+1}: the ratio approaches (σ_{r+1}/σ_r)⁴.
    const auto s = spectrum_of({1.0, 0.9, 0.6, 0.05, 0.01});
    const double rate = std::pow(0.6 / 0.9, 4);
    for (int p = 1; p < 6; ++p) {
        const double ratio = bound_thm_correlated(s, 2, 4, p + 1).bound / bound_thm_correlated(s, 2, 4, p).bound;
        EXPECT_LE(ratio, rate * (1.0 + 1e-12));
    }
}

TEST(Rangefinder, PerSeedGapInequality) {
    for (std::uint64_t inst = 0; inst < 4; ++inst) {
        const Data D = linear_data(60, 12, 100 + 10 * inst);
        const double gamma = 1e-3;
        const double opt = optimal_risk(D.g, gamma, 3);
        for (auto dist : {SketchDistribution::Isotropic, SketchDistribution::OutputCovariance})
            for (int p : {1, 2})
                for (std::uint64_t seed = 0; seed < 10; ++seed) {
                    const SketchSpec spec = sketch_spec(3, 2, p, seed, dist);
                    const MatrixXd omega = gaussian_sketch<double>(60, spec, &D.g.L);
                    const auto est = fit_dual_r4(D.g, gamma, spec, omega);
                    const double gap = empirical_risk_dual(est, D.g, true) - opt;
                    EXPECT_LE(gap, rangefinder_residual(D.g, gamma, omega, p, 3) + 1e-8);
                    EXPECT_GE(gap, -1e-8);
                }
    }
}

TEST(Rangefinder, FullSketchHasNoResidual) {
    const Data D = linear_data(20, 4, 17);
    const MatrixXd omega = MatrixXd::Identity(20, 20);
    EXPECT_LE(rangefinder_residual(D.g, 1e-3, omega, 1, 2), 1e-12);
    const double none = rangefinder_residual(D.g, 1e-3, MatrixXd(MatrixXd::Zero(20, 3)), 1, 2);
    EXPECT_NEAR(none, singular_spectrum(D.g, 1e-3).sigmas.head(2).squaredNorm(), 1e-12);
}

TEST(Bounds, MeanGapWithinBoundsOverSeeds) {
    const Data D = linear_data(80, 15, 300, 0.5);
    const double gamma = 1e-4;
    const int r = 3, s = 3, p = 1, m = 200;
    const auto spectrum = singular_spectrum(D.g, gamma);
    const double opt = optimal_risk(D.g.L.trace(), spectrum, r);
    const MatrixXd factor = pivoted_cholesky(D.g.L);
    const RegularizedDual<double> sys(D.g, gamma);
    for (auto dist : {SketchDistribution::Isotropic, SketchDistribution::OutputCovariance}) {
        double sum = 0, sum2 = 0;
        for (int seed = 0; seed < m; ++seed) {
            const SketchSpec spec = sketch_spec(r, s, p, 1000 + seed, dist);
            const MatrixXd omega = dist == SketchDistribution::Isotropic ? gaussian_sketch<double>(80, spec)
                                                                          : gaussian_sketch_from_factor(factor, spec);
            const double gap = empirical_risk_dual(fit_dual_r4(sys, spec, omega), D.g, true) - opt;
            sum += gap;
            sum2 += gap * gap;
        }
        const double mean = sum / m, sd = std::sqrt(std::max(0.0, sum2 / m - mean * mean));
        const double bound = dist == SketchDistribution::Isotropic
                                 ? bound_thm_isotropic(spectrum, spectral_norm_psd(D.g.L), r, s, p).bound
                                 : bound_thm_correlated(spectrum, r, s, p).bound;
        EXPECT_LE(mean, bound + 3.0 * sd / std::sqrt(double(m))) << "sketch " << int(dist);
    }
}
