#pragma once

#include <r4/estimators.hpp>
#include <r4/kernels.hpp>
#include <r4/linalg.hpp>
#include <r4/types.hpp>

#include <cmath>
#include <string>

namespace r4 {

template <typename Scalar>
struct RiskReport {
    Scalar empirical_risk = 0;           ///< mean squared error only
    Scalar regularized_risk = 0;         ///< plus γ‖Ĝ‖²_HS
    Scalar optimal_regularized_risk = 0;
    Scalar gap = 0;                      ///< regularized_risk − optimal
};

enum class BoundTheorem { CorrelatedSketch, IsotropicSketch };

inline std::string_view to_string(BoundTheorem t) {
    return t == BoundTheorem::CorrelatedSketch ? "correlated" : "isotropic";
}

struct BoundReport {
    double a_r = 0;
    double b_r = 0;
    double bound = 0;
    BoundTheorem theorem = BoundTheorem::CorrelatedSketch;
    int r = 0;
    int s = 0;
    int p = 0;
    double norm_L = 0;  ///< only meaningful for the isotropic bound
};

namespace detail {

/// Square-root factors of a PSD matrix from one symmetric eigendecomposition.
template <typename Scalar>
struct PsdFactors {
    Matrix<Scalar> vectors;
    Vector<Scalar> values;  ///< clamped: entries below n·ε·λ_max set to 0
};

template <typename Scalar>
PsdFactors<Scalar> psd_factors(const Matrix<Scalar>& A, const char* name) {
    const SymEig<Scalar> e = sym_eig_descending(A);
    const Eigen::Index n = A.rows();
    const Scalar lmax = std::max(e.values(0), Scalar(0));
    if (e.values(n - 1) < -Scalar(1e-10) * std::max(Scalar(1), lmax))
        throw NumericalError(std::string(name) + " is not positive semi-definite (smallest eigenvalue " +
                             std::to_string(static_cast<double>(e.values(n - 1))) + ")");
    const Scalar cut = Scalar(n) * machine_epsilon<Scalar>() * lmax;
    Vector<Scalar> vals = e.values;
    for (Eigen::Index i = 0; i < n; ++i)
        if (vals(i) <= cut) vals(i) = Scalar(0);
    return {e.vectors, vals};
}

template <typename Scalar>
Matrix<Scalar> apply_spectral(const PsdFactors<Scalar>& f, const Vector<Scalar>& diag) {
    return f.vectors * diag.asDiagonal() * f.vectors.transpose();
}

} // namespace detail

/// B = K^{1/2} K_γ^{-1/2} L^{1/2}, whose singular values are those of Ĉ_γ^{-1/2}Ĉ_XY.
template <typename Scalar>
Matrix<Scalar> lemma_matrix_B(const GramBundle<Scalar>& g, Scalar gamma) {
    g.validate_shapes();
    if (!(gamma > Scalar(0))) throw InputError("gamma must be positive");
    const auto fK = detail::psd_factors(g.K, "K");
    const auto fL = detail::psd_factors(g.L, "L");
    const Vector<Scalar> dK = (fK.values.array() / (fK.values.array() + gamma)).sqrt().matrix();
    const Vector<Scalar> dL = fL.values.cwiseSqrt();
    return detail::apply_spectral(fK, dK) * detail::apply_spectral(fL, dL);
}

template <typename Scalar>
SingularSpectrum<Scalar> singular_spectrum(const GramBundle<Scalar>& g, Scalar gamma) {
    return singular_values(lemma_matrix_B(g, gamma));
}

/// Σ_{i≤r} σ_i² removed from tr(L).
template <typename Scalar>
Scalar optimal_risk(Scalar trace_L, const SingularSpectrum<Scalar>& sigma, Eigen::Index r) {
    if (r < 0 || r > sigma.size()) throw InputError("optimal_risk: r must lie in [0, n]");
    return trace_L - sigma.sigmas.head(r).squaredNorm();
}

template <typename Scalar>
Scalar optimal_risk(const GramBundle<Scalar>& g, Scalar gamma, Eigen::Index r) {
    return optimal_risk(g.L.trace(), singular_spectrum(g, gamma), r);
}

/// Empirical risk of a dual estimator from Gram matrices only.
template <typename Scalar>
Scalar empirical_risk_dual(const Matrix<Scalar>& Ur, const Matrix<Scalar>& Vr, Scalar gamma, const GramBundle<Scalar>& g,
                           bool include_regularizer) {
    g.validate_shapes();
    const Eigen::Index n = g.n();
    if (Ur.rows() != n || Vr.rows() != n || Ur.cols() != Vr.cols())
        throw InputError("empirical_risk_dual: Ur and Vr must both be n x r");
    const Matrix<Scalar> KV = g.K * Vr;
    const Matrix<Scalar> LU = g.L * Ur;
    const Matrix<Scalar> A = Ur.transpose() * LU;  // Urᵀ L Ur
    Scalar risk = g.L.trace() - Scalar(2) * KV.cwiseProduct(LU).sum() + (A * (KV.transpose() * KV)).trace();
    if (include_regularizer) risk += gamma * (A * (Vr.transpose() * KV)).trace();
    return risk;
}

template <typename Scalar>
Scalar empirical_risk_dual(const DualEstimator<Scalar>& est, const GramBundle<Scalar>& g, bool include_regularizer) {
    return empirical_risk_dual(est.Ur, est.Vr, est.gamma, g, include_regularizer);
}

/**
 * Direct empirical risk (1/n)‖Sy − Sx Ĝᵀ‖²_F (+ γ‖Ĝ‖²_F) of a primal estimator,
 * cross-checked against tr(Ĉ_Y) − ‖Ĉ_YX Ĉ_γ^{-1/2}‖² + ‖Ĝ Ĉ_γ^{1/2} − Ĉ_YX Ĉ_γ^{-1/2}‖².
 */
template <typename Scalar>
Scalar empirical_risk_primal(const PrimalEstimator<Scalar>& est, const Matrix<Scalar>& Sx, const Matrix<Scalar>& Sy,
                             bool include_regularizer) {
    const Eigen::Index n = Sx.rows();
    if (Sy.rows() != n || n == 0) throw InputError("empirical_risk_primal: Sx and Sy must have the same rows");
    if (Sx.cols() != est.Vr.rows()) throw InputError("empirical_risk_primal: feature dimension mismatch");
    const Scalar inv_n = Scalar(1) / Scalar(n);
    const Matrix<Scalar> Cxy = inv_n * (Sx.transpose() * Sy);
    const Matrix<Scalar> G = Cxy.transpose() * est.Vr * est.Vr.transpose();  // d_G x d_H
    const Scalar mse = inv_n * (Sy - Sx * G.transpose()).squaredNorm();
    const Scalar reg = est.gamma * G.squaredNorm();
    const Scalar direct = mse + reg;

    Matrix<Scalar> Cx = inv_n * (Sx.transpose() * Sx);
    Cx = (Cx + Cx.transpose()) / Scalar(2);
    const SymEig<Scalar> e = sym_eig_descending(Cx);
    const Vector<Scalar> shifted = (e.values.array().max(Scalar(0)) + est.gamma).matrix();
    const Matrix<Scalar> half = e.vectors * shifted.cwiseSqrt().asDiagonal() * e.vectors.transpose();
    const Matrix<Scalar> inv_half = e.vectors * shifted.cwiseSqrt().cwiseInverse().asDiagonal() * e.vectors.transpose();
    const Matrix<Scalar> YXi = Cxy.transpose() * inv_half;
    const Scalar trace_Cy = inv_n * Sy.squaredNorm();
    const Scalar decomposed = trace_Cy - YXi.squaredNorm() + (G * half - YXi).squaredNorm();
    const Scalar scale = std::max({trace_Cy, std::abs(direct), std::numeric_limits<Scalar>::min()});
    if (std::abs(direct - decomposed) > Scalar(1e-8) * scale)
        throw NumericalError("empirical_risk_primal: risk decomposition mismatch (" + std::to_string(double(direct)) +
                             " vs " + std::to_string(double(decomposed)) + ")");
    return include_regularizer ? direct : mse;
}

template <typename Scalar>
RiskReport<Scalar> make_risk_report(const DualEstimator<Scalar>& est, const GramBundle<Scalar>& g, Scalar optimal) {
    RiskReport<Scalar> rep;
    rep.empirical_risk = empirical_risk_dual(est, g, false);
    rep.regularized_risk = empirical_risk_dual(est, g, true);
    rep.optimal_regularized_risk = optimal;
    rep.gap = rep.regularized_risk - optimal;
    return rep;
}

/// Largest eigenvalue of a symmetric PSD matrix.
template <typename Scalar>
Scalar spectral_norm_psd(const Matrix<Scalar>& L) {
    if (L.rows() == 0 || L.rows() != L.cols()) throw InputError("spectral_norm_psd: square non-empty matrix required");
    Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(L, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw NumericalError("spectral_norm_psd: eigensolver failed");
    return std::max(Scalar(0), es.eigenvalues()(L.rows() - 1));
}

/**
 * ‖(I − P_M)⟦B⟧_r‖²_F with B = K^{1/2}K_γ^{-1/2}L^{1/2}, Y = K_γ^{-1/2}K^{1/2}Ω and
 * M = (BBᵀ)^p Y. The range of M is built by repeated orthonormalization.
 */
template <typename Scalar>
Scalar rangefinder_residual(const GramBundle<Scalar>& g, Scalar gamma, const Matrix<Scalar>& omega, int p, Eigen::Index r) {
    g.validate_shapes();
    if (omega.rows() != g.n()) throw InputError("rangefinder_residual: sketch must have n rows");
    if (p < 0) throw InputError("rangefinder_residual: p must be >= 0");
    const auto fK = detail::psd_factors(g.K, "K");
    const auto fL = detail::psd_factors(g.L, "L");
    const Vector<Scalar> dK = (fK.values.array() / (fK.values.array() + gamma)).sqrt().matrix();
    const Matrix<Scalar> KhKgih = detail::apply_spectral(fK, dK);  // K^{1/2}K_γ^{-1/2}, symmetric
    const Matrix<Scalar> B = KhKgih * detail::apply_spectral(fL, Vector<Scalar>(fL.values.cwiseSqrt()));
    Matrix<Scalar> Q = qr_econ(KhKgih * omega);
    const Matrix<Scalar> BBt = B * B.transpose();
    for (int j = 0; j < p && Q.cols() > 0; ++j) Q = qr_econ(BBt * Q);
    const TruncatedSvd<Scalar> svd = truncated_svd(B, r);
    const Matrix<Scalar> Br = svd.U * svd.sigma.sigmas.asDiagonal() * svd.V.transpose();
    if (Q.cols() == 0) return Br.squaredNorm();
    return (Br - Q * (Q.transpose() * Br)).squaredNorm();
}

namespace detail {

inline void check_bound_args(const Vector<double>& sigma, int r, int s, int p) {
    if (s < 2) throw InputError("bound: oversampling s must be >= 2");
    if (p < 1) throw InputError("bound: power p must be >= 1");
    if (r < 1 || r > sigma.size()) throw InputError("bound: r must lie in [1, len(sigma)]");
}

/// Copy of the spectrum with entries below len·ε·σ₁ set to zero.
inline Vector<double> cut_spectrum(const Vector<double>& sigma) {
    Vector<double> out = sigma;
    const double cut = double(sigma.size()) * machine_epsilon<double>() * (sigma.size() ? sigma(0) : 0.0);
    for (Eigen::Index i = 0; i < out.size(); ++i)
        if (out(i) < cut) out(i) = 0.0;
    return out;
}

inline double combine_bound(double a, double b, int r, double sigma1) {
    return std::min(double(r) * a / (double(r) + a) * sigma1 * sigma1, b);
}

} // namespace detail

/// Expected risk gap bound for sketches with N(0, L) columns.
template <typename Scalar>
BoundReport bound_thm_correlated(const SingularSpectrum<Scalar>& spectrum, int r, int s, int p) {
    spectrum.validate();
    const Vector<double> raw = spectrum.sigmas.template cast<double>();
    detail::check_bound_args(raw, r, s, p);
    const Vector<double> sg = detail::cut_spectrum(raw);
    BoundReport rep;
    rep.theorem = BoundTheorem::CorrelatedSketch;
    rep.r = r;
    rep.s = s;
    rep.p = p;
    const double sr = sg(r - 1);
    if (!(sr > 0.0)) throw InputError("bound: sigma_r is zero (r exceeds the rank of B)");
    const double next = r < sg.size() ? sg(r) : 0.0;
    if (next == 0.0) return rep;

    double tail = 0.0, head_a = 0.0, head_b = 0.0;
    for (Eigen::Index i = r; i < sg.size(); ++i) tail += std::pow(sg(i) / next, 4 * p + 2);
    for (Eigen::Index i = 0; i < r; ++i) {
        head_a += std::pow(next / sg(i), 4 * p + 2);
        head_b += std::pow(next / sg(i), 4 * p);
    }
    rep.a_r = tail * head_a / double(s - 1);
    rep.b_r = next * next / double(s - 1) * tail * head_b;
    rep.bound = detail::combine_bound(rep.a_r, rep.b_r, r, sg(0));
    return rep;
}

/// Expected risk gap bound for sketches with N(0, I) columns; norm_L = λ_max(L).
template <typename Scalar>
BoundReport bound_thm_isotropic(const SingularSpectrum<Scalar>& spectrum, double norm_L, int r, int s, int p) {
    spectrum.validate();
    const Vector<double> raw = spectrum.sigmas.template cast<double>();
    detail::check_bound_args(raw, r, s, p);
    if (!(norm_L >= 0.0) || !std::isfinite(norm_L)) throw InputError("bound: norm_L must be finite and >= 0");
    const Vector<double> sg = detail::cut_spectrum(raw);
    BoundReport rep;
    rep.theorem = BoundTheorem::IsotropicSketch;
    rep.r = r;
    rep.s = s;
    rep.p = p;
    rep.norm_L = norm_L;
    const double sr = sg(r - 1);
    if (!(sr > 0.0)) throw InputError("bound: sigma_r is zero (r exceeds the rank of B)");
    const double next = r < sg.size() ? sg(r) : 0.0;
    if (next == 0.0) return rep;

    double tail = 0.0, head_a = 0.0, head_b = 0.0;
    for (Eigen::Index i = r; i < sg.size(); ++i) tail += std::pow(sg(i) / sr, 4 * p);
    for (Eigen::Index i = 0; i < r; ++i) {
        head_a += std::pow(sr / sg(i), 4 * p + 2);
        head_b += std::pow(sr / sg(i), 4 * p);
    }
    const double s1 = double(s - 1);
    rep.a_r = norm_L / (sr * sr) * tail * (1.0 + head_a / s1);
    rep.b_r = norm_L * tail * (sg(0) * sg(0) / (sr * sr) + head_b / s1);
    rep.bound = detail::combine_bound(rep.a_r, rep.b_r, r, sg(0));
    return rep;
}

} // namespace r4
