#pragma once

#include <r4/kernels.hpp>
#include <r4/linalg.hpp>
#include <r4/types.hpp>

#include <memory>
#include <string>

namespace r4 {

// ---------------------------------------------------------------------------
// Primal (finite-dimensional feature space)
// ---------------------------------------------------------------------------

/// Covariances of a finite-dimensional problem with features in rows: Sx is n x d_H, Sy is n x d_G.
template <typename Scalar>
struct PrimalProblem {
    Matrix<Scalar> Cx;   ///< Ĉ_X = SxᵀSx / n
    Matrix<Scalar> Cxy;  ///< Ĉ_XY = SxᵀSy / n, empty when built from an output Gram
    Matrix<Scalar> N;    ///< Ĉ_XY Ĉ_XYᵀ = SxᵀL Sx / n
    Eigen::Index n = 0;

    template <typename DX, typename DY>
    static PrimalProblem from_features(const Eigen::MatrixBase<DX>& Sx, const Eigen::MatrixBase<DY>& Sy) {
        if (Sx.rows() != Sy.rows() || Sx.rows() == 0)
            throw InputError("primal problem: Sx and Sy must have the same, non-zero number of rows");
        PrimalProblem p;
        p.n = Sx.rows();
        const Scalar inv_n = Scalar(1) / Scalar(p.n);
        p.Cx = inv_n * (Sx.transpose() * Sx);
        p.Cxy = inv_n * (Sx.transpose() * Sy);
        p.N = p.Cxy * p.Cxy.transpose();
        p.Cx = (p.Cx + p.Cx.transpose()) / Scalar(2);
        p.N = (p.N + p.N.transpose()) / Scalar(2);
        return p;
    }

    /// Output side given only through the 1/n-scaled Gram L (dim G may be infinite).
    template <typename DX, typename DL>
    static PrimalProblem from_output_gram(const Eigen::MatrixBase<DX>& Sx, const Eigen::MatrixBase<DL>& L) {
        if (L.rows() != Sx.rows() || L.cols() != Sx.rows())
            throw InputError("primal problem: L must be n x n with n = rows(Sx)");
        PrimalProblem p;
        p.n = Sx.rows();
        const Scalar inv_n = Scalar(1) / Scalar(p.n);
        p.Cx = inv_n * (Sx.transpose() * Sx);
        p.N = inv_n * (Sx.transpose() * L * Sx);
        p.Cx = (p.Cx + p.Cx.transpose()) / Scalar(2);
        p.N = (p.N + p.N.transpose()) / Scalar(2);
        return p;
    }

    Eigen::Index dim() const { return Cx.rows(); }
};

/// Rank-r operator Ĝ = Ĉ_XYᵀ Vr Vrᵀ.
template <typename Scalar>
struct PrimalEstimator {
    Matrix<Scalar> Vr;   ///< d_H x r
    Matrix<Scalar> Cxy;  ///< d_H x d_G (may be empty)
    Scalar gamma = 0;
    Eigen::Index rank = 0;

    /// Ĝ as a d_G x d_H matrix.
    Matrix<Scalar> operator_matrix() const {
        if (Cxy.size() == 0) throw UnsupportedOperation("primal estimator was fitted without output features");
        return Cxy.transpose() * Vr * Vr.transpose();
    }

    /// Rows of Xnew are feature vectors φ(x); returns rows Ĝφ(x).
    template <typename Derived>
    Matrix<Scalar> predict(const Eigen::MatrixBase<Derived>& Xnew) const {
        if (Cxy.size() == 0) throw UnsupportedOperation("primal estimator was fitted without output features");
        if (Xnew.cols() != Vr.rows()) throw InputError("primal predict: feature dimension mismatch");
        return (Xnew * Vr) * (Vr.transpose() * Cxy);
    }
};

/// Exact reduced rank regression in primal form: leading eigenvectors of Ĉ_XYĈ_XYᵀ h = σ² Ĉ_γ h.
template <typename Scalar>
PrimalEstimator<Scalar> fit_primal_exact(const PrimalProblem<Scalar>& problem, Scalar gamma, Eigen::Index r) {
    if (!(gamma > Scalar(0))) throw InputError("fit_primal_exact: gamma must be positive");
    const Eigen::Index d = problem.dim();
    if (r < 1 || r > d) throw InputError("fit_primal_exact: rank must lie in [1, dim H]");
    Matrix<Scalar> Cg = problem.Cx;
    Cg.diagonal().array() += gamma;
    Eigen::GeneralizedSelfAdjointEigenSolver<Matrix<Scalar>> ges(problem.N, Cg, Eigen::ComputeEigenvectors | Eigen::Ax_lBx);
    if (ges.info() != Eigen::Success) throw NumericalError("fit_primal_exact: generalized eigensolver failed");
    const Vector<Scalar> vals = ges.eigenvalues().reverse();
    const Scalar tol = Scalar(d) * machine_epsilon<Scalar>() * std::max(vals(0), Scalar(0));
    if (!(vals(r - 1) > tol))
        throw InputError("fit_primal_exact: rank " + std::to_string(r) + " exceeds rank of the cross-covariance");
    PrimalEstimator<Scalar> est;
    est.Vr = ges.eigenvectors().rowwise().reverse().leftCols(r);
    // Eigen normalizes to hᵀ Ĉ_γ h = 1 already; renormalize against roundoff.
    for (Eigen::Index j = 0; j < r; ++j) est.Vr.col(j) /= std::sqrt(est.Vr.col(j).dot(Cg * est.Vr.col(j)));
    normalize_signs(est.Vr);
    est.Cxy = problem.Cxy;
    est.gamma = gamma;
    est.rank = r;
    return est;
}

/**
 * Randomized primal solver. `sketch` is the d_H x (r+s) starting matrix Ω;
 * p rounds of {solve Ĉ_γΨ = Ω, Ω ← NΨ, orthonormalize} precede a single
 * Rayleigh–Ritz step in the (r+s)-dimensional sketch space.
 */
template <typename Scalar>
PrimalEstimator<Scalar> fit_primal_r4(const PrimalProblem<Scalar>& problem, Scalar gamma, const SketchSpec& spec,
                                      const Matrix<Scalar>& sketch) {
    spec.validate();
    const Eigen::Index d = problem.dim();
    if (sketch.rows() != d || sketch.cols() != spec.columns())
        throw InputError("fit_primal_r4: sketch must be dim(H) x (r+s)");
    const ShiftedCholesky<Scalar> chol(problem.Cx, gamma);

    Matrix<Scalar> omega = sketch;
    Matrix<Scalar> psi;
    for (int j = 0; j < spec.power; ++j) {
        psi = chol.solve(omega);
        omega = problem.N * psi;
        omega = qr_econ(omega);
        if (omega.cols() == 0) throw NumericalError("fit_primal_r4: power iteration collapsed to the zero subspace");
    }
    psi = chol.solve(omega);
    Matrix<Scalar> F0 = psi.transpose() * omega;
    Matrix<Scalar> F1 = psi.transpose() * (problem.N * psi);
    F0 = (F0 + F0.transpose()) / Scalar(2);
    F1 = (F1 + F1.transpose()) / Scalar(2);
    if (F0.norm() == Scalar(0)) throw NumericalError("fit_primal_r4: power iteration collapsed (F0 is zero)");

    const GepResult<Scalar> gep = sym_gep(F1, F0, spec.rank);
    PrimalEstimator<Scalar> est;
    est.Vr = psi * gep.vectors;
    est.Cxy = problem.Cxy;
    est.gamma = gamma;
    est.rank = spec.rank;
    return est;
}

// ---------------------------------------------------------------------------
// Dual (kernel) form
// ---------------------------------------------------------------------------

/// What a dual estimator needs besides its coefficients to predict out of sample.
template <typename Scalar>
struct TrainingContext {
    KernelSpec input_kernel = KernelSpec::linear();
    KernelSpec output_kernel = KernelSpec::linear();
    std::shared_ptr<const Matrix<Scalar>> inputs;  ///< training X, n x d (shared, never copied)
};

/// Ĝ = Ẑ* Ur Vrᵀ Ŝ.
template <typename Scalar>
struct DualEstimator {
    Matrix<Scalar> Ur;  ///< n x r, equals K Vr
    Matrix<Scalar> Vr;  ///< n x r, VrᵀK K_γ Vr = I
    Scalar gamma = 0;
    Eigen::Index rank = 0;
    TrainingContext<Scalar> context;

    Eigen::Index n() const { return Vr.rows(); }
    Matrix<Scalar> coefficients() const { return Ur * Vr.transpose(); }
};

/// A Gram bundle together with the Cholesky factor of K + γI, reused across fits.
template <typename Scalar>
class RegularizedDual {
public:
    RegularizedDual(const GramBundle<Scalar>& grams, Scalar gamma) : grams_(&grams), chol_((grams.validate_shapes(), grams.K), gamma) {}

    const GramBundle<Scalar>& grams() const { return *grams_; }
    const ShiftedCholesky<Scalar>& chol() const { return chol_; }
    Scalar gamma() const { return chol_.gamma(); }
    Eigen::Index n() const { return grams_->n(); }

private:
    const GramBundle<Scalar>* grams_;
    ShiftedCholesky<Scalar> chol_;
};

enum class ExactDualMethod {
    Auto,      ///< Dense up to `dense_limit` samples, Subspace above
    Dense,     ///< two symmetric eigendecompositions, O(n³)
    Subspace   ///< block subspace iteration run to a residual tolerance
};

struct ExactDualOptions {
    ExactDualMethod method = ExactDualMethod::Auto;
    Eigen::Index dense_limit = 2500;
    double tolerance = 1e-9;  ///< relative residual of L K v = σ² K_γ v (Subspace)
    int max_iterations = 500;
    int block_extra = 20;
    std::uint64_t seed = 0x5eed;
};

namespace detail {

template <typename Scalar>
void normalize_dual(Matrix<Scalar>& V, const Matrix<Scalar>& K, Scalar gamma) {
    const Matrix<Scalar> KV = K * V;
    for (Eigen::Index j = 0; j < V.cols(); ++j) {
        const Scalar nrm = KV.col(j).dot(KV.col(j)) + gamma * V.col(j).dot(KV.col(j));
        if (!(nrm > Scalar(0))) throw NumericalError("dual normalization: vᵀ K K_γ v is not positive");
        V.col(j) /= std::sqrt(nrm);
    }
}

template <typename Scalar>
DualEstimator<Scalar> assemble_dual(Matrix<Scalar> V, const Matrix<Scalar>& K, Scalar gamma, Eigen::Index r,
                                    const TrainingContext<Scalar>& ctx) {
    DualEstimator<Scalar> est;
    normalize_signs(V);
    est.Ur = K * V;
    est.Vr = std::move(V);
    est.gamma = gamma;
    est.rank = r;
    est.context = ctx;
    return est;
}

// K^{1/2}K_γ^{-1/2} L K_γ^{-1/2}K^{1/2} shares its non-zero spectrum with K_γ^{-1}LK and
// is symmetric; eigenvectors z map back through v = K_γ^{-1} L K^{1/2}K_γ^{-1/2} z / σ².
template <typename Scalar>
Matrix<Scalar> exact_dual_dense(const GramBundle<Scalar>& g, Scalar gamma, Eigen::Index r) {
    const Eigen::Index n = g.n();
    const SymEig<Scalar> eK = sym_eig_descending(g.K);
    const Scalar lmax = std::max(eK.values(0), Scalar(0));
    const Scalar cut = Scalar(n) * machine_epsilon<Scalar>() * lmax;
    Vector<Scalar> lam = eK.values;
    for (Eigen::Index i = 0; i < n; ++i)
        if (lam(i) <= cut) lam(i) = Scalar(0);
    const Vector<Scalar> shrink = (lam.array() / (lam.array() + gamma)).sqrt().matrix();
    const Matrix<Scalar> A = eK.vectors * shrink.asDiagonal();
    const Matrix<Scalar> T = A.transpose() * g.L * A;
    const SymEig<Scalar> eT = sym_eig_descending(T);
    const Scalar tol = Scalar(n) * machine_epsilon<Scalar>() * std::max(eT.values(0), Scalar(0));
    if (!(eT.values(r - 1) > tol))
        throw InputError("fit_dual_exact: rank " + std::to_string(r) + " exceeds rank(KL)");
    const Matrix<Scalar> W = A * eT.vectors.leftCols(r);
    const Matrix<Scalar> LW = g.L * W;
    const Vector<Scalar> inv_shift = (lam.array() + gamma).inverse().matrix();
    Matrix<Scalar> V = eK.vectors * (inv_shift.asDiagonal() * (eK.vectors.transpose() * LW));
    V = V * eT.values.head(r).cwiseInverse().asDiagonal();
    return V;
}

template <typename Scalar>
Matrix<Scalar> exact_dual_subspace(const RegularizedDual<Scalar>& sys, Eigen::Index r, const ExactDualOptions& opt) {
    const GramBundle<Scalar>& g = sys.grams();
    const Scalar gamma = sys.gamma();
    const Eigen::Index n = g.n();
    const Eigen::Index block = std::min<Eigen::Index>(n, 2 * r + opt.block_extra);
    SketchSpec spec;
    spec.rank = static_cast<int>(r);
    spec.oversampling = static_cast<int>(std::max<Eigen::Index>(2, block - r));
    spec.seed = opt.seed;
    Matrix<Scalar> omega = qr_econ(gaussian_sketch<Scalar>(n, spec).leftCols(block));

    for (int it = 0; it < opt.max_iterations; ++it) {
        if (omega.cols() < r) throw InputError("fit_dual_exact: rank " + std::to_string(r) + " exceeds rank(KL)");
        const Matrix<Scalar> psi = sys.chol().solve(omega);
        const Matrix<Scalar> k_psi = omega - gamma * psi;  // K Ψ
        const Matrix<Scalar> next = g.L * k_psi;           // L K Ψ
        Matrix<Scalar> F0 = psi.transpose() * (g.K * omega);
        Matrix<Scalar> F1 = psi.transpose() * (g.K * next);
        F0 = (F0 + F0.transpose()) / Scalar(2);
        F1 = (F1 + F1.transpose()) / Scalar(2);
        const GepResult<Scalar> gep = sym_gep(F1, F0, r);
        const Scalar top = gep.values(0);
        if (!(gep.values(r - 1) > Scalar(n) * machine_epsilon<Scalar>() * top))
            throw InputError("fit_dual_exact: rank " + std::to_string(r) + " exceeds rank(KL)");

        bool converged = true;
        for (Eigen::Index i = 0; i < r && converged; ++i) {
            const Vector<Scalar> lhs = next * gep.vectors.col(i);
            const Vector<Scalar> rhs = gep.values(i) * (omega * gep.vectors.col(i));
            const Scalar scale = lhs.norm() + rhs.norm();
            converged = (lhs - rhs).norm() <= Scalar(opt.tolerance) * scale;
        }
        if (converged) return psi * gep.vectors;
        omega = qr_econ(next);
    }
    throw NumericalError("fit_dual_exact: subspace iteration did not reach tolerance within " +
                         std::to_string(opt.max_iterations) + " iterations");
}

} // namespace detail

/**
 * Exact dual reduced rank regression: the r leading solutions of
 * L K v = σ² K_γ v normalized to vᵀ K K_γ v = 1, with U = K V.
 */
namespace detail {

inline bool use_dense_exact(Eigen::Index n, const ExactDualOptions& opt) {
    return opt.method == ExactDualMethod::Dense || (opt.method == ExactDualMethod::Auto && n <= opt.dense_limit);
}

} // namespace detail

template <typename Scalar>
DualEstimator<Scalar> fit_dual_exact(const RegularizedDual<Scalar>& sys, Eigen::Index r,
                                     const TrainingContext<Scalar>& ctx = {}, const ExactDualOptions& opt = {}) {
    const GramBundle<Scalar>& g = sys.grams();
    if (r < 1 || r > g.n()) throw InputError("fit_dual_exact: rank must lie in [1, n]");
    Matrix<Scalar> V = detail::use_dense_exact(g.n(), opt) ? detail::exact_dual_dense(g, sys.gamma(), r)
                                                           : detail::exact_dual_subspace(sys, r, opt);
    detail::normalize_dual(V, g.K, sys.gamma());
    return detail::assemble_dual(std::move(V), g.K, sys.gamma(), r, ctx);
}

/// The dense path never needs the Cholesky factor, so it is only built for Subspace.
template <typename Scalar>
DualEstimator<Scalar> fit_dual_exact(const GramBundle<Scalar>& g, Scalar gamma, Eigen::Index r,
                                     const TrainingContext<Scalar>& ctx = {}, const ExactDualOptions& opt = {}) {
    g.validate_shapes();
    if (!(gamma > Scalar(0))) throw InputError("fit_dual_exact: gamma must be positive");
    if (!detail::use_dense_exact(g.n(), opt)) return fit_dual_exact(RegularizedDual<Scalar>(g, gamma), r, ctx, opt);
    if (r < 1 || r > g.n()) throw InputError("fit_dual_exact: rank must lie in [1, n]");
    Matrix<Scalar> V = detail::exact_dual_dense(g, gamma, r);
    detail::normalize_dual(V, g.K, gamma);
    return detail::assemble_dual(std::move(V), g.K, gamma, r, ctx);
}

/**
 * Randomized dual solver on an n x (r+s) sketch Ω: p rounds of
 * {solve K_γΨ = Ω, Ω ← L(Ω − γΨ), orthonormalize}, then the small GEP
 * F1 q = σ² F0 q with F0 = ΨᵀKΩ and F1 = ΨᵀK L(Ω − γΨ).
 */
template <typename Scalar>
DualEstimator<Scalar> fit_dual_r4(const RegularizedDual<Scalar>& sys, const SketchSpec& spec, const Matrix<Scalar>& sketch,
                                  const TrainingContext<Scalar>& ctx = {}) {
    spec.validate();
    const GramBundle<Scalar>& g = sys.grams();
    const Scalar gamma = sys.gamma();
    if (sketch.rows() != g.n() || sketch.cols() != spec.columns()) throw InputError("fit_dual_r4: sketch must be n x (r+s)");

    Matrix<Scalar> omega = sketch;
    Matrix<Scalar> psi;
    for (int j = 0; j < spec.power; ++j) {
        psi = sys.chol().solve(omega);
        omega = g.L * (omega - gamma * psi);
        omega = qr_econ(omega);
        if (omega.cols() == 0) throw NumericalError("fit_dual_r4: power iteration collapsed to the zero subspace");
    }
    psi = sys.chol().solve(omega);
    Matrix<Scalar> F0 = psi.transpose() * (g.K * omega);
    omega = g.L * (omega - gamma * psi);
    Matrix<Scalar> F1 = psi.transpose() * (g.K * omega);
    F0 = (F0 + F0.transpose()) / Scalar(2);
    F1 = (F1 + F1.transpose()) / Scalar(2);
    if (F0.norm() == Scalar(0)) throw NumericalError("fit_dual_r4: power iteration collapsed (F0 is zero)");

    const GepResult<Scalar> gep = sym_gep(F1, F0, spec.rank);
    Matrix<Scalar> V = psi * gep.vectors;
    DualEstimator<Scalar> est;
    est.Ur = g.K * V;
    est.Vr = std::move(V);
    est.gamma = gamma;
    est.rank = spec.rank;
    est.context = ctx;
    return est;
}

template <typename Scalar>
DualEstimator<Scalar> fit_dual_r4(const GramBundle<Scalar>& g, Scalar gamma, const SketchSpec& spec,
                                  const Matrix<Scalar>& sketch, const TrainingContext<Scalar>& ctx = {}) {
    return fit_dual_r4(RegularizedDual<Scalar>(g, gamma), spec, sketch, ctx);
}

/**
 * Out-of-sample prediction for Euclidean targets: ŷ(x) = Yᵀ Ur Vrᵀ κ̄_x with
 * κ̄_x = (1/n)[k(x_j, x)]_j. Rows of the result are predictions.
 */
template <typename Scalar, typename DX, typename DY>
Matrix<Scalar> predict(const DualEstimator<Scalar>& est, const Eigen::MatrixBase<DX>& Xnew,
                       const Eigen::MatrixBase<DY>& Ytrain) {
    if (est.context.output_kernel.family != KernelFamily::Linear)
        throw UnsupportedOperation("predict: only a linear output kernel has an explicit feature map");
    if (!est.context.inputs) throw InputError("predict: estimator carries no training inputs");
    const Matrix<Scalar>& X = *est.context.inputs;
    if (Ytrain.rows() != est.n()) throw InputError("predict: Ytrain must have n rows");
    if (Xnew.cols() != X.cols()) throw InputError("predict: input dimension mismatch");
    const Matrix<Scalar> C = cross_gram(est.context.input_kernel, X, Xnew);  // n x m
    const Matrix<Scalar> UtY = est.Ur.transpose() * Ytrain;
    return C.transpose() * (est.Vr * UtY);
}

template <typename Scalar>
struct SpectralDecomposition {
    ComplexVector<Scalar> eigenvalues;   ///< sorted by descending modulus
    ComplexMatrix<Scalar> right_coeffs;  ///< n x r, eigenfunction h = Ẑ*(right_coeffs column)
};

/// Non-zero spectrum of Ĝ through the r x r matrix Vrᵀ Kxy Ur.
template <typename Scalar>
SpectralDecomposition<Scalar> spectral(const DualEstimator<Scalar>& est, const std::optional<Matrix<Scalar>>& Kxy) {
    if (!Kxy) throw InputError("spectral: cross-Gram Kxy is required (input and output kernels must coincide)");
    if (Kxy->rows() != est.n() || Kxy->cols() != est.n()) throw InputError("spectral: Kxy must be n x n");
    const Matrix<Scalar> M = est.Vr.transpose() * (*Kxy) * est.Ur;
    const ComplexEig<Scalar> eig = dense_nonsym_eig(M);
    return {eig.values, est.Ur.template cast<std::complex<Scalar>>() * eig.vectors};
}

} // namespace r4
