#pragma once

#include <r4/random.hpp>
#include <r4/types.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace r4 {

enum class SketchDistribution {
    Isotropic,        ///< columns iid N(0, I)
    OutputCovariance  ///< columns iid N(0, L)
};

/// Randomized rangefinder parameters: target rank r, oversampling s, power p.
struct SketchSpec {
    int rank = 1;
    int oversampling = 2;
    int power = 1;
    SketchDistribution distribution = SketchDistribution::Isotropic;
    std::uint64_t seed = 0;

    int columns() const { return rank + oversampling; }

    void validate() const {
        if (rank < 1) throw InputError("sketch: rank must be >= 1, got " + std::to_string(rank));
        if (oversampling < 2) throw InputError("sketch: oversampling must be >= 2, got " + std::to_string(oversampling));
        if (power < 1) throw InputError("sketch: power must be >= 1, got " + std::to_string(power));
    }
};

/// Non-increasing, non-negative singular values.
template <typename Scalar>
struct SingularSpectrum {
    Vector<Scalar> sigmas;

    Eigen::Index size() const { return sigmas.size(); }
    Scalar operator[](Eigen::Index i) const { return sigmas(i); }

    void validate() const {
        for (Eigen::Index i = 0; i < sigmas.size(); ++i) {
            if (!(sigmas(i) >= Scalar(0))) throw InputError("singular spectrum: negative or NaN entry");
            if (i > 0 && sigmas(i) > sigmas(i - 1)) throw InputError("singular spectrum: not sorted non-increasing");
        }
    }
};

template <typename Scalar>
Scalar machine_epsilon() {
    return std::numeric_limits<Scalar>::epsilon();
}

/// Make the largest-magnitude entry of every column positive.
template <typename Derived>
void normalize_signs(Eigen::MatrixBase<Derived>& V) {
    for (Eigen::Index j = 0; j < V.cols(); ++j) {
        Eigen::Index imax = 0;
        V.col(j).cwiseAbs().maxCoeff(&imax);
        if (V(imax, j) < 0) V.col(j) = -V.col(j);
    }
}

/// Symmetric eigendecomposition with eigenvalues in descending order.
template <typename Scalar>
struct SymEig {
    Vector<Scalar> values;
    Matrix<Scalar> vectors;
};

template <typename Derived>
SymEig<typename Derived::Scalar> sym_eig_descending(const Eigen::MatrixBase<Derived>& A) {
    using Scalar = typename Derived::Scalar;
    const Matrix<Scalar> S = (A + A.transpose()) / Scalar(2);
    Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(S);
    if (es.info() != Eigen::Success) throw NumericalError("symmetric eigensolver did not converge");
    return {es.eigenvalues().reverse(), es.eigenvectors().rowwise().reverse()};
}

/**
 * Rank-revealing pivoted Cholesky of a symmetric PSD matrix: A ≈ R Rᵀ with R
 * of size n x k. Stops once every residual diagonal is at most
 * n·ε·max(diag A); a residual diagonal below minus that tolerance means the
 * input is not positive semi-definite.
 */
template <typename Derived>
Matrix<typename Derived::Scalar> pivoted_cholesky(const Eigen::MatrixBase<Derived>& A) {
    using Scalar = typename Derived::Scalar;
    const Eigen::Index n = A.rows();
    if (A.cols() != n) throw InputError("pivoted_cholesky: matrix must be square");
    Vector<Scalar> d = A.diagonal();
    const Scalar dmax = n > 0 ? d.cwiseAbs().maxCoeff() : Scalar(0);
    const Scalar tol = Scalar(n) * machine_epsilon<Scalar>() * dmax;
    if (n > 0 && d.minCoeff() < -tol) throw NumericalError("pivoted_cholesky: matrix is not positive semi-definite");

    // Columns grow on demand; kernel Grams are often far from full rank.
    Matrix<Scalar> R(n, std::min<Eigen::Index>(n, 64));
    std::vector<bool> used(static_cast<std::size_t>(n), false);
    Eigen::Index k = 0;
    for (; k < n; ++k) {
        Eigen::Index p = -1;
        Scalar best = tol;
        for (Eigen::Index i = 0; i < n; ++i)
            if (!used[static_cast<std::size_t>(i)] && d(i) > best) {
                best = d(i);
                p = i;
            }
        if (p < 0) break;
        used[static_cast<std::size_t>(p)] = true;
        const Scalar piv = std::sqrt(d(p));
        Vector<Scalar> col = A.col(p);
        if (k > 0) col.noalias() -= R.leftCols(k) * R.row(p).head(k).transpose();
        col /= piv;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (used[static_cast<std::size_t>(i)] && i != p) col(i) = Scalar(0);
        }
        col(p) = piv;
        if (k == R.cols()) R.conservativeResize(Eigen::NoChange, std::min<Eigen::Index>(n, 2 * R.cols()));
        R.col(k) = col;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (used[static_cast<std::size_t>(i)]) continue;
            d(i) -= col(i) * col(i);
            if (d(i) < -tol) throw NumericalError("pivoted_cholesky: matrix is not positive semi-definite");
        }
    }
    return R.leftCols(k);
}

/**
 * Gaussian sketch with rows(n) x (r+s) columns.
 *
 * Isotropic draws iid N(0, I_n) columns. OutputCovariance draws ω̃ ~ N(0, I_k)
 * and maps it through a rank-revealing Cholesky factor R of `covariance`
 * (covariance = R Rᵀ), so the columns are N(0, covariance).
 */
template <typename Scalar>
Matrix<Scalar> gaussian_sketch(Eigen::Index n, const SketchSpec& spec, const Matrix<Scalar>* covariance = nullptr) {
    spec.validate();
    if (n < 1) throw InputError("gaussian_sketch: n must be >= 1");
    CounterRng rng(spec.seed);
    std::normal_distribution<Scalar> normal(Scalar(0), Scalar(1));
    const Eigen::Index cols = spec.columns();

    auto draw = [&](Eigen::Index rows) {
        Matrix<Scalar> W(rows, cols);
        for (Eigen::Index j = 0; j < cols; ++j)
            for (Eigen::Index i = 0; i < rows; ++i) W(i, j) = normal(rng);
        return W;
    };

    if (spec.distribution == SketchDistribution::Isotropic) return draw(n);

    if (covariance == nullptr) throw InputError("gaussian_sketch: output-covariance sketch requires the covariance matrix");
    if (covariance->rows() != n || covariance->cols() != n)
        throw InputError("gaussian_sketch: covariance must be " + std::to_string(n) + " x " + std::to_string(n));
    const Matrix<Scalar> R = pivoted_cholesky(*covariance);
    if (R.cols() == 0) return Matrix<Scalar>::Zero(n, cols);
    return R * draw(R.cols());
}

/// Sketch from a precomputed factor R (covariance = R Rᵀ); avoids refactoring per seed.
template <typename Scalar>
Matrix<Scalar> gaussian_sketch_from_factor(const Matrix<Scalar>& factor, const SketchSpec& spec) {
    spec.validate();
    CounterRng rng(spec.seed);
    std::normal_distribution<Scalar> normal(Scalar(0), Scalar(1));
    const Eigen::Index cols = spec.columns();
    Matrix<Scalar> W(factor.cols(), cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < W.rows(); ++i) W(i, j) = normal(rng);
    if (factor.cols() == 0) return Matrix<Scalar>::Zero(factor.rows(), cols);
    return factor * W;
}

/// Cholesky factorization of A + γI, kept for repeated solves.
template <typename Scalar>
class ShiftedCholesky {
public:
    template <typename Derived>
    ShiftedCholesky(const Eigen::MatrixBase<Derived>& A, Scalar gamma) : gamma_(gamma) {
        if (!(gamma > Scalar(0))) throw InputError("regularization gamma must be positive");
        if (A.rows() != A.cols()) throw InputError("chol_solve: matrix must be square");
        Matrix<Scalar> shifted = A;
        shifted.diagonal().array() += gamma;
        llt_.compute(shifted);
        if (llt_.info() != Eigen::Success)
            throw NumericalError("Cholesky factorization of A + gamma I failed (matrix numerically indefinite)");
    }

    template <typename Derived>
    Matrix<Scalar> solve(const Eigen::MatrixBase<Derived>& B) const {
        if (B.rows() != llt_.rows()) throw InputError("chol_solve: right-hand side has wrong number of rows");
        return llt_.solve(B);
    }

    Eigen::Index size() const { return llt_.rows(); }
    Scalar gamma() const { return gamma_; }
    const Eigen::LLT<Matrix<Scalar>>& llt() const { return llt_; }

private:
    Scalar gamma_;
    Eigen::LLT<Matrix<Scalar>> llt_;
};

/// X solving (A + γI) X = B.
template <typename DA, typename DB>
Matrix<typename DA::Scalar> chol_solve(const Eigen::MatrixBase<DA>& A, typename DA::Scalar gamma,
                                       const Eigen::MatrixBase<DB>& B) {
    return ShiftedCholesky<typename DA::Scalar>(A, gamma).solve(B);
}

/**
 * Orthonormal basis for range(M) from column-pivoted Householder QR.
 * Pivots with |R_ii| ≤ n·ε·‖M‖_F are treated as zero and their columns dropped.
 */
template <typename Derived>
Matrix<typename Derived::Scalar> qr_econ(const Eigen::MatrixBase<Derived>& M) {
    using Scalar = typename Derived::Scalar;
    const Eigen::Index n = M.rows();
    const Scalar norm = M.norm();
    if (norm == Scalar(0) || M.cols() == 0) return Matrix<Scalar>(n, 0);
    Eigen::ColPivHouseholderQR<Matrix<Scalar>> qr(M);
    const Scalar cutoff = Scalar(n) * machine_epsilon<Scalar>() * norm;
    const Matrix<Scalar>& R = qr.matrixR();
    Eigen::Index rank = 0;
    const Eigen::Index diag = std::min(n, M.cols());
    while (rank < diag && std::abs(R(rank, rank)) > cutoff) ++rank;
    Matrix<Scalar> Q = Matrix<Scalar>::Identity(n, rank);
    Q.applyOnTheLeft(qr.householderQ());
    return Q;
}

/// Leading generalized eigenpairs F1 q = λ F0 q with qᵀ F0 q = 1.
template <typename Scalar>
struct GepResult {
    Vector<Scalar> values;   ///< λ_1 ≥ … ≥ λ_r ≥ 0
    Matrix<Scalar> vectors;  ///< k x r
    Eigen::Index finite_count = 0;
};

/**
 * Symmetric-definite generalized eigenproblem with a possibly singular F0.
 *
 * F0 is whitened through its eigendecomposition, discarding eigenvalues at or
 * below k·ε·λ_max(F0); the eigenpairs returned are the finite eigenpairs of
 * F0^† F1 restricted to Ker(F0)^⊥.
 */
template <typename D1, typename D0>
GepResult<typename D1::Scalar> sym_gep(const Eigen::MatrixBase<D1>& F1, const Eigen::MatrixBase<D0>& F0, Eigen::Index r) {
    using Scalar = typename D1::Scalar;
    const Eigen::Index k = F0.rows();
    if (F0.cols() != k || F1.rows() != k || F1.cols() != k) throw InputError("sym_gep: F0 and F1 must be square of equal size");
    if (r < 1) throw InputError("sym_gep: r must be >= 1");

    const SymEig<Scalar> e0 = sym_eig_descending(F0);
    const Scalar lmax = k > 0 ? std::max(Scalar(0), e0.values(0)) : Scalar(0);
    const Scalar cutoff = Scalar(k) * machine_epsilon<Scalar>() * lmax;
    Eigen::Index m = 0;
    while (m < k && e0.values(m) > cutoff) ++m;
    if (r > m)
        throw InputError("sym_gep: requested " + std::to_string(r) + " eigenpairs but only " + std::to_string(m) +
                         " finite eigenpairs are available");

    const Matrix<Scalar> T = e0.vectors.leftCols(m) * e0.values.head(m).cwiseSqrt().cwiseInverse().asDiagonal();
    const Matrix<Scalar> W = T.transpose() * F1 * T;
    const SymEig<Scalar> e1 = sym_eig_descending(W);

    GepResult<Scalar> out;
    out.finite_count = m;
    out.values = e1.values.head(r).cwiseMax(Scalar(0));
    out.vectors = T * e1.vectors.leftCols(r);
    normalize_signs(out.vectors);
    return out;
}

template <typename Scalar>
struct TruncatedSvd {
    Matrix<Scalar> U;
    SingularSpectrum<Scalar> sigma;
    Matrix<Scalar> V;
};

/// Full SVD truncated to the leading r triplets; reference for ⟦B⟧_r.
template <typename Derived>
TruncatedSvd<typename Derived::Scalar> truncated_svd(const Eigen::MatrixBase<Derived>& B, Eigen::Index r) {
    using Scalar = typename Derived::Scalar;
    if (r < 0 || r > std::min(B.rows(), B.cols()))
        throw InputError("truncated_svd: rank " + std::to_string(r) + " exceeds min(rows, cols)");
    Eigen::BDCSVD<Matrix<Scalar>> svd(B, Eigen::ComputeThinU | Eigen::ComputeThinV);
    TruncatedSvd<Scalar> out;
    out.U = svd.matrixU().leftCols(r);
    out.V = svd.matrixV().leftCols(r);
    out.sigma.sigmas = svd.singularValues().head(r);
    return out;
}

/// All singular values, non-increasing.
template <typename Derived>
SingularSpectrum<typename Derived::Scalar> singular_values(const Eigen::MatrixBase<Derived>& B) {
    using Scalar = typename Derived::Scalar;
    Eigen::BDCSVD<Matrix<Scalar>> svd(B);
    return {svd.singularValues()};
}

template <typename Scalar>
struct ComplexEig {
    ComplexVector<Scalar> values;
    ComplexMatrix<Scalar> vectors;
};

/// Order: descending modulus, then descending real part, then ascending imaginary part.
template <typename Scalar>
bool eigenvalue_order(const std::complex<Scalar>& a, const std::complex<Scalar>& b) {
    const Scalar ma = std::abs(a), mb = std::abs(b);
    const Scalar tol = Scalar(64) * machine_epsilon<Scalar>() * std::max({ma, mb, Scalar(1)});
    if (std::abs(ma - mb) > tol) return ma > mb;
    if (std::abs(a.real() - b.real()) > tol) return a.real() > b.real();
    return a.imag() < b.imag();
}

template <typename Scalar>
std::vector<Eigen::Index> eigenvalue_permutation(const ComplexVector<Scalar>& values) {
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(values.size()));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    std::stable_sort(perm.begin(), perm.end(),
                     [&](Eigen::Index i, Eigen::Index j) { return eigenvalue_order(values(i), values(j)); });
    return perm;
}

template <typename Scalar>
ComplexVector<Scalar> sorted_eigenvalues(const ComplexVector<Scalar>& values) {
    const auto perm = eigenvalue_permutation(values);
    ComplexVector<Scalar> out(values.size());
    for (std::size_t i = 0; i < perm.size(); ++i) out(static_cast<Eigen::Index>(i)) = values(perm[i]);
    return out;
}

/// Dense eigendecomposition of a general real matrix, sorted by eigenvalue_order.
template <typename Derived>
ComplexEig<typename Derived::Scalar> dense_nonsym_eig(const Eigen::MatrixBase<Derived>& M) {
    using Scalar = typename Derived::Scalar;
    if (M.rows() < 1 || M.rows() != M.cols()) throw InputError("dense_nonsym_eig: matrix must be square and non-empty");
    Eigen::EigenSolver<Matrix<Scalar>> es(M, true);
    if (es.info() != Eigen::Success) throw NumericalError("dense_nonsym_eig: QR iteration failed to converge");
    const ComplexVector<Scalar> values = es.eigenvalues();
    const ComplexMatrix<Scalar> vectors = es.eigenvectors();
    const auto perm = eigenvalue_permutation(values);
    ComplexEig<Scalar> out{ComplexVector<Scalar>(values.size()), ComplexMatrix<Scalar>(vectors.rows(), vectors.cols())};
    for (std::size_t i = 0; i < perm.size(); ++i) {
        out.values(static_cast<Eigen::Index>(i)) = values(perm[i]);
        out.vectors.col(static_cast<Eigen::Index>(i)) = vectors.col(perm[i]);
    }
    return out;
}

} // namespace r4
