#pragma once

#include <r4/random.hpp>
#include <r4/types.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace r4 {

enum class KernelFamily { Linear, Gaussian, Matern12 };

/// Declarative kernel choice. The length-scale is ignored for the linear kernel.
struct KernelSpec {
    KernelFamily family = KernelFamily::Linear;
    double lengthscale = 1.0;

    static KernelSpec linear() { return {KernelFamily::Linear, 1.0}; }
    static KernelSpec gaussian(double lengthscale) { return checked({KernelFamily::Gaussian, lengthscale}); }
    static KernelSpec matern12(double lengthscale) { return checked({KernelFamily::Matern12, lengthscale}); }

    static KernelSpec checked(KernelSpec spec) {
        spec.validate();
        return spec;
    }

    void validate() const {
        if (family != KernelFamily::Linear && !(lengthscale > 0.0 && std::isfinite(lengthscale)))
            throw InputError("kernel length-scale must be positive and finite, got " + std::to_string(lengthscale));
    }

    bool operator==(const KernelSpec&) const = default;
};

inline std::string_view to_string(KernelFamily family) {
    switch (family) {
        case KernelFamily::Linear: return "linear";
        case KernelFamily::Gaussian: return "gaussian";
        case KernelFamily::Matern12: return "matern12";
    }
    return "unknown";
}

inline KernelFamily parse_kernel_family(std::string_view name) {
    if (name == "linear") return KernelFamily::Linear;
    if (name == "gaussian") return KernelFamily::Gaussian;
    if (name == "matern12") return KernelFamily::Matern12;
    throw InputError("unknown kernel family '" + std::string(name) + "' (expected linear, gaussian or matern12)");
}

namespace detail {

// Both pairwise routines are written so that swapping the arguments gives a
// bitwise-identical result; Gram symmetry and cross_gram(X, X) == gram(X) rely on it.
template <typename Scalar, typename A, typename B>
Scalar kernel_pair(const KernelSpec& spec, const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
    switch (spec.family) {
        case KernelFamily::Linear:
            return a.dot(b);
        case KernelFamily::Gaussian: {
            const Scalar sq = (a - b).squaredNorm();
            return std::exp(-sq / (Scalar(2) * Scalar(spec.lengthscale) * Scalar(spec.lengthscale)));
        }
        case KernelFamily::Matern12: {
            const Scalar sq = std::max(Scalar(0), (a - b).squaredNorm());
            return std::exp(-std::sqrt(sq) / Scalar(spec.lengthscale));
        }
    }
    return Scalar(0);
}

} // namespace detail

/// k(x, x') for a single pair of points.
template <typename A, typename B>
typename A::Scalar eval_kernel(const KernelSpec& spec, const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& y) {
    using Scalar = typename A::Scalar;
    spec.validate();
    if (x.size() != y.size())
        throw InputError("eval_kernel: dimension mismatch (" + std::to_string(x.size()) + " vs " +
                         std::to_string(y.size()) + ")");
    const Vector<Scalar> a = x.reshaped();
    const Vector<Scalar> b = y.reshaped();
    return detail::kernel_pair<Scalar>(spec, a, b);
}

/// (1/n) [k(x_i, y_j)] for X (n x d) and Y (m x d). Rows are samples.
template <typename A, typename B>
Matrix<typename A::Scalar> cross_gram(const KernelSpec& spec, const Eigen::MatrixBase<A>& X,
                                      const Eigen::MatrixBase<B>& Y) {
    using Scalar = typename A::Scalar;
    spec.validate();
    if (X.rows() == 0) throw InputError("cross_gram: empty input");
    if (X.cols() != Y.cols())
        throw InputError("cross_gram: column dimension mismatch (" + std::to_string(X.cols()) + " vs " +
                         std::to_string(Y.cols()) + ")");
    // Column-major copies so each sample is contiguous.
    const Matrix<Scalar> Xt = X.transpose();
    const Matrix<Scalar> Yt = Y.transpose();
    const Eigen::Index n = X.rows();
    const Eigen::Index m = Y.rows();
    const Scalar scale = Scalar(1) / Scalar(n);
    Matrix<Scalar> G(n, m);
    for (Eigen::Index j = 0; j < m; ++j)
        for (Eigen::Index i = 0; i < n; ++i) G(i, j) = scale * detail::kernel_pair<Scalar>(spec, Xt.col(i), Yt.col(j));
    return G;
}

/// (1/n) [k(x_i, x_j)], symmetric positive semi-definite.
template <typename A>
Matrix<typename A::Scalar> gram(const KernelSpec& spec, const Eigen::MatrixBase<A>& X) {
    using Scalar = typename A::Scalar;
    spec.validate();
    if (X.rows() == 0) throw InputError("gram: empty input");
    const Matrix<Scalar> Xt = X.transpose();
    const Eigen::Index n = X.rows();
    const Scalar scale = Scalar(1) / Scalar(n);
    Matrix<Scalar> G(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index i = j; i < n; ++i) {
            const Scalar v = scale * detail::kernel_pair<Scalar>(spec, Xt.col(i), Xt.col(j));
            G(i, j) = v;
            G(j, i) = v;
        }
    }
    return G;
}

/// Empirical quantile with linear interpolation between order statistics.
template <typename Scalar>
Scalar quantile_sorted(std::span<const Scalar> sorted, double q) {
    if (sorted.empty()) throw InputError("quantile of an empty sample");
    if (!(q >= 0.0 && q <= 1.0)) throw InputError("quantile level must lie in [0, 1]");
    const double h = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const Scalar frac = Scalar(h - static_cast<double>(lo));
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

/**
 * Length-scale candidates from the pairwise-distance distribution.
 *
 * Draws `sample_size` distinct rows of X (seeded), computes all pairwise
 * Euclidean distances among them, and returns the requested quantiles.
 */
template <typename A>
std::vector<typename A::Scalar> lengthscale_quantiles(const Eigen::MatrixBase<A>& X, Eigen::Index sample_size,
                                                      std::span<const double> quantiles, std::uint64_t seed) {
    using Scalar = typename A::Scalar;
    const Eigen::Index n = X.rows();
    if (sample_size < 2) throw InputError("lengthscale_quantiles: sample_size must be at least 2");
    if (sample_size > n)
        throw InputError("lengthscale_quantiles: sample_size " + std::to_string(sample_size) + " exceeds n = " +
                         std::to_string(n));
    for (double q : quantiles)
        if (!(q > 0.0 && q < 1.0)) throw InputError("lengthscale_quantiles: quantiles must lie in (0, 1)");

    // Partial Fisher-Yates for a seeded subsample without replacement.
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    CounterRng rng(seed);
    for (Eigen::Index i = 0; i < sample_size; ++i) {
        const auto span = static_cast<std::uint64_t>(n - i);
        const auto j = i + static_cast<Eigen::Index>(rng() % span);
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }

    const Matrix<Scalar> Xt = X.transpose();
    std::vector<Scalar> dist;
    dist.reserve(static_cast<std::size_t>(sample_size * (sample_size - 1) / 2));
    for (Eigen::Index a = 0; a < sample_size; ++a)
        for (Eigen::Index b = a + 1; b < sample_size; ++b) {
            const Scalar sq = (Xt.col(idx[static_cast<std::size_t>(a)]) - Xt.col(idx[static_cast<std::size_t>(b)]))
                                  .squaredNorm();
            dist.push_back(std::sqrt(std::max(Scalar(0), sq)));
        }
    std::sort(dist.begin(), dist.end());

    std::vector<Scalar> out;
    out.reserve(quantiles.size());
    for (double q : quantiles) out.push_back(quantile_sorted<Scalar>(dist, q));
    return out;
}

/// The 1/n-scaled input Gram K, output Gram L and, when the two kernels
/// coincide, the cross-Gram Kxy = (1/n)[k(x_i, y_j)].
template <typename Scalar>
struct GramBundle {
    Matrix<Scalar> K;
    Matrix<Scalar> L;
    std::optional<Matrix<Scalar>> Kxy;

    Eigen::Index n() const { return K.rows(); }

    void validate_shapes() const {
        if (K.rows() == 0 || K.rows() != K.cols() || L.rows() != L.cols() || L.rows() != K.rows())
            throw InputError("GramBundle: K and L must be square with matching size");
        if (Kxy && (Kxy->rows() != K.rows() || Kxy->cols() != K.cols()))
            throw InputError("GramBundle: Kxy shape mismatch");
    }
};

template <typename A, typename B>
GramBundle<typename A::Scalar> make_gram_bundle(const KernelSpec& input_kernel, const Eigen::MatrixBase<A>& X,
                                                const KernelSpec& output_kernel, const Eigen::MatrixBase<B>& Y) {
    if (X.rows() != Y.rows()) throw InputError("make_gram_bundle: X and Y must have the same number of rows");
    GramBundle<typename A::Scalar> g{gram(input_kernel, X), gram(output_kernel, Y), std::nullopt};
    if (input_kernel == output_kernel && X.cols() == Y.cols()) g.Kxy = cross_gram(input_kernel, X, Y);
    return g;
}

} // namespace r4
