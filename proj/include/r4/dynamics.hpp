#pragma once

#include <r4/types.hpp>

#include <complex>
#include <cstdint>
#include <iosfwd>
#include <vector>

namespace r4 {

/// x_{t+1} = (4 x_t (1 − x_t) + ξ_t) mod 1 with trigonometric noise ξ_t.
struct LogisticMapConfig {
    int noise_order = 20;        ///< N, even
    Eigen::Index length = 1000;  ///< T; the trajectory has T+1 points
    double x0 = 0.5;
    std::uint64_t seed = 0;
    bool noiseless = false;      ///< force ξ = 0

    void validate() const;
};

struct EigenvalueSet {
    std::vector<std::complex<double>> values;

    std::size_t size() const { return values.size(); }
    bool empty() const { return values.empty(); }
    void validate() const;
};

/**
 * Symmetric density p_N(ξ) ∝ cos^N(πξ) on [−1/2, 1/2] for even N.
 *
 * Its characteristic function is band-limited: φ(k) = C(N, N/2+k) / C(N, N/2)
 * for |k| ≤ N/2 and zero beyond, so both the CDF and the Koopman Galerkin
 * matrix have closed forms.
 */
class TrigNoise {
public:
    explicit TrigNoise(int order);

    int order() const { return order_; }
    double density(double xi) const;
    double cdf(double xi) const;
    double quantile(double u) const;  ///< inverse CDF, linear interpolation on a 2^16 table
    double variance() const;          ///< closed form ∫ξ² p_N
    /// Fourier coefficient ∫ p_N(ξ) e^{−2πikξ} dξ (real, even in k).
    double fourier(int k) const;

private:
    int order_;
    std::vector<double> coeffs_;  ///< φ(0..N/2)
    std::vector<double> table_;   ///< CDF on a uniform grid over [−1/2, 1/2]
};

std::vector<double> trig_noise_sample(int order, Eigen::Index count, std::uint64_t seed);

std::vector<double> logistic_trajectory(const LogisticMapConfig& cfg);

/// Leading eigenvalues of the Fourier–Galerkin matrix of the stochastic Koopman operator, sorted by modulus.
EigenvalueSet true_koopman_eigs(int order, int basis_size);

/// Directed Hausdorff distance max_{p∈P} min_{r∈R} |p − r|.
double dhd(const EigenvalueSet& P, const EigenvalueSet& R);

void write_trajectory_csv(std::ostream& os, const std::vector<double>& traj);
void write_eigs_csv(std::ostream& os, const EigenvalueSet& eigs);

} // namespace r4
