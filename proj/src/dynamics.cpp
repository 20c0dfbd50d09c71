#include <r4/dynamics.hpp>
#include <r4/linalg.hpp>
#include <r4/random.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <string>

namespace r4 {

namespace {

constexpr std::size_t kTableSize = 1u << 16;

double unit_uniform(CounterRng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// C(N, N/2 + k) / C(N, N/2) via the ratio recursion, no factorial overflow.
std::vector<double> band_coefficients(int order) {
    const int half = order / 2;
    std::vector<double> c(static_cast<std::size_t>(half) + 1);
    c[0] = 1.0;
    for (int k = 1; k <= half; ++k) c[k] = c[k - 1] * double(half - k + 1) / double(half + k);
    return c;
}

// Composite Gauss–Legendre nodes and weights on [0, 1].
void gauss_legendre_01(int panels, std::vector<double>& x, std::vector<double>& w) {
    static constexpr double nodes[8] = {-0.9602898564975363, -0.7966664774136267, -0.5255324099163290,
                                        -0.1834346424956498, 0.1834346424956498,  0.5255324099163290,
                                        0.7966664774136267,  0.9602898564975363};
    static constexpr double weights[8] = {0.1012285362903763, 0.2223810344533745, 0.3137066458778873,
                                          0.3626837833783620, 0.3626837833783620, 0.3137066458778873,
                                          0.2223810344533745, 0.1012285362903763};
    x.clear();
    w.clear();
    const double h = 1.0 / panels;
    for (int p = 0; p < panels; ++p)
        for (int q = 0; q < 8; ++q) {
            x.push_back(h * (p + 0.5 * (nodes[q] + 1.0)));
            w.push_back(0.5 * h * weights[q]);
        }
}

} // namespace

void LogisticMapConfig::validate() const {
    if (length < 1) throw InputError("logistic map: length must be >= 1");
    if (!(x0 >= 0.0 && x0 <= 1.0)) throw InputError("logistic map: x0 must lie in [0, 1]");
    if (!noiseless && (noise_order < 1 || noise_order % 2 != 0))
        throw InputError("logistic map: noise order must be a positive even integer");
}

void EigenvalueSet::validate() const {
    for (const auto& v : values)
        if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) throw InputError("eigenvalue set has non-finite entry");
}

TrigNoise::TrigNoise(int order) : order_(order) {
    if (order < 2 || order % 2 != 0)
        throw InputError("trigonometric noise order must be a positive even integer, got " + std::to_string(order));
    coeffs_ = band_coefficients(order);
    table_.resize(kTableSize + 1);
    for (std::size_t i = 0; i <= kTableSize; ++i) table_[i] = cdf(-0.5 + double(i) / double(kTableSize));
    table_.front() = 0.0;
    table_.back() = 1.0;
}

double TrigNoise::fourier(int k) const {
    const auto a = static_cast<std::size_t>(std::abs(k));
    return a < coeffs_.size() ? coeffs_[a] : 0.0;
}

double TrigNoise::density(double xi) const {
    if (xi < -0.5 || xi > 0.5) return 0.0;
    double p = 1.0;
    for (std::size_t m = 1; m < coeffs_.size(); ++m) p += 2.0 * coeffs_[m] * std::cos(2.0 * std::numbers::pi * m * xi);
    return std::max(0.0, p);
}

double TrigNoise::cdf(double xi) const {
    if (xi <= -0.5) return 0.0;
    if (xi >= 0.5) return 1.0;
    double F = xi + 0.5;
    for (std::size_t m = 1; m < coeffs_.size(); ++m)
        F += coeffs_[m] * std::sin(2.0 * std::numbers::pi * m * xi) / (std::numbers::pi * m);
    return std::clamp(F, 0.0, 1.0);
}

double TrigNoise::quantile(double u) const {
    if (!(u >= 0.0 && u <= 1.0)) throw InputError("quantile level must lie in [0, 1]");
    const auto it = std::upper_bound(table_.begin(), table_.end(), u);
    if (it == table_.end()) return 0.5;
    const auto hi = static_cast<std::size_t>(it - table_.begin());
    if (hi == 0) return -0.5;
    const std::size_t lo = hi - 1;
    const double span = table_[hi] - table_[lo];
    const double frac = span > 0.0 ? (u - table_[lo]) / span : 0.0;
    return -0.5 + (double(lo) + frac) / double(kTableSize);
}

double TrigNoise::variance() const {
    // ∫_{−1/2}^{1/2} ξ² cos(2πmξ) dξ = (−1)^m / (2π²m²)
    double v = 1.0 / 12.0;
    for (std::size_t m = 1; m < coeffs_.size(); ++m) {
        const double sign = (m % 2 == 0) ? 1.0 : -1.0;
        v += 2.0 * coeffs_[m] * sign / (2.0 * std::numbers::pi * std::numbers::pi * double(m * m));
    }
    return v;
}

std::vector<double> trig_noise_sample(int order, Eigen::Index count, std::uint64_t seed) {
    if (count < 1) throw InputError("trig_noise_sample: count must be >= 1");
    const TrigNoise noise(order);
    CounterRng rng(seed);
    std::vector<double> out(static_cast<std::size_t>(count));
    for (auto& v : out) v = noise.quantile(unit_uniform(rng));
    return out;
}

std::vector<double> logistic_trajectory(const LogisticMapConfig& cfg) {
    cfg.validate();
    std::vector<double> traj(static_cast<std::size_t>(cfg.length) + 1);
    traj[0] = cfg.x0 >= 1.0 ? 0.0 : cfg.x0;
    std::vector<double> xi;
    if (!cfg.noiseless) xi = trig_noise_sample(cfg.noise_order, cfg.length, cfg.seed);
    for (std::size_t t = 0; t + 1 < traj.size(); ++t) {
        const double x = traj[t];
        double next = 4.0 * x * (1.0 - x) + (cfg.noiseless ? 0.0 : xi[t]);
        next -= std::floor(next);
        if (next >= 1.0) next = 0.0;
        traj[t + 1] = next;
    }
    return traj;
}

EigenvalueSet true_koopman_eigs(int order, int basis_size) {
    if (order < 2 || order % 2 != 0) throw InputError("true_koopman_eigs: noise order must be a positive even integer");
    if (basis_size < 3 * order)
        throw InputError("true_koopman_eigs: basis_size must be at least 3N = " + std::to_string(3 * order));
    const TrigNoise noise(order);
    const int lo = -basis_size / 2;

    // G_jk = φ(k) ∫_0^1 exp(2πi(k T(x) − j x)) dx with T(x) = 4x(1−x); the
    // phase varies by at most 2π(4|k| + |j|) over [0, 1].
    std::vector<double> xq, wq;
    gauss_legendre_01(4 * basis_size + 16, xq, wq);
    const auto Q = static_cast<Eigen::Index>(xq.size());
    Eigen::MatrixXcd left(basis_size, Q), right(Q, basis_size);
    const double two_pi = 2.0 * std::numbers::pi;
    for (Eigen::Index q = 0; q < Q; ++q) {
        const double x = xq[q];
        const double Tx = 4.0 * x * (1.0 - x);
        for (int a = 0; a < basis_size; ++a) {
            const int k = lo + a;
            left(a, q) = wq[q] * std::polar(1.0, -two_pi * k * x);
            right(q, a) = noise.fourier(k) * std::polar(1.0, two_pi * k * Tx);
        }
    }
    const Eigen::MatrixXcd G = left * right;
    Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(G, false);
    if (es.info() != Eigen::Success) throw NumericalError("true_koopman_eigs: eigensolver failed");
    const ComplexVector<double> sorted = sorted_eigenvalues<double>(es.eigenvalues());
    EigenvalueSet out;
    out.values.assign(sorted.data(), sorted.data() + sorted.size());
    return out;
}

double dhd(const EigenvalueSet& P, const EigenvalueSet& R) {
    if (P.empty() || R.empty()) throw InputError("dhd: both sets must be non-empty");
    double worst = 0.0;
    for (const auto& p : P.values) {
        double best = std::abs(p - R.values.front());
        for (const auto& r : R.values) best = std::min(best, std::abs(p - r));
        worst = std::max(worst, best);
    }
    return worst;
}

void write_trajectory_csv(std::ostream& os, const std::vector<double>& traj) {
    os << "# schema=1\n" << "t,x\n";
    os.precision(17);
    for (std::size_t t = 0; t < traj.size(); ++t) os << t << ',' << traj[t] << '\n';
}

void write_eigs_csv(std::ostream& os, const EigenvalueSet& eigs) {
    os << "# schema=1\n" << "re,im\n";
    os.precision(17);
    for (const auto& v : eigs.values) os << v.real() << ',' << v.imag() << '\n';
}

} // namespace r4
