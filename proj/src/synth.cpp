#include <r4/random.hpp>
#include <r4/synth.hpp>

#include <cmath>
#include <random>
#include <string>

namespace r4 {

namespace {

MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double scale, CounterRng rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    MatrixXd M(rows, cols);
    // Row by row so that a longer sample extends a shorter one with the same seed.
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) M(i, j) = scale * normal(rng);
    return M;
}

} // namespace

void SyntheticLinearConfig::validate() const {
    if (d < 1) throw InputError("synth_linear: d must be >= 1");
    if (r_true < 0 || r_true > d)
        throw InputError("synth_linear: r_true must lie in [0, d], got " + std::to_string(r_true));
    if (!(tau > 0.0)) throw InputError("synth_linear: tau must be positive");
    if (!(noise_std >= 0.0)) throw InputError("synth_linear: noise_std must be >= 0");
    if (n_train < 1 || n_test < 0) throw InputError("synth_linear: need n_train >= 1 and n_test >= 0");
}

VectorXd sigmoid_spectrum(int d, int r_true, double tau) {
    VectorXd s(d);
    for (int i = 1; i <= d; ++i) s(i - 1) = 1.0 / (1.0 + std::exp(-(double(r_true) - double(i) / tau)));
    return s;
}

LinearDataset synth_linear(const SyntheticLinearConfig& cfg) {
    cfg.validate();
    const CounterRng root(cfg.seed);
    LinearDataset ds;
    ds.sigmas = sigmoid_spectrum(cfg.d, cfg.r_true, cfg.tau);
    MatrixXd U = MatrixXd::Identity(cfg.d, cfg.d);
    if (!cfg.identity_basis) {
        Eigen::HouseholderQR<MatrixXd> qr(gaussian_matrix(cfg.d, cfg.d, 1.0, cfg.basis_seed ? CounterRng(*cfg.basis_seed) : root.split(0)));
        U = qr.householderQ() * MatrixXd::Identity(cfg.d, cfg.d);
    }
    ds.A = U * ds.sigmas.asDiagonal() * U.transpose();
    ds.A = (ds.A + ds.A.transpose()) / 2.0;

    auto draw = [&](Eigen::Index n, std::uint64_t stream, MatrixXd& X, MatrixXd& Y) {
        X = gaussian_matrix(n, cfg.d, 1.0, root.split(stream));
        Y = X * ds.A.transpose();
        if (cfg.noise_std > 0.0) Y += gaussian_matrix(n, cfg.d, cfg.noise_std, root.split(stream + 1));
    };
    draw(cfg.n_train, 1, ds.Xtrain, ds.Ytrain);
    draw(cfg.n_test, 3, ds.Xtest, ds.Ytest);
    return ds;
}

} // namespace r4
