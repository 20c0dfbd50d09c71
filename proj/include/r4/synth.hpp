#pragma once

#include <r4/types.hpp>

#include <cstdint>
#include <optional>

namespace r4 {

/// Linear system y = A x + ξ with A = U Σ Uᵀ and a sigmoid spectrum.
struct SyntheticLinearConfig {
    int d = 100;
    int r_true = 10;
    double tau = 5.0;
    double noise_std = 0.1;
    Eigen::Index n_train = 1000;
    Eigen::Index n_test = 1000;
    std::uint64_t seed = 0;
    std::optional<std::uint64_t> basis_seed;  ///< seeds U separately so several samples share one A
    bool identity_basis = false;              ///< U = I

    void validate() const;
};

/// Rows are samples: Y = X A (A symmetric) plus noise.
struct LinearDataset {
    MatrixXd Xtrain, Ytrain, Xtest, Ytest;
    MatrixXd A;
    VectorXd sigmas;
};

/// σ_i = 1/(1 + exp(−(r_true − i/τ))), i = 1..d.
VectorXd sigmoid_spectrum(int d, int r_true, double tau);

LinearDataset synth_linear(const SyntheticLinearConfig& cfg);

} // namespace r4
