#pragma once

#include <r4/estimators.hpp>

#include <cstdint>
#include <iosfwd>
#include <memory>

namespace r4 {

/// FNV-1a over the shape and the raw bytes of a matrix (column-major).
std::uint64_t content_hash(const MatrixXd& M);

/// JSON container: format tag, version, rank, gamma, kernel specs, training-input hash, Ur, Vr.
void save_estimator(std::ostream& os, const DualEstimator<double>& est);

/**
 * Reads an estimator written by save_estimator. When `inputs` is given its
 * content hash must match the stored one; it becomes the estimator's training set.
 */
DualEstimator<double> load_estimator(std::istream& is, std::shared_ptr<const MatrixXd> inputs = nullptr);

} // namespace r4
