#pragma once

#include <r4/dynamics.hpp>
#include <r4/kernels.hpp>
#include <r4/linalg.hpp>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace r4 {

/// Malformed or inconsistent experiment configuration (CLI exit code 1).
class ConfigError : public InputError {
public:
    using InputError::InputError;
};

enum class ExperimentKind {
    BoundSweep,  ///< fixed linear data set, many sketch seeds, gap vs both bounds
    RiskParity,  ///< exact vs randomized dual over an n-sweep, train and test risk
    Logistic,    ///< Koopman eigenvalues of the noisy logistic map
    Timing       ///< wall time of exact vs randomized dual fits
};

std::string_view to_string(ExperimentKind kind);

struct ExperimentConfig {
    std::string id;
    ExperimentKind kind = ExperimentKind::BoundSweep;
    std::vector<int> seeds;  ///< replicate indices

    // linear system
    int d = 100;
    int r_true = 10;
    double tau = 5.0;
    double noise_std = 0.1;
    std::vector<int> n_train = {1000};
    int n_test = 1000;

    // estimator sweep
    double gamma = 1e-6;
    std::vector<int> rank = {5};
    std::vector<int> oversampling = {5};
    std::vector<int> power = {1};
    std::vector<SketchDistribution> sketch = {SketchDistribution::Isotropic};

    // logistic map
    int noise_order = 20;
    int basis_size = 128;
    KernelFamily kernel = KernelFamily::Matern12;
    double lengthscale = 0.0;  ///< 0 selects the median pairwise distance
    int burn_in = 100;
    int exact_max_n = 0;       ///< exact dual fits only for n ≤ this

    // timing
    int repeats = 5;
    int warmup = 1;
};

struct RunConfig {
    std::uint64_t master_seed = 0;
    int threads = 1;
    std::vector<ExperimentConfig> experiments;
};

/// "1..15", "2,5,10" or a mix such as "1..3,8"; empty lists are rejected.
std::vector<int> parse_int_list(const std::string& text);

/**
 * INI file: a `[run]` section (master_seed, threads) and one
 * `[experiment.<id>]` section per experiment. Unknown keys are errors;
 * diagnostics carry the line number.
 */
RunConfig parse_config(std::istream& is);
RunConfig load_config(const std::string& path);

struct ExperimentRow {
    std::string experiment_id;
    int cell = 0;
    int seed = 0;
    int n = 0;
    int d = 0;
    int r = 0;
    int s = 0;
    int p = 0;
    double gamma = 0;
    std::string sketch_kind;
    std::string algorithm;
    std::string status = "ok";
    double empirical_risk = 0;  ///< regularized empirical risk
    double optimal_risk = 0;
    double gap = 0;
    double bound_correlated = 0;
    double bound_isotropic = 0;
    double fit_wall_ms = 0;
    std::vector<std::pair<std::string, double>> extra;

    double extra_value(const std::string& key) const;  ///< NaN when absent
};

struct AggregateRow {
    std::string experiment_id;
    int n = 0, d = 0, r = 0, s = 0, p = 0;
    double gamma = 0;
    std::string sketch_kind;
    std::string algorithm;
    int count = 0;
    int failed = 0;
    double mean_empirical_risk = 0;
    double mean_optimal_risk = 0;
    double mean_gap = 0;
    double stderr_gap = 0;
    double bound_correlated = 0;
    double bound_isotropic = 0;
    double median_fit_ms = 0;
    std::vector<std::pair<std::string, double>> extra;  ///< <key>_mean and <key>_se per numeric extra

    double extra_value(const std::string& key) const;
};

struct EigenRecord {
    std::string experiment_id;
    int cell = 0;
    int n = 0;
    int seed = 0;
    std::string algorithm;
    EigenvalueSet eigs;
};

struct RunResult {
    std::vector<ExperimentRow> rows;
    std::vector<AggregateRow> aggregates;
    std::vector<EigenRecord> eigenvalues;
    bool any_failed = false;
};

using ProgressFn = std::function<void(const std::string&)>;

/// Runs every experiment; rows are ordered by (experiment, cell) regardless of thread count.
RunResult run_experiments(const RunConfig& cfg, const ProgressFn& progress = {});

std::vector<AggregateRow> aggregate(const std::vector<ExperimentRow>& rows);

void write_rows_csv(std::ostream& os, const std::vector<ExperimentRow>& rows);
void write_aggregate_csv(std::ostream& os, const std::vector<AggregateRow>& rows);
void write_eigen_records_csv(std::ostream& os, const std::vector<EigenRecord>& recs);

/// Parses config, runs, writes rows.csv, aggregate.csv and eigs_<id>.csv into out_dir. Returns 0 or 2.
int run_experiment(const std::string& config_path, const std::string& out_dir, const ProgressFn& progress = {},
                   std::optional<std::uint64_t> seed_override = std::nullopt, std::optional<int> threads_override = std::nullopt);

} // namespace r4
