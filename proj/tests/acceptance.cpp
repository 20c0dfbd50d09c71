// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero when a blocking criterion fails.

#include <r4/csv.hpp>
#include <r4/dynamics.hpp>
#include <r4/estimators.hpp>
#include <r4/experiments.hpp>
#include <r4/risk.hpp>
#include <r4/synth.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <sys/wait.h>

using namespace r4;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

struct Verdict {
    bool pass = true;
    std::string detail;

    void fail(const std::string& why) {
        if (pass) detail = why + (detail.empty() ? "" : "; " + detail);
        pass = false;
    }
};

int blocking_failures = 0;

void report(int id, const Verdict& v, bool blocking = true) {
    std::cout << "criterion " << id << ": " << (v.pass ? "PASS" : "FAIL") << " - " << v.detail
              << (blocking ? "" : " [informational]") << std::endl;
    if (!v.pass && blocking) ++blocking_failures;
}

fs::path config_path(const std::string& name) { return fs::path(R4_CONFIG_DIR) / name; }

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("r4_acceptance_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

CsvTable read_table(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw InputError("cannot open " + path.string());
    return read_csv(is);
}

// Two consecutive means may rise by at most two combined standard errors.
bool non_increasing(const std::vector<double>& mean, const std::vector<double>& se, std::string& where) {
    for (std::size_t i = 1; i < mean.size(); ++i) {
        const double slack = 2.0 * std::hypot(se[i - 1], se[i]);
        if (mean[i] > mean[i - 1] + slack) {
            where = "step " + std::to_string(i) + ": " + fmt(mean[i - 1]) + " -> " + fmt(mean[i]) + " (slack " +
                    fmt(slack) + ")";
            return false;
        }
    }
    return true;
}

MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    MatrixXd M(rows, cols);
    for (Eigen::Index i = 0; i < M.size(); ++i) M.data()[i] = nd(rng);
    return M;
}

// ---------------------------------------------------------------------------
// 1 and 2: exact solvers on small random problems
// ---------------------------------------------------------------------------

void exact_solvers() {
    Verdict optimality, agreement;
    double worst_risk = 0, worst_pred = 0;
    const auto t0 = Clock::now();
    std::mt19937_64 rng(20240601);
    for (int problem = 0; problem < 20; ++problem) {
        const int d = std::uniform_int_distribution<int>(2, 20)(rng);
        const int e = std::uniform_int_distribution<int>(1, 20)(rng);
        const int n = std::uniform_int_distribution<int>(30, 200)(rng);
        const int r = std::uniform_int_distribution<int>(1, std::min(d, e))(rng);
        const double gamma = problem % 2 ? 1e-6 : 1e-2;
        const MatrixXd X = normal_matrix(n, d, rng);
        const MatrixXd Y = X * normal_matrix(d, e, rng) + 0.1 * normal_matrix(n, e, rng);
        const MatrixXd Xtest = normal_matrix(50, d, rng);

        // Brute force: σᵢ² are the eigenvalues of Ĉ_γ^{-1/2} Ĉ_XY Ĉ_YX Ĉ_γ^{-1/2}.
        const MatrixXd Cx = X.transpose() * X / double(n);
        const MatrixXd Cxy = X.transpose() * Y / double(n);
        MatrixXd Cg = Cx;
        Cg.diagonal().array() += gamma;
        const Eigen::SelfAdjointEigenSolver<MatrixXd> cg(Cg);
        const MatrixXd W = cg.operatorInverseSqrt();
        const Eigen::SelfAdjointEigenSolver<MatrixXd> top(MatrixXd(W * Cxy * Cxy.transpose() * W));
        const VectorXd sig2 = top.eigenvalues().reverse();
        const double opt = Y.squaredNorm() / double(n) - sig2.head(r).sum();

        const KernelSpec lin = KernelSpec::linear();
        const GramBundle<double> g = make_gram_bundle(lin, X, lin, Y);
        const TrainingContext<double> ctx{lin, lin, std::make_shared<const MatrixXd>(X)};
        const DualEstimator<double> dual = fit_dual_exact(g, gamma, r, ctx);
        const PrimalEstimator<double> primal = fit_primal_exact(PrimalProblem<double>::from_features(X, Y), gamma, r);

        const double rd = std::abs(empirical_risk_dual(dual, g, true) - opt) / std::abs(opt);
        const double rp = std::abs(empirical_risk_primal(primal, X, Y, true) - opt) / std::abs(opt);
        worst_risk = std::max({worst_risk, rd, rp});
        if (rd > 1e-7 || rp > 1e-7)
            optimality.fail("problem " + std::to_string(problem) + " relative risk error dual " + fmt(rd) + " primal " +
                            fmt(rp));

        const MatrixXd pd = predict(dual, Xtest, Y);
        const MatrixXd pp = primal.predict(Xtest);
        const double rel = (pd - pp).norm() / std::max(pp.norm(), 1e-300);
        worst_pred = std::max(worst_pred, rel);
        if (rel > 1e-6) agreement.fail("problem " + std::to_string(problem) + " prediction mismatch " + fmt(rel));
    }
    const double secs = seconds_since(t0);
    if (secs >= 10.0) optimality.fail("runtime " + fmt(secs) + " s");
    optimality.detail += (optimality.detail.empty() ? "" : "; ") + std::string("20 problems, worst relative risk error ") +
                         fmt(worst_risk) + ", " + fmt(secs) + " s";
    agreement.detail += (agreement.detail.empty() ? "" : "; ") + std::string("worst relative prediction difference ") +
                        fmt(worst_pred);
    report(1, optimality);
    report(2, agreement);
}

// ---------------------------------------------------------------------------
// 3 and 9: bound sweeps and their reproducibility
// ---------------------------------------------------------------------------

std::string rows_without_timing(const fs::path& path) {
    std::ifstream is(path);
    std::ostringstream out;
    std::string line;
    std::size_t timing_col = std::string::npos;
    while (std::getline(is, line)) {
        if (!line.empty() && line[0] == '#') {
            out << line << '\n';
            continue;
        }
        auto fields = split_csv_line(line);
        if (timing_col == std::string::npos) {
            timing_col = static_cast<std::size_t>(std::find(fields.begin(), fields.end(), "fit_wall_ms") - fields.begin());
        }
        for (std::size_t j = 0; j < fields.size(); ++j)
            if (j != timing_col) out << fields[j] << ',';
        out << '\n';
    }
    return out.str();
}

void bound_sweeps() {
    Verdict v;
    const fs::path first = scratch("sweep_a"), second = scratch("sweep_b");
    auto t0 = Clock::now();
    const int code = run_experiment(config_path("bound_sweep.ini").string(), first.string());
    const double secs = seconds_since(t0);
    if (code != 0) v.fail("run exited with " + std::to_string(code));

    const CsvTable agg = read_table(first / "aggregate.csv");
    const auto c_sketch = agg.column("sketch_kind"), c_gap = agg.column("mean_gap"), c_r = agg.column("r"),
               c_s = agg.column("s"), c_id = agg.column("experiment_id"), c_iso = agg.column("bound_isotropic"),
               c_cor = agg.column("bound_correlated"), c_failed = agg.column("failed");
    int points = 0, violations = 0;
    double worst = 0;
    for (const auto& row : agg.rows) {
        ++points;
        const bool iso = row[c_sketch] == "isotropic";
        const double gap = std::stod(row[c_gap]);
        const double bound = std::stod(iso ? row[c_iso] : row[c_cor]);
        if (bound > 0) worst = std::max(worst, gap / bound);
        if (!(gap <= bound) || row[c_failed] != "0") {
            if (++violations <= 3)
                v.fail(row[c_id] + " r=" + row[c_r] + " s=" + row[c_s] + " " + row[c_sketch] + ": gap " + fmt(gap) +
                       " > bound " + fmt(bound));
        }
    }
    if (secs >= 900.0) v.fail("runtime " + fmt(secs) + " s");
    v.detail += (v.detail.empty() ? "" : "; ") + std::to_string(points) + " sweep points, " + std::to_string(violations) +
                " violations, largest gap/bound " + fmt(worst) + ", " + fmt(secs) + " s";
    report(3, v);

    // Second run through the command line tool.
    Verdict det;
    const std::string cmd = std::string(R4CLI_PATH) + " --config " + config_path("bound_sweep.ini").string() + " --out " +
                            second.string() + " bench > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) det.fail("second run failed");
    const std::string a = rows_without_timing(first / "rows.csv"), b = rows_without_timing(second / "rows.csv");
    if (a.empty() || a != b) det.fail("rows.csv differs between runs");
    det.detail += (det.detail.empty() ? "" : "; ") + std::to_string(std::count(a.begin(), a.end(), '\n')) +
                  " lines compared with fit_wall_ms removed";
    report(9, det);
}

// ---------------------------------------------------------------------------
// 4: exact vs randomized risk over a training size sweep
// ---------------------------------------------------------------------------

void risk_parity() {
    Verdict v;
    const RunResult res = run_experiments(load_config(config_path("risk_parity.ini").string()));
    if (res.any_failed) v.fail("some cells failed");
    std::vector<double> train_mean, train_se;
    std::string summary;
    for (const auto& a : res.aggregates) {
        if (a.algorithm != "dual_r4") continue;
        const double diff = a.extra_value("test_risk_diff_mean");
        const double trace = a.extra_value("trace_L_mean");
        summary += " n=" + std::to_string(a.n) + ": test " + fmt(diff) + " vs " + fmt(1e-3 * trace) + ", train " +
                   fmt(a.mean_gap) + ";";
        if (!(diff <= 1e-3 * trace)) v.fail("test risk difference above 1e-3 tr(L) at n=" + std::to_string(a.n));
        train_mean.push_back(a.mean_gap);
        train_se.push_back(a.stderr_gap);
    }
    std::string where;
    if (!non_increasing(train_mean, train_se, where)) v.fail("training difference increases at " + where);
    v.detail += (v.detail.empty() ? "" : ";") + summary;
    report(4, v);
}

// ---------------------------------------------------------------------------
// 5: monotonicity in power and oversampling
// ---------------------------------------------------------------------------

void power_and_oversampling() {
    Verdict v;
    const RunResult res = run_experiments(load_config(config_path("power.ini").string()));
    if (res.any_failed) v.fail("some cells failed");
    // (sketch, s, p) -> aggregate
    std::map<std::tuple<std::string, int, int>, const AggregateRow*> grid;
    std::vector<int> ss, ps;
    for (const auto& a : res.aggregates) {
        grid[{a.sketch_kind, a.s, a.p}] = &a;
        if (std::find(ss.begin(), ss.end(), a.s) == ss.end()) ss.push_back(a.s);
        if (std::find(ps.begin(), ps.end(), a.p) == ps.end()) ps.push_back(a.p);
    }
    std::sort(ss.begin(), ss.end());
    std::sort(ps.begin(), ps.end());
    int checks = 0;
    for (const std::string sketch : {"isotropic", "output_covariance"}) {
        for (int s : ss) {
            std::vector<double> m, e;
            for (int p : ps) {
                m.push_back(grid.at({sketch, s, p})->mean_gap);
                e.push_back(grid.at({sketch, s, p})->stderr_gap);
            }
            std::string where;
            ++checks;
            if (!non_increasing(m, e, where)) v.fail(sketch + " s=" + std::to_string(s) + " gap rises in p, " + where);
        }
        for (int p : ps) {
            std::vector<double> m, e;
            for (int s : ss) {
                m.push_back(grid.at({sketch, s, p})->mean_gap);
                e.push_back(grid.at({sketch, s, p})->stderr_gap);
            }
            std::string where;
            ++checks;
            if (!non_increasing(m, e, where)) v.fail(sketch + " p=" + std::to_string(p) + " gap rises in s, " + where);
        }
    }

    // Analytic bounds on the same system: strict decrease in p at the linear rate.
    SyntheticLinearConfig sc;
    sc.d = 100;
    sc.r_true = 10;
    sc.tau = 5.0;
    sc.noise_std = 0.1;
    sc.n_train = 1000;
    sc.n_test = 0;
    sc.seed = 7;
    const LinearDataset ds = synth_linear(sc);
    const KernelSpec lin = KernelSpec::linear();
    const GramBundle<double> g = make_gram_bundle(lin, ds.Xtrain, lin, ds.Ytrain);
    const double gamma = 1e-6;
    const auto spectrum = singular_spectrum(g, gamma);
    const double norm_L = spectral_norm_psd(g.L);
    const int r = 5;
    const double rate = std::pow(spectrum[r] / spectrum[r - 1], 4) + 0.05;
    double worst_ratio = 0;
    for (int s : {2, 5, 10, 20})
        for (int p = 1; p < 3; ++p) {
            const double c0 = bound_thm_correlated(spectrum, r, s, p).bound, c1 = bound_thm_correlated(spectrum, r, s, p + 1).bound;
            const double i0 = bound_thm_isotropic(spectrum, norm_L, r, s, p).bound,
                         i1 = bound_thm_isotropic(spectrum, norm_L, r, s, p + 1).bound;
            for (auto [b0, b1, name] : {std::tuple{c0, c1, "correlated"}, std::tuple{i0, i1, "isotropic"}}) {
                const double ratio = b1 / b0;
                worst_ratio = std::max(worst_ratio, ratio);
                if (!(b1 < b0) || !(ratio <= rate))
                    v.fail(std::string(name) + " bound s=" + std::to_string(s) + " p=" + std::to_string(p) + " ratio " +
                           fmt(ratio) + " vs " + fmt(rate));
            }
        }
    v.detail += (v.detail.empty() ? "" : "; ") + std::to_string(checks) + " monotone sequences, worst bound ratio " +
                fmt(worst_ratio) + " (limit " + fmt(rate) + ")";
    report(5, v);
}

// ---------------------------------------------------------------------------
// 6: Koopman eigenvalues of the noisy logistic map
// ---------------------------------------------------------------------------

void logistic_map() {
    Verdict v;
    const auto t0 = Clock::now();

    EigenvalueSet reference;
    reference.values = {{1.0, 0.0}, {-0.193, 0.191}, {-0.193, -0.191}};
    const EigenvalueSet oracle = true_koopman_eigs(20, 128);
    EigenvalueSet top3;
    top3.values.assign(oracle.values.begin(), oracle.values.begin() + 3);
    const double oracle_err = std::max(dhd(top3, reference), dhd(reference, top3));
    if (!(oracle_err <= 0.01)) v.fail("(a) oracle eigenvalues off by " + fmt(oracle_err));

    const RunConfig cfg = load_config(config_path("logistic.ini").string());
    const RunResult res = run_experiments(cfg);
    if (res.any_failed) v.fail("some cells failed");
    const int n_max = *std::max_element(cfg.experiments[0].n_train.begin(), cfg.experiments[0].n_train.end());

    double worst_r3 = 0, worst_l1 = 0;
    for (const auto& row : res.rows) {
        if (row.algorithm != "dual_r4" || row.n != n_max) continue;
        const double r3 = row.extra_value("dhd_r3");
        const double l1 = std::abs(std::complex<double>(row.extra_value("lambda1_re"), row.extra_value("lambda1_im")) - 1.0);
        worst_r3 = std::max(worst_r3, std::isnan(r3) ? INFINITY : r3);
        worst_l1 = std::max(worst_l1, l1);
    }
    if (!(worst_r3 <= 0.05)) v.fail("(b) dhd(R4, exact) " + fmt(worst_r3) + " at n=" + std::to_string(n_max));
    if (!(worst_l1 <= 0.02)) v.fail("(d) |lambda1 - 1| = " + fmt(worst_l1));

    std::vector<double> m, e, mx, ex;
    std::map<int, std::pair<double, double>> by_n;  // n -> (R4, exact)
    for (const auto& a : res.aggregates) {
        const double mean = a.extra_value("dhd_true_mean"), se = a.extra_value("dhd_true_se");
        if (a.algorithm == "dual_r4") {
            m.push_back(mean);
            e.push_back(se);
            by_n[a.n].first = mean;
        } else if (a.algorithm == "dual_exact") {
            mx.push_back(mean);
            ex.push_back(se);
            by_n[a.n].second = mean;
        }
    }
    std::string curve = "mean dhd_true R4/exact by n:";
    for (const auto& [n, pair] : by_n) curve += " " + std::to_string(n) + "=" + fmt(pair.first) + "/" + fmt(pair.second);
    std::string where;
    if (!non_increasing(m, e, where)) v.fail("(c) R4 dhd_true increases at " + where);
    if (!non_increasing(mx, ex, where)) v.fail("(c) exact dhd_true increases at " + where);

    const double secs = seconds_since(t0);
    if (secs >= 600.0) v.fail("runtime " + fmt(secs) + " s");
    v.detail += (v.detail.empty() ? "" : "; ") + std::string("oracle error ") + fmt(oracle_err) + ", dhd(R4, exact) " +
                fmt(worst_r3) + ", |lambda1 - 1| " + fmt(worst_l1) + ", " + curve + ", " + fmt(secs) + " s";
    report(6, v);
}

// ---------------------------------------------------------------------------
// 7: per-seed gap against the rangefinder residual
// ---------------------------------------------------------------------------

void per_seed_inequality() {
    Verdict v;
    int checked = 0;
    double worst = -INFINITY;
    for (int d : {6, 10, 15, 20}) {
        SyntheticLinearConfig sc;
        sc.d = d;
        sc.r_true = d / 3;
        sc.tau = 1.0;
        sc.noise_std = 0.1;
        sc.n_train = 80;
        sc.n_test = 0;
        sc.seed = 500 + d;
        const LinearDataset ds = synth_linear(sc);
        const KernelSpec lin = KernelSpec::linear();
        const GramBundle<double> g = make_gram_bundle(lin, ds.Xtrain, lin, ds.Ytrain);
        for (double gamma : {1e-2, 1e-4})
            for (int r : {1, 3})
                for (int s : {2, 4})
                    for (int p : {1, 2})
                        for (auto dist : {SketchDistribution::Isotropic, SketchDistribution::OutputCovariance})
                            for (std::uint64_t seed = 0; seed < 10; ++seed) {
                                const SketchSpec spec{r, s, p, dist, hash_combine(static_cast<std::uint64_t>(d), seed)};
                                const MatrixXd omega = gaussian_sketch<double>(g.n(), spec, &g.L);
                                const double gap = empirical_risk_dual(fit_dual_r4(g, gamma, spec, omega), g, true) -
                                                   optimal_risk(g, gamma, r);
                                const double res = rangefinder_residual(g, gamma, omega, p, r);
                                worst = std::max(worst, gap - res);
                                ++checked;
                                if (!(gap <= res + 1e-8))
                                    v.fail("d=" + std::to_string(d) + " r=" + std::to_string(r) + " seed " +
                                           std::to_string(seed) + ": gap " + fmt(gap) + " > " + fmt(res));
                            }
    }
    v.detail += (v.detail.empty() ? "" : "; ") + std::to_string(checked) + " seeds, max(gap - residual) " + fmt(worst);
    report(7, v);
}

// ---------------------------------------------------------------------------
// 8: wall time
// ---------------------------------------------------------------------------

void timing() {
    Verdict v;
    const RunResult res = run_experiments(load_config(config_path("timing.ini").string()));
    if (res.any_failed) v.fail("some timing runs failed");
    double exact = NAN, r4 = NAN;
    for (const auto& a : res.aggregates) {
        if (a.n != 2000) continue;
        if (a.algorithm == "dual_exact") exact = a.median_fit_ms;
        if (a.algorithm == "dual_r4") r4 = a.median_fit_ms;
    }
    const double ratio = r4 / exact;
    if (!(ratio <= 0.5)) v.fail("R4/exact wall time ratio " + fmt(ratio));
    v.detail += (v.detail.empty() ? "" : "; ") + std::string("n=2000 median exact ") + fmt(exact) + " ms, R4 " + fmt(r4) +
                " ms, ratio " + fmt(ratio);
    report(8, v, false);
}

} // namespace

int main() {
    const auto steps = {exact_solvers, per_seed_inequality, risk_parity, power_and_oversampling, logistic_map, timing,
                        bound_sweeps};
    for (auto step : steps) {
        try {
            step();
        } catch (const std::exception& e) {
            std::cout << "error: " << e.what() << std::endl;
            ++blocking_failures;
        }
    }
    std::cout << (blocking_failures ? "acceptance: FAIL (" + std::to_string(blocking_failures) + " blocking)"
                                    : std::string("acceptance: PASS"))
              << std::endl;
    return blocking_failures ? 1 : 0;
}
