#include <r4/csv.hpp>
#include <r4/estimators.hpp>
#include <r4/experiments.hpp>
#include <r4/random.hpp>
#include <r4/risk.hpp>
#include <r4/synth.hpp>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

namespace r4 {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// ---------------------------------------------------------------------------
// config parsing
// ---------------------------------------------------------------------------

std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

// Line of `key` inside `[section]`, or of the section header when key is empty; 0 if not found.
int line_of(const std::string& text, const std::string& section, const std::string& key) {
    std::istringstream is(text);
    std::string line, current;
    int no = 0;
    while (std::getline(is, line)) {
        ++no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == ';' || t[0] == '#') continue;
        if (t.front() == '[' && t.back() == ']') {
            current = trim(t.substr(1, t.size() - 2));
            if (key.empty() && current == section) return no;
            continue;
        }
        const auto eq = t.find('=');
        if (current == section && eq != std::string::npos && trim(t.substr(0, eq)) == key) return no;
    }
    return 0;
}

class FieldReader {
public:
    FieldReader(const std::string& text, std::string section) : text_(text), section_(std::move(section)) {}

    [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
        const int line = line_of(text_, section_, key);
        std::string where = "config";
        if (line > 0) where += " line " + std::to_string(line);
        where += " [" + section_ + "]";
        if (!key.empty()) where += " " + key;
        throw ConfigError(where + ": " + msg);
    }

    template <typename T>
    T number(const std::string& key, const std::string& value) const {
        T v{};
        const std::string s = trim(value);
        const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
            fail(key, "cannot parse '" + value + "' as a number");
        return v;
    }

    std::vector<int> int_list(const std::string& key, const std::string& value) const {
        try {
            return parse_int_list(value);
        } catch (const InputError& e) {
            fail(key, e.what());
        }
    }

private:
    const std::string& text_;
    std::string section_;
};

SketchDistribution parse_sketch(const FieldReader& f, const std::string& key, const std::string& name) {
    const std::string t = trim(name);
    if (t == "isotropic") return SketchDistribution::Isotropic;
    if (t == "output_covariance") return SketchDistribution::OutputCovariance;
    f.fail(key, "unknown sketch '" + t + "' (expected isotropic or output_covariance)");
}

ExperimentKind parse_kind(const FieldReader& f, const std::string& value) {
    const std::string t = trim(value);
    if (t == "bound_sweep") return ExperimentKind::BoundSweep;
    if (t == "risk_parity") return ExperimentKind::RiskParity;
    if (t == "logistic") return ExperimentKind::Logistic;
    if (t == "timing") return ExperimentKind::Timing;
    f.fail("kind", "unknown experiment kind '" + t + "' (expected bound_sweep, risk_parity, logistic or timing)");
}

void require_positive(const FieldReader& f, const std::string& key, const std::vector<int>& v, int minimum) {
    for (int x : v)
        if (x < minimum) f.fail(key, "values must be >= " + std::to_string(minimum));
}

ExperimentConfig parse_experiment(const std::string& text, const std::string& section, const std::string& id,
                                  const boost::property_tree::ptree& sec) {
    const FieldReader f(text, section);
    ExperimentConfig e;
    e.id = id;
    bool have_kind = false, have_seeds = false;
    for (const auto& [key, node] : sec) {
        const std::string& v = node.data();
        if (key == "kind") {
            e.kind = parse_kind(f, v);
            have_kind = true;
        } else if (key == "seeds") {
            e.seeds = f.int_list(key, v);
            have_seeds = true;
        } else if (key == "d") e.d = f.number<int>(key, v);
        else if (key == "r_true") e.r_true = f.number<int>(key, v);
        else if (key == "tau") e.tau = f.number<double>(key, v);
        else if (key == "noise_std") e.noise_std = f.number<double>(key, v);
        else if (key == "n_train") e.n_train = f.int_list(key, v);
        else if (key == "n_test") e.n_test = f.number<int>(key, v);
        else if (key == "gamma") e.gamma = f.number<double>(key, v);
        else if (key == "rank") e.rank = f.int_list(key, v);
        else if (key == "oversampling") e.oversampling = f.int_list(key, v);
        else if (key == "power") e.power = f.int_list(key, v);
        else if (key == "sketch") {
            e.sketch.clear();
            std::stringstream ss(v);
            std::string item;
            while (std::getline(ss, item, ',')) e.sketch.push_back(parse_sketch(f, key, item));
            if (e.sketch.empty()) f.fail(key, "empty sketch list");
        } else if (key == "noise_order") e.noise_order = f.number<int>(key, v);
        else if (key == "basis_size") e.basis_size = f.number<int>(key, v);
        else if (key == "kernel") {
            try {
                e.kernel = parse_kernel_family(trim(v));
            } catch (const InputError& err) {
                f.fail(key, err.what());
            }
        } else if (key == "lengthscale") e.lengthscale = f.number<double>(key, v);
        else if (key == "burn_in") e.burn_in = f.number<int>(key, v);
        else if (key == "exact_max_n") e.exact_max_n = f.number<int>(key, v);
        else if (key == "repeats") e.repeats = f.number<int>(key, v);
        else if (key == "warmup") e.warmup = f.number<int>(key, v);
        else f.fail(key, "unknown key");
    }
    if (!have_kind) f.fail("", "missing key 'kind'");
    if (!have_seeds) f.fail("", "missing key 'seeds'");
    require_positive(f, "seeds", e.seeds, 0);
    require_positive(f, "n_train", e.n_train, 2);
    require_positive(f, "rank", e.rank, 1);
    require_positive(f, "oversampling", e.oversampling, 2);
    require_positive(f, "power", e.power, 1);
    if (!(e.gamma > 0.0)) f.fail("gamma", "must be positive");
    if (e.d < 1) f.fail("d", "must be >= 1");
    if (e.r_true < 0 || e.r_true > e.d) f.fail("r_true", "must lie in [0, d]");
    if (!(e.tau > 0.0)) f.fail("tau", "must be positive");
    if (!(e.noise_std >= 0.0)) f.fail("noise_std", "must be >= 0");
    if (e.n_test < 0) f.fail("n_test", "must be >= 0");
    if (e.kind == ExperimentKind::RiskParity && e.n_test < 1) f.fail("n_test", "risk_parity needs test points");
    if (e.noise_order < 2 || e.noise_order % 2) f.fail("noise_order", "must be a positive even integer");
    if (e.basis_size < 3 * e.noise_order) f.fail("basis_size", "must be at least 3 * noise_order");
    if (e.lengthscale < 0.0) f.fail("lengthscale", "must be >= 0 (0 selects the median heuristic)");
    if (e.burn_in < 0) f.fail("burn_in", "must be >= 0");
    if (e.repeats < 1) f.fail("repeats", "must be >= 1");
    if (e.warmup < 0) f.fail("warmup", "must be >= 0");
    return e;
}

// ---------------------------------------------------------------------------
// running
// ---------------------------------------------------------------------------

std::uint64_t string_hash(const std::string& s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

std::string_view sketch_name(SketchDistribution d) {
    return d == SketchDistribution::Isotropic ? "isotropic" : "output_covariance";
}

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point t0) {
    const double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    return std::max(ms, 1e-6);
}

std::string sanitize(std::string msg) {
    for (char& c : msg)
        if (c == ',' || c == '\n' || c == '\r') c = ';';
    return msg;
}

struct CellOutput {
    std::vector<ExperimentRow> rows;
    std::vector<EigenRecord> eigs;
};

struct Cell {
    ExperimentRow base;  ///< identifying columns, copied into every row of the cell
    std::function<void(CellOutput&)> run;
};

void fail_cell(CellOutput& out, const ExperimentRow& base, const std::string& algorithm, const std::string& what) {
    ExperimentRow row = base;
    row.algorithm = algorithm;
    row.status = "failed:" + sanitize(what);
    row.empirical_risk = row.optimal_risk = row.gap = kNaN;
    row.bound_correlated = row.bound_isotropic = kNaN;
    row.fit_wall_ms = 1e-6;
    out.rows.push_back(std::move(row));
}

void execute(std::vector<Cell>& cells, int threads, std::vector<CellOutput>& outputs) {
    outputs.assign(cells.size(), {});
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) {
            try {
                cells[i].run(outputs[i]);
            } catch (const std::exception& e) {
                fail_cell(outputs[i], cells[i].base, cells[i].base.algorithm, e.what());
            }
        }
    };
    const int count = std::max(1, std::min<int>(threads, static_cast<int>(cells.size())));
    if (count == 1) {
        worker();
        return;
    }
    std::vector<std::thread> pool;
    for (int t = 0; t < count; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
}

struct LinearProblem {
    LinearDataset data;
    GramBundle<double> grams;
    SingularSpectrum<double> spectrum;
    double trace_L = 0;
    double norm_L = 0;
    std::unique_ptr<RegularizedDual<double>> sys;
    MatrixXd l_factor;  ///< pivoted Cholesky factor of L, for correlated sketches
};

std::shared_ptr<LinearProblem> make_linear_problem(const ExperimentConfig& e, int n, std::uint64_t data_seed,
                                                   bool need_factor) {
    SyntheticLinearConfig sc;
    sc.d = e.d;
    sc.r_true = e.r_true;
    sc.tau = e.tau;
    sc.noise_std = e.noise_std;
    sc.n_train = n;
    sc.n_test = 0;
    sc.seed = data_seed;
    auto lp = std::make_shared<LinearProblem>();
    lp->data = synth_linear(sc);
    const KernelSpec lin = KernelSpec::linear();
    lp->grams = make_gram_bundle(lin, lp->data.Xtrain, lin, lp->data.Ytrain);
    lp->spectrum = singular_spectrum(lp->grams, e.gamma);
    lp->trace_L = lp->grams.L.trace();
    lp->norm_L = spectral_norm_psd(lp->grams.L);
    lp->sys = std::make_unique<RegularizedDual<double>>(lp->grams, e.gamma);
    if (need_factor) lp->l_factor = pivoted_cholesky(lp->grams.L);
    return lp;
}

double bound_or_nan(const std::function<BoundReport()>& f) {
    try {
        return f().bound;
    } catch (const InputError&) {
        return kNaN;
    }
}

std::vector<Cell> bound_sweep_cells(const ExperimentConfig& e, std::uint64_t exp_seed) {
    std::vector<Cell> cells;
    const bool need_factor = std::find(e.sketch.begin(), e.sketch.end(), SketchDistribution::OutputCovariance) != e.sketch.end();
    int cell = 0;
    for (std::size_t ni = 0; ni < e.n_train.size(); ++ni) {
        const int n = e.n_train[ni];
        // One data set per n; only the sketches vary across seeds.
        auto lp = make_linear_problem(e, n, hash_combine(exp_seed, 0xDA7A0000ULL + ni), need_factor);
        for (int r : e.rank)
            for (int s : e.oversampling)
                for (int p : e.power) {
                    const double opt = r <= lp->spectrum.size() ? optimal_risk(lp->trace_L, lp->spectrum, r) : kNaN;
                    const double bc = bound_or_nan([&] { return bound_thm_correlated(lp->spectrum, r, s, p); });
                    const double bi = bound_or_nan([&] { return bound_thm_isotropic(lp->spectrum, lp->norm_L, r, s, p); });
                    for (SketchDistribution dist : e.sketch)
                        for (int seed : e.seeds) {
                            Cell c;
                            c.base.experiment_id = e.id;
                            c.base.cell = cell;
                            c.base.seed = seed;
                            c.base.n = n;
                            c.base.d = e.d;
                            c.base.r = r;
                            c.base.s = s;
                            c.base.p = p;
                            c.base.gamma = e.gamma;
                            c.base.sketch_kind = std::string(sketch_name(dist));
                            c.base.algorithm = "dual_r4";
                            const std::uint64_t cs = hash_combine(exp_seed, static_cast<std::uint64_t>(cell));
                            c.run = [lp, base = c.base, dist, cs, opt, bc, bi](CellOutput& out) {
                                SketchSpec spec{base.r, base.s, base.p, dist, cs};
                                const MatrixXd omega = dist == SketchDistribution::Isotropic
                                                           ? gaussian_sketch<double>(base.n, spec)
                                                           : gaussian_sketch_from_factor(lp->l_factor, spec);
                                const auto t0 = Clock::now();
                                const DualEstimator<double> est = fit_dual_r4(*lp->sys, spec, omega);
                                const double ms = elapsed_ms(t0);
                                ExperimentRow row = base;
                                row.empirical_risk = empirical_risk_dual(est, lp->grams, true);
                                row.optimal_risk = opt;
                                row.gap = row.empirical_risk - row.optimal_risk;
                                row.bound_correlated = bc;
                                row.bound_isotropic = bi;
                                row.fit_wall_ms = ms;
                                out.rows.push_back(std::move(row));
                            };
                            cells.push_back(std::move(c));
                            ++cell;
                        }
                }
    }
    return cells;
}

double test_risk(const DualEstimator<double>& est, const LinearDataset& ds) {
    const MatrixXd pred = predict(est, ds.Xtest, ds.Ytrain);
    return (ds.Ytest - pred).squaredNorm() / double(ds.Xtest.rows());
}

std::vector<Cell> risk_parity_cells(const ExperimentConfig& e, std::uint64_t exp_seed) {
    std::vector<Cell> cells;
    const std::uint64_t basis_seed = hash_combine(exp_seed, 0xBA515ULL);
    int cell = 0;
    for (int n : e.n_train)
        for (int r : e.rank)
            for (int s : e.oversampling)
                for (int p : e.power)
                    for (int seed : e.seeds) {
                        Cell c;
                        c.base.experiment_id = e.id;
                        c.base.cell = cell;
                        c.base.seed = seed;
                        c.base.n = n;
                        c.base.d = e.d;
                        c.base.r = r;
                        c.base.s = s;
                        c.base.p = p;
                        c.base.gamma = e.gamma;
                        c.base.sketch_kind = "none";
                        c.base.algorithm = "dual_exact";
                        c.base.bound_correlated = c.base.bound_isotropic = kNaN;
                        const std::uint64_t cs = hash_combine(exp_seed, static_cast<std::uint64_t>(cell));
                        c.run = [e, base = c.base, cs, basis_seed](CellOutput& out) {
                            SyntheticLinearConfig sc;
                            sc.d = e.d;
                            sc.r_true = e.r_true;
                            sc.tau = e.tau;
                            sc.noise_std = e.noise_std;
                            sc.n_train = base.n;
                            sc.n_test = e.n_test;
                            sc.seed = hash_combine(cs, 1);
                            sc.basis_seed = basis_seed;
                            const LinearDataset ds = synth_linear(sc);
                            const KernelSpec lin = KernelSpec::linear();
                            const GramBundle<double> g = make_gram_bundle(lin, ds.Xtrain, lin, ds.Ytrain);
                            TrainingContext<double> ctx{lin, lin, std::make_shared<const MatrixXd>(ds.Xtrain)};

                            auto t0 = Clock::now();
                            const DualEstimator<double> exact = fit_dual_exact(g, base.gamma, base.r, ctx);
                            const double exact_ms = elapsed_ms(t0);
                            const double opt = empirical_risk_dual(exact, g, true);
                            const double exact_test = test_risk(exact, ds);
                            ExperimentRow row = base;
                            row.empirical_risk = opt;
                            row.optimal_risk = opt;
                            row.gap = 0.0;
                            row.fit_wall_ms = exact_ms;
                            row.extra = {{"test_risk", exact_test}, {"trace_L", g.L.trace()}};
                            out.rows.push_back(row);

                            std::uint64_t stream = 2;
                            for (SketchDistribution dist : e.sketch) {
                                ExperimentRow rr = base;
                                rr.algorithm = "dual_r4";
                                rr.sketch_kind = std::string(sketch_name(dist));
                                try {
                                    SketchSpec spec{base.r, base.s, base.p, dist, hash_combine(cs, stream++)};
                                    const MatrixXd omega = gaussian_sketch<double>(base.n, spec, &g.L);
                                    t0 = Clock::now();
                                    const DualEstimator<double> est = fit_dual_r4(g, base.gamma, spec, omega, ctx);
                                    rr.fit_wall_ms = elapsed_ms(t0);
                                    rr.empirical_risk = empirical_risk_dual(est, g, true);
                                    rr.optimal_risk = opt;
                                    rr.gap = rr.empirical_risk - opt;
                                    const double tr = test_risk(est, ds);
                                    rr.extra = {{"test_risk", tr},
                                                {"test_risk_diff", std::abs(tr - exact_test)},
                                                {"trace_L", g.L.trace()}};
                                    out.rows.push_back(std::move(rr));
                                } catch (const std::exception& err) {
                                    fail_cell(out, rr, rr.algorithm, err.what());
                                }
                            }
                        };
                        cells.push_back(std::move(c));
                        ++cell;
                    }
    return cells;
}

EigenvalueSet to_set(const ComplexVector<double>& v) {
    EigenvalueSet s;
    s.values.assign(v.data(), v.data() + v.size());
    return s;
}

std::vector<Cell> logistic_cells(const ExperimentConfig& e, std::uint64_t exp_seed, std::vector<EigenRecord>& fixed) {
    std::vector<Cell> cells;
    const EigenvalueSet all_true = true_koopman_eigs(e.noise_order, e.basis_size);
    fixed.push_back({e.id, -1, 0, 0, "true", all_true});
    int cell = 0;
    for (int n : e.n_train)
        for (int seed : e.seeds) {
            Cell c;
            c.base.experiment_id = e.id;
            c.base.cell = cell;
            c.base.seed = seed;
            c.base.n = n;
            c.base.d = 1;
            c.base.gamma = e.gamma;
            c.base.sketch_kind = "none";
            c.base.algorithm = "dual_r4";
            c.base.bound_correlated = c.base.bound_isotropic = kNaN;
            const std::uint64_t cs = hash_combine(exp_seed, static_cast<std::uint64_t>(cell));
            c.run = [e, base = c.base, cs, all_true](CellOutput& out) {
                CounterRng start(hash_combine(cs, 3));
                LogisticMapConfig lc;
                lc.noise_order = e.noise_order;
                lc.length = base.n + e.burn_in;
                lc.x0 = static_cast<double>(start() >> 11) * 0x1.0p-53;
                lc.seed = hash_combine(cs, 1);
                const std::vector<double> traj = logistic_trajectory(lc);
                MatrixXd X(base.n, 1), Y(base.n, 1);
                for (int i = 0; i < base.n; ++i) {
                    X(i, 0) = traj[static_cast<std::size_t>(e.burn_in + i)];
                    Y(i, 0) = traj[static_cast<std::size_t>(e.burn_in + i + 1)];
                }
                double ell = e.lengthscale;
                if (ell == 0.0) {
                    const double q[] = {0.5};
                    ell = lengthscale_quantiles(X, std::min(base.n, 1000), q, hash_combine(cs, 4))[0];
                }
                const KernelSpec k = KernelSpec::checked({e.kernel, ell});
                const GramBundle<double> g = make_gram_bundle(k, X, k, Y);
                const RegularizedDual<double> sys(g, base.gamma);
                const bool with_exact = base.n <= e.exact_max_n;

                std::uint64_t stream = 10;
                for (int r : e.rank) {
                    EigenvalueSet truth;
                    truth.values.assign(all_true.values.begin(),
                                        all_true.values.begin() + std::min<std::size_t>(r, all_true.size()));
                    std::optional<EigenvalueSet> exact_eigs;
                    double opt = kNaN;
                    ExperimentRow er = base;
                    er.r = r;
                    er.algorithm = "dual_exact";
                    if (with_exact) {
                        try {
                            const auto t0 = Clock::now();
                            const DualEstimator<double> exact = fit_dual_exact(sys, r);
                            er.fit_wall_ms = elapsed_ms(t0);
                            exact_eigs = to_set(spectral(exact, g.Kxy).eigenvalues);
                            opt = empirical_risk_dual(exact, g, true);
                            er.empirical_risk = er.optimal_risk = opt;
                            er.gap = 0.0;
                            er.extra = {{"dhd_true", dhd(*exact_eigs, truth)}, {"lengthscale", ell}};
                            out.rows.push_back(er);
                            out.eigs.push_back({base.experiment_id, base.cell, base.n, base.seed, "dual_exact", *exact_eigs});
                        } catch (const std::exception& err) {
                            fail_cell(out, er, er.algorithm, err.what());
                        }
                    }
                    for (int s : e.oversampling)
                        for (int p : e.power)
                            for (SketchDistribution dist : e.sketch) {
                                ExperimentRow rr = base;
                                rr.r = r;
                                rr.s = s;
                                rr.p = p;
                                rr.sketch_kind = std::string(sketch_name(dist));
                                try {
                                    SketchSpec spec{r, s, p, dist, hash_combine(cs, stream++)};
                                    const MatrixXd omega = gaussian_sketch<double>(base.n, spec, &g.L);
                                    const auto t0 = Clock::now();
                                    const DualEstimator<double> est = fit_dual_r4(sys, spec, omega);
                                    rr.fit_wall_ms = elapsed_ms(t0);
                                    const EigenvalueSet eigs = to_set(spectral(est, g.Kxy).eigenvalues);
                                    rr.empirical_risk = empirical_risk_dual(est, g, true);
                                    rr.optimal_risk = opt;
                                    rr.gap = rr.empirical_risk - opt;
                                    rr.extra = {{"dhd_true", dhd(eigs, truth)}};
                                    if (exact_eigs) rr.extra.emplace_back("dhd_r3", dhd(eigs, *exact_eigs));
                                    rr.extra.emplace_back("lambda1_re", eigs.values.front().real());
                                    rr.extra.emplace_back("lambda1_im", eigs.values.front().imag());
                                    rr.extra.emplace_back("lengthscale", ell);
                                    out.rows.push_back(std::move(rr));
                                    out.eigs.push_back({base.experiment_id, base.cell, base.n, base.seed, "dual_r4", eigs});
                                } catch (const std::exception& err) {
                                    fail_cell(out, rr, rr.algorithm, err.what());
                                }
                            }
                }
            };
            cells.push_back(std::move(c));
            ++cell;
        }
    return cells;
}

// Timing runs sequentially in the calling thread so repeats do not compete for cores.
std::vector<ExperimentRow> timing_rows(const ExperimentConfig& e, std::uint64_t exp_seed) {
    std::vector<ExperimentRow> rows;
    int cell = 0;
    for (std::size_t ni = 0; ni < e.n_train.size(); ++ni) {
        const int n = e.n_train[ni];
        SyntheticLinearConfig sc;
        sc.d = e.d;
        sc.r_true = e.r_true;
        sc.tau = e.tau;
        sc.noise_std = e.noise_std;
        sc.n_train = n;
        sc.n_test = 0;
        sc.seed = hash_combine(exp_seed, 0xDA7A0000ULL + ni);
        const LinearDataset ds = synth_linear(sc);
        const KernelSpec lin = KernelSpec::linear();
        const GramBundle<double> g = make_gram_bundle(lin, ds.Xtrain, lin, ds.Ytrain);
        const int r = e.rank.front(), s = e.oversampling.front(), p = e.power.front();
        const SketchDistribution dist = e.sketch.front();

        ExperimentRow base;
        base.experiment_id = e.id;
        base.n = n;
        base.d = e.d;
        base.r = r;
        base.s = s;
        base.p = p;
        base.gamma = e.gamma;
        base.bound_correlated = base.bound_isotropic = kNaN;
        base.optimal_risk = base.gap = kNaN;

        auto time_one = [&](const std::string& algorithm, int rep, bool record) {
            ExperimentRow row = base;
            row.cell = cell;
            row.seed = rep;
            row.algorithm = algorithm;
            row.sketch_kind = algorithm == "dual_r4" ? std::string(sketch_name(dist)) : "none";
            try {
                DualEstimator<double> est;
                if (algorithm == "dual_r4") {
                    SketchSpec spec{r, s, p, dist, hash_combine(exp_seed, static_cast<std::uint64_t>(cell))};
                    const MatrixXd omega = gaussian_sketch<double>(n, spec, &g.L);
                    const auto t0 = Clock::now();
                    est = fit_dual_r4(g, e.gamma, spec, omega);
                    row.fit_wall_ms = elapsed_ms(t0);
                } else {
                    const auto t0 = Clock::now();
                    est = fit_dual_exact(g, e.gamma, r);
                    row.fit_wall_ms = elapsed_ms(t0);
                }
                row.empirical_risk = empirical_risk_dual(est, g, true);
            } catch (const std::exception& err) {
                row.status = "failed:" + sanitize(err.what());
                row.empirical_risk = kNaN;
            }
            if (record) {
                rows.push_back(std::move(row));
                ++cell;
            }
        };
        for (const std::string alg : {"dual_exact", "dual_r4"}) {
            for (int w = 0; w < e.warmup; ++w) time_one(alg, -1, false);
            for (int rep = 0; rep < e.repeats; ++rep) time_one(alg, rep, true);
        }
    }
    return rows;
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return kNaN;
    return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

double stderr_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / double(v.size() - 1)) / std::sqrt(double(v.size()));
}

double median_of(std::vector<double> v) {
    if (v.empty()) return kNaN;
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

std::string join_extra(const std::vector<std::pair<std::string, double>>& extra) {
    std::string out;
    for (const auto& [k, v] : extra) {
        if (!out.empty()) out += ';';
        out += k + "=" + format_double(v);
    }
    return out;
}

double lookup(const std::vector<std::pair<std::string, double>>& extra, const std::string& key) {
    for (const auto& [k, v] : extra)
        if (k == key) return v;
    return kNaN;
}

} // namespace

std::string_view to_string(ExperimentKind kind) {
    switch (kind) {
        case ExperimentKind::BoundSweep: return "bound_sweep";
        case ExperimentKind::RiskParity: return "risk_parity";
        case ExperimentKind::Logistic: return "logistic";
        case ExperimentKind::Timing: return "timing";
    }
    return "unknown";
}

double ExperimentRow::extra_value(const std::string& key) const { return lookup(extra, key); }
double AggregateRow::extra_value(const std::string& key) const { return lookup(extra, key); }

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    auto to_int = [&](const std::string& s) {
        const std::string t = trim(s);
        int v = 0;
        const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
        if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size())
            throw InputError("cannot parse '" + t + "' as an integer");
        return v;
    };
    while (std::getline(ss, item, ',')) {
        if (trim(item).empty()) continue;
        const auto dots = item.find("..");
        if (dots == std::string::npos) {
            out.push_back(to_int(item));
            continue;
        }
        const int lo = to_int(item.substr(0, dots));
        const int hi = to_int(item.substr(dots + 2));
        if (hi < lo) throw InputError("range '" + trim(item) + "' is empty");
        for (int v = lo; v <= hi; ++v) out.push_back(v);
    }
    if (out.empty()) throw InputError("empty list");
    return out;
}

RunConfig parse_config(std::istream& is) {
    const std::string text{std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
    boost::property_tree::ptree pt;
    try {
        std::istringstream ss(text);
        boost::property_tree::ini_parser::read_ini(ss, pt);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
    }
    RunConfig cfg;
    for (const auto& [name, sec] : pt) {
        const FieldReader f(text, name);
        if (sec.empty() && !sec.data().empty()) f.fail("", "key '" + name + "' outside of any section");
        if (name == "run") {
            for (const auto& [key, node] : sec) {
                if (key == "master_seed") cfg.master_seed = f.number<std::uint64_t>(key, node.data());
                else if (key == "threads") cfg.threads = f.number<int>(key, node.data());
                else f.fail(key, "unknown key");
            }
            if (cfg.threads < 1) f.fail("threads", "must be >= 1");
        } else if (name.rfind("experiment.", 0) == 0 && name.size() > 11) {
            cfg.experiments.push_back(parse_experiment(text, name, name.substr(11), sec));
        } else {
            f.fail("", "unknown section (expected [run] or [experiment.<id>])");
        }
    }
    if (cfg.experiments.empty()) throw ConfigError("config: no [experiment.<id>] sections");
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    return parse_config(in);
}

RunResult run_experiments(const RunConfig& cfg, const ProgressFn& progress) {
    RunResult result;
    for (const ExperimentConfig& e : cfg.experiments) {
        if (progress) progress("experiment " + e.id + " (" + std::string(to_string(e.kind)) + ")");
        const std::uint64_t exp_seed = hash_combine(cfg.master_seed, string_hash(e.id));
        if (e.kind == ExperimentKind::Timing) {
            auto rows = timing_rows(e, exp_seed);
            result.rows.insert(result.rows.end(), rows.begin(), rows.end());
            continue;
        }
        std::vector<Cell> cells;
        switch (e.kind) {
            case ExperimentKind::BoundSweep: cells = bound_sweep_cells(e, exp_seed); break;
            case ExperimentKind::RiskParity: cells = risk_parity_cells(e, exp_seed); break;
            case ExperimentKind::Logistic: cells = logistic_cells(e, exp_seed, result.eigenvalues); break;
            case ExperimentKind::Timing: break;
        }
        std::vector<CellOutput> outputs;
        execute(cells, cfg.threads, outputs);
        for (auto& o : outputs) {
            result.rows.insert(result.rows.end(), o.rows.begin(), o.rows.end());
            result.eigenvalues.insert(result.eigenvalues.end(), o.eigs.begin(), o.eigs.end());
        }
    }
    for (const auto& row : result.rows)
        if (row.status != "ok") result.any_failed = true;
    result.aggregates = aggregate(result.rows);
    return result;
}

std::vector<AggregateRow> aggregate(const std::vector<ExperimentRow>& rows) {
    struct Acc {
        AggregateRow head;
        std::vector<double> risk, opt, gap, bc, bi, ms;
        std::vector<std::string> keys;
        std::map<std::string, std::vector<double>> extra;
    };
    std::vector<Acc> groups;
    std::map<std::string, std::size_t> index;
    for (const ExperimentRow& r : rows) {
        std::ostringstream key;
        key << r.experiment_id << '|' << r.n << '|' << r.d << '|' << r.r << '|' << r.s << '|' << r.p << '|'
            << format_double(r.gamma) << '|' << r.sketch_kind << '|' << r.algorithm;
        auto [it, inserted] = index.try_emplace(key.str(), groups.size());
        if (inserted) {
            Acc a;
            a.head.experiment_id = r.experiment_id;
            a.head.n = r.n;
            a.head.d = r.d;
            a.head.r = r.r;
            a.head.s = r.s;
            a.head.p = r.p;
            a.head.gamma = r.gamma;
            a.head.sketch_kind = r.sketch_kind;
            a.head.algorithm = r.algorithm;
            groups.push_back(std::move(a));
        }
        Acc& a = groups[it->second];
        if (r.status != "ok") {
            ++a.head.failed;
            continue;
        }
        ++a.head.count;
        a.risk.push_back(r.empirical_risk);
        a.opt.push_back(r.optimal_risk);
        a.gap.push_back(r.gap);
        a.bc.push_back(r.bound_correlated);
        a.bi.push_back(r.bound_isotropic);
        a.ms.push_back(r.fit_wall_ms);
        for (const auto& [k, v] : r.extra) {
            if (!a.extra.count(k)) a.keys.push_back(k);
            a.extra[k].push_back(v);
        }
    }
    std::vector<AggregateRow> out;
    for (Acc& a : groups) {
        AggregateRow row = a.head;
        row.mean_empirical_risk = mean_of(a.risk);
        row.mean_optimal_risk = mean_of(a.opt);
        row.mean_gap = mean_of(a.gap);
        row.stderr_gap = stderr_of(a.gap);
        row.bound_correlated = mean_of(a.bc);
        row.bound_isotropic = mean_of(a.bi);
        row.median_fit_ms = median_of(a.ms);
        for (const auto& k : a.keys) {
            row.extra.emplace_back(k + "_mean", mean_of(a.extra[k]));
            row.extra.emplace_back(k + "_se", stderr_of(a.extra[k]));
        }
        out.push_back(std::move(row));
    }
    return out;
}

void write_rows_csv(std::ostream& os, const std::vector<ExperimentRow>& rows) {
    os << "# schema=1\n"
       << "experiment_id,cell,seed,n,d,r,s,p,gamma,sketch_kind,algorithm,status,empirical_risk,optimal_risk,gap,"
          "bound_correlated,bound_isotropic,fit_wall_ms,extra\n";
    for (const ExperimentRow& r : rows)
        os << r.experiment_id << ',' << r.cell << ',' << r.seed << ',' << r.n << ',' << r.d << ',' << r.r << ',' << r.s
           << ',' << r.p << ',' << format_double(r.gamma) << ',' << r.sketch_kind << ',' << r.algorithm << ','
           << r.status << ',' << format_double(r.empirical_risk) << ',' << format_double(r.optimal_risk) << ','
           << format_double(r.gap) << ',' << format_double(r.bound_correlated) << ','
           << format_double(r.bound_isotropic) << ',' << format_double(r.fit_wall_ms) << ',' << join_extra(r.extra)
           << '\n';
}

void write_aggregate_csv(std::ostream& os, const std::vector<AggregateRow>& rows) {
    os << "# schema=1\n"
       << "experiment_id,n,d,r,s,p,gamma,sketch_kind,algorithm,count,failed,mean_empirical_risk,mean_optimal_risk,"
          "mean_gap,stderr_gap,bound_correlated,bound_isotropic,median_fit_ms,extra\n";
    for (const AggregateRow& r : rows)
        os << r.experiment_id << ',' << r.n << ',' << r.d << ',' << r.r << ',' << r.s << ',' << r.p << ','
           << format_double(r.gamma) << ',' << r.sketch_kind << ',' << r.algorithm << ',' << r.count << ',' << r.failed
           << ',' << format_double(r.mean_empirical_risk) << ',' << format_double(r.mean_optimal_risk) << ','
           << format_double(r.mean_gap) << ',' << format_double(r.stderr_gap) << ','
           << format_double(r.bound_correlated) << ',' << format_double(r.bound_isotropic) << ','
           << format_double(r.median_fit_ms) << ',' << join_extra(r.extra) << '\n';
}

void write_eigen_records_csv(std::ostream& os, const std::vector<EigenRecord>& recs) {
    os << "# schema=1\n" << "experiment_id,cell,n,seed,algorithm,index,re,im\n";
    for (const EigenRecord& rec : recs)
        for (std::size_t i = 0; i < rec.eigs.size(); ++i)
            os << rec.experiment_id << ',' << rec.cell << ',' << rec.n << ',' << rec.seed << ',' << rec.algorithm << ','
               << i << ',' << format_double(rec.eigs.values[i].real()) << ','
               << format_double(rec.eigs.values[i].imag()) << '\n';
}

int run_experiment(const std::string& config_path, const std::string& out_dir, const ProgressFn& progress,
                   std::optional<std::uint64_t> seed_override, std::optional<int> threads_override) {
    RunConfig cfg = load_config(config_path);
    if (seed_override) cfg.master_seed = *seed_override;
    if (threads_override) {
        if (*threads_override < 1) throw ConfigError("--threads must be >= 1");
        cfg.threads = *threads_override;
    }
    const RunResult res = run_experiments(cfg, progress);
    std::filesystem::create_directories(out_dir);
    const std::filesystem::path dir(out_dir);
    {
        std::ofstream os(dir / "rows.csv");
        write_rows_csv(os, res.rows);
    }
    {
        std::ofstream os(dir / "aggregate.csv");
        write_aggregate_csv(os, res.aggregates);
    }
    std::map<std::string, std::vector<EigenRecord>> by_exp;
    for (const auto& rec : res.eigenvalues) by_exp[rec.experiment_id].push_back(rec);
    for (const auto& [id, recs] : by_exp) {
        std::ofstream os(dir / ("eigs_" + id + ".csv"));
        write_eigen_records_csv(os, recs);
    }
    return res.any_failed ? 2 : 0;
}

} // namespace r4
