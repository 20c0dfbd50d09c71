// r4cli: synthetic data, fitting, risk/bound evaluation, Koopman spectra and
// experiment sweeps for randomized reduced rank regression.

#include <r4/csv.hpp>
#include <r4/dynamics.hpp>
#include <r4/estimators.hpp>
#include <r4/experiments.hpp>
#include <r4/plot.hpp>
#include <r4/risk.hpp>
#include <r4/serialization.hpp>
#include <r4/synth.hpp>

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace r4;

namespace {

struct Globals {
    std::string config;
    std::uint64_t seed = 0;
    std::string out = ".";
    int threads = 1;
};

std::ofstream open_out(const Globals& g, const std::string& name) {
    fs::create_directories(g.out);
    std::ofstream os(fs::path(g.out) / name);
    if (!os) throw InputError("cannot write " + (fs::path(g.out) / name).string());
    return os;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw InputError("cannot open " + path);
    return is;
}

// Dataset files hold columns x0..x{d-1}, y0..y{e-1}.
void read_xy(const std::string& path, MatrixXd& X, MatrixXd& Y) {
    std::ifstream is = open_in(path);
    std::vector<std::string> names;
    const MatrixXd M = read_matrix_csv(is, &names);
    std::vector<Eigen::Index> xs, ys;
    for (std::size_t j = 0; j < names.size(); ++j) {
        if (!names[j].empty() && names[j][0] == 'x') xs.push_back(static_cast<Eigen::Index>(j));
        else if (!names[j].empty() && names[j][0] == 'y') ys.push_back(static_cast<Eigen::Index>(j));
    }
    if (xs.empty() || ys.empty()) throw InputError(path + ": expected x* and y* columns");
    X = M(Eigen::all, xs);
    Y = M(Eigen::all, ys);
}

void write_xy(std::ostream& os, const MatrixXd& X, const MatrixXd& Y) {
    std::vector<std::string> names;
    for (Eigen::Index j = 0; j < X.cols(); ++j) names.push_back("x" + std::to_string(j));
    for (Eigen::Index j = 0; j < Y.cols(); ++j) names.push_back("y" + std::to_string(j));
    MatrixXd M(X.rows(), X.cols() + Y.cols());
    M << X, Y;
    write_matrix_csv(os, M, names);
}

SketchDistribution sketch_from(const std::string& s) {
    if (s == "isotropic") return SketchDistribution::Isotropic;
    if (s == "output_covariance") return SketchDistribution::OutputCovariance;
    throw InputError("unknown sketch '" + s + "'");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Randomized reduced rank regression toolkit"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config, "Experiment config file (INI)");
    app.add_option("--seed", g.seed, "Master seed");
    app.add_option("--out", g.out, "Output directory");
    app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);

    // synth
    SyntheticLinearConfig sc;
    auto* synth = app.add_subcommand("synth", "Generate the sigmoid-spectrum linear system (train.csv, test.csv)");
    synth->add_option("--d", sc.d);
    synth->add_option("--r-true", sc.r_true);
    synth->add_option("--tau", sc.tau);
    synth->add_option("--noise-std", sc.noise_std);
    synth->add_option("--n-train", sc.n_train);
    synth->add_option("--n-test", sc.n_test);
    synth->add_flag("--identity-basis", sc.identity_basis, "Use U = I");

    // fit
    std::string train_path, test_path, save_path, algorithm = "dual_r4", sketch = "isotropic", kernel = "linear";
    int rank = 5, oversampling = 5, power = 1;
    double gamma = 1e-6, lengthscale = 1.0;
    auto* fit = app.add_subcommand("fit", "Fit an estimator on a dataset file");
    fit->add_option("--train", train_path, "Training file from synth")->required();
    fit->add_option("--test", test_path, "Optional test file; writes predictions.csv");
    fit->add_option("--algorithm", algorithm)->check(CLI::IsMember({"dual_exact", "dual_r4", "primal_exact", "primal_r4"}));
    fit->add_option("--rank", rank);
    fit->add_option("--oversampling", oversampling);
    fit->add_option("--power", power);
    fit->add_option("--gamma", gamma);
    fit->add_option("--sketch", sketch)->check(CLI::IsMember({"isotropic", "output_covariance"}));
    fit->add_option("--kernel", kernel, "Input kernel (output kernel is linear)")
        ->check(CLI::IsMember({"linear", "gaussian", "matern12"}));
    fit->add_option("--lengthscale", lengthscale);
    fit->add_option("--save", save_path, "Write the dual estimator as JSON");

    // risk
    auto* risk = app.add_subcommand("risk", "Singular spectrum and optimal regularized risk (spectrum.csv)");
    risk->add_option("--train", train_path)->required();
    risk->add_option("--gamma", gamma);
    risk->add_option("--rank", rank);

    // bounds
    std::string spectrum_path;
    double norm_L = -1.0;
    std::vector<int> ranks;
    auto* bounds = app.add_subcommand("bounds", "Expected risk-gap bounds for both sketch distributions");
    auto* bsrc = bounds->add_option_group("source");
    bsrc->add_option("--spectrum", spectrum_path, "spectrum.csv written by `risk`");
    bsrc->add_option("--train", train_path);
    bsrc->require_option(1);
    bounds->add_option("--norm-l", norm_L, "Largest eigenvalue of L (required with --spectrum)");
    bounds->add_option("--gamma", gamma);
    bounds->add_option("--rank", ranks, "One or more target ranks")->required();
    bounds->add_option("--oversampling", oversampling);
    bounds->add_option("--power", power);

    // koopman
    int order = 20, basis = 128, n_samples = 0, burn_in = 100;
    bool with_exact = false;
    auto* koop = app.add_subcommand("koopman", "Noisy logistic map: true and estimated Koopman eigenvalues");
    koop->add_option("--order", order, "Trigonometric noise order N (even)");
    koop->add_option("--basis", basis, "Fourier basis size for the reference spectrum");
    koop->add_option("--n", n_samples, "Trajectory length used for estimation (0 = reference only)");
    koop->add_option("--rank", rank);
    koop->add_option("--oversampling", oversampling);
    koop->add_option("--power", power);
    koop->add_option("--gamma", gamma);
    koop->add_option("--burn-in", burn_in);
    double koop_lengthscale = 0.0;
    koop->add_option("--lengthscale", koop_lengthscale, "Matern length-scale (0 = median pairwise distance)");
    koop->add_flag("--exact", with_exact, "Also fit the exact dual estimator");

    // bench
    auto* bench = app.add_subcommand("bench", "Run the experiments of --config (rows.csv, aggregate.csv, eigs_*.csv)");

    // plot
    std::string aggregate_path, experiment_id, x_col = "r", group_col = "sketch_kind", svg_path = "plot.svg";
    std::vector<std::string> y_cols = {"mean_gap"}, dashed_cols;
    bool log_y = false;
    auto* plot = app.add_subcommand("plot", "Render an aggregate.csv experiment as an SVG line chart");
    plot->add_option("--aggregate", aggregate_path)->required();
    plot->add_option("--experiment", experiment_id)->required();
    plot->add_option("--x", x_col);
    plot->add_option("--y", y_cols);
    plot->add_option("--dashed", dashed_cols, "y columns drawn dashed");
    plot->add_option("--group", group_col);
    plot->add_option("--output", svg_path, "File name inside --out");
    plot->add_flag("--log-y", log_y);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*synth) {
            sc.seed = g.seed;
            const LinearDataset ds = synth_linear(sc);
            auto tr = open_out(g, "train.csv");
            write_xy(tr, ds.Xtrain, ds.Ytrain);
            auto te = open_out(g, "test.csv");
            write_xy(te, ds.Xtest, ds.Ytest);
            std::cout << "wrote " << ds.Xtrain.rows() << " training and " << ds.Xtest.rows() << " test rows to " << g.out
                      << '\n';
        } else if (*fit) {
            MatrixXd X, Y;
            read_xy(train_path, X, Y);
            const KernelSpec kin = kernel == "linear" ? KernelSpec::linear()
                                                      : KernelSpec::checked({parse_kernel_family(kernel), lengthscale});
            const KernelSpec kout = KernelSpec::linear();
            const GramBundle<double> G = make_gram_bundle(kin, X, kout, Y);
            const double opt = optimal_risk(G, gamma, rank);
            SketchSpec spec{rank, oversampling, power, sketch_from(sketch), g.seed};
            const auto t0 = std::chrono::steady_clock::now();
            double reg_risk = 0;
            std::optional<DualEstimator<double>> dual;
            if (algorithm == "primal_exact" || algorithm == "primal_r4") {
                if (kernel != "linear") throw InputError("primal algorithms need the linear kernel");
                const auto prob = PrimalProblem<double>::from_features(X, Y);
                const PrimalEstimator<double> est =
                    algorithm == "primal_exact"
                        ? fit_primal_exact(prob, gamma, rank)
                        : fit_primal_r4(prob, gamma, spec, gaussian_sketch<double>(X.cols(), spec));
                reg_risk = empirical_risk_primal(est, X, Y, true);
                if (!test_path.empty()) {
                    MatrixXd Xt, Yt;
                    read_xy(test_path, Xt, Yt);
                    auto os = open_out(g, "predictions.csv");
                    write_xy(os, Xt, est.predict(Xt));
                    std::cout << "test_risk," << format_double((Yt - est.predict(Xt)).squaredNorm() / double(Xt.rows()))
                              << '\n';
                }
            } else {
                TrainingContext<double> ctx{kin, kout, std::make_shared<const MatrixXd>(X)};
                dual = algorithm == "dual_exact"
                           ? fit_dual_exact(G, gamma, rank, ctx)
                           : fit_dual_r4(G, gamma, spec, gaussian_sketch<double>(X.rows(), spec, &G.L), ctx);
                reg_risk = empirical_risk_dual(*dual, G, true);
                if (!test_path.empty()) {
                    MatrixXd Xt, Yt;
                    read_xy(test_path, Xt, Yt);
                    const MatrixXd P = predict(*dual, Xt, Y);
                    auto os = open_out(g, "predictions.csv");
                    write_xy(os, Xt, P);
                    std::cout << "test_risk," << format_double((Yt - P).squaredNorm() / double(Xt.rows())) << '\n';
                }
                if (!save_path.empty()) {
                    auto os = open_out(g, save_path);
                    save_estimator(os, *dual);
                }
            }
            const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            std::cout << "algorithm," << algorithm << "\nregularized_risk," << format_double(reg_risk)
                      << "\noptimal_risk," << format_double(opt) << "\ngap," << format_double(reg_risk - opt)
                      << "\nwall_ms," << format_double(ms) << '\n';
        } else if (*risk) {
            MatrixXd X, Y;
            read_xy(train_path, X, Y);
            const KernelSpec lin = KernelSpec::linear();
            const GramBundle<double> G = make_gram_bundle(lin, X, lin, Y);
            const SingularSpectrum<double> sp = singular_spectrum(G, gamma);
            auto os = open_out(g, "spectrum.csv");
            MatrixXd M(sp.size(), 2);
            for (Eigen::Index i = 0; i < sp.size(); ++i) M.row(i) << double(i + 1), sp[i];
            write_matrix_csv(os, M, {"index", "sigma"});
            std::cout << "trace_L," << format_double(G.L.trace()) << "\nnorm_L," << format_double(spectral_norm_psd(G.L))
                      << "\noptimal_risk," << format_double(optimal_risk(G.L.trace(), sp, rank)) << '\n';
        } else if (*bounds) {
            SingularSpectrum<double> sp;
            if (!spectrum_path.empty()) {
                if (norm_L < 0) throw InputError("--norm-l is required with --spectrum");
                std::ifstream is = open_in(spectrum_path);
                std::vector<std::string> names;
                const MatrixXd M = read_matrix_csv(is, &names);
                sp.sigmas = M.col(M.cols() - 1);
            } else {
                MatrixXd X, Y;
                read_xy(train_path, X, Y);
                const KernelSpec lin = KernelSpec::linear();
                const GramBundle<double> G = make_gram_bundle(lin, X, lin, Y);
                sp = singular_spectrum(G, gamma);
                norm_L = spectral_norm_psd(G.L);
            }
            std::cout << "# schema=1\ntheorem,r,s,p,norm_L,a_r,b_r,bound\n";
            for (int r : ranks)
                for (const BoundReport& b : {bound_thm_correlated(sp, r, oversampling, power),
                                             bound_thm_isotropic(sp, norm_L, r, oversampling, power)})
                    std::cout << to_string(b.theorem) << ',' << b.r << ',' << b.s << ',' << b.p << ','
                              << format_double(b.theorem == BoundTheorem::IsotropicSketch ? b.norm_L : norm_L) << ','
                              << format_double(b.a_r) << ',' << format_double(b.b_r) << ',' << format_double(b.bound)
                              << '\n';
        } else if (*koop) {
            const EigenvalueSet truth = true_koopman_eigs(order, basis);
            {
                auto os = open_out(g, "eigs_true.csv");
                write_eigs_csv(os, truth);
            }
            EigenvalueSet top;
            top.values.assign(truth.values.begin(), truth.values.begin() + std::min<std::size_t>(rank, truth.size()));
            std::cout << "true:";
            for (const auto& v : top.values) std::cout << ' ' << v;
            std::cout << '\n';
            if (n_samples > 0) {
                LogisticMapConfig lc;
                lc.noise_order = order;
                lc.length = n_samples + burn_in;
                lc.seed = g.seed;
                const std::vector<double> traj = logistic_trajectory(lc);
                MatrixXd X(n_samples, 1), Y(n_samples, 1);
                for (int i = 0; i < n_samples; ++i) {
                    X(i, 0) = traj[static_cast<std::size_t>(burn_in + i)];
                    Y(i, 0) = traj[static_cast<std::size_t>(burn_in + i + 1)];
                }
                const double q[] = {0.5};
                const double ell = koop_lengthscale > 0.0
                                       ? koop_lengthscale
                                       : lengthscale_quantiles(X, std::min(n_samples, 1000), q, g.seed)[0];
                const KernelSpec k = KernelSpec::matern12(ell);
                const GramBundle<double> G = make_gram_bundle(k, X, k, Y);
                const RegularizedDual<double> sys(G, gamma);
                SketchSpec spec{rank, oversampling, power, SketchDistribution::Isotropic, g.seed};
                const auto est = fit_dual_r4(sys, spec, gaussian_sketch<double>(n_samples, spec));
                EigenvalueSet r4e;
                const auto ev = spectral(est, G.Kxy).eigenvalues;
                r4e.values.assign(ev.data(), ev.data() + ev.size());
                auto os = open_out(g, "eigs_dual_r4.csv");
                write_eigs_csv(os, r4e);
                std::cout << "dual_r4:";
                for (const auto& v : r4e.values) std::cout << ' ' << v;
                std::cout << "\ndhd_true," << format_double(dhd(r4e, top)) << '\n';
                if (with_exact) {
                    const auto ex = fit_dual_exact(sys, rank);
                    EigenvalueSet exe;
                    const auto xv = spectral(ex, G.Kxy).eigenvalues;
                    exe.values.assign(xv.data(), xv.data() + xv.size());
                    auto os2 = open_out(g, "eigs_dual_exact.csv");
                    write_eigs_csv(os2, exe);
                    std::cout << "dhd_exact_true," << format_double(dhd(exe, top)) << "\ndhd_r4_exact,"
                              << format_double(dhd(r4e, exe)) << '\n';
                }
            }
        } else if (*bench) {
            if (g.config.empty()) throw ConfigError("bench requires --config");
            std::optional<std::uint64_t> seed;
            if (app.count("--seed")) seed = g.seed;
            std::optional<int> threads;
            if (app.count("--threads")) threads = g.threads;
            const int code = run_experiment(
                g.config, g.out, [](const std::string& msg) { std::cerr << msg << '\n'; }, seed, threads);
            if (code != 0) std::cerr << "some cells failed; see the status column of rows.csv\n";
            return code;
        } else if (*plot) {
            std::ifstream is = open_in(aggregate_path);
            const CsvTable t = read_csv(is);
            PlotSpec spec = plot_from_aggregate(t, experiment_id, x_col, y_cols, group_col, dashed_cols);
            spec.log_y = log_y;
            auto os = open_out(g, svg_path);
            write_svg(os, spec);
        }
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::logic_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
