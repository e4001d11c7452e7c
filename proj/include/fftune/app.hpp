#pragma once

// Command implementations behind the fftune CLI. Each command takes a
// validated RunConfig and an output directory and returns a process exit code.

#include "fftune/basis.hpp"
#include "fftune/config.hpp"
#include "fftune/csv.hpp"
#include "fftune/learner.hpp"
#include "fftune/plant.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace fftune::app {

namespace fs = std::filesystem;

inline constexpr int exit_ok = 0;
inline constexpr int exit_check_failed = 1;
inline constexpr int exit_config = 2;
inline constexpr int exit_oracle = 3;

inline constexpr const char* output_dir_env = "FFTUNE_OUTPUT_DIR";

/// Flag, then config, then environment, then ./fftune-out.
inline fs::path resolve_output_dir(const std::string& flag, const RunConfig& cfg)
{
    if (!flag.empty()) return flag;
    if (!cfg.output_directory.empty()) return cfg.output_directory;
    if (const char* env = std::getenv(output_dir_env); env && *env) return env;
    return "fftune-out";
}

struct Setup {
    ClosedLoopPlant loop;
    Signal reference;
    BasisMatrix psi;
};

inline Signal load_reference(const RunConfig& cfg)
{
    if (cfg.reference_file.empty()) {
        ReferenceProfile profile{cfg.moves, cfg.n_samples, cfg.sample_time, cfg.profile_order};
        return generate_reference(profile);
    }
    Signal ref = [&] {
        try {
            return csv::read_reference(cfg.reference_file);
        } catch (const std::exception& err) {
            throw ConfigError(std::string("reference.file: ") + err.what());
        }
    }();
    if (ref.n_channels() != cfg.plant.channels)
        throw ConfigError("reference.file: " + std::to_string(ref.n_channels()) + " channels, plant has " +
                          std::to_string(cfg.plant.channels));
    if (ref.n_samples() < 64) throw ConfigError("reference.file: need at least 64 samples");
    return ref;
}

inline Setup make_setup(const RunConfig& cfg)
{
    Signal reference = load_reference(cfg);
    const std::size_t n = reference.n_samples();
    ClosedLoopPlant loop = [&] {
        try {
            return desk_plant(cfg.plant, n, cfg.sample_time);
        } catch (const std::invalid_argument& err) {
            throw ConfigError(std::string("plant: ") + err.what());
        }
    }();
    BasisMatrix psi = build_basis(reference, loop.n_inputs(), cfg.sample_time, cfg.basis);
    return {std::move(loop), std::move(reference), std::move(psi)};
}

inline ExperimentOracle<ClosedLoopPlant> make_oracle(const Setup& s, const RunConfig& cfg, std::uint64_t noise_seed)
{
    return ExperimentOracle<ClosedLoopPlant>(s.loop, s.reference, OracleOptions{cfg.noise_std, noise_seed});
}

inline void write_run_meta(const fs::path& dir, const std::string& command, const RunConfig& cfg,
                           const std::vector<std::string>& extra = {})
{
    std::ofstream meta(dir / "run_meta.txt");
    meta << "# fftune " << command << "\n";
    for (const auto& line : extra) meta << "# " << line << "\n";
    meta << describe(cfg);
    meta.flush();
    if (!meta) throw std::runtime_error("cannot write " + (dir / "run_meta.txt").string());
}

inline std::vector<std::string> convergence_header(std::size_t n_parameters)
{
    std::vector<std::string> h{"iteration", "experiments_cumulative", "cost", "step_size", "gradient_norm"};
    for (std::size_t i = 1; i <= n_parameters; ++i) h.push_back("theta_" + std::to_string(i));
    return h;
}

inline std::vector<std::string> convergence_row(const IterationRecord& rec)
{
    std::vector<std::string> row{std::to_string(rec.iteration), std::to_string(rec.experiments_cumulative),
                                 csv::format_number(rec.cost), csv::format_number(rec.step_size),
                                 csv::format_number(rec.gradient_norm)};
    for (Eigen::Index i = 0; i < rec.theta.size(); ++i) row.push_back(csv::format_number(rec.theta[i]));
    return row;
}

inline void write_theta(const fs::path& path, const BasisShape& shape, const Vector& theta)
{
    csv::Writer w(path.string());
    w.header({"index", "input", "basis", "output", "value"});
    for (std::size_t i = 1; i <= shape.n_parameters(); ++i) {
        const auto [n, l, k] = shape.triple(i);
        w.row(i, n, l, k, theta[static_cast<Eigen::Index>(i - 1)]);
    }
}

// ---------------------------------------------------------------------------

inline int cmd_tune(const RunConfig& cfg, const fs::path& out)
{
    const Setup setup = make_setup(cfg);
    fs::create_directories(out);
    write_run_meta(out, "tune", cfg, {"parameters = " + std::to_string(setup.psi.n_parameters())});

    auto oracle = make_oracle(setup, cfg, cfg.noise_seed);
    csv::Writer log((out / "convergence.csv").string());
    log.header(convergence_header(setup.psi.n_parameters()));
    const TuningResult result =
        run_tuning(cfg.learner, oracle, setup.psi, Vector::Zero(static_cast<Eigen::Index>(setup.psi.n_parameters())),
                   [&](const IterationRecord& rec) {
                       log.row(convergence_row(rec));
                       log.flush();
                   });
    write_theta(out / "theta_final.csv", setup.psi.shape(), result.theta);

    std::cout << "tune: " << to_string(result.status) << " after " << result.records.size() << " iterations, "
              << oracle.experiment_count() << " experiments";
    if (!result.records.empty())
        std::cout << ", cost " << csv::format_number(result.records.front().cost) << " -> "
                  << csv::format_number(result.records.back().cost);
    std::cout << "\n";
    if (result.status == RunStatus::aborted) {
        std::cerr << "tune: aborted: " << result.message << "\n";
        return exit_oracle;
    }
    return exit_ok;
}

// ---------------------------------------------------------------------------

struct TracePoint {
    std::size_t iteration = 0;
    long experiments = 0;
    double cost = 0.0;
};
using Trace = std::vector<TracePoint>;

inline Trace to_trace(const std::vector<IterationRecord>& records)
{
    Trace t;
    for (const auto& r : records) t.push_back({r.iteration, r.experiments_cumulative, r.cost});
    return t;
}

/// Iteration-wise median over traces that reach each iteration.
inline Trace median_trace(const std::vector<Trace>& traces)
{
    Trace out;
    for (std::size_t i = 0;; ++i) {
        std::vector<double> costs;
        long experiments = 0;
        for (const auto& t : traces) {
            if (i < t.size()) {
                costs.push_back(t[i].cost);
                experiments = t[i].experiments;
            }
        }
        if (costs.empty()) break;
        std::sort(costs.begin(), costs.end());
        const std::size_t m = costs.size();
        const double med = m % 2 ? costs[m / 2] : 0.5 * (costs[m / 2 - 1] + costs[m / 2]);
        out.push_back({i + 1, experiments, med});
    }
    return out;
}

/// Cumulative experiments at the first point with cost <= fraction * first cost.
inline std::optional<long> experiments_to_reach(const Trace& trace, double fraction)
{
    if (trace.empty()) return std::nullopt;
    const double threshold = fraction * trace.front().cost;
    for (const auto& p : trace)
        if (p.cost <= threshold) return p.experiments;
    return std::nullopt;
}

struct Comparison {
    Trace deterministic;
    std::vector<Trace> stochastic;
    std::vector<std::uint64_t> seeds;
    Trace stochastic_median;
    bool aborted = false;
    std::string message;
};

inline Comparison compare_methods(const RunConfig& cfg, const Setup& setup, std::size_t n_seeds)
{
    const Vector theta0 = Vector::Zero(static_cast<Eigen::Index>(setup.psi.n_parameters()));
    auto run = [&](Method method, std::uint64_t seed, std::uint64_t noise_seed) {
        LearnerConfig lc = cfg.learner;
        lc.method = method;
        lc.seed = seed;
        auto oracle = make_oracle(setup, cfg, noise_seed);
        return run_tuning(lc, oracle, setup.psi, theta0);
    };

    Comparison cmp;
    const TuningResult det = run(Method::deterministic, cfg.learner.seed, cfg.noise_seed);
    cmp.deterministic = to_trace(det.records);
    if (det.status == RunStatus::aborted) {
        cmp.aborted = true;
        cmp.message = "deterministic: " + det.message;
    }

    for (std::size_t i = 0; i < n_seeds; ++i) cmp.seeds.push_back(cfg.learner.seed + i);
    std::vector<TuningResult> results(n_seeds);
    const std::size_t workers = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    for (std::size_t begin = 0; begin < n_seeds; begin += workers) {
        std::vector<std::future<TuningResult>> batch;
        for (std::size_t i = begin; i < std::min(n_seeds, begin + workers); ++i)
            batch.push_back(std::async(std::launch::async, run, Method::stochastic, cmp.seeds[i], cfg.noise_seed + 1 + i));
        for (std::size_t i = 0; i < batch.size(); ++i) results[begin + i] = batch[i].get();
    }
    for (std::size_t i = 0; i < n_seeds; ++i) {
        cmp.stochastic.push_back(to_trace(results[i].records));
        if (results[i].status == RunStatus::aborted && !cmp.aborted) {
            cmp.aborted = true;
            cmp.message = "stochastic seed " + std::to_string(cmp.seeds[i]) + ": " + results[i].message;
        }
    }
    cmp.stochastic_median = median_trace(cmp.stochastic);
    return cmp;
}

inline int cmd_compare(const RunConfig& cfg, std::size_t n_seeds, const fs::path& out)
{
    if (n_seeds < 1) throw ConfigError("--seeds must be at least 1");
    const Setup setup = make_setup(cfg);
    fs::create_directories(out);
    write_run_meta(out, "compare", cfg, {"seeds = " + std::to_string(n_seeds)});

    const Comparison cmp = compare_methods(cfg, setup, n_seeds);

    csv::Writer w((out / "compare.csv").string());
    w.header({"trace", "seed", "iteration", "experiments_cumulative", "cost", "relative_cost"});
    auto dump = [&](const std::string& name, const std::string& seed, const Trace& t) {
        for (const auto& p : t)
            w.row(name, seed, p.iteration, p.experiments, p.cost, t.front().cost > 0 ? p.cost / t.front().cost : 0.0);
    };
    dump("deterministic", "", cmp.deterministic);
    for (std::size_t i = 0; i < cmp.stochastic.size(); ++i) dump("stochastic", std::to_string(cmp.seeds[i]), cmp.stochastic[i]);
    if (n_seeds > 1) dump("stochastic_median", "", cmp.stochastic_median);
    w.flush();

    auto show = [](const std::optional<long>& v) { return v ? std::to_string(*v) : std::string("not reached"); };
    const auto det_hit = experiments_to_reach(cmp.deterministic, 0.01);
    const auto sto_hit = experiments_to_reach(n_seeds > 1 ? cmp.stochastic_median : cmp.stochastic.front(), 0.01);
    std::cout << "compare: experiments to reach 1% of initial cost: deterministic " << show(det_hit)
              << ", stochastic (median of " << n_seeds << ") " << show(sto_hit) << "\n";
    if (cmp.aborted) {
        std::cerr << "compare: aborted: " << cmp.message << "\n";
        return exit_oracle;
    }
    return exit_ok;
}

// ---------------------------------------------------------------------------

struct GradientCheck {
    Vector exact;
    Vector finite_difference;
    Vector mean;
    Vector std_dev;
    Vector bound;
    std::vector<bool> pass;
    bool all_pass = true;
};

/// Moments of M stochastic estimates at theta = 0 against the model gradient and
/// central differences of the measured cost. A component passes when
/// |mean - exact| <= 4 std / sqrt(M) (or exact agreement when std is zero).
inline GradientCheck gradient_check(const RunConfig& cfg, const Setup& setup, std::size_t n_estimates)
{
    const std::size_t p = setup.psi.n_parameters();
    const Vector theta = Vector::Zero(static_cast<Eigen::Index>(p));
    auto oracle = make_oracle(setup, cfg, cfg.noise_seed);
    const Signal e = oracle.run_tracking_experiment(setup.psi.apply_transpose(theta));

    GradientCheck gc;
    gc.exact = exact_gradient(setup.psi, setup.loop.process_sensitivity(), e);

    auto noiseless = ExperimentOracle<ClosedLoopPlant>(setup.loop, setup.reference);
    gc.finite_difference = Vector::Zero(static_cast<Eigen::Index>(p));
    const double h = 1e-5 * (1.0 + theta.norm());
    for (std::size_t i = 0; i < p; ++i) {
        Vector step = Vector::Zero(static_cast<Eigen::Index>(p));
        step[static_cast<Eigen::Index>(i)] = h;
        const double up = cost(noiseless.run_tracking_experiment(setup.psi.apply_transpose(theta + step)));
        const double down = cost(noiseless.run_tracking_experiment(setup.psi.apply_transpose(theta - step)));
        gc.finite_difference[static_cast<Eigen::Index>(i)] = (up - down) / (2 * h);
    }

    // Welford: identical estimates give exactly zero spread
    Vector mean = Vector::Zero(static_cast<Eigen::Index>(p));
    Vector m2 = Vector::Zero(static_cast<Eigen::Index>(p));
    for (std::size_t i = 0; i < n_estimates; ++i) {
        const Vector g = stochastic_gradient_estimate(setup.psi, oracle, e, iteration_seed(cfg.learner.seed, i + 1),
                                                      cfg.learner.alpha_scale).values;
        const Vector delta = g - mean;
        mean += delta / static_cast<double>(i + 1);
        m2 += delta.cwiseProduct(g - mean);
    }
    const double m = static_cast<double>(n_estimates);
    gc.mean = mean;
    gc.std_dev = (m2 / (m - 1)).cwiseMax(0.0).cwiseSqrt();
    const double scale = gc.exact.cwiseAbs().maxCoeff();
    gc.bound = 4.0 * gc.std_dev / std::sqrt(m);
    for (std::size_t i = 0; i < p; ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        const double err = std::abs(gc.mean[k] - gc.exact[k]);
        // rounding floor for zero-spread components
        const double slack = 1e-10 * (scale + std::abs(gc.exact[k]));
        const bool ok = err <= gc.bound[k] + slack;
        gc.pass.push_back(ok);
        gc.all_pass = gc.all_pass && ok;
    }
    return gc;
}

inline int cmd_gradient_check(const RunConfig& cfg, std::size_t n_estimates, const fs::path& out)
{
    if (n_estimates < 100) throw ConfigError("--samples must be at least 100");
    const Setup setup = make_setup(cfg);
    fs::create_directories(out);
    write_run_meta(out, "gradient-check", cfg, {"samples = " + std::to_string(n_estimates)});

    const GradientCheck gc = gradient_check(cfg, setup, n_estimates);
    csv::Writer w((out / "gradient_check.csv").string());
    w.header({"index", "input", "basis", "output", "exact", "finite_difference", "mean", "std", "bound", "abs_error", "pass"});
    for (std::size_t i = 0; i < gc.pass.size(); ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        const auto [n, l, o] = setup.psi.shape().triple(i + 1);
        w.row(i + 1, n, l, o, gc.exact[k], gc.finite_difference[k], gc.mean[k], gc.std_dev[k], gc.bound[k],
              std::abs(gc.mean[k] - gc.exact[k]), gc.pass[i] ? "pass" : "fail");
    }
    const auto passed = std::count(gc.pass.begin(), gc.pass.end(), true);
    std::cout << "gradient-check: " << passed << "/" << gc.pass.size() << " components within 4 sigma/sqrt(M) of the exact gradient\n";
    return gc.all_pass ? exit_ok : exit_check_failed;
}

// ---------------------------------------------------------------------------

inline int cmd_export_plant(const RunConfig& cfg, const fs::path& out)
{
    const Setup setup = make_setup(cfg);
    fs::create_directories(out);
    write_run_meta(out, "export-plant", cfg);

    const auto& j = setup.loop.process_sensitivity();
    {
        csv::Writer w((out / "impulse_J.csv").string());
        std::vector<std::string> head;
        for (std::size_t m = 0; m < j.n_outputs(); ++m)
            for (std::size_t k = 0; k < j.n_inputs(); ++k) head.push_back("J_" + std::to_string(m + 1) + "_" + std::to_string(k + 1));
        w.header(head);
        for (std::size_t t = 0; t < j.n_samples(); ++t) {
            std::vector<std::string> row;
            for (std::size_t m = 0; m < j.n_outputs(); ++m)
                for (std::size_t k = 0; k < j.n_inputs(); ++k)
                    row.push_back(csv::format_number(j.block(m, k)[static_cast<Eigen::Index>(t)]));
            w.row(row);
        }
    }
    csv::write_reference((out / "reference.csv").string(), setup.reference, cfg.sample_time);
    {
        csv::Writer w((out / "basis.csv").string());
        std::vector<std::string> head{"t"};
        for (std::size_t l = 0; l < setup.psi.n_basis(); ++l)
            for (std::size_t k = 0; k < setup.psi.n_outputs(); ++k)
                head.push_back("psi_" + std::to_string(l + 1) + "_" + std::to_string(k + 1));
        w.header(head);
        for (std::size_t t = 0; t < setup.psi.n_samples(); ++t) {
            std::vector<std::string> row{csv::format_number(static_cast<double>(t) * cfg.sample_time)};
            for (std::size_t l = 0; l < setup.psi.n_basis(); ++l)
                for (std::size_t k = 0; k < setup.psi.n_outputs(); ++k)
                    row.push_back(csv::format_number(setup.psi.signal(l, k)[static_cast<Eigen::Index>(t)]));
            w.row(row);
        }
    }
    std::cout << "export-plant: wrote impulse_J.csv, reference.csv, basis.csv to " << out.string() << "\n";
    return exit_ok;
}

} // namespace fftune::app
