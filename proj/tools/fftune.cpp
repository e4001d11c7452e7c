// fftune: model-free tuning of MIMO motion feedforward on a simulated desk plant.

#include "fftune/app.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using namespace fftune;

struct Common {
    std::string config_path;
    std::string output;
};

void add_common(CLI::App* sub, Common& common)
{
    sub->add_option("config", common.config_path, "run configuration file (defaults apply when omitted)");
    sub->add_option("-o,--output", common.output, "output directory (default: config, then $FFTUNE_OUTPUT_DIR, then ./fftune-out)");
    sub->allow_extras();
    sub->footer("Any config key can be overridden as --section.key=value, e.g. --learner.method=deterministic");
}

// Leftover arguments must all be --section.key=value overrides.
std::vector<std::string> collect_overrides(const CLI::App* sub)
{
    std::vector<std::string> overrides;
    for (const auto& arg : sub->remaining()) {
        if (arg.rfind("--", 0) != 0 || arg.find('=') == std::string::npos || arg.find('.') == std::string::npos)
            throw ConfigError("unrecognized argument '" + arg + "' (overrides take the form --section.key=value)");
        overrides.push_back(arg.substr(2));
    }
    return overrides;
}

RunConfig load(const Common& common, std::vector<std::string> overrides)
{
    if (common.config_path.empty())
        return load_run_config({}, overrides);
    return load_run_config_file(common.config_path, overrides);
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Model-free MIMO feedforward tuning with adjoint experiments and stochastic gradient estimates"};
    app.require_subcommand(1);

    Common tune_opts, compare_opts, check_opts, export_opts;
    std::optional<long long> iterations;
    std::size_t seeds = 50;
    std::size_t samples = 10000;

    auto* tune = app.add_subcommand("tune", "run the tuning iteration and log convergence");
    add_common(tune, tune_opts);
    tune->add_option("--iterations", iterations, "number of iterations (shortcut for --learner.iterations)");

    auto* compare = app.add_subcommand("compare", "deterministic vs stochastic cost against experiments");
    add_common(compare, compare_opts);
    compare->add_option("--seeds", seeds, "number of stochastic runs")->capture_default_str();

    auto* check = app.add_subcommand("gradient-check", "statistics of the stochastic gradient estimate");
    add_common(check, check_opts);
    check->add_option("--samples", samples, "number of estimates")->capture_default_str();

    auto* exporter = app.add_subcommand("export-plant", "write impulse responses, reference and basis signals");
    add_common(exporter, export_opts);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : app::exit_config;
    }

    try {
        if (tune->parsed()) {
            auto overrides = collect_overrides(tune);
            if (iterations) overrides.push_back("learner.iterations=" + std::to_string(*iterations));
            const RunConfig cfg = load(tune_opts, overrides);
            return app::cmd_tune(cfg, app::resolve_output_dir(tune_opts.output, cfg));
        }
        if (compare->parsed()) {
            const RunConfig cfg = load(compare_opts, collect_overrides(compare));
            return app::cmd_compare(cfg, seeds, app::resolve_output_dir(compare_opts.output, cfg));
        }
        if (check->parsed()) {
            const RunConfig cfg = load(check_opts, collect_overrides(check));
            return app::cmd_gradient_check(cfg, samples, app::resolve_output_dir(check_opts.output, cfg));
        }
        if (exporter->parsed()) {
            const RunConfig cfg = load(export_opts, collect_overrides(exporter));
            return app::cmd_export_plant(cfg, app::resolve_output_dir(export_opts.output, cfg));
        }
    } catch (const ConfigError& err) {
        std::cerr << "fftune: " << err.what() << "\n";
        return app::exit_config;
    } catch (const OracleError& err) {
        std::cerr << "fftune: experiment failed: " << err.what() << "\n";
        return app::exit_oracle;
    } catch (const std::exception& err) {
        std::cerr << "fftune: " << err.what() << "\n";
        return app::exit_config;
    }
    return app::exit_config;
}
