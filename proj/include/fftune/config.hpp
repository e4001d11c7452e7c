#pragma once

// Run configuration: a sectioned key = value text file.
//
//   # comment (also ';')
//   [plant]
//   samples = 500
//   sample_time = 0.004
//
// Keys are addressed as `section.key`. Command-line overrides use the same
// names (`--learner.iterations=5`). Every key has a default; unknown keys
// and malformed values are rejected with the file and line they came from.

#include "fftune/basis.hpp"
#include "fftune/learner.hpp"
#include "fftune/plant.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fftune {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    DeskPlantConfig plant;
    std::size_t n_samples = 500;
    double sample_time = 0.004;
    double noise_std = 0.0;
    std::uint64_t noise_seed = 7;

    std::vector<ChannelMove> moves{{0.0, 0.1, 0.1, 1.0}, {0.0, 0.01, 0.6, 0.6}};
    int profile_order = 9;
    std::string reference_file; ///< custom reference CSV; replaces the generated profile

    BasisOptions basis;

    LearnerConfig learner{Method::stochastic, 10, 1.0, 1.0, 1, std::nullopt};

    std::string output_directory; ///< empty: FFTUNE_OUTPUT_DIR or ./fftune-out
};

namespace config_detail {

struct Entry {
    std::string value;
    std::string origin; ///< "file:line" or "override"
};

inline std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline const std::vector<std::string>& known_keys()
{
    static const std::vector<std::string> keys{
        "plant.channels", "plant.mass_1", "plant.mass_2", "plant.coupling_stiffness", "plant.coupling_damping",
        "plant.damping_1", "plant.damping_2", "plant.input_coupling", "plant.kp_1", "plant.kd_1", "plant.kp_2",
        "plant.kd_2", "plant.samples", "plant.sample_time", "plant.noise_std", "plant.noise_seed",
        "reference.order", "reference.file",
        "reference.start_position_1", "reference.displacement_1", "reference.start_time_1", "reference.duration_1",
        "reference.start_position_2", "reference.displacement_2", "reference.start_time_2", "reference.duration_2",
        "basis.kind", "basis.orders", "basis.conditioning",
        "learner.method", "learner.iterations", "learner.seed", "learner.alpha", "learner.beta",
        "learner.stop_tolerance",
        "output.directory"};
    return keys;
}

class Reader {
public:
    explicit Reader(std::map<std::string, Entry> entries) : entries_(std::move(entries)) {}

    bool has(const std::string& key) const { return entries_.count(key) != 0; }

    template <class T>
    void read(const std::string& key, T& target) const
    {
        const auto it = entries_.find(key);
        if (it == entries_.end()) return;
        target = parse<T>(it->second, key);
    }

    [[noreturn]] void fail(const std::string& key, const std::string& why) const
    {
        const auto it = entries_.find(key);
        const std::string where = it == entries_.end() ? std::string("default") : it->second.origin;
        throw ConfigError(where + ": " + key + ": " + why);
    }

    template <class T>
    T parse(const Entry& entry, const std::string& key) const
    {
        const std::string& v = entry.value;
        auto bad = [&](const char* what) -> ConfigError {
            return ConfigError(entry.origin + ": " + key + ": '" + v + "' is not " + what);
        };
        if constexpr (std::is_same_v<T, std::string>) {
            return v;
        } else if constexpr (std::is_same_v<T, bool>) {
            if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
            if (v == "false" || v == "0" || v == "no" || v == "off") return false;
            throw bad("a boolean");
        } else if constexpr (std::is_same_v<T, double>) {
            char* end = nullptr;
            const double d = std::strtod(v.c_str(), &end);
            if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(d)) throw bad("a finite number");
            return d;
        } else if constexpr (std::is_integral_v<T>) {
            T out{};
            const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
            if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size()) throw bad("an integer");
            return out;
        }
    }

private:
    std::map<std::string, Entry> entries_;
};

inline void require(bool ok, const Reader& r, const std::string& key, const std::string& why)
{
    if (!ok) r.fail(key, why);
}

} // namespace config_detail

/// Raw `section.key` entries of a config file, with their line numbers.
inline std::map<std::string, config_detail::Entry> parse_config_text(std::istream& in, const std::string& source)
{
    using config_detail::trim;
    std::map<std::string, config_detail::Entry> entries;
    const auto& known = config_detail::known_keys();
    std::string section;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string where = source + ":" + std::to_string(line_no);
        std::string text = trim(line);
        if (text.empty() || text[0] == '#' || text[0] == ';') continue;
        if (text.front() == '[') {
            if (text.back() != ']') throw ConfigError(where + ": unterminated section header");
            section = trim(text.substr(1, text.size() - 2));
            if (section.empty()) throw ConfigError(where + ": empty section name");
            continue;
        }
        const auto eq = text.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
        if (section.empty()) throw ConfigError(where + ": key outside of any [section]");
        const std::string key = section + "." + trim(text.substr(0, eq));
        std::string value = trim(text.substr(eq + 1));
        if (const auto hash = value.find(" #"); hash != std::string::npos) value = trim(value.substr(0, hash));
        if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError(where + ": unknown key '" + key + "'");
        if (entries.count(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
        entries[key] = {value, where};
    }
    return entries;
}

/// Builds and validates a RunConfig from file entries plus `section.key=value` overrides.
inline RunConfig load_run_config(std::map<std::string, config_detail::Entry> entries,
                                 const std::vector<std::string>& overrides = {})
{
    using namespace config_detail;
    const auto& known = known_keys();
    for (const auto& ov : overrides) {
        const auto eq = ov.find('=');
        if (eq == std::string::npos) throw ConfigError("override '" + ov + "': expected section.key=value");
        const std::string key = trim(ov.substr(0, eq));
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw ConfigError("override '" + ov + "': unknown key '" + key + "'");
        entries[key] = {trim(ov.substr(eq + 1)), "override '" + ov + "'"};
    }
    const Reader r(std::move(entries));
    RunConfig c;

    r.read("plant.channels", c.plant.channels);
    require(c.plant.channels == 1 || c.plant.channels == 2, r, "plant.channels", "must be 1 or 2");
    r.read("plant.mass_1", c.plant.mass_1);
    r.read("plant.mass_2", c.plant.mass_2);
    require(c.plant.mass_1 > 0 && c.plant.mass_2 > 0, r, r.has("plant.mass_1") ? "plant.mass_1" : "plant.mass_2",
            "masses must be positive");
    r.read("plant.coupling_stiffness", c.plant.coupling_stiffness);
    r.read("plant.coupling_damping", c.plant.coupling_damping);
    r.read("plant.damping_1", c.plant.damping_1);
    r.read("plant.damping_2", c.plant.damping_2);
    r.read("plant.input_coupling", c.plant.input_coupling);
    r.read("plant.kp_1", c.plant.kp_1);
    r.read("plant.kd_1", c.plant.kd_1);
    r.read("plant.kp_2", c.plant.kp_2);
    r.read("plant.kd_2", c.plant.kd_2);
    r.read("plant.samples", c.n_samples);
    require(c.n_samples >= 64, r, "plant.samples", "must be at least 64");
    r.read("plant.sample_time", c.sample_time);
    require(c.sample_time > 0, r, "plant.sample_time", "must be positive");
    r.read("plant.noise_std", c.noise_std);
    require(c.noise_std >= 0, r, "plant.noise_std", "must be non-negative");
    r.read("plant.noise_seed", c.noise_seed);

    r.read("reference.order", c.profile_order);
    require(c.profile_order >= 9 && c.profile_order % 2 == 1, r, "reference.order", "must be odd and at least 9");
    r.read("reference.file", c.reference_file);
    c.moves.resize(c.plant.channels);
    const double horizon = static_cast<double>(c.n_samples) * c.sample_time;
    for (std::size_t ch = 0; ch < c.plant.channels; ++ch) {
        const std::string suffix = "_" + std::to_string(ch + 1);
        auto& mv = c.moves[ch];
        double displacement = mv.end_position - mv.start_position;
        r.read("reference.start_position" + suffix, mv.start_position);
        r.read("reference.displacement" + suffix, displacement);
        mv.end_position = mv.start_position + displacement;
        r.read("reference.start_time" + suffix, mv.start_time);
        require(mv.start_time >= 0, r, "reference.start_time" + suffix, "must be non-negative");
        r.read("reference.duration" + suffix, mv.duration);
        require(mv.duration > 0, r, "reference.duration" + suffix, "must be positive");
        if (c.reference_file.empty())
            require(mv.start_time + mv.duration <= horizon, r,
                    r.has("reference.duration" + suffix) ? "reference.duration" + suffix : "reference.start_time" + suffix,
                    "move ends after the " + std::to_string(horizon) + " s horizon");
    }

    std::string kind = "motion";
    r.read("basis.kind", kind);
    if (kind == "motion") {
        c.basis.derivative_orders = motion_orders();
    } else if (kind == "custom") {
        std::string orders;
        r.read("basis.orders", orders);
        c.basis.derivative_orders.clear();
        std::stringstream ss(orders);
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = trim(item);
            int o = -1;
            const auto res = std::from_chars(item.data(), item.data() + item.size(), o);
            require(res.ec == std::errc() && res.ptr == item.data() + item.size() && o >= 0 && o <= 4, r, "basis.orders",
                    "'" + item + "' is not a derivative order 0..4");
            c.basis.derivative_orders.push_back(o);
        }
        require(!c.basis.derivative_orders.empty(), r, "basis.orders", "custom basis needs at least one order");
    } else {
        r.fail("basis.kind", "must be 'motion' or 'custom'");
    }
    std::string conditioning = to_string(c.basis.conditioning);
    r.read("basis.conditioning", conditioning);
    if (conditioning == "none") c.basis.conditioning = BasisConditioning::none;
    else if (conditioning == "normalize") c.basis.conditioning = BasisConditioning::normalize;
    else if (conditioning == "orthonormal") c.basis.conditioning = BasisConditioning::orthonormal;
    else r.fail("basis.conditioning", "must be 'none', 'normalize' or 'orthonormal'");

    std::string method = "stochastic";
    r.read("learner.method", method);
    if (method == "stochastic") c.learner.method = Method::stochastic;
    else if (method == "deterministic") c.learner.method = Method::deterministic;
    else r.fail("learner.method", "must be 'stochastic' or 'deterministic'");
    r.read("learner.iterations", c.learner.n_iterations);
    require(c.learner.n_iterations >= 1, r, "learner.iterations", "must be at least 1");
    r.read("learner.seed", c.learner.seed);
    r.read("learner.alpha", c.learner.alpha_scale);
    require(c.learner.alpha_scale != 0, r, "learner.alpha", "must be nonzero");
    r.read("learner.beta", c.learner.beta_scale);
    require(c.learner.beta_scale != 0, r, "learner.beta", "must be nonzero");
    if (r.has("learner.stop_tolerance")) {
        double tol = 0;
        r.read("learner.stop_tolerance", tol);
        require(tol >= 0, r, "learner.stop_tolerance", "must be non-negative");
        if (tol > 0) c.learner.relative_cost_tolerance = tol;
    }

    r.read("output.directory", c.output_directory);
    return c;
}

inline RunConfig load_run_config_file(const std::string& path, const std::vector<std::string>& overrides = {})
{
    std::ifstream in(path);
    if (!in) throw ConfigError(path + ": cannot open config file");
    return load_run_config(parse_config_text(in, path), overrides);
}

/// Echo of every effective setting, in config-file syntax.
inline std::string describe(const RunConfig& c)
{
    std::ostringstream o;
    auto num = [](double v) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    o << "[plant]\n"
      << "channels = " << c.plant.channels << "\n"
      << "mass_1 = " << num(c.plant.mass_1) << "\n"
      << "mass_2 = " << num(c.plant.mass_2) << "\n"
      << "coupling_stiffness = " << num(c.plant.coupling_stiffness) << "\n"
      << "coupling_damping = " << num(c.plant.coupling_damping) << "\n"
      << "damping_1 = " << num(c.plant.damping_1) << "\n"
      << "damping_2 = " << num(c.plant.damping_2) << "\n"
      << "input_coupling = " << num(c.plant.input_coupling) << "\n"
      << "kp_1 = " << num(c.plant.kp_1) << "\nkd_1 = " << num(c.plant.kd_1) << "\n"
      << "kp_2 = " << num(c.plant.kp_2) << "\nkd_2 = " << num(c.plant.kd_2) << "\n"
      << "samples = " << c.n_samples << "\n"
      << "sample_time = " << num(c.sample_time) << "\n"
      << "noise_std = " << num(c.noise_std) << "\n"
      << "noise_seed = " << c.noise_seed << "\n\n[reference]\n"
      << "order = " << c.profile_order << "\n";
    if (!c.reference_file.empty()) o << "file = " << c.reference_file << "\n";
    for (std::size_t ch = 0; ch < c.moves.size(); ++ch) {
        const auto& mv = c.moves[ch];
        const std::string s = "_" + std::to_string(ch + 1);
        o << "start_position" << s << " = " << num(mv.start_position) << "\n"
          << "displacement" << s << " = " << num(mv.end_position - mv.start_position) << "\n"
          << "start_time" << s << " = " << num(mv.start_time) << "\n"
          << "duration" << s << " = " << num(mv.duration) << "\n";
    }
    o << "\n[basis]\nkind = custom\norders = ";
    for (std::size_t i = 0; i < c.basis.derivative_orders.size(); ++i) o << (i ? "," : "") << c.basis.derivative_orders[i];
    o << "\nconditioning = " << to_string(c.basis.conditioning) << "\n\n[learner]\n"
      << "method = " << to_string(c.learner.method) << "\n"
      << "iterations = " << c.learner.n_iterations << "\n"
      << "seed = " << c.learner.seed << "\n"
      << "alpha = " << num(c.learner.alpha_scale) << "\n"
      << "beta = " << num(c.learner.beta_scale) << "\n";
    if (c.learner.relative_cost_tolerance) o << "stop_tolerance = " << num(*c.learner.relative_cost_tolerance) << "\n";
    if (!c.output_directory.empty()) o << "\n[output]\ndirectory = " << c.output_directory << "\n";
    return o.str();
}

} // namespace fftune
