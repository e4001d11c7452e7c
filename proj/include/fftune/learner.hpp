#pragma once

// Model-free feedforward tuning by gradient descent with experiment-based
// gradients and exact line search.
//
// Cost J(theta) = ||e(theta)||^2 with e(theta) = r - J psi^T theta, gradient
// g = -2 psi J^T e. J^T e is measured on the plant itself by time reversal:
//   exact:       J^T e = T (sum_lm E_lm J E_lm) T e     (n_i * n_o experiments)
//   stochastic:  E[T A J A T e] = J^T e, A = a kron I_N (one experiment)
// with T channel-wise time reversal and a a random +-1 matrix.

#include "fftune/basis.hpp"
#include "fftune/lifted.hpp"
#include "fftune/plant.hpp"

#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fftune {

/// Raised when the step-size experiment cannot fix a finite step along the search direction.
class DegenerateDirection : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

template <class O>
concept ExperimentSource = requires(O& oracle, const O& c_oracle, const Signal& s, double scale) {
    { oracle.run_tracking_experiment(s) } -> std::same_as<Signal>;
    { oracle.run_zero_reference_experiment(s) } -> std::same_as<Signal>;
    { oracle.scaled_zero_reference_experiment(s, scale) } -> std::same_as<Signal>;
    { c_oracle.experiment_count() } -> std::convertible_to<long>;
    { c_oracle.n_inputs() } -> std::convertible_to<std::size_t>;
    { c_oracle.n_outputs() } -> std::convertible_to<std::size_t>;
    { c_oracle.n_samples() } -> std::convertible_to<std::size_t>;
};

inline double cost(const Signal& e) { return e.values().squaredNorm(); }

/// -2 psi J^T e from a known model. Only tests and diagnostics have J.
inline Vector exact_gradient(const BasisMatrix& psi, const BlockImpulseOperator& j, const Signal& e)
{
    if (psi.n_inputs() != j.n_inputs() || psi.n_samples() != j.n_samples())
        throw ShapeError("basis and operator disagree on inputs or horizon");
    return -2.0 * psi.apply(adjoint_apply(j, e));
}

struct GradientEstimate {
    Vector values;
    long experiments_used = 0;
};

namespace detail {

template <class Oracle>
void check_error_shape(const BasisMatrix& psi, const Oracle& oracle, const Signal& e)
{
    if (psi.n_inputs() != oracle.n_inputs() || psi.n_samples() != oracle.n_samples())
        throw ShapeError("basis and oracle disagree on inputs or horizon");
    if (e.n_channels() != oracle.n_outputs() || e.n_samples() != oracle.n_samples())
        throw ShapeError("error signal must be " + dims(oracle.n_samples(), oracle.n_outputs()));
}

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

} // namespace detail

/// Seed of the sign matrix for iteration j of a run with the given master seed.
inline std::uint64_t iteration_seed(std::uint64_t master_seed, std::size_t iteration)
{
    return detail::splitmix64(detail::splitmix64(master_seed) ^ static_cast<std::uint64_t>(iteration));
}

/// Unbiased gradient estimate -2 psi T A J A T e from a single zero-reference experiment.
/// The experiment input A T e is scaled by alpha and the output divided by it.
template <ExperimentSource Oracle>
GradientEstimate stochastic_gradient_estimate(const BasisMatrix& psi, Oracle& oracle, const Signal& e,
                                              const SignMatrix& signs, double alpha = 1.0)
{
    detail::check_error_shape(psi, oracle, e);
    if (signs.n_rows() != oracle.n_inputs() || signs.n_cols() != oracle.n_outputs())
        throw ShapeError("sign matrix must be n_i x n_o");
    const long before = oracle.experiment_count();
    const Signal input = kron_apply(signs, time_reverse(e));
    const Signal output = oracle.scaled_zero_reference_experiment(input, alpha);
    const Signal adjoint = time_reverse(kron_apply(signs, output));
    return {-2.0 * psi.apply(adjoint), oracle.experiment_count() - before};
}

template <ExperimentSource Oracle>
GradientEstimate stochastic_gradient_estimate(const BasisMatrix& psi, Oracle& oracle, const Signal& e,
                                              std::uint64_t seed, double alpha = 1.0)
{
    return stochastic_gradient_estimate(psi, oracle, e, SignMatrix(oracle.n_inputs(), oracle.n_outputs(), seed), alpha);
}

/// Exact gradient from n_i * n_o experiments: run (l, m) feeds reversed error
/// channel m into input l and keeps output m, which assembles the block-transposed J.
template <ExperimentSource Oracle>
GradientEstimate deterministic_gradient(const BasisMatrix& psi, Oracle& oracle, const Signal& e, double alpha = 1.0)
{
    detail::check_error_shape(psi, oracle, e);
    const long before = oracle.experiment_count();
    const Signal reversed = time_reverse(e);
    Signal assembled(oracle.n_samples(), oracle.n_inputs());
    for (std::size_t l = 0; l < oracle.n_inputs(); ++l) {
        for (std::size_t m = 0; m < oracle.n_outputs(); ++m) {
            Signal input(oracle.n_samples(), oracle.n_inputs());
            input.channel(l) = reversed.channel(m);
            const Signal output = oracle.scaled_zero_reference_experiment(input, alpha);
            assembled.channel(l) += output.channel(m);
        }
    }
    return {-2.0 * psi.apply(time_reverse(assembled)), oracle.experiment_count() - before};
}

struct StepSize {
    double epsilon = 0.0;
    long experiments_used = 0;
    bool converged = false; ///< search direction was zero; no experiment was run
};

/// Largest accepted |epsilon|; beyond it the direction is treated as lying in the null space of J psi^T.
inline constexpr double max_step_magnitude = 1e12;

/// Exact minimizer of ||e - eps J psi^T d||^2 over eps, for the update theta + eps d.
/// J psi^T d comes from one zero-reference experiment on beta psi^T d.
template <ExperimentSource Oracle>
StepSize optimal_step_size(const BasisMatrix& psi, Oracle& oracle, const Signal& e, const Vector& direction,
                           double beta = 1.0)
{
    detail::check_error_shape(psi, oracle, e);
    if (static_cast<std::size_t>(direction.size()) != psi.n_parameters())
        throw ShapeError("search direction has the wrong length");
    if (direction.isZero(0.0)) return {0.0, 0, true};

    const long before = oracle.experiment_count();
    const Signal response = oracle.scaled_zero_reference_experiment(psi.apply_transpose(direction), beta);
    const double numerator = inner(e, response);
    const double denominator = inner(response, response);
    if (denominator == 0.0) throw DegenerateDirection("search direction produces no plant response");
    const double epsilon = numerator / denominator;
    if (!std::isfinite(epsilon) || std::abs(epsilon) > max_step_magnitude)
        throw DegenerateDirection("step size " + std::to_string(epsilon) + " is ill-conditioned");
    return {epsilon, oracle.experiment_count() - before, false};
}

// ---------------------------------------------------------------------------
// Iteration driver
// ---------------------------------------------------------------------------

enum class Method { stochastic, deterministic };

inline std::string to_string(Method m) { return m == Method::stochastic ? "stochastic" : "deterministic"; }

struct LearnerConfig {
    Method method = Method::stochastic;
    std::size_t n_iterations = 10;
    double alpha_scale = 1.0; ///< gradient experiment input scaling
    double beta_scale = 1.0;  ///< step-size experiment input scaling
    std::uint64_t seed = 1;
    /// Stop once cost <= tolerance * first cost.
    std::optional<double> relative_cost_tolerance;

    void validate() const
    {
        if (n_iterations < 1) throw std::invalid_argument("n_iterations must be at least 1");
        for (double s : {alpha_scale, beta_scale})
            if (s == 0.0 || !std::isfinite(s)) throw std::invalid_argument("experiment scales must be finite and nonzero");
        if (relative_cost_tolerance && !(*relative_cost_tolerance >= 0.0))
            throw std::invalid_argument("relative cost tolerance must be non-negative");
    }
};

struct IterationRecord {
    std::size_t iteration = 0; ///< 1-based
    Vector theta;              ///< parameters applied in this iteration's tracking experiment
    double cost = 0.0;         ///< measured ||e||^2 at theta
    double step_size = 0.0;
    long experiments_cumulative = 0;
    double gradient_norm = 0.0;
    std::uint64_t seed = 0; ///< sign-matrix seed (stochastic method)
};

enum class RunStatus { completed, converged, aborted };

inline std::string to_string(RunStatus s)
{
    switch (s) {
    case RunStatus::completed: return "completed";
    case RunStatus::converged: return "converged";
    case RunStatus::aborted: return "aborted";
    }
    return "unknown";
}

struct TuningResult {
    std::vector<IterationRecord> records;
    Vector theta; ///< parameters after the last update
    RunStatus status = RunStatus::completed;
    std::string message;
};

using RecordSink = std::function<void(const IterationRecord&)>;

/// Per iteration: one tracking experiment, the gradient experiments (1 or n_i n_o),
/// one step-size experiment, then theta <- theta + eps * g.
template <ExperimentSource Oracle>
TuningResult run_tuning(const LearnerConfig& config, Oracle& oracle, const BasisMatrix& psi, Vector theta,
                        const RecordSink& sink = {})
{
    config.validate();
    if (static_cast<std::size_t>(theta.size()) != psi.n_parameters())
        throw ShapeError("initial theta has length " + std::to_string(theta.size()) + ", expected " +
                         std::to_string(psi.n_parameters()));

    TuningResult result;
    const long start = oracle.experiment_count();
    std::optional<double> first_cost;
    auto emit = [&](IterationRecord rec) {
        rec.experiments_cumulative = oracle.experiment_count() - start;
        if (sink) sink(rec);
        result.records.push_back(std::move(rec));
    };

    try {
        for (std::size_t j = 1; j <= config.n_iterations; ++j) {
            IterationRecord rec;
            rec.iteration = j;
            rec.theta = theta;
            const Signal e = oracle.run_tracking_experiment(psi.apply_transpose(theta));
            rec.cost = cost(e);
            if (!first_cost) first_cost = rec.cost;
            if (config.relative_cost_tolerance && rec.cost <= *config.relative_cost_tolerance * *first_cost) {
                emit(std::move(rec));
                result.status = RunStatus::converged;
                result.message = "cost below relative tolerance";
                break;
            }

            GradientEstimate g;
            if (config.method == Method::stochastic) {
                rec.seed = iteration_seed(config.seed, j);
                g = stochastic_gradient_estimate(psi, oracle, e, rec.seed, config.alpha_scale);
            } else {
                g = deterministic_gradient(psi, oracle, e, config.alpha_scale);
            }
            rec.gradient_norm = g.values.norm();

            const StepSize step = optimal_step_size(psi, oracle, e, g.values, config.beta_scale);
            rec.step_size = step.epsilon;
            emit(std::move(rec));
            if (step.converged) {
                result.status = RunStatus::converged;
                result.message = "zero search direction";
                break;
            }
            theta += step.epsilon * g.values;
        }
    } catch (const OracleError& err) {
        result.status = RunStatus::aborted;
        result.message = err.what();
    } catch (const DegenerateDirection& err) {
        result.status = RunStatus::aborted;
        result.message = err.what();
    }
    result.theta = std::move(theta);
    return result;
}

} // namespace fftune
