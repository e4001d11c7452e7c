#pragma once

// Synthetic closed loop (plant P under feedback controller C) and the
// experiment oracle through which the learner touches it.
//
// Loop equations per sample t:
//     y_t = C_p x_t
//     e_t = y_d,t - y_t
//     u_t = C_c z_t + D_c e_t + f_t
//     x_{t+1} = A_p x_t + B_p u_t,   z_{t+1} = A_c z_t + B_c e_t
// so e = S y_d - J f with S = (I + PC)^-1 and J = (I + PC)^-1 P.

#include "fftune/lifted.hpp"

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <concepts>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fftune {

class OracleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Discrete-time x+ = A x + B u, y = C x + D u.
struct StateSpaceModel {
    Matrix A;
    Matrix B;
    Matrix C;
    Matrix D;
    double sample_time = 0.0;

    StateSpaceModel(Matrix a, Matrix b, Matrix c, Matrix d, double ts)
        : A(std::move(a)), B(std::move(b)), C(std::move(c)), D(std::move(d)), sample_time(ts)
    {
        const auto n = A.rows();
        if (A.cols() != n || B.rows() != n || C.cols() != n || D.rows() != C.rows() || D.cols() != B.cols())
            throw ShapeError("inconsistent state-space dimensions");
        if (!(sample_time > 0.0)) throw std::invalid_argument("sample_time must be positive");
    }

    Eigen::Index n_states() const { return A.rows(); }
    Eigen::Index n_inputs() const { return B.cols(); }
    Eigen::Index n_outputs() const { return C.rows(); }
};

/// Zero-order-hold discretization through the exponential of the augmented matrix [[A, B], [0, 0]].
inline StateSpaceModel discretize_zoh(const Matrix& a, const Matrix& b, const Matrix& c, const Matrix& d, double sample_time)
{
    const auto n = a.rows();
    const auto m = b.cols();
    Matrix aug = Matrix::Zero(n + m, n + m);
    aug.topLeftCorner(n, n) = a;
    aug.topRightCorner(n, m) = b;
    const Matrix e = (aug * sample_time).exp();
    return StateSpaceModel(e.topLeftCorner(n, n), e.topRightCorner(n, m), c, d, sample_time);
}

inline double spectral_radius(const Matrix& a)
{
    if (a.rows() == 0) return 0.0;
    return Eigen::EigenSolver<Matrix>(a, false).eigenvalues().cwiseAbs().maxCoeff();
}

/// Output and error of one closed-loop run.
struct LoopResponse {
    Signal output;
    Signal error;
};

/// Anything the oracle can run experiments on.
template <class L>
concept LoopSystem = requires(const L& loop, const Signal& s) {
    { loop.simulate(s, s) } -> std::same_as<LoopResponse>;
    { loop.n_inputs() } -> std::convertible_to<std::size_t>;
    { loop.n_outputs() } -> std::convertible_to<std::size_t>;
    { loop.n_samples() } -> std::convertible_to<std::size_t>;
};

class ClosedLoopPlant {
public:
    /// The plant must be strictly proper (D = 0) so the loop has no algebraic cycle.
    /// The controller maps n_o errors to n_i inputs.
    ClosedLoopPlant(StateSpaceModel plant, StateSpaceModel controller, std::size_t n_samples)
        : plant_(std::move(plant)),
          controller_(std::move(controller)),
          n_samples_(validated_horizon(plant_, controller_, n_samples)),
          process_sensitivity_(extract_operator(/*reference_channel=*/false)),
          sensitivity_(extract_operator(/*reference_channel=*/true))
    {
    }

    std::size_t n_inputs() const { return static_cast<std::size_t>(plant_.n_inputs()); }
    std::size_t n_outputs() const { return static_cast<std::size_t>(plant_.n_outputs()); }
    std::size_t n_samples() const { return n_samples_; }
    double sample_time() const { return plant_.sample_time; }

    const StateSpaceModel& plant() const { return plant_; }
    const StateSpaceModel& controller() const { return controller_; }

    /// J = (I + PC)^-1 P, identified from impulse runs of the stepped loop.
    const BlockImpulseOperator& process_sensitivity() const { return process_sensitivity_; }
    /// S = (I + PC)^-1.
    const BlockImpulseOperator& sensitivity() const { return sensitivity_; }

    /// State matrix of the interconnection, state [x_plant; x_controller].
    Matrix closed_loop_matrix() const { return interconnection(plant_, controller_); }

    /// Stepped simulation from rest.
    LoopResponse simulate(const Signal& reference, const Signal& feedforward) const
    {
        if (reference.n_channels() != n_outputs() || reference.n_samples() != n_samples_)
            throw ShapeError("reference must be " + detail::dims(n_samples_, n_outputs()));
        if (feedforward.n_channels() != n_inputs() || feedforward.n_samples() != n_samples_)
            throw ShapeError("feedforward must be " + detail::dims(n_samples_, n_inputs()));

        Vector x = Vector::Zero(plant_.n_states());
        Vector z = Vector::Zero(controller_.n_states());
        Vector e(plant_.n_outputs());
        Vector u(plant_.n_inputs());
        Signal y_out(n_samples_, n_outputs());
        Signal e_out(n_samples_, n_outputs());
        for (std::size_t t = 0; t < n_samples_; ++t) {
            const Vector y = plant_.C * x;
            for (std::size_t m = 0; m < n_outputs(); ++m) {
                e[static_cast<Eigen::Index>(m)] = reference(m, t) - y[static_cast<Eigen::Index>(m)];
                y_out(m, t) = y[static_cast<Eigen::Index>(m)];
                e_out(m, t) = e[static_cast<Eigen::Index>(m)];
            }
            u = controller_.C * z + controller_.D * e;
            for (std::size_t k = 0; k < n_inputs(); ++k) u[static_cast<Eigen::Index>(k)] += feedforward(k, t);
            x = plant_.A * x + plant_.B * u;
            z = controller_.A * z + controller_.B * e;
        }
        return {std::move(y_out), std::move(e_out)};
    }

private:
    static Matrix interconnection(const StateSpaceModel& p, const StateSpaceModel& c)
    {
        const auto np = p.n_states();
        const auto nc = c.n_states();
        Matrix a(np + nc, np + nc);
        a.topLeftCorner(np, np) = p.A - p.B * c.D * p.C;
        a.topRightCorner(np, nc) = p.B * c.C;
        a.bottomLeftCorner(nc, np) = -c.B * p.C;
        a.bottomRightCorner(nc, nc) = c.A;
        return a;
    }

    static std::size_t validated_horizon(const StateSpaceModel& p, const StateSpaceModel& c, std::size_t n_samples)
    {
        if (n_samples < 1) throw std::invalid_argument("closed loop needs N >= 1");
        if (!p.D.isZero(0.0)) throw std::invalid_argument("plant must be strictly proper (D = 0)");
        if (c.n_inputs() != p.n_outputs() || c.n_outputs() != p.n_inputs())
            throw ShapeError("controller dimensions do not close the loop around the plant");
        if (std::abs(p.sample_time - c.sample_time) > 1e-15 * p.sample_time)
            throw std::invalid_argument("plant and controller sample times differ");
        const double rho = spectral_radius(interconnection(p, c));
        if (!(rho < 1.0)) throw std::invalid_argument("closed loop is unstable (spectral radius " + std::to_string(rho) + ")");
        return n_samples;
    }

    BlockImpulseOperator extract_operator(bool reference_channel) const
    {
        const std::size_t n_in = reference_channel ? n_outputs() : n_inputs();
        std::vector<std::vector<Vector>> blocks(n_outputs(), std::vector<Vector>(n_in));
        for (std::size_t k = 0; k < n_in; ++k) {
            Signal ref(n_samples_, n_outputs());
            Signal ff(n_samples_, n_inputs());
            (reference_channel ? ref : ff)(k, 0) = 1.0;
            const LoopResponse resp = simulate(ref, ff);
            for (std::size_t m = 0; m < n_outputs(); ++m)
                blocks[m][k] = reference_channel ? Vector(resp.error.channel(m)) : Vector(resp.output.channel(m));
        }
        return BlockImpulseOperator(std::move(blocks));
    }

    StateSpaceModel plant_;
    StateSpaceModel controller_;
    std::size_t n_samples_;
    BlockImpulseOperator process_sensitivity_;
    BlockImpulseOperator sensitivity_;
};

/// Loop given directly by its lifted operators: e = S y_d - J f, y = y_d - e.
/// Lets tests run the learner on arbitrary (also non-square) J.
class OperatorLoop {
public:
    OperatorLoop(BlockImpulseOperator process_sensitivity, BlockImpulseOperator sensitivity)
        : j_(std::move(process_sensitivity)), s_(std::move(sensitivity))
    {
        if (s_.n_inputs() != j_.n_outputs() || s_.n_outputs() != j_.n_outputs() || s_.n_samples() != j_.n_samples())
            throw ShapeError("sensitivity must be n_o x n_o over the same horizon as J");
    }

    std::size_t n_inputs() const { return j_.n_inputs(); }
    std::size_t n_outputs() const { return j_.n_outputs(); }
    std::size_t n_samples() const { return j_.n_samples(); }
    const BlockImpulseOperator& process_sensitivity() const { return j_; }
    const BlockImpulseOperator& sensitivity() const { return s_; }

    LoopResponse simulate(const Signal& reference, const Signal& feedforward) const
    {
        Signal e = apply(s_, reference) - apply(j_, feedforward);
        Signal y = reference - e;
        return {std::move(y), std::move(e)};
    }

private:
    BlockImpulseOperator j_;
    BlockImpulseOperator s_;
};

struct OracleOptions {
    double noise_std = 0.0; ///< additive white Gaussian noise on every measured sample
    std::uint64_t seed = 0;
};

/// The only gateway to the loop available to the learner. Counts every run.
template <LoopSystem Loop>
class ExperimentOracle {
public:
    ExperimentOracle(Loop loop, Signal reference, OracleOptions options = {})
        : loop_(std::move(loop)), reference_(std::move(reference)), options_(options), rng_(options.seed)
    {
        if (reference_.n_channels() != loop_.n_outputs() || reference_.n_samples() != loop_.n_samples())
            throw ShapeError("reference must be " + detail::dims(loop_.n_samples(), loop_.n_outputs()));
        if (!(options_.noise_std >= 0.0) || !std::isfinite(options_.noise_std))
            throw std::invalid_argument("noise_std must be finite and non-negative");
    }

    std::size_t n_inputs() const { return loop_.n_inputs(); }
    std::size_t n_outputs() const { return loop_.n_outputs(); }
    std::size_t n_samples() const { return loop_.n_samples(); }
    long experiment_count() const { return counter_; }
    const OracleOptions& options() const { return options_; }
    const Signal& reference() const { return reference_; }

    /// Runs with the reference; returns the measured error r - J f.
    Signal run_tracking_experiment(const Signal& f)
    {
        check_input(f);
        ++counter_;
        Signal e = loop_.simulate(reference_, f).error;
        add_noise(e);
        if (!e.all_finite()) throw OracleError("experiment produced non-finite error");
        return e;
    }

    /// Runs with zero reference; returns the raw output J f.
    Signal run_zero_reference_experiment(const Signal& f) { return scaled_zero_reference_experiment(f, 1.0); }

    /// One zero-reference run on scale * f, output divided by scale.
    Signal scaled_zero_reference_experiment(const Signal& f, double scale)
    {
        if (scale == 0.0 || !std::isfinite(scale)) throw std::invalid_argument("experiment scale must be finite and nonzero");
        check_input(f);
        ++counter_;
        const Signal zero(loop_.n_samples(), loop_.n_outputs());
        Signal y = loop_.simulate(zero, scale * f).output;
        add_noise(y);
        if (!y.all_finite()) throw OracleError("experiment produced non-finite output");
        y *= 1.0 / scale;
        return y;
    }

    /// Test access to the system behind the oracle. The learner never calls this.
    const Loop& loop() const { return loop_; }

private:
    void check_input(const Signal& f) const
    {
        if (f.n_channels() != loop_.n_inputs() || f.n_samples() != loop_.n_samples())
            throw ShapeError("experiment input must be " + detail::dims(loop_.n_samples(), loop_.n_inputs()) + ", got " +
                             detail::dims(f.n_samples(), f.n_channels()));
        if (!f.all_finite()) throw OracleError("experiment input contains non-finite samples");
    }

    void add_noise(Signal& s)
    {
        if (options_.noise_std == 0.0) return;
        std::normal_distribution<double> dist(0.0, options_.noise_std);
        for (Eigen::Index i = 0; i < s.values().size(); ++i) s.values()[i] += dist(rng_);
    }

    Loop loop_;
    Signal reference_;
    OracleOptions options_;
    std::mt19937_64 rng_;
    long counter_ = 0;
};

// ---------------------------------------------------------------------------
// Desk plant
// ---------------------------------------------------------------------------

/// Two masses joined by a spring-damper, each with viscous friction to ground,
/// position-controlled by independent PD loops. Actuator 1 also pushes mass 2
/// with gain `input_coupling`, which makes J non-symmetric (J^12 != J^21).
/// With `channels = 1` only mass 1 and its loop are kept.
struct DeskPlantConfig {
    std::size_t channels = 2;
    double mass_1 = 1.0;
    double mass_2 = 0.5;
    double coupling_stiffness = 200.0;
    double coupling_damping = 2.0;
    double damping_1 = 5.0;
    double damping_2 = 3.0;
    double input_coupling = 0.3;
    double kp_1 = 2500.0;
    double kd_1 = 70.0;
    double kp_2 = 1250.0;
    double kd_2 = 35.0;
};

inline ClosedLoopPlant desk_plant(const DeskPlantConfig& cfg, std::size_t n_samples, double sample_time)
{
    if (n_samples < 64) throw std::invalid_argument("desk plant needs N >= 64, got " + std::to_string(n_samples));
    if (!(sample_time > 0.0)) throw std::invalid_argument("sample_time must be positive");
    if (cfg.channels != 1 && cfg.channels != 2) throw std::invalid_argument("desk plant has 1 or 2 channels");
    const auto q = static_cast<Eigen::Index>(cfg.channels);
    if (!(cfg.mass_1 > 0.0) || (q == 2 && !(cfg.mass_2 > 0.0))) throw std::invalid_argument("masses must be positive");

    Matrix mass = Matrix::Zero(q, q);
    Matrix stiff = Matrix::Zero(q, q);
    Matrix damp = Matrix::Zero(q, q);
    Matrix actuation = Matrix::Identity(q, q);
    mass(0, 0) = cfg.mass_1;
    damp(0, 0) = cfg.damping_1;
    if (q == 2) {
        mass(1, 1) = cfg.mass_2;
        stiff << cfg.coupling_stiffness, -cfg.coupling_stiffness, -cfg.coupling_stiffness, cfg.coupling_stiffness;
        damp << cfg.damping_1 + cfg.coupling_damping, -cfg.coupling_damping, -cfg.coupling_damping,
            cfg.damping_2 + cfg.coupling_damping;
        actuation(1, 0) = cfg.input_coupling;
    }
    const Matrix inv_mass = mass.inverse();

    Matrix a = Matrix::Zero(2 * q, 2 * q);
    a.topRightCorner(q, q).setIdentity();
    a.bottomLeftCorner(q, q) = -inv_mass * stiff;
    a.bottomRightCorner(q, q) = -inv_mass * damp;
    Matrix b = Matrix::Zero(2 * q, q);
    b.bottomRows(q) = inv_mass * actuation;
    Matrix c = Matrix::Zero(q, 2 * q);
    c.leftCols(q).setIdentity();
    StateSpaceModel plant = discretize_zoh(a, b, c, Matrix::Zero(q, q), sample_time);

    // PD on the backward difference: u = kp e + kd (e - e_prev) / h, state = e_prev.
    Vector kp(q), kd(q);
    kp[0] = cfg.kp_1;
    kd[0] = cfg.kd_1;
    if (q == 2) {
        kp[1] = cfg.kp_2;
        kd[1] = cfg.kd_2;
    }
    StateSpaceModel controller(Matrix::Zero(q, q), Matrix::Identity(q, q), Matrix((-kd / sample_time).asDiagonal()),
                               Matrix((kp + kd / sample_time).asDiagonal()), sample_time);
    return ClosedLoopPlant(std::move(plant), std::move(controller), n_samples);
}

inline ClosedLoopPlant default_desk_plant(std::size_t n_samples, double sample_time)
{
    return desk_plant(DeskPlantConfig{}, n_samples, sample_time);
}

} // namespace fftune
