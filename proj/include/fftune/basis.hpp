#pragma once

// Reference trajectories and the structured feedforward basis.
//
// The feedforward on input n is
//     f^n = sum_k sum_l psi_l^k(y_d^k) * theta[(n-1) n_o n_b + (l-1) n_o + k]
// (1-based n, l, k). Every input sees the same n_b basis functions of every
// output reference; only the parameters differ.

#include "fftune/lifted.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace fftune {

// ---------------------------------------------------------------------------
// Reference profiles
// ---------------------------------------------------------------------------

struct ChannelMove {
    double start_position = 0.0;
    double end_position = 0.0;
    double start_time = 0.0; ///< seconds of rest before the move begins
    double duration = 1.0;   ///< seconds
};

struct ReferenceProfile {
    std::vector<ChannelMove> channels;
    std::size_t n_samples = 0;
    double sample_time = 0.0;
    int order = 9; ///< odd polynomial order of the smoothstep, >= 9
};

namespace detail {

inline double binomial(int n, int k)
{
    double r = 1.0;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

// Coefficients c_i of the smoothstep s(x) = sum_i c_i x^i of odd order 2m+1.
// s(0) = 0, s(1) = 1 and derivatives 1..m vanish at both ends.
inline std::vector<double> smoothstep_coefficients(int order)
{
    const int m = (order - 1) / 2;
    std::vector<double> c(static_cast<std::size_t>(order) + 1, 0.0);
    for (int k = 0; k <= m; ++k) {
        const double sign = (k % 2 == 0) ? 1.0 : -1.0;
        c[static_cast<std::size_t>(m + 1 + k)] = sign * binomial(m + k, k) * binomial(2 * m + 1, m - k);
    }
    return c;
}

inline double polynomial_derivative(const std::vector<double>& c, int deriv, double x)
{
    double acc = 0.0;
    for (int i = static_cast<int>(c.size()) - 1; i >= deriv; --i) {
        double falling = 1.0;
        for (int j = 0; j < deriv; ++j) falling *= (i - j);
        acc = acc * x + c[static_cast<std::size_t>(i)] * falling;
    }
    return acc;
}

inline void validate(const ReferenceProfile& p)
{
    if (p.channels.empty()) throw std::invalid_argument("reference needs at least one channel");
    if (p.n_samples < 1) throw std::invalid_argument("reference needs N >= 1");
    if (!(p.sample_time > 0.0)) throw std::invalid_argument("sample_time must be positive");
    if (p.order < 9 || p.order % 2 == 0)
        throw std::invalid_argument("smoothstep order must be odd and at least 9, got " + std::to_string(p.order));
    const double horizon = static_cast<double>(p.n_samples) * p.sample_time;
    for (std::size_t c = 0; c < p.channels.size(); ++c) {
        const auto& ch = p.channels[c];
        if (!(ch.duration > 0.0) || ch.start_time < 0.0)
            throw std::invalid_argument("channel " + std::to_string(c + 1) + ": duration must be positive and start_time non-negative");
        if (ch.start_time + ch.duration > horizon) {
            throw std::invalid_argument("channel " + std::to_string(c + 1) + ": move ends at " +
                                        std::to_string(ch.start_time + ch.duration) + " s, beyond the " +
                                        std::to_string(horizon) + " s horizon");
        }
    }
}

} // namespace detail

/// Analytic derivative (order 0 = position) of the profile. Serves as the
/// reference against which finite-difference derivatives are checked.
inline Signal evaluate_profile(const ReferenceProfile& p, int derivative = 0)
{
    detail::validate(p);
    const auto coeffs = detail::smoothstep_coefficients(p.order);
    Signal out(p.n_samples, p.channels.size());
    for (std::size_t c = 0; c < p.channels.size(); ++c) {
        const auto& ch = p.channels[c];
        const double span = ch.end_position - ch.start_position;
        const double time_scale = std::pow(ch.duration, -derivative);
        for (std::size_t t = 0; t < p.n_samples; ++t) {
            const double x = (static_cast<double>(t) * p.sample_time - ch.start_time) / ch.duration;
            double v;
            if (x <= 0.0 || x >= 1.0) {
                v = derivative == 0 ? (x <= 0.0 ? 0.0 : 1.0) : 0.0;
            } else {
                v = detail::polynomial_derivative(coeffs, derivative, x) * time_scale;
            }
            out(c, t) = (derivative == 0 ? ch.start_position : 0.0) + span * v;
        }
    }
    return out;
}

inline Signal generate_reference(const ReferenceProfile& p) { return evaluate_profile(p, 0); }

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

/// Fornberg weights for the `order`-th derivative at x0 on the given nodes.
inline std::vector<double> finite_difference_weights(double x0, const std::vector<double>& nodes, int order)
{
    const int n = static_cast<int>(nodes.size()) - 1;
    std::vector<std::vector<double>> c(nodes.size(), std::vector<double>(static_cast<std::size_t>(order) + 1, 0.0));
    double c1 = 1.0;
    double c4 = nodes[0] - x0;
    c[0][0] = 1.0;
    for (int i = 1; i <= n; ++i) {
        const int mn = std::min(i, order);
        double c2 = 1.0;
        const double c5 = c4;
        c4 = nodes[static_cast<std::size_t>(i)] - x0;
        for (int j = 0; j < i; ++j) {
            const double c3 = nodes[static_cast<std::size_t>(i)] - nodes[static_cast<std::size_t>(j)];
            c2 *= c3;
            if (j == i - 1) {
                for (int k = mn; k >= 1; --k)
                    c[i][k] = c1 * (k * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for (int k = mn; k >= 1; --k) c[j][k] = (c4 * c[j][k] - k * c[j][k - 1]) / c3;
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    std::vector<double> w(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) w[i] = c[i][static_cast<std::size_t>(order)];
    return w;
}

/// Derivative of the given order (1..4) by second-order accurate finite
/// differences: central stencils in the interior, shifted one-sided stencils
/// of k+2 points near the ends.
inline Vector differentiate(const Vector& x, int order, double sample_time)
{
    if (order < 1 || order > 4) throw std::invalid_argument("derivative order must be 1..4");
    if (!(sample_time > 0.0)) throw std::invalid_argument("sample_time must be positive");
    const auto n = static_cast<int>(x.size());
    const int half = (order + 1) / 2;
    const int central = 2 * half + 1;
    const int boundary = order + 2;
    if (n < std::max(central, boundary)) {
        throw std::invalid_argument("order-" + std::to_string(order) + " stencil needs at least " +
                                    std::to_string(std::max(central, boundary)) + " samples, got " + std::to_string(n));
    }
    const double scale = std::pow(sample_time, -order);

    std::vector<double> offsets(static_cast<std::size_t>(central));
    for (int i = 0; i < central; ++i) offsets[static_cast<std::size_t>(i)] = i - half;
    const auto central_w = finite_difference_weights(0.0, offsets, order);

    std::vector<double> window(static_cast<std::size_t>(boundary));
    for (int i = 0; i < boundary; ++i) window[static_cast<std::size_t>(i)] = i;

    // weights sum to zero, so differencing against x[t] makes flat stretches exactly zero
    Vector out(x.size());
    for (int t = 0; t < n; ++t) {
        double acc = 0.0;
        if (t >= half && t + half < n) {
            for (int i = 0; i < central; ++i) acc += central_w[static_cast<std::size_t>(i)] * (x[t - half + i] - x[t]);
        } else {
            const int first = t < half ? 0 : n - boundary;
            const auto w = finite_difference_weights(t - first, window, order);
            for (int i = 0; i < boundary; ++i) acc += w[static_cast<std::size_t>(i)] * (x[first + i] - x[t]);
        }
        out[t] = acc * scale;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Parameter indexing
// ---------------------------------------------------------------------------

struct BasisShape {
    std::size_t n_basis = 0;
    std::size_t n_inputs = 0;
    std::size_t n_outputs = 0;

    std::size_t n_parameters() const { return n_basis * n_outputs * n_inputs; }

    /// 1-based (input n, basis l, output k) -> 1-based parameter index.
    std::size_t index(std::size_t n, std::size_t l, std::size_t k) const
    {
        if (n < 1 || n > n_inputs || l < 1 || l > n_basis || k < 1 || k > n_outputs)
            throw std::out_of_range("parameter triple out of range");
        return (n - 1) * n_outputs * n_basis + (l - 1) * n_outputs + k;
    }

    /// Inverse of index().
    std::tuple<std::size_t, std::size_t, std::size_t> triple(std::size_t index) const
    {
        if (index < 1 || index > n_parameters()) throw std::out_of_range("parameter index out of range");
        const std::size_t z = index - 1;
        const std::size_t n = z / (n_outputs * n_basis);
        const std::size_t rem = z % (n_outputs * n_basis);
        return {n + 1, rem / n_outputs + 1, rem % n_outputs + 1};
    }
};

// ---------------------------------------------------------------------------
// Basis matrix
// ---------------------------------------------------------------------------

/// psi(y_d)^T as structured storage: signals[l][k] is basis l applied to output reference k.
class BasisMatrix {
public:
    BasisMatrix(std::size_t n_inputs, std::vector<std::vector<Vector>> signals)
        : signals_(std::move(signals))
    {
        if (signals_.empty()) throw std::invalid_argument("basis list is empty");
        if (n_inputs < 1) throw ShapeError("basis needs at least one input");
        shape_ = {signals_.size(), n_inputs, signals_.front().size()};
        if (shape_.n_outputs < 1) throw ShapeError("basis needs at least one output reference");
        n_samples_ = static_cast<std::size_t>(signals_.front().front().size());
        for (const auto& per_output : signals_) {
            if (per_output.size() != shape_.n_outputs) throw ShapeError("ragged basis grid");
            for (const auto& s : per_output)
                if (static_cast<std::size_t>(s.size()) != n_samples_) throw ShapeError("basis signals differ in length");
        }
    }

    const BasisShape& shape() const { return shape_; }
    std::size_t n_basis() const { return shape_.n_basis; }
    std::size_t n_inputs() const { return shape_.n_inputs; }
    std::size_t n_outputs() const { return shape_.n_outputs; }
    std::size_t n_samples() const { return n_samples_; }
    std::size_t n_parameters() const { return shape_.n_parameters(); }

    /// 0-based access: basis l on output reference k.
    const Vector& signal(std::size_t l, std::size_t k) const { return signals_.at(l).at(k); }

    /// f = psi^T theta, one feedforward channel per input.
    Signal apply_transpose(const Vector& theta) const
    {
        if (static_cast<std::size_t>(theta.size()) != n_parameters()) {
            throw ShapeError("theta has length " + std::to_string(theta.size()) + ", expected " +
                             std::to_string(n_parameters()));
        }
        Signal f(n_samples_, shape_.n_inputs);
        for (std::size_t n = 0; n < shape_.n_inputs; ++n)
            for (std::size_t l = 0; l < shape_.n_basis; ++l)
                for (std::size_t k = 0; k < shape_.n_outputs; ++k)
                    f.channel(n) += theta[flat(n, l, k)] * signals_[l][k];
        return f;
    }

    /// psi v: entry (n, l, k) is <psi_l^k, v channel n>.
    Vector apply(const Signal& v) const
    {
        if (v.n_channels() != shape_.n_inputs || v.n_samples() != n_samples_) {
            throw ShapeError("basis expects a " + detail::dims(n_samples_, shape_.n_inputs) + " signal, got " +
                             detail::dims(v.n_samples(), v.n_channels()));
        }
        Vector out(static_cast<Eigen::Index>(n_parameters()));
        for (std::size_t n = 0; n < shape_.n_inputs; ++n)
            for (std::size_t l = 0; l < shape_.n_basis; ++l)
                for (std::size_t k = 0; k < shape_.n_outputs; ++k) out[flat(n, l, k)] = signals_[l][k].dot(v.channel(n));
        return out;
    }

    /// Dense psi^T (n_i N x p). Test and oracle use only.
    Matrix to_dense_transpose() const
    {
        const auto n_s = static_cast<Eigen::Index>(n_samples_);
        Matrix dense = Matrix::Zero(n_s * static_cast<Eigen::Index>(shape_.n_inputs), static_cast<Eigen::Index>(n_parameters()));
        for (std::size_t n = 0; n < shape_.n_inputs; ++n)
            for (std::size_t l = 0; l < shape_.n_basis; ++l)
                for (std::size_t k = 0; k < shape_.n_outputs; ++k)
                    dense.col(flat(n, l, k)).segment(static_cast<Eigen::Index>(n) * n_s, n_s) = signals_[l][k];
        return dense;
    }

private:
    Eigen::Index flat(std::size_t n, std::size_t l, std::size_t k) const
    {
        return static_cast<Eigen::Index>(shape_.index(n + 1, l + 1, k + 1) - 1);
    }

    BasisShape shape_;
    std::size_t n_samples_ = 0;
    std::vector<std::vector<Vector>> signals_;
};

/// Position through snap.
inline const std::vector<int>& motion_orders()
{
    static const std::vector<int> orders{0, 1, 2, 3, 4};
    return orders;
}

/// How basis signals are rescaled before use. All three span the same feedforward family;
/// they differ in the coordinates theta lives in and hence in the conditioning of the descent.
enum class BasisConditioning {
    none,        ///< raw reference derivatives
    normalize,   ///< each signal scaled to unit 2-norm
    orthonormal, ///< Gram-Schmidt over (l, k) in index order; dependent signals become zero
};

inline std::string to_string(BasisConditioning c)
{
    switch (c) {
    case BasisConditioning::none: return "none";
    case BasisConditioning::normalize: return "normalize";
    case BasisConditioning::orthonormal: return "orthonormal";
    }
    return "unknown";
}

struct BasisOptions {
    std::vector<int> derivative_orders = motion_orders();
    BasisConditioning conditioning = BasisConditioning::orthonormal;
};

namespace detail {

/// Signals whose residual falls below this fraction of their own norm count as dependent.
inline constexpr double dependence_tolerance = 1e-10;

inline void orthonormalize(std::vector<std::vector<Vector>>& signals)
{
    std::vector<const Vector*> accepted;
    for (auto& per_output : signals) {
        for (Vector& s : per_output) {
            const double original = s.norm();
            if (original == 0.0) continue;
            for (int pass = 0; pass < 2; ++pass)
                for (const Vector* q : accepted) s -= q->dot(s) * *q;
            const double residual = s.norm();
            if (residual <= dependence_tolerance * original) {
                s.setZero();
                continue;
            }
            s /= residual;
            accepted.push_back(&s);
        }
    }
}

} // namespace detail

/// Basis of reference derivatives: entry l is derivative_orders[l] applied to each output reference.
inline BasisMatrix build_basis(const Signal& reference, std::size_t n_inputs, double sample_time,
                               const BasisOptions& options = {})
{
    if (options.derivative_orders.empty()) throw std::invalid_argument("basis list is empty");
    if (!reference.all_finite()) throw std::invalid_argument("reference contains non-finite samples");
    std::vector<std::vector<Vector>> signals;
    for (int order : options.derivative_orders) {
        if (order < 0 || order > 4) throw std::invalid_argument("basis derivative order must be 0..4, got " + std::to_string(order));
        std::vector<Vector> per_output;
        for (std::size_t k = 0; k < reference.n_channels(); ++k) {
            Vector s = order == 0 ? Vector(reference.channel(k)) : differentiate(reference.channel(k), order, sample_time);
            if (options.conditioning == BasisConditioning::normalize) {
                const double norm = s.norm();
                if (norm > 0.0) s /= norm;
            }
            per_output.push_back(std::move(s));
        }
        signals.push_back(std::move(per_output));
    }
    if (options.conditioning == BasisConditioning::orthonormal) detail::orthonormalize(signals);
    return BasisMatrix(n_inputs, std::move(signals));
}

} // namespace fftune
