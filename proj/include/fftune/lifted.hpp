#pragma once

// Lifted (finite-horizon, stacked) signals and LTI operators.
//
// A signal of N samples on c channels is stored channel-major: the N samples
// of channel 0, then the N samples of channel 1, and so on. An LTI operator
// from n_i to n_o channels is a grid of n_o x n_i impulse responses; block
// (m, k) induces the N x N lower-triangular Toeplitz matrix of its response.

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fftune {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

namespace detail {
inline std::string dims(std::size_t samples, std::size_t channels)
{
    return std::to_string(channels) + "x" + std::to_string(samples);
}
} // namespace detail

class Signal {
public:
    Signal(std::size_t n_samples, std::size_t n_channels)
        : n_samples_(n_samples), n_channels_(n_channels)
    {
        check_dims();
        values_ = Vector::Zero(static_cast<Eigen::Index>(n_samples * n_channels));
    }

    Signal(std::size_t n_samples, std::size_t n_channels, Vector values)
        : n_samples_(n_samples), n_channels_(n_channels), values_(std::move(values))
    {
        check_dims();
        if (static_cast<std::size_t>(values_.size()) != n_samples * n_channels) {
            throw ShapeError("signal values have length " + std::to_string(values_.size()) +
                             ", expected " + std::to_string(n_samples * n_channels));
        }
    }

    /// One vector per channel, all of equal length.
    static Signal from_channels(const std::vector<Vector>& channels)
    {
        if (channels.empty()) throw ShapeError("signal needs at least one channel");
        const auto n = static_cast<std::size_t>(channels.front().size());
        Signal s(n, channels.size());
        for (std::size_t c = 0; c < channels.size(); ++c) {
            if (static_cast<std::size_t>(channels[c].size()) != n)
                throw ShapeError("channel " + std::to_string(c) + " has a different length");
            s.channel(c) = channels[c];
        }
        return s;
    }

    std::size_t n_samples() const { return n_samples_; }
    std::size_t n_channels() const { return n_channels_; }

    const Vector& values() const { return values_; }
    Vector& values() { return values_; }

    Eigen::VectorBlock<Vector> channel(std::size_t c) { return values_.segment(offset(c), size()); }
    Eigen::VectorBlock<const Vector> channel(std::size_t c) const { return values_.segment(offset(c), size()); }

    double operator()(std::size_t c, std::size_t t) const { return values_[offset(c) + static_cast<Eigen::Index>(t)]; }
    double& operator()(std::size_t c, std::size_t t) { return values_[offset(c) + static_cast<Eigen::Index>(t)]; }

    bool same_shape(const Signal& other) const
    {
        return n_samples_ == other.n_samples_ && n_channels_ == other.n_channels_;
    }

    bool all_finite() const { return values_.allFinite(); }

    Signal& operator+=(const Signal& rhs)
    {
        require_same_shape(rhs);
        values_ += rhs.values_;
        return *this;
    }
    Signal& operator-=(const Signal& rhs)
    {
        require_same_shape(rhs);
        values_ -= rhs.values_;
        return *this;
    }
    Signal& operator*=(double s)
    {
        values_ *= s;
        return *this;
    }

    friend Signal operator+(Signal a, const Signal& b) { return a += b; }
    friend Signal operator-(Signal a, const Signal& b) { return a -= b; }
    friend Signal operator*(double s, Signal a) { return a *= s; }
    friend Signal operator*(Signal a, double s) { return a *= s; }

    void require_same_shape(const Signal& other) const
    {
        if (!same_shape(other)) {
            throw ShapeError("signal shape mismatch: " + detail::dims(n_samples_, n_channels_) +
                             " vs " + detail::dims(other.n_samples_, other.n_channels_));
        }
    }

private:
    void check_dims() const
    {
        if (n_samples_ < 1 || n_channels_ < 1) throw ShapeError("signal needs N >= 1 and at least one channel");
    }
    Eigen::Index offset(std::size_t c) const { return static_cast<Eigen::Index>(c * n_samples_); }
    Eigen::Index size() const { return static_cast<Eigen::Index>(n_samples_); }

    std::size_t n_samples_;
    std::size_t n_channels_;
    Vector values_;
};

inline double inner(const Signal& a, const Signal& b)
{
    a.require_same_shape(b);
    return a.values().dot(b.values());
}

/// Block lower-triangular Toeplitz operator stored as impulse responses.
class BlockImpulseOperator {
public:
    /// blocks[m][k] is the response of output m to a unit pulse on input k.
    explicit BlockImpulseOperator(std::vector<std::vector<Vector>> blocks)
        : blocks_(std::move(blocks))
    {
        if (blocks_.empty() || blocks_.front().empty())
            throw ShapeError("operator needs at least one block");
        n_inputs_ = blocks_.front().size();
        n_samples_ = static_cast<std::size_t>(blocks_.front().front().size());
        if (n_samples_ < 1) throw ShapeError("impulse responses must have at least one sample");
        for (const auto& row : blocks_) {
            if (row.size() != n_inputs_) throw ShapeError("ragged block grid");
            for (const auto& h : row) {
                if (static_cast<std::size_t>(h.size()) != n_samples_)
                    throw ShapeError("impulse responses must all have length " + std::to_string(n_samples_));
            }
        }
    }

    static BlockImpulseOperator identity(std::size_t n_channels, std::size_t n_samples)
    {
        std::vector<std::vector<Vector>> b(n_channels, std::vector<Vector>(n_channels, Vector::Zero(static_cast<Eigen::Index>(n_samples))));
        for (std::size_t c = 0; c < n_channels; ++c) b[c][c][0] = 1.0;
        return BlockImpulseOperator(std::move(b));
    }

    std::size_t n_inputs() const { return n_inputs_; }
    std::size_t n_outputs() const { return blocks_.size(); }
    std::size_t n_samples() const { return n_samples_; }

    const Vector& block(std::size_t m, std::size_t k) const { return blocks_.at(m).at(k); }
    const std::vector<std::vector<Vector>>& blocks() const { return blocks_; }

private:
    std::vector<std::vector<Vector>> blocks_;
    std::size_t n_inputs_ = 0;
    std::size_t n_samples_ = 0;
};

namespace detail {
// y += conv(h, u) truncated to the length of y.
template <class H, class U, class Y>
void accumulate_convolution(const H& h, const U& u, Y&& y)
{
    const Eigen::Index n = y.size();
    for (Eigen::Index t = 0; t < n; ++t) {
        double acc = 0.0;
        for (Eigen::Index s = 0; s <= t; ++s) acc += h[t - s] * u[s];
        y[t] += acc;
    }
}
} // namespace detail

inline Signal apply(const BlockImpulseOperator& op, const Signal& u)
{
    if (u.n_channels() != op.n_inputs() || u.n_samples() != op.n_samples()) {
        throw ShapeError("operator expects input " + detail::dims(op.n_samples(), op.n_inputs()) +
                         ", got " + detail::dims(u.n_samples(), u.n_channels()));
    }
    Signal y(op.n_samples(), op.n_outputs());
    for (std::size_t m = 0; m < op.n_outputs(); ++m)
        for (std::size_t k = 0; k < op.n_inputs(); ++k)
            detail::accumulate_convolution(op.block(m, k), u.channel(k), y.channel(m));
    return y;
}

inline Signal time_reverse(const Signal& x)
{
    Signal out(x.n_samples(), x.n_channels());
    for (std::size_t c = 0; c < x.n_channels(); ++c) out.channel(c) = x.channel(c).reverse();
    return out;
}

/// Operator whose block (l, m) is block (m, l) of the original.
inline BlockImpulseOperator block_transpose(const BlockImpulseOperator& op)
{
    std::vector<std::vector<Vector>> b(op.n_inputs(), std::vector<Vector>(op.n_outputs()));
    for (std::size_t m = 0; m < op.n_outputs(); ++m)
        for (std::size_t k = 0; k < op.n_inputs(); ++k) b[k][m] = op.block(m, k);
    return BlockImpulseOperator(std::move(b));
}

/// Transpose action: reverse every channel, run the block-transposed operator, reverse again.
inline Signal adjoint_apply(const BlockImpulseOperator& op, const Signal& v)
{
    if (v.n_channels() != op.n_outputs() || v.n_samples() != op.n_samples()) {
        throw ShapeError("adjoint expects input " + detail::dims(op.n_samples(), op.n_outputs()) +
                         ", got " + detail::dims(v.n_samples(), v.n_channels()));
    }
    const Signal reversed = time_reverse(v);
    Signal out(op.n_samples(), op.n_inputs());
    for (std::size_t l = 0; l < op.n_inputs(); ++l)
        for (std::size_t m = 0; m < op.n_outputs(); ++m)
            detail::accumulate_convolution(op.block(m, l), reversed.channel(m), out.channel(l));
    return time_reverse(out);
}

/// Dense N n_o x N n_i matrix of the operator. Test and oracle use only.
inline Matrix to_dense(const BlockImpulseOperator& op)
{
    const auto n = static_cast<Eigen::Index>(op.n_samples());
    Matrix dense = Matrix::Zero(n * static_cast<Eigen::Index>(op.n_outputs()),
                                n * static_cast<Eigen::Index>(op.n_inputs()));
    for (std::size_t m = 0; m < op.n_outputs(); ++m) {
        for (std::size_t k = 0; k < op.n_inputs(); ++k) {
            const Vector& h = op.block(m, k);
            auto blk = dense.block(static_cast<Eigen::Index>(m) * n, static_cast<Eigen::Index>(k) * n, n, n);
            for (Eigen::Index t = 0; t < n; ++t)
                for (Eigen::Index s = 0; s <= t; ++s) blk(t, s) = h[t - s];
        }
    }
    return dense;
}

/// n_rows x n_cols matrix of independent symmetric +-1 draws, replayable from its seed.
class SignMatrix {
public:
    SignMatrix(std::size_t n_rows, std::size_t n_cols, std::uint64_t seed)
        : n_rows_(n_rows), n_cols_(n_cols), seed_(seed), entries_(n_rows * n_cols)
    {
        if (n_rows < 1 || n_cols < 1) throw ShapeError("sign matrix needs positive dimensions");
        std::mt19937_64 rng(seed);
        // top bit of each draw; avoids implementation-defined distributions
        for (auto& e : entries_) e = (rng() >> 63) ? 1 : -1;
    }

    /// Explicit entries, row-major; each must be +1 or -1.
    SignMatrix(std::size_t n_rows, std::size_t n_cols, std::vector<int> entries)
        : n_rows_(n_rows), n_cols_(n_cols), seed_(0), entries_(std::move(entries))
    {
        if (n_rows < 1 || n_cols < 1) throw ShapeError("sign matrix needs positive dimensions");
        if (entries_.size() != n_rows * n_cols) throw ShapeError("sign matrix entry count mismatch");
        for (int e : entries_)
            if (e != 1 && e != -1) throw std::invalid_argument("sign matrix entries must be +1 or -1");
    }

    std::size_t n_rows() const { return n_rows_; }
    std::size_t n_cols() const { return n_cols_; }
    std::uint64_t seed() const { return seed_; }
    int operator()(std::size_t l, std::size_t m) const { return entries_[l * n_cols_ + m]; }

private:
    std::size_t n_rows_;
    std::size_t n_cols_;
    std::uint64_t seed_;
    std::vector<int> entries_;
};

/// (a kron I_N) x: output channel l is sum_m a(l, m) * x channel m.
inline Signal kron_apply(const SignMatrix& a, const Signal& x)
{
    if (x.n_channels() != a.n_cols()) {
        throw ShapeError("sign matrix has " + std::to_string(a.n_cols()) + " columns, signal has " +
                         std::to_string(x.n_channels()) + " channels");
    }
    Signal out(x.n_samples(), a.n_rows());
    for (std::size_t l = 0; l < a.n_rows(); ++l)
        for (std::size_t m = 0; m < a.n_cols(); ++m) out.channel(l) += static_cast<double>(a(l, m)) * x.channel(m);
    return out;
}

/// Dense Kronecker product a kron I_N. Test and oracle use only.
inline Matrix kron_dense(const SignMatrix& a, std::size_t n_samples)
{
    const auto n = static_cast<Eigen::Index>(n_samples);
    Matrix dense = Matrix::Zero(static_cast<Eigen::Index>(a.n_rows()) * n, static_cast<Eigen::Index>(a.n_cols()) * n);
    for (std::size_t l = 0; l < a.n_rows(); ++l)
        for (std::size_t m = 0; m < a.n_cols(); ++m)
            dense.block(static_cast<Eigen::Index>(l) * n, static_cast<Eigen::Index>(m) * n, n, n).diagonal().setConstant(a(l, m));
    return dense;
}

} // namespace fftune
