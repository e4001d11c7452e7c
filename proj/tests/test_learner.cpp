#include "fftune/basis.hpp"
#include "fftune/learner.hpp"
#include "fftune/plant.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace fftune;
using fftune::testing::dense_basis_transpose;
using fftune::testing::dense_cost;
using fftune::testing::dense_operator;
using fftune::testing::directional_derivative;
using fftune::testing::least_squares;
using fftune::testing::random_operator;
using fftune::testing::random_signal;
using fftune::testing::random_vector;

namespace {

constexpr double h = 0.004;

Signal desk_reference(std::size_t n)
{
    const double horizon = static_cast<double>(n) * h;
    ReferenceProfile p;
    p.channels = {{0.0, 0.1, 0.1 * horizon, 0.6 * horizon}, {0.0, 0.01, 0.3 * horizon, 0.5 * horizon}};
    p.n_samples = n;
    p.sample_time = h;
    return generate_reference(p);
}

struct Desk {
    ClosedLoopPlant loop;
    Signal reference;
    BasisMatrix psi;
    Matrix phi; ///< dense J psi^T
    Vector r;

    explicit Desk(std::size_t n)
        : loop(default_desk_plant(n, h)),
          reference(desk_reference(n)),
          psi(build_basis(reference, 2, h)),
          phi(dense_operator(loop.process_sensitivity()) * dense_basis_transpose(psi)),
          r(dense_operator(loop.sensitivity()) * reference.values())
    {
    }

    ExperimentOracle<ClosedLoopPlant> oracle() const { return ExperimentOracle<ClosedLoopPlant>(loop, reference); }
};

double rel(const Vector& a, const Vector& b) { return (a - b).norm() / std::max(b.norm(), 1e-300); }

/// Oracle over OperatorLoop with S = I, so r equals the given reference.
ExperimentOracle<OperatorLoop> operator_oracle(const BlockImpulseOperator& j, const Signal& r)
{
    return ExperimentOracle<OperatorLoop>(OperatorLoop(j, BlockImpulseOperator::identity(j.n_outputs(), j.n_samples())), r);
}

BasisMatrix random_basis(std::mt19937_64& rng, std::size_t n_basis, std::size_t n_inputs, std::size_t n_outputs, std::size_t n)
{
    std::vector<std::vector<Vector>> signals(n_basis, std::vector<Vector>(n_outputs));
    for (auto& row : signals)
        for (auto& s : row) s = random_vector(rng, static_cast<Eigen::Index>(n));
    return BasisMatrix(n_inputs, std::move(signals));
}

} // namespace

TEST(Cost, Definition)
{
    EXPECT_EQ(cost(Signal(10, 2)), 0.0);
    Vector v(2);
    v << 3, 4;
    EXPECT_EQ(cost(Signal(2, 1, v)), 25.0);
    std::mt19937_64 rng(1);
    const Signal e = random_signal(rng, 30, 3);
    double sum = 0.0;
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t t = 0; t < 30; ++t) sum += e(c, t) * e(c, t);
    EXPECT_NEAR(cost(e), sum, 1e-12 * sum);
}

TEST(ExactGradient, ZeroErrorAndNormalEquations)
{
    const Desk d(128);
    EXPECT_EQ(exact_gradient(d.psi, d.loop.process_sensitivity(), Signal(128, 2)).cwiseAbs().maxCoeff(), 0.0);
    const Vector theta_star = least_squares(d.phi, d.r);
    const Signal e(128, 2, d.r - d.phi * theta_star);
    EXPECT_LE(exact_gradient(d.psi, d.loop.process_sensitivity(), e).norm(), 1e-8 * d.r.norm());
}

TEST(ExactGradient, MatchesFiniteDifferencesOfMeasuredCost)
{
    std::mt19937_64 rng(2);
    const Desk d(128);
    auto oracle = d.oracle();
    const Vector theta = random_vector(rng, 20, 0.01);
    auto measured_cost = [&](const Vector& th) { return cost(oracle.run_tracking_experiment(d.psi.apply_transpose(th))); };
    const Signal e = oracle.run_tracking_experiment(d.psi.apply_transpose(theta));
    const Vector g = exact_gradient(d.psi, d.loop.process_sensitivity(), e);
    const double step = 1e-5 * (1.0 + theta.norm());
    for (int i = 0; i < 5; ++i) {
        const Vector dir = random_vector(rng, 20).normalized();
        const double fd = directional_derivative(measured_cost, theta, dir, step);
        EXPECT_LT(std::abs(fd - g.dot(dir)) / std::abs(g.dot(dir)), 1e-6) << "direction " << i;
    }
}

TEST(StochasticEstimate, ZeroErrorGivesZero)
{
    const Desk d(128);
    auto oracle = d.oracle();
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        const auto est = stochastic_gradient_estimate(d.psi, oracle, Signal(128, 2), seed);
        EXPECT_EQ(est.values.cwiseAbs().maxCoeff(), 0.0);
        EXPECT_EQ(est.experiments_used, 1);
    }
}

TEST(StochasticEstimate, SisoIsDeterministic)
{
    std::mt19937_64 rng(3);
    const auto j = random_operator(rng, 1, 1, 60);
    const Signal r = random_signal(rng, 60, 1);
    auto oracle = operator_oracle(j, r);
    const BasisMatrix psi = random_basis(rng, 3, 1, 1, 60);
    const Signal e = oracle.run_tracking_experiment(psi.apply_transpose(random_vector(rng, 3)));
    const Vector exact = exact_gradient(psi, j, e);
    for (int sign : {1, -1}) {
        const auto est = stochastic_gradient_estimate(psi, oracle, e, SignMatrix(1, 1, std::vector<int>{sign}));
        EXPECT_LE(rel(est.values, exact), 1e-12);
    }
    const auto det = deterministic_gradient(psi, oracle, e);
    EXPECT_EQ(det.experiments_used, 1);
    EXPECT_LE(rel(det.values, exact), 1e-12);
}

TEST(StochasticEstimate, UnbiasedOnDeskPlant)
{
    const Desk d(128);
    auto oracle = d.oracle();
    const Signal e = oracle.run_tracking_experiment(Signal(128, 2));
    const Vector exact = exact_gradient(d.psi, d.loop.process_sensitivity(), e);
    const int m = 10000;
    Vector sum = Vector::Zero(20), sum_sq = Vector::Zero(20);
    for (int i = 0; i < m; ++i) {
        const Vector g = stochastic_gradient_estimate(d.psi, oracle, e, iteration_seed(11, static_cast<std::size_t>(i) + 1)).values;
        sum += g;
        sum_sq += g.cwiseProduct(g);
    }
    EXPECT_EQ(oracle.experiment_count(), m + 1);
    const Vector mean = sum / m;
    for (Eigen::Index c = 0; c < 20; ++c) {
        const double std_dev = std::sqrt(std::max(0.0, sum_sq[c] / m - mean[c] * mean[c]));
        EXPECT_LE(std::abs(mean[c] - exact[c]), 3.0 * std_dev / std::sqrt(double(m)) + 1e-12 * std::abs(exact[c]))
            << "component " << c + 1;
    }
}

TEST(StochasticEstimate, SignPatternsAverageToExactGradient)
{
    // Averaging over all 2^(n_i n_o) sign matrices is exact, not just statistical.
    std::mt19937_64 rng(4);
    const auto j = random_operator(rng, 2, 2, 40);
    auto oracle = operator_oracle(j, random_signal(rng, 40, 2));
    const BasisMatrix psi = random_basis(rng, 2, 2, 2, 40);
    const Signal e = random_signal(rng, 40, 2);
    Vector avg = Vector::Zero(8);
    for (int bits = 0; bits < 16; ++bits) {
        std::vector<int> entries;
        for (int b = 0; b < 4; ++b) entries.push_back((bits >> b) & 1 ? 1 : -1);
        avg += stochastic_gradient_estimate(psi, oracle, e, SignMatrix(2, 2, entries)).values / 16.0;
    }
    EXPECT_LE(rel(avg, exact_gradient(psi, j, e)), 1e-12);
}

TEST(DeterministicGradient, EqualsExactGradient)
{
    const Desk d(128);
    auto oracle = d.oracle();
    std::mt19937_64 rng(5);
    for (int i = 0; i < 5; ++i) {
        const Signal e = oracle.run_tracking_experiment(d.psi.apply_transpose(random_vector(rng, 20, 0.01)));
        const auto det = deterministic_gradient(d.psi, oracle, e);
        EXPECT_EQ(det.experiments_used, 4);
        EXPECT_LE(rel(det.values, exact_gradient(d.psi, d.loop.process_sensitivity(), e)), 1e-10);
    }
}

TEST(DeterministicGradient, NonSquareUsesOneExperimentPerBlock)
{
    std::mt19937_64 rng(6);
    // n_o = 2 outputs, n_i = 3 inputs
    const auto j = random_operator(rng, 2, 3, 32);
    auto oracle = operator_oracle(j, random_signal(rng, 32, 2));
    const BasisMatrix psi = random_basis(rng, 2, 3, 2, 32);
    const Signal e = random_signal(rng, 32, 2);
    const auto det = deterministic_gradient(psi, oracle, e);
    EXPECT_EQ(det.experiments_used, 6);
    EXPECT_EQ(oracle.experiment_count(), 6);
    EXPECT_LE(rel(det.values, exact_gradient(psi, j, e)), 1e-10);
    const auto est = stochastic_gradient_estimate(psi, oracle, e, std::uint64_t{3});
    EXPECT_EQ(est.experiments_used, 1);
}

TEST(StepSize, StrictDescentFromZero)
{
    const Desk d(128);
    auto oracle = d.oracle();
    const Signal e0 = oracle.run_tracking_experiment(Signal(128, 2));
    const Vector g = exact_gradient(d.psi, d.loop.process_sensitivity(), e0);
    const StepSize s = optimal_step_size(d.psi, oracle, e0, g);
    EXPECT_EQ(s.experiments_used, 1);
    EXPECT_FALSE(s.converged);
    const Signal e1 = oracle.run_tracking_experiment(d.psi.apply_transpose(s.epsilon * g));
    EXPECT_LT(cost(e1), cost(e0));
}

TEST(StepSize, GridMinimality)
{
    std::mt19937_64 rng(7);
    const Desk d(128);
    auto oracle = d.oracle();
    for (int trial = 0; trial < 5; ++trial) {
        const Vector theta = random_vector(rng, 20, 0.01);
        const Signal e = oracle.run_tracking_experiment(d.psi.apply_transpose(theta));
        const Vector dir = stochastic_gradient_estimate(d.psi, oracle, e, static_cast<std::uint64_t>(trial)).values;
        const double eps = optimal_step_size(d.psi, oracle, e, dir).epsilon;
        const double best = dense_cost(d.phi, d.r, theta + eps * dir);
        for (int k = -10; k <= 10; ++k) {
            const double trial_eps = eps * k / 5.0;
            EXPECT_GE(dense_cost(d.phi, d.r, theta + trial_eps * dir), best - 1e-10) << "k=" << k;
        }
    }
}

TEST(StepSize, SignFlip)
{
    std::mt19937_64 rng(8);
    const Desk d(128);
    auto oracle = d.oracle();
    const Vector theta = random_vector(rng, 20, 0.01);
    const Signal e = oracle.run_tracking_experiment(d.psi.apply_transpose(theta));
    const Vector g = stochastic_gradient_estimate(d.psi, oracle, e, std::uint64_t{9}).values;
    const double plus = optimal_step_size(d.psi, oracle, e, g).epsilon;
    const Vector neg = -g;
    const double minus = optimal_step_size(d.psi, oracle, e, neg).epsilon;
    EXPECT_EQ(minus, -plus);
    const Vector a = theta + plus * g, b = theta + minus * neg;
    EXPECT_EQ(a, b);
}

TEST(StepSize, ZeroAndNullDirections)
{
    std::mt19937_64 rng(9);
    const Desk d(128);
    auto oracle = d.oracle();
    const Signal e = oracle.run_tracking_experiment(Signal(128, 2));
    const long before = oracle.experiment_count();
    const StepSize s = optimal_step_size(d.psi, oracle, e, Vector::Zero(20));
    EXPECT_TRUE(s.converged);
    EXPECT_EQ(s.epsilon, 0.0);
    EXPECT_EQ(oracle.experiment_count(), before);

    // basis that is identically zero on input 2: a direction there produces no response
    const BasisMatrix zero_psi(2, std::vector<std::vector<Vector>>{{Vector::Zero(128), Vector::Zero(128)}});
    EXPECT_THROW(optimal_step_size(zero_psi, oracle, e, Vector::Ones(4)), DegenerateDirection);
    EXPECT_THROW(optimal_step_size(d.psi, oracle, e, Vector::Ones(19)), ShapeError);
}

TEST(Tuning, ExperimentAccounting)
{
    const Desk d(128);
    for (Method method : {Method::stochastic, Method::deterministic}) {
        auto oracle = d.oracle();
        LearnerConfig cfg;
        cfg.method = method;
        cfg.n_iterations = 6;
        const TuningResult res = run_tuning(cfg, oracle, d.psi, Vector::Zero(20));
        ASSERT_EQ(res.records.size(), 6u);
        EXPECT_EQ(res.status, RunStatus::completed);
        const long per = method == Method::stochastic ? 3 : 6;
        for (const auto& rec : res.records) EXPECT_EQ(rec.experiments_cumulative, per * static_cast<long>(rec.iteration));
        EXPECT_EQ(oracle.experiment_count(), per * 6);
    }
    // n_i = 3, n_o = 2: 2 + 6 per deterministic iteration
    std::mt19937_64 rng(10);
    const auto j = random_operator(rng, 2, 3, 32);
    auto oracle = operator_oracle(j, random_signal(rng, 32, 2));
    LearnerConfig cfg;
    cfg.method = Method::deterministic;
    cfg.n_iterations = 4;
    const auto res = run_tuning(cfg, oracle, random_basis(rng, 2, 3, 2, 32), Vector::Zero(12));
    for (const auto& rec : res.records) EXPECT_EQ(rec.experiments_cumulative, 8 * static_cast<long>(rec.iteration));
}

TEST(Tuning, RecordsAndSink)
{
    const Desk d(128);
    auto oracle = d.oracle();
    LearnerConfig cfg;
    cfg.n_iterations = 4;
    cfg.seed = 77;
    std::vector<IterationRecord> streamed;
    const auto res = run_tuning(cfg, oracle, d.psi, Vector::Zero(20), [&](const IterationRecord& r) { streamed.push_back(r); });
    ASSERT_EQ(streamed.size(), res.records.size());
    // replay the update rule against the dense model
    Vector theta = Vector::Zero(20);
    for (std::size_t i = 0; i < res.records.size(); ++i) {
        const auto& rec = res.records[i];
        EXPECT_EQ(rec.iteration, i + 1);
        EXPECT_EQ(rec.seed, iteration_seed(77, i + 1));
        EXPECT_LE((rec.theta - theta).norm(), 1e-9 * std::max(1.0, theta.norm()));
        const double model_cost = dense_cost(d.phi, d.r, theta);
        EXPECT_NEAR(rec.cost, model_cost, 1e-9 * model_cost) << "cost is the measured ||e||^2";
        EXPECT_EQ(streamed[i].cost, rec.cost);
        if (i > 0) {
            EXPECT_GT(rec.experiments_cumulative, res.records[i - 1].experiments_cumulative);
        }
        const Signal e(128, 2, d.r - d.phi * theta);
        const Vector g = stochastic_gradient_estimate(d.psi, oracle, e, rec.seed).values;
        const Vector w = d.phi * g;
        theta += (e.values().dot(w) / w.squaredNorm()) * g;
    }
    EXPECT_LE((res.theta - theta).norm(), 1e-9 * std::max(1.0, theta.norm()));
}

TEST(Tuning, DeterministicDescentIsMonotone)
{
    const Desk d(128);
    auto oracle = d.oracle();
    LearnerConfig cfg;
    cfg.method = Method::deterministic;
    cfg.n_iterations = 30;
    const auto res = run_tuning(cfg, oracle, d.psi, Vector::Zero(20));
    const double optimum = dense_cost(d.phi, d.r, least_squares(d.phi, d.r));
    for (std::size_t i = 1; i < res.records.size(); ++i) {
        if (res.records[i - 1].cost - optimum <= 1e-12) break;
        EXPECT_LT(res.records[i].cost, res.records[i - 1].cost) << "iteration " << i + 1;
    }
}

TEST(Tuning, ReferenceInBasisSpanConverges)
{
    // r = J psi^T theta_true, so the optimum has zero cost.
    std::mt19937_64 rng(11);
    const Desk d(500);
    const Vector theta_true = random_vector(rng, 20, 0.05);
    const Signal r(500, 2, d.phi * theta_true);
    auto oracle = operator_oracle(d.loop.process_sensitivity(), r);
    LearnerConfig cfg;
    cfg.method = Method::deterministic;
    cfg.n_iterations = 20;
    const auto res = run_tuning(cfg, oracle, d.psi, Vector::Zero(20));
    ASSERT_FALSE(res.records.empty());
    const double initial = res.records.front().cost;
    const Signal e_final = oracle.run_tracking_experiment(d.psi.apply_transpose(res.theta));
    EXPECT_LT(cost(e_final), 1e-12 * initial);
}

TEST(Tuning, ScalingInvariance)
{
    const Desk d(128);
    for (Method method : {Method::stochastic, Method::deterministic}) {
        auto o1 = d.oracle();
        auto o2 = d.oracle();
        LearnerConfig a;
        a.method = method;
        a.n_iterations = 8;
        LearnerConfig b = a;
        b.alpha_scale = 1e3;
        b.beta_scale = 1e-2;
        const auto ra = run_tuning(a, o1, d.psi, Vector::Zero(20));
        const auto rb = run_tuning(b, o2, d.psi, Vector::Zero(20));
        ASSERT_EQ(ra.records.size(), rb.records.size());
        for (std::size_t i = 1; i < ra.records.size(); ++i)
            EXPECT_LE(rel(rb.records[i].theta, ra.records[i].theta), 1e-9) << i;
        EXPECT_LE(rel(rb.theta, ra.theta), 1e-9);
    }
}

TEST(Tuning, StochasticReducesCost)
{
    const Desk d(128);
    auto oracle = d.oracle();
    LearnerConfig cfg;
    cfg.n_iterations = 10;
    const auto res = run_tuning(cfg, oracle, d.psi, Vector::Zero(20));
    EXPECT_LT(dense_cost(d.phi, d.r, res.theta), res.records.front().cost);
}

namespace {

/// Wraps an oracle and fails the k-th experiment.
struct FailingOracle {
    ExperimentOracle<ClosedLoopPlant> inner;
    long fail_at;

    Signal check()
    {
        if (inner.experiment_count() + 1 == fail_at) throw OracleError("injected failure");
        return Signal(1, 1);
    }
    Signal run_tracking_experiment(const Signal& f) { check(); return inner.run_tracking_experiment(f); }
    Signal run_zero_reference_experiment(const Signal& f) { check(); return inner.run_zero_reference_experiment(f); }
    Signal scaled_zero_reference_experiment(const Signal& f, double s) { check(); return inner.scaled_zero_reference_experiment(f, s); }
    long experiment_count() const { return inner.experiment_count(); }
    std::size_t n_inputs() const { return inner.n_inputs(); }
    std::size_t n_outputs() const { return inner.n_outputs(); }
    std::size_t n_samples() const { return inner.n_samples(); }
};

} // namespace

TEST(Tuning, AbortKeepsPartialLog)
{
    const Desk d(128);
    FailingOracle oracle{d.oracle(), 8};
    LearnerConfig cfg;
    cfg.n_iterations = 10;
    std::size_t streamed = 0;
    const auto res = run_tuning(cfg, oracle, d.psi, Vector::Zero(20), [&](const IterationRecord&) { ++streamed; });
    EXPECT_EQ(res.status, RunStatus::aborted);
    EXPECT_EQ(res.records.size(), 2u);
    EXPECT_EQ(streamed, 2u);
    EXPECT_NE(res.message.find("injected"), std::string::npos);
}

TEST(Tuning, StopToleranceAndZeroError)
{
    const Desk d(128);
    {
        auto oracle = d.oracle();
        LearnerConfig cfg;
        cfg.method = Method::deterministic;
        cfg.n_iterations = 30;
        cfg.relative_cost_tolerance = 0.5;
        const auto res = run_tuning(cfg, oracle, d.psi, Vector::Zero(20));
        EXPECT_EQ(res.status, RunStatus::converged);
        EXPECT_LE(res.records.back().cost, 0.5 * res.records.front().cost);
        EXPECT_LT(res.records.size(), 30u);
    }
    {
        // zero reference: e = 0, estimate is 0, run stops converged after one record
        auto oracle = ExperimentOracle<ClosedLoopPlant>(d.loop, Signal(128, 2));
        const auto res = run_tuning(LearnerConfig{}, oracle, d.psi, Vector::Zero(20));
        EXPECT_EQ(res.status, RunStatus::converged);
        EXPECT_EQ(res.records.size(), 1u);
        EXPECT_EQ(res.records[0].experiments_cumulative, 2);
    }
}

TEST(LearnerConfig, Validation)
{
    LearnerConfig cfg;
    cfg.n_iterations = 0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.alpha_scale = 0.0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.beta_scale = std::numeric_limits<double>::infinity();
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
}
