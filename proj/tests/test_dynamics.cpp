#include "icl/dynamics.hpp"

#include "doctest.h"

#include <algorithm>
#include <cmath>

using namespace icl;

namespace {

TransitionKernel first_order(double a, double b) {
    TransitionKernel K;
    K.k = 1;
    K.S = 2;
    K.table = {a, 1 - a, b, 1 - b};
    return K;
}

// Second-order binary kernel driven only by the most recent symbol.
TransitionKernel last_symbol_kernel(double a, double c) {
    TransitionKernel K;
    K.k = 2;
    K.S = 2;
    K.table.assign(8, 0.0);
    for (std::size_t ctx = 0; ctx < 4; ++ctx) {
        const double p0 = K.context_tuple(ctx)[0] == 0 ? a : 1 - c;
        K.row(ctx)[0] = p0;
        K.row(ctx)[1] = 1 - p0;
    }
    return K;
}

SimplifiedTheta random_theta(Rng &rng, std::size_t n, int k, ReducedMode mode) {
    SimplifiedTheta th;
    th.k = k;
    th.mode = mode;
    th.a2 = 0.3 + rng.uniform();
    th.p.resize(n + 1);
    for (double &v : th.p) v = rng.normal();
    return th;
}

} // namespace

TEST_CASE("reduced forward limits") {
    const std::vector<int> x{0, 1, 1, 0, 1, 1, 1, 0};
    SimplifiedTheta th;
    th.p.assign(x.size(), 0.0);
    th.a2 = 0.0;
    const Vec uni = simplified_forward(th, x, 2);
    CHECK(uni[0] == doctest::Approx(3.0 / 8));
    CHECK(uni[1] == doctest::Approx(5.0 / 8));

    th.p[1] = 60.0;
    th.a2 = 200.0;
    const std::vector<int> y{1, 0, 1, 1, 0, 0, 1, 0};
    const Vec sharp = simplified_forward(th, y, 2, true);
    // matches of x_{i-1} = x_n, with position 0 attending to itself
    const KgramEstimate e = conditional_kgram(y, 2, 1);
    CHECK(sup_distance(sharp, e.probs) < 0.2);

    SimplifiedTheta one;
    one.p = {0.0, 0.5, -1.0, 2.0};
    one.a2 = 1.5;
    const Vec single = simplified_forward(one, {1, 1, 1, 1}, 3);
    CHECK(single == Vec{0, 1, 0});
}

TEST_CASE("taylor expansion agrees at small a2") {
    Rng rng(3);
    const auto x = generate_sequence(sample_kernel(1, 3, 4), 30, 5).symbols;
    SimplifiedTheta th = random_theta(rng, 30, 1, ReducedMode::first_order);
    for (double a2 : {1e-3, 5e-4}) {
        th.a2 = a2;
        CHECK(sup_distance(simplified_forward(th, x, 3), taylor_forward(th, x, 3)) < 10 * a2 * a2);
    }
}

TEST_CASE("gradients match central differences") {
    Rng rng(11);
    for (int draw = 0; draw < 12; ++draw) {
        const int k = 1 + draw % 3;
        const ReducedMode mode = draw % 2 ? ReducedMode::kth_order : ReducedMode::first_order;
        const int kk = mode == ReducedMode::first_order ? 1 : k;
        const bool ln = draw % 4 >= 2;
        const std::size_t n = 32;
        const auto batch = make_batch({sample_kernel(k, 2, rng.next())}, 4, n, rng.next());
        SimplifiedTheta th = random_theta(rng, n, kk, mode);
        const LossGrad g = loss_and_grad(th, batch, 2, ln);
        CHECK(g.loss == doctest::Approx(loss(th, batch, 2, ln)));
        double diff = 0.0, scale = 0.0;
        for (std::size_t m = 0; m <= n; ++m) {
            SimplifiedTheta up = th, dn = th;
            up.p[m] += 1e-5;
            dn.p[m] -= 1e-5;
            const double fd = (loss(up, batch, 2, ln) - loss(dn, batch, 2, ln)) / 2e-5;
            diff = std::max(diff, std::fabs(fd - g.grad_p[m]));
            scale = std::max(scale, std::fabs(g.grad_p[m]));
        }
        CHECK(diff / scale < 1e-5);
        SimplifiedTheta up = th, dn = th;
        up.a2 += 1e-5;
        dn.a2 -= 1e-5;
        const double fd = (loss(up, batch, 2, ln) - loss(dn, batch, 2, ln)) / 2e-5;
        CHECK(std::fabs(fd - g.grad_a2) / std::fabs(g.grad_a2) < 1e-5);
    }
    const auto batch = make_batch({sample_kernel(1, 2, 1)}, 2, 16, 2);
    SimplifiedTheta zero;
    zero.p.assign(17, 0.0);
    zero.a2 = 0.0;
    CHECK(std::isfinite(grad_a2(zero, batch, 2)));
}

TEST_CASE("optimal loss examples and loss bounds") {
    CHECK(optimal_loss({first_order(0.5, 0.5)}) == doctest::Approx(std::log(2.0)));
    CHECK(optimal_loss({first_order(1.0, 0.0)}) == doctest::Approx(0.0));
    CHECK(optimal_loss({first_order(0.8, 0.3)}) == doctest::Approx(0.5556).epsilon(1e-3));

    Rng rng(8);
    const auto kernels = sample_prior(1, 2, 8, 0.5, 9).kernels;
    const auto batch = make_batch(kernels, 4, 40, 10);
    const double floor = batch_entropy(batch) - 2 * 1e-3;
    for (int i = 0; i < 10; ++i) CHECK(loss(random_theta(rng, 40, 1, ReducedMode::first_order), batch, 2) >= floor);

    // absorbing chain with perfect prediction
    const TransitionKernel det = first_order(1.0, 1.0);
    const auto dbatch = make_batch({det}, 2, 20, 3);
    SimplifiedTheta th;
    th.p.assign(21, 0.0);
    th.p[1] = 60.0;
    th.a2 = 300.0;
    CHECK(loss(th, dbatch, 2, true) == doctest::Approx(-std::log(1 + 1e-3)).epsilon(1e-6));
}

TEST_CASE("g quantities") {
    const TransitionKernel iid = first_order(0.3, 0.3);
    for (int j = 1; j <= 4; ++j) CHECK(std::fabs(g_quantity(iid, j)) < 1e-12);
    CHECK(std::fabs(g_quantity(first_order(0.6, 0.3), 60)) < 1e-12);

    for (double a : {0.9, 0.7, 0.4})
        for (double c : {0.8, 0.55}) {
            const TransitionKernel K = last_symbol_kernel(a, c);
            for (int j = 1; j <= 5; ++j) CHECK(std::fabs(g_quantity(K, j) - g_second_order_closed(K, j)) < 1e-10);
        }

    // preference on the last-symbol class: strictly decreasing in j
    const TransitionKernel pref = last_symbol_kernel(0.85, 0.7);
    for (int j = 1; j < 8; ++j) CHECK(g_quantity(pref, j + 1) < g_quantity(pref, j));

    for (int k = 1; k <= 3; ++k) {
        const TransitionKernel K = sample_kernel(k, 2, 40 + k);
        const MonteCarloEstimate mc = g_monte_carlo(K, 1, 1000000, 50 + k);
        CHECK(std::fabs(mc.mean - g_quantity(K, 1)) <= 3 * mc.stderr_);
    }
}

TEST_CASE("first-order prior gap favours lag one") {
    const KernelDraw d = sample_prior(1, 2, 200, 0.5, 123);
    REQUIRE(d.kernels.size() == 200u);
    std::vector<double> mean(11, 0.0);
    for (const auto &K : d.kernels)
        for (int j = 1; j <= 10; ++j) mean[j] += g_quantity(K, j) / 200.0;
    CHECK(mean[1] > *std::max_element(mean.begin() + 2, mean.end()));
}

TEST_CASE("prior gates") {
    for (const auto &K : sample_prior(1, 2, 20, 0.5, 1).kernels) CHECK(first_order_gate(K, 0.5));
    for (const auto &K : sample_prior(2, 2, 10, 0.5, 2).kernels) CHECK(second_order_gates(K).all());
    for (const auto &K : sample_prior(3, 2, 5, 0.5, 3).kernels) CHECK(kth_order_gate(K));
    CHECK_FALSE(first_order_gate(first_order(0.5, 0.5), 0.5));
    CHECK_THROWS(sample_prior(1, 2, 5, 0.999, 1, 50));
}

TEST_CASE("two-stage training") {
    TrainConfig cfg;
    cfg.kernels = 16;
    cfg.steps1 = 100;
    cfg.steps2 = 50;
    const TrainingRun run = train_two_stage(cfg);
    CHECK_FALSE(run.diverged);
    CHECK(trajectory_to_csv(run) == trajectory_to_csv(train_two_stage(cfg)));

    TrainConfig still = cfg;
    still.eta1 = 0.0;
    still.steps2 = 0;
    const TrainingRun frozen = train_two_stage(still);
    for (double p : frozen.theta.p) CHECK(p == 0.0);
    for (const auto &step : frozen.trajectory)
        if (step.stage == 1) CHECK(step.loss == frozen.trajectory.front().loss);

    CHECK_THROWS(train_two_stage([] {
        TrainConfig c;
        c.k = 2;
        return c;
    }()));
}

TEST_CASE("trained first-order model generalizes to held-out sequences") {
    TrainConfig cfg;
    cfg.n = 256;
    const TrainingRun run = train_two_stage(cfg);
    std::vector<std::vector<int>> seqs;
    const auto kernels = sample_prior(1, 2, 20, 0.5, 555).kernels;
    for (std::size_t i = 0; i < kernels.size(); ++i) seqs.push_back(generate_sequence(kernels[i], 256, 600 + i).symbols);
    const HeldOutError e = held_out_error(run.theta, seqs, 2, true);
    CHECK(e.evaluated == 20u);
    CHECK(e.max_error <= 0.05);
}

TEST_CASE("preconditioned training equalizes the first k scalars") {
    for (int k : {2, 3}) {
        TrainConfig cfg;
        cfg.k = k;
        cfg.kernels = 16;
        cfg.steps1 = 1;
        const TrainingRun one = train_preconditioned(cfg);
        for (int m = 2; m <= k; ++m) CHECK(one.theta.p[m] == doctest::Approx(one.theta.p[1]).epsilon(1e-12));
        CHECK(one.theta.p[1] > one.theta.p[k + 1]);
        CHECK(one.theta.p[0] == -30.0);
    }
}

TEST_CASE("config validation") {
    TrainConfig c;
    c.eps = 0.0;
    CHECK_THROWS(c.validate());
    c = TrainConfig{};
    c.n = 1;
    c.k = 2;
    CHECK_THROWS(c.validate());
    CHECK(config_to_json(TrainConfig{}).find("\"eta1\"") != std::string::npos);
}
