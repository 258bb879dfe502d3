#include "icl/dynamics.hpp"

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <stdexcept>

namespace icl {

namespace {

std::size_t ipow(std::size_t b, int e) {
    std::size_t r = 1;
    for (int i = 0; i < e; ++i) r *= b;
    return r;
}

// Everything the reduced model computes for one sequence.
struct Pass {
    Vec q;         // query, normalized when layer_norm
    Vec E;         // exp(p_j - max p)
    Vec cum;       // prefix sums of E
    Matrix v;      // N x S first-layer outputs
    Vec vnorm;
    Vec Z;
    Vec att;
    Vec logits;
};

void first_layer(const SimplifiedTheta &th, const std::vector<int> &x, int S, bool ln, Pass &P) {
    const std::size_t N = x.size();
    th.validate(N - 1);
    P.q = reduced_query(th, x, S);
    if (ln) P.q = modified_layer_norm(P.q);

    double pmax = th.p[0];
    for (std::size_t j = 1; j < N; ++j) pmax = std::max(pmax, th.p[j]);
    P.E.resize(N);
    P.cum.resize(N);
    double acc = 0.0;
    for (std::size_t j = 0; j < N; ++j) {
        P.E[j] = std::exp(th.p[j] - pmax);
        acc += P.E[j];
        P.cum[j] = acc;
    }

    P.v = Matrix(N, S);
    P.vnorm.assign(N, 0.0);
    P.Z.assign(N, 0.0);
    for (std::size_t i = 0; i < N; ++i) {
        double *vi = P.v.row(i);
        for (std::size_t j = 0; j <= i; ++j) vi[x[i - j]] += P.E[j];
        double z = 0.0, nn = 0.0;
        for (int s = 0; s < S; ++s) {
            vi[s] /= P.cum[i];
            z += P.q[s] * vi[s];
            nn += vi[s] * vi[s];
        }
        P.vnorm[i] = std::sqrt(nn);
        P.Z[i] = ln ? z / P.vnorm[i] : z;
    }
}

void second_layer(double a2, const std::vector<int> &x, int S, Pass &P) {
    const std::size_t N = x.size();
    Vec logits(N);
    for (std::size_t i = 0; i < N; ++i) logits[i] = a2 * P.Z[i];
    P.att = softmax(logits);
    P.logits.assign(S, 0.0);
    for (std::size_t i = 0; i < N; ++i) P.logits[x[i]] += P.att[i];
}

void evaluate(const SimplifiedTheta &th, const std::vector<int> &x, int S, bool ln, Pass &P) {
    first_layer(th, x, S, ln, P);
    second_layer(th.a2, x, S, P);
}

// Loss and d/da2 with the first layer already evaluated.
double scalar_step(double a2, double eps, const std::vector<int> &x, int S, Pass &P, const Vec &target, double &ga) {
    second_layer(a2, x, S, P);
    double hbar = 0.0, l = 0.0;
    Vec G(S);
    for (int s = 0; s < S; ++s) {
        G[s] = -target[s] / (P.logits[s] + eps);
        if (target[s] > 0.0) l -= target[s] * std::log(P.logits[s] + eps);
    }
    for (std::size_t i = 0; i < x.size(); ++i) hbar += P.att[i] * G[x[i]];
    for (std::size_t i = 0; i < x.size(); ++i) ga += P.Z[i] * P.att[i] * (G[x[i]] - hbar);
    return l;
}

double sample_loss(const Pass &P, const Vec &target, double eps) {
    double l = 0.0;
    for (std::size_t s = 0; s < target.size(); ++s)
        if (target[s] > 0.0) l -= target[s] * std::log(P.logits[s] + eps);
    return l;
}

void accumulate_grad(const SimplifiedTheta &th, const std::vector<int> &x, int S, bool ln, const Pass &P,
                     const Vec &target, Vec &gp, double &ga) {
    const std::size_t N = x.size();
    Vec G(S);
    for (int s = 0; s < S; ++s) G[s] = -target[s] / (P.logits[s] + th.eps);
    double hbar = 0.0;
    for (std::size_t i = 0; i < N; ++i) hbar += P.att[i] * G[x[i]];

    Vec rho(N);
    Matrix phi(N, S);
    for (std::size_t i = 0; i < N; ++i) {
        const double dh = P.att[i] * (G[x[i]] - hbar);
        ga += P.Z[i] * dh;
        rho[i] = th.a2 * dh / P.cum[i];
        double *f = phi.row(i);
        const double *vi = P.v.row(i);
        for (int s = 0; s < S; ++s)
            f[s] = ln ? (P.q[s] - P.Z[i] * vi[s] / P.vnorm[i]) / P.vnorm[i] : P.q[s] - P.Z[i];
    }
    for (std::size_t m = 0; m < N; ++m) {
        double acc = 0.0;
        for (std::size_t i = m; i < N; ++i) acc += rho[i] * phi(i, x[i - m]);
        gp[m] += P.E[m] * acc;
    }
}

std::string fmt(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

} // namespace

void SimplifiedTheta::validate(std::size_t n) const {
    if (!(eps > 0.0)) throw std::invalid_argument("theta: eps must be positive");
    if (k < 1) throw std::invalid_argument("theta: k must be >= 1");
    if (mode == ReducedMode::first_order && k != 1) throw std::invalid_argument("theta: first_order mode needs k = 1");
    if (p.size() < n + 1) throw std::invalid_argument("theta: positional vector shorter than sequence");
    if (n + 1 < static_cast<std::size_t>(k) + 1) throw std::invalid_argument("theta: sequence shorter than k+1");
}

Vec softmax_of(const Vec &p) { return softmax(p); }

Vec reduced_query(const SimplifiedTheta &th, const std::vector<int> &x, int S) {
    Vec q(S, 0.0);
    const std::size_t n = x.size() - 1;
    if (th.mode == ReducedMode::first_order) {
        q[x[n]] = 1.0;
        return q;
    }
    for (int l = 0; l < th.k; ++l) q[x[n - l]] += 1.0 / th.k;
    return q;
}

Vec simplified_forward(const SimplifiedTheta &th, const std::vector<int> &x, int S, bool ln) {
    Pass P;
    evaluate(th, x, S, ln, P);
    return P.logits;
}

Vec taylor_forward(const SimplifiedTheta &th, const std::vector<int> &x, int S) {
    SimplifiedTheta flat = th;
    flat.a2 = 0.0;
    Pass P;
    evaluate(flat, x, S, false, P);
    const double N = static_cast<double>(x.size());
    double zbar = 0.0;
    for (double z : P.Z) zbar += z / N;
    Vec out(S, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) out[x[i]] += (1.0 + th.a2 * (P.Z[i] - zbar)) / N;
    return out;
}

LossGrad loss_and_grad(const SimplifiedTheta &th, const std::vector<Sample> &batch, int S, bool ln) {
    if (batch.empty()) throw std::invalid_argument("loss: empty batch");
    LossGrad out;
    out.grad_p.assign(th.p.size(), 0.0);
    Pass P;
    for (const auto &b : batch) {
        evaluate(th, b.symbols, S, ln, P);
        out.loss += sample_loss(P, b.target, th.eps);
        accumulate_grad(th, b.symbols, S, ln, P, b.target, out.grad_p, out.grad_a2);
    }
    const double B = static_cast<double>(batch.size());
    out.loss /= B;
    out.grad_a2 /= B;
    for (double &g : out.grad_p) g /= B;
    return out;
}

double loss(const SimplifiedTheta &th, const std::vector<Sample> &batch, int S, bool ln) {
    if (batch.empty()) throw std::invalid_argument("loss: empty batch");
    double l = 0.0;
    Pass P;
    for (const auto &b : batch) {
        evaluate(th, b.symbols, S, ln, P);
        l += sample_loss(P, b.target, th.eps);
    }
    return l / static_cast<double>(batch.size());
}

Vec grad_p(const SimplifiedTheta &th, const std::vector<Sample> &batch, int S, bool ln) {
    return loss_and_grad(th, batch, S, ln).grad_p;
}

double grad_a2(const SimplifiedTheta &th, const std::vector<Sample> &batch, int S, bool ln) {
    return loss_and_grad(th, batch, S, ln).grad_a2;
}

double optimal_loss(const std::vector<TransitionKernel> &kernels) {
    if (kernels.empty()) throw std::invalid_argument("optimal_loss: no kernels");
    double total = 0.0;
    for (const auto &K : kernels) {
        double h = 0.0;
        for (double p : K.table)
            if (p > 0.0) h -= p * std::log(p);
        total += h / static_cast<double>(K.num_contexts());
    }
    return total / static_cast<double>(kernels.size());
}

double batch_entropy(const std::vector<Sample> &batch) {
    double h = 0.0;
    for (const auto &b : batch)
        for (double p : b.target)
            if (p > 0.0) h -= p * std::log(p);
    return h / static_cast<double>(batch.size());
}

namespace {

// F_l[s][s'] = sum over contexts with c_l = s of pi(s'|c) / mu(s').
std::vector<Matrix> g_tables(const TransitionKernel &K, const Vec &mu) {
    std::vector<Matrix> F(K.k, Matrix(K.S, K.S));
    for (std::size_t c = 0; c < K.num_contexts(); ++c) {
        const auto ctx = K.context_tuple(c);
        for (int l = 0; l < K.k; ++l)
            for (int s = 0; s < K.S; ++s) F[l](ctx[l], s) += K.row(c)[s] / mu[s];
    }
    return F;
}

double g_from(const std::vector<Matrix> &F, const Matrix &J, int l, int S) {
    double acc = 0.0;
    for (int a = 0; a < S; ++a)
        for (int b = 0; b < S; ++b) acc += F[l](a, b) * J(a, b);
    return acc;
}

} // namespace

double g_component(const TransitionKernel &K, int j, int l) {
    if (l < 1 || l > K.k) throw std::invalid_argument("g_component: l out of range");
    if (j < 0) throw std::invalid_argument("g_component: negative lag");
    const ChainStatistics st = chain_statistics(K, {j});
    const auto F = g_tables(K, st.symbol_marginal);
    return g_from(F, st.joint.at(j), l - 1, K.S) - static_cast<double>(ipow(K.S, K.k - 1));
}

double g_quantity(const TransitionKernel &K, int j) {
    if (j < 0) throw std::invalid_argument("g_quantity: negative lag");
    const ChainStatistics st = chain_statistics(K, {j});
    const auto F = g_tables(K, st.symbol_marginal);
    double g = 0.0;
    for (int l = 0; l < K.k; ++l) g += g_from(F, st.joint.at(j), l, K.S) - static_cast<double>(ipow(K.S, K.k - 1));
    return g;
}

double g_second_order_closed(const TransitionKernel &K, int j) {
    const ReturnProbability r = iterated_return_probability(K, j + 1);
    return 2.0 * (r.p00_closed + r.p11_closed - 1.0);
}

MonteCarloEstimate g_monte_carlo(const TransitionKernel &K, int j, std::size_t steps, std::uint64_t seed) {
    constexpr std::size_t burn = 1000, batches = 100;
    if (steps < batches) throw std::invalid_argument("g_monte_carlo: too few steps");
    const ChainStatistics st = chain_statistics(K, {});
    const auto F = g_tables(K, st.symbol_marginal);
    const MarkovSequence seq = generate_sequence(K, burn + j + steps, seed);
    const double offset = static_cast<double>(K.k * ipow(K.S, K.k - 1));
    const std::size_t per = steps / batches;
    Vec means(batches, 0.0);
    for (std::size_t b = 0; b < batches; ++b) {
        double acc = 0.0;
        for (std::size_t t = 0; t < per; ++t) {
            const std::size_t i = burn + j + b * per + t;
            double f = 0.0;
            for (int l = 0; l < K.k; ++l) f += F[l](seq.symbols[i - j], seq.symbols[i]);
            acc += f - offset;
        }
        means[b] = acc / static_cast<double>(per);
    }
    MonteCarloEstimate est;
    for (double m : means) est.mean += m / batches;
    double var = 0.0;
    for (double m : means) var += (m - est.mean) * (m - est.mean);
    est.stderr_ = std::sqrt(var / (batches - 1) / batches);
    return est;
}

bool first_order_gate(const TransitionKernel &K, double gamma) {
    if (K.k != 1) throw std::invalid_argument("first_order_gate: needs k = 1");
    const int S = K.S;
    for (double p : K.table)
        if (!(p > gamma / S)) return false;
    const Vec mu = stationary_distribution(lifted_matrix(K));
    double spread = 0.0;
    for (int s = 0; s < S; ++s)
        for (int t = 0; t < S; ++t) spread += (K.row(s)[t] - mu[t]) * (K.row(s)[t] - mu[t]);
    return spread >= gamma * gamma / S;
}

SecondOrderGates second_order_gates(const TransitionKernel &K, double tol) {
    if (K.k != 2 || K.S != 2) throw std::invalid_argument("second_order_gates: needs k = 2, S = 2");
    SecondOrderGates g;
    g.reversible = reversibility_defect(K) <= tol;
    g.preference = K.prob(0, {0, 0}) > K.prob(0, {1, 0}) && K.prob(1, {1, 1}) > K.prob(1, {0, 1});
    const double a = K.prob(0, {0, 0}), c = K.prob(1, {1, 1});
    g.second_hop = a * a + c * c >= 1.0;
    return g;
}

bool kth_order_gate(const TransitionKernel &K, double tol) {
    const Matrix P = lifted_matrix(K);
    if (!is_ergodic(P)) return false;
    return reversibility_defect(K) <= tol;
}

KernelDraw sample_prior(int k, int S, std::size_t count, double gamma, std::uint64_t seed, std::size_t max_attempts) {
    KernelDraw d;
    const Rng master(seed);
    for (std::size_t t = 0; d.kernels.size() < count; ++t) {
        if (t >= max_attempts) throw std::runtime_error("sample_prior: acceptance gate too strict");
        const std::uint64_t s = master.derive_seed(t);
        bool ok = false;
        TransitionKernel K;
        if (k == 1) {
            K = sample_kernel(1, S, s);
            ok = first_order_gate(K, gamma);
        } else {
            K = sample_reversible_kernel(k, S, s);
            ok = (k == 2 && S == 2) ? second_order_gates(K).all() && is_ergodic(lifted_matrix(K)) : kth_order_gate(K);
        }
        if (ok)
            d.kernels.push_back(std::move(K));
        else
            ++d.rejected;
    }
    return d;
}

std::vector<Sample> make_batch(const std::vector<TransitionKernel> &kernels, std::size_t per, std::size_t n,
                               std::uint64_t seed) {
    std::vector<Sample> batch;
    const Rng master(seed);
    std::uint64_t stream = 0;
    for (const auto &K : kernels)
        for (std::size_t r = 0; r < per; ++r) {
            MarkovSequence seq = generate_sequence(K, n, master.derive_seed(stream++));
            const std::size_t ctx = context_before(seq.symbols, n + 1, K.k, K.S);
            batch.push_back({std::move(seq.symbols), Vec(K.row(ctx), K.row(ctx) + K.S)});
        }
    return batch;
}

void TrainConfig::validate() const {
    if (S < 2) throw std::invalid_argument("train: S must be >= 2");
    if (k < 1 || k > 6) throw std::invalid_argument("train: k must be in 1..6");
    if (n < static_cast<std::size_t>(k) + 1) throw std::invalid_argument("train: n must be >= k+1");
    if (!(eps > 0.0)) throw std::invalid_argument("train: eps must be positive");
    if (!(gamma > 0.0) || gamma > 1.0) throw std::invalid_argument("train: gamma must be in (0, 1]");
    if (steps1 < 0 || steps2 < 0) throw std::invalid_argument("train: negative step count");
    if (eta1 < 0.0 || eta2 < 0.0) throw std::invalid_argument("train: negative learning rate");
    if (kernels == 0 || seqs_per_kernel == 0) throw std::invalid_argument("train: empty batch");
    if (log_every < 1) throw std::invalid_argument("train: log_every must be >= 1");
}

namespace {

void record(TrainingRun &run, int step, int stage, double l) {
    run.trajectory.push_back({step, stage, l, run.theta.a2, softmax(run.theta.p)});
}

bool finite(const LossGrad &g) {
    if (!std::isfinite(g.loss) || !std::isfinite(g.grad_a2)) return false;
    return std::all_of(g.grad_p.begin(), g.grad_p.end(), [](double v) { return std::isfinite(v); });
}

} // namespace

TrainingRun train_two_stage(const TrainConfig &cfg) {
    cfg.validate();
    if (cfg.k != 1) throw std::invalid_argument("train_two_stage: first-order only");
    TrainingRun run;
    run.config = cfg;
    const Rng master(cfg.seed);
    const KernelDraw draw = sample_prior(1, cfg.S, cfg.kernels, cfg.gamma, master.derive_seed(0));
    run.rejected_kernels = draw.rejected;
    run.optimal_loss = optimal_loss(draw.kernels);
    const auto batch = make_batch(draw.kernels, cfg.seqs_per_kernel, cfg.n, master.derive_seed(1));
    run.batch_entropy = batch_entropy(batch);

    run.theta.p.assign(cfg.n + 1, 0.0);
    run.theta.a2 = cfg.a2_init;
    run.theta.eps = cfg.eps;

    for (int t = 0; t < cfg.steps1; ++t) {
        const LossGrad g = loss_and_grad(run.theta, batch, cfg.S, false);
        if (!finite(g)) {
            run.diverged = true;
            return run;
        }
        if (t % cfg.log_every == 0) record(run, t, 1, g.loss);
        for (std::size_t m = 0; m < run.theta.p.size(); ++m) run.theta.p[m] -= cfg.eta1 * g.grad_p[m];
    }
    std::vector<Pass> cache(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) first_layer(run.theta, batch[b].symbols, cfg.S, true, cache[b]);
    for (int t = 0; t < cfg.steps2; ++t) {
        double l = 0.0, ga = 0.0;
        for (std::size_t b = 0; b < batch.size(); ++b)
            l += scalar_step(run.theta.a2, cfg.eps, batch[b].symbols, cfg.S, cache[b], batch[b].target, ga);
        l /= static_cast<double>(batch.size());
        ga /= static_cast<double>(batch.size());
        if (!std::isfinite(l) || !std::isfinite(ga)) {
            run.diverged = true;
            return run;
        }
        if (t % cfg.log_every == 0) record(run, cfg.steps1 + t, 2, l);
        run.theta.a2 -= cfg.eta2 * ga;
    }
    record(run, cfg.steps1 + cfg.steps2, 2, loss(run.theta, batch, cfg.S, true));
    return run;
}

TrainingRun train_preconditioned(const TrainConfig &cfg) {
    cfg.validate();
    TrainingRun run;
    run.config = cfg;
    const Rng master(cfg.seed);
    const KernelDraw draw = sample_prior(cfg.k, cfg.S, cfg.kernels, cfg.gamma, master.derive_seed(0));
    run.rejected_kernels = draw.rejected;
    run.optimal_loss = optimal_loss(draw.kernels);
    const auto batch = make_batch(draw.kernels, cfg.seqs_per_kernel, cfg.n, master.derive_seed(1));
    run.batch_entropy = batch_entropy(batch);

    run.theta.p.assign(cfg.n + 1, 0.0);
    run.theta.p[0] = cfg.p0_sentinel;
    run.theta.a2 = cfg.kappa0;
    run.theta.eps = cfg.eps;
    run.theta.k = cfg.k;
    run.theta.mode = ReducedMode::kth_order;

    for (int t = 0; t < cfg.steps1; ++t) {
        const LossGrad g = loss_and_grad(run.theta, batch, cfg.S, false);
        if (!finite(g)) {
            run.diverged = true;
            return run;
        }
        Vec dinv(run.theta.p.size(), 1.0);
        dinv[0] = 0.0;
        for (int m = 2; m <= cfg.k; ++m) {
            const double r = g.grad_p[1] / g.grad_p[m];
            dinv[m] = std::isfinite(r) ? r : 1.0;
        }
        if (t % cfg.log_every == 0) {
            record(run, t, 1, g.loss);
            run.preconditioner.emplace_back(dinv.begin() + 1, dinv.begin() + 1 + cfg.k);
        }
        for (std::size_t m = 0; m < run.theta.p.size(); ++m) run.theta.p[m] -= cfg.eta1 * dinv[m] * g.grad_p[m];
    }
    record(run, cfg.steps1, 1, loss(run.theta, batch, cfg.S, false));
    return run;
}

std::string trajectory_to_csv(const TrainingRun &run) {
    std::string out = "step,stage,loss,a2";
    const std::size_t width = run.theta.p.size();
    for (std::size_t m = 0; m < width; ++m) out += ",softmax_p" + std::to_string(m);
    out += "\n";
    for (const auto &s : run.trajectory) {
        out += std::to_string(s.step) + "," + std::to_string(s.stage) + "," + fmt(s.loss) + "," + fmt(s.a2);
        for (double v : s.softmax_p) out += "," + fmt(v);
        out += "\n";
    }
    return out;
}

std::string config_to_json(const TrainConfig &c) {
    nlohmann::ordered_json j;
    j["S"] = c.S;
    j["k"] = c.k;
    j["n"] = c.n;
    j["gamma"] = c.gamma;
    j["eps"] = c.eps;
    j["eta1"] = c.eta1;
    j["eta2"] = c.eta2;
    j["steps1"] = c.steps1;
    j["steps2"] = c.steps2;
    j["a2_init"] = c.a2_init;
    j["kappa0"] = c.kappa0;
    j["p0_sentinel"] = c.p0_sentinel;
    j["kernels"] = c.kernels;
    j["seqs_per_kernel"] = c.seqs_per_kernel;
    j["seed"] = c.seed;
    j["log_every"] = c.log_every;
    return j.dump(2) + "\n";
}

HeldOutError held_out_error(const SimplifiedTheta &th, const std::vector<std::vector<int>> &seqs, int S, bool ln) {
    HeldOutError e;
    for (const auto &x : seqs) {
        const KgramEstimate est = conditional_kgram(x, S, th.k);
        if (est.zero_denominator) {
            ++e.excluded;
            continue;
        }
        ++e.evaluated;
        e.max_error = std::max(e.max_error, sup_distance(simplified_forward(th, x, S, ln), est.probs));
    }
    return e;
}

} // namespace icl
