#pragma once

#include "icl/markov.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace icl {

enum class ReducedMode { first_order, kth_order };

struct SimplifiedTheta {
    Vec p;             // positional scalars for offsets 0..n
    double a2 = 0.0;   // second-layer scalar; the fixed temperature kappa_0 in kth_order mode
    double eps = 1e-3; // additive constant inside the log loss
    int k = 1;
    ReducedMode mode = ReducedMode::first_order;

    void validate(std::size_t n) const;
};

// One training example: a sequence and the true next-symbol law after its last position.
struct Sample {
    std::vector<int> symbols;
    Vec target;
};

// Query used by layer 2: e_{x_n} (first order) or the mean of the last k one-hots.
Vec reduced_query(const SimplifiedTheta &theta, const std::vector<int> &symbols, int S);

Vec simplified_forward(const SimplifiedTheta &theta, const std::vector<int> &symbols, int S, bool layer_norm = false);
// First-order expansion in the second-layer scalar around zero.
Vec taylor_forward(const SimplifiedTheta &theta, const std::vector<int> &symbols, int S);

struct LossGrad {
    double loss = 0.0;
    Vec grad_p;
    double grad_a2 = 0.0;
};

LossGrad loss_and_grad(const SimplifiedTheta &theta, const std::vector<Sample> &batch, int S, bool layer_norm = false);
double loss(const SimplifiedTheta &theta, const std::vector<Sample> &batch, int S, bool layer_norm = false);
Vec grad_p(const SimplifiedTheta &theta, const std::vector<Sample> &batch, int S, bool layer_norm = false);
double grad_a2(const SimplifiedTheta &theta, const std::vector<Sample> &batch, int S, bool layer_norm = false);

// Average conditional entropy, contexts weighted uniformly.
double optimal_loss(const std::vector<TransitionKernel> &kernels);
// Entropy of the batch targets: the loss of a model that outputs the true law.
double batch_entropy(const std::vector<Sample> &batch);

// g_j = sum_l g_{j,l}, stationary so independent of the absolute position.
double g_component(const TransitionKernel &kernel, int j, int l);
double g_quantity(const TransitionKernel &kernel, int j);
// Binary second-order kernels whose law depends on the last symbol only: 2 (sum_s P^{j+1}(s|s,s) - 1).
double g_second_order_closed(const TransitionKernel &kernel, int j);

struct MonteCarloEstimate {
    double mean = 0.0;
    double stderr_ = 0.0;
};
MonteCarloEstimate g_monte_carlo(const TransitionKernel &kernel, int j, std::size_t steps, std::uint64_t seed);

// Prior gates.
bool first_order_gate(const TransitionKernel &kernel, double gamma);
struct SecondOrderGates {
    bool reversible = false;
    bool preference = false;
    bool second_hop = false;
    bool all() const { return reversible && preference && second_hop; }
};
SecondOrderGates second_order_gates(const TransitionKernel &kernel, double tol = 1e-9);
bool kth_order_gate(const TransitionKernel &kernel, double tol = 1e-9);

struct KernelDraw {
    std::vector<TransitionKernel> kernels;
    std::size_t rejected = 0;
};
// First order: Dirichlet(1) rows gated by gamma. Higher order: reversible kernels gated as above.
KernelDraw sample_prior(int k, int S, std::size_t count, double gamma, std::uint64_t seed,
                        std::size_t max_attempts = 1000000);

std::vector<Sample> make_batch(const std::vector<TransitionKernel> &kernels, std::size_t seqs_per_kernel,
                               std::size_t n, std::uint64_t seed);

struct TrainConfig {
    int S = 2;
    int k = 1;
    std::size_t n = 64;
    double gamma = 0.5;
    double eps = 1e-3;
    double eta1 = 1000.0;
    double eta2 = 5.0;
    int steps1 = 300;
    int steps2 = 500;
    double a2_init = 0.1;
    double kappa0 = 0.01;
    double p0_sentinel = -30.0;
    std::size_t kernels = 64;
    std::size_t seqs_per_kernel = 4;
    std::uint64_t seed = 1;
    int log_every = 10;

    void validate() const;
};

struct TrainStep {
    int step = 0;
    int stage = 1;
    double loss = 0.0;
    double a2 = 0.0;
    Vec softmax_p;
};

struct TrainingRun {
    TrainConfig config;
    SimplifiedTheta theta;
    std::vector<TrainStep> trajectory;
    double optimal_loss = 0.0; // prior-averaged
    double batch_entropy = 0.0;
    std::size_t rejected_kernels = 0;
    bool diverged = false;
    std::vector<Vec> preconditioner; // kth_order runs: D^{-1} diagonal entries 1..k per logged step
};

TrainingRun train_two_stage(const TrainConfig &config);
TrainingRun train_preconditioned(const TrainConfig &config);

std::string trajectory_to_csv(const TrainingRun &run);
std::string config_to_json(const TrainConfig &config);

// Sup-norm error of the reduced model against the conditional k-gram, skipping zero denominators.
struct HeldOutError {
    double max_error = 0.0;
    std::size_t evaluated = 0;
    std::size_t excluded = 0;
};
HeldOutError held_out_error(const SimplifiedTheta &theta, const std::vector<std::vector<int>> &seqs, int S,
                            bool layer_norm);

Vec softmax_of(const Vec &p);

} // namespace icl
