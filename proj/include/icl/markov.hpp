#pragma once

#include "icl/numerics.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace icl {

// SplitMix64 applied to (key, counter): the i-th draw of a stream depends only
// on the key and i, so output is identical on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : key_(mix(seed ^ 0x6a09e667f3bcc908ULL)) {}

    std::uint64_t next();
    double uniform();              // in (0, 1), 53-bit resolution
    double exponential();          // rate 1
    double normal();               // Box-Muller
    std::size_t below(std::size_t n);
    std::size_t categorical(const double *probs, std::size_t n);

    // Independent child stream; used to give every sequence in a batch its own seed.
    Rng split(std::uint64_t stream) const;
    std::uint64_t derive_seed(std::uint64_t stream) const;

    static std::uint64_t mix(std::uint64_t z);

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

// pi(s' | c_1..c_k) with c_1 the most recent symbol.
// Row index of context (c_1..c_k) is sum_j c_j * S^(j-1).
struct TransitionKernel {
    int k = 1;
    int S = 2;
    std::vector<double> table; // S^k rows of S entries

    std::size_t num_contexts() const;
    const double *row(std::size_t ctx) const { return table.data() + ctx * S; }
    double *row(std::size_t ctx) { return table.data() + ctx * S; }
    double prob(int next, const std::vector<int> &context) const;

    std::size_t context_index(const std::vector<int> &context) const;
    std::vector<int> context_tuple(std::size_t ctx) const;

    void validate(double tol = 1e-12) const;
};

struct MarkovSequence {
    int S = 2;
    int k = 1;
    std::uint64_t seed = 0;
    std::vector<int> symbols; // x_0..x_T
    std::shared_ptr<const TransitionKernel> kernel;

    std::size_t T() const { return symbols.empty() ? 0 : symbols.size() - 1; }
};

// Context index of (x_{n-1}, ..., x_{n-k}).
std::size_t context_before(const std::vector<int> &symbols, std::size_t n, int k, int S);

TransitionKernel sample_kernel(int k, int S, std::uint64_t seed);
TransitionKernel uniform_kernel(int k, int S);
MarkovSequence generate_sequence(const TransitionKernel &kernel, std::size_t T, std::uint64_t seed);
// count sequences, each from its own freshly sampled kernel.
std::vector<MarkovSequence> sample_sequences(int k, int S, std::size_t T, std::size_t count, std::uint64_t seed);

struct KgramEstimate {
    Vec probs;
    std::size_t denominator = 0;
    bool zero_denominator = false;
};

KgramEstimate conditional_kgram(const std::vector<int> &symbols, int S, int k);

// Lifted chain on S^k. State (a_0..a_{k-1}) with a_0 the most recent symbol,
// indexed exactly like kernel contexts.
Matrix lifted_matrix(const TransitionKernel &kernel);
bool is_ergodic(const Matrix &lifted);

struct ChainStatistics {
    Vec stationary;             // over lifted states
    Vec symbol_marginal;        // P(x_i = s) at stationarity
    double lambda = 0.0;        // second-largest eigenvalue modulus
    std::map<int, Matrix> joint; // lag j -> S x S table P(x_{i-j} = s, x_i = s')
};

ChainStatistics chain_statistics(const TransitionKernel &kernel, const std::vector<int> &lags);

Vec stationary_distribution(const Matrix &lifted);
double second_eigenvalue_modulus(const Matrix &lifted, const Vec &stationary);
Matrix lagged_joint(const TransitionKernel &kernel, const Matrix &lifted, const Vec &stationary, int lag);

struct ReturnProbability {
    double p00_closed = 0.0;
    double p11_closed = 0.0;
    double p00_brute = 0.0;
    double p11_brute = 0.0;
};

// Second-order binary kernel. a = pi(0|0,0), b = pi(0|1,0) (first argument most recent);
// P^i(0|0,0) follows the two-state recursion driven by (a, b), likewise for symbol 1.
ReturnProbability iterated_return_probability(const TransitionKernel &kernel, int steps);

// Kernel whose stationary (k+1)-windows are invariant under time reversal.
TransitionKernel sample_reversible_kernel(int k, int S, std::uint64_t seed);
double reversibility_defect(const TransitionKernel &kernel);

// Serialization. Context keys are comma-joined tuples, most recent symbol first.
std::string kernel_to_json(const TransitionKernel &kernel);
TransitionKernel kernel_from_json(const std::string &text);
std::string sequences_to_csv(const std::vector<MarkovSequence> &seqs);

} // namespace icl
