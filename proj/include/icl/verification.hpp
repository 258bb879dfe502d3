#pragma once

#include "icl/markov.hpp"
#include "icl/transformer.hpp"

#include <string>
#include <vector>

namespace icl {

struct MatchSet {
    std::size_t n = 0;
    std::vector<std::size_t> indices;
};

// Indices i in [k, n] whose k preceding symbols equal the k symbols ending at n.
MatchSet match_set(const std::vector<int> &symbols, int k, std::size_t n);

struct InductionCheck {
    bool skipped = false; // I_T empty
    bool argmax_exact = false;
    double uniform_deviation = 0.0; // sup |att_T - Unif(I_T)|
    std::size_t match_count = 0;
};

// Inspects row T of the last layer's first head.
InductionCheck check_induction_head(const ForwardTrace &trace, const std::vector<int> &symbols, int k,
                                    double argmax_rel_tol = 1e-6);

struct SequenceResult {
    std::uint64_t seed = 0;
    double error = 0.0;
    std::size_t denominator = 0;
    bool excluded = false;
};

struct VerificationReport {
    int S = 0;
    int k = 0;
    std::size_t T = 0;
    double kappa_pos = 0.0;
    double kappa_sim = 0.0;
    std::string family;
    std::string variant;
    double tolerance = 0.02;
    std::vector<SequenceResult> sequences;

    double max_error = 0.0;
    double median_error = 0.0;
    double p90_error = 0.0;
    double p99_error = 0.0;
    std::size_t excluded = 0;
    double excluded_fraction = 0.0;
    bool pass = false;
};

inline constexpr double kMaxExcludedFraction = 0.2;

VerificationReport compare_to_oracle(const TransformerWeights &weights, const std::vector<MarkovSequence> &batch,
                                     double tolerance = 0.02);
std::string report_to_json(const VerificationReport &report);

struct PseudoAttention {
    Matrix map;
    std::vector<bool> defined; // false where I_n is empty or n < k
};

PseudoAttention pseudo_attention_map(const std::vector<int> &symbols, int k);
Matrix attention_abs_diff(const Matrix &actual, const Matrix &pseudo);

// Mean of a layer's attention map over sequences of equal length.
Matrix averaged_attention(const TransformerWeights &weights, const std::vector<MarkovSequence> &batch,
                          std::size_t layer, std::size_t head);

// Sample quantile with linear interpolation; q in [0, 1].
double quantile(std::vector<double> values, double q);

} // namespace icl
