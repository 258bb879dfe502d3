#include "icl/verification.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace icl {

MatchSet match_set(const std::vector<int> &x, int k, std::size_t n) {
    if (n < static_cast<std::size_t>(k) || n >= x.size()) throw std::invalid_argument("match_set: need k <= n < length");
    MatchSet m;
    m.n = n;
    for (std::size_t i = k; i <= n; ++i) {
        bool ok = true;
        for (int j = 0; j < k && ok; ++j) ok = x[i - 1 - j] == x[n - j];
        if (ok) m.indices.push_back(i);
    }
    return m;
}

InductionCheck check_induction_head(const ForwardTrace &trace, const std::vector<int> &symbols, int k,
                                    double argmax_rel_tol) {
    InductionCheck c;
    const std::size_t T = symbols.size() - 1;
    const MatchSet I = match_set(symbols, k, T);
    c.match_count = I.indices.size();
    if (I.indices.empty()) {
        c.skipped = true;
        return c;
    }
    const Matrix &A = trace.layers.back().attention.at(0);
    double top = 0.0;
    for (std::size_t i = 0; i <= T; ++i) top = std::max(top, A(T, i));
    std::vector<std::size_t> argmax;
    for (std::size_t i = 0; i <= T; ++i)
        if (A(T, i) >= top * (1.0 - argmax_rel_tol)) argmax.push_back(i);
    c.argmax_exact = argmax == I.indices;

    const double u = 1.0 / static_cast<double>(I.indices.size());
    std::size_t next = 0;
    for (std::size_t i = 0; i <= T; ++i) {
        double target = 0.0;
        if (next < I.indices.size() && I.indices[next] == i) {
            target = u;
            ++next;
        }
        c.uniform_deviation = std::max(c.uniform_deviation, std::fabs(A(T, i) - target));
    }
    return c;
}

double quantile(std::vector<double> v, double q) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

VerificationReport compare_to_oracle(const TransformerWeights &w, const std::vector<MarkovSequence> &batch,
                                     double tolerance) {
    VerificationReport r;
    r.S = w.S;
    r.k = w.info.k;
    r.kappa_pos = w.info.kappa_pos;
    r.kappa_sim = w.info.kappa_sim;
    r.family = w.info.family;
    r.variant = w.info.variant;
    r.tolerance = tolerance;
    std::vector<double> errors;
    for (const auto &seq : batch) {
        if (seq.symbols.size() < static_cast<std::size_t>(r.k) + 1)
            throw std::invalid_argument("compare_to_oracle: sequence shorter than k+1");
        r.T = std::max(r.T, seq.T());
        SequenceResult sr;
        sr.seed = seq.seed;
        const KgramEstimate est = conditional_kgram(seq.symbols, w.S, r.k);
        sr.denominator = est.denominator;
        sr.excluded = est.zero_denominator;
        const ForwardTrace tr = forward(w, seq.symbols, Positions::last);
        sr.error = sup_distance(tr.logits, est.probs);
        if (sr.excluded)
            ++r.excluded;
        else
            errors.push_back(sr.error);
        r.sequences.push_back(sr);
    }
    r.excluded_fraction = batch.empty() ? 1.0 : static_cast<double>(r.excluded) / static_cast<double>(batch.size());
    if (!errors.empty()) {
        r.max_error = *std::max_element(errors.begin(), errors.end());
        r.median_error = quantile(errors, 0.5);
        r.p90_error = quantile(errors, 0.9);
        r.p99_error = quantile(errors, 0.99);
    }
    r.pass = !errors.empty() && r.excluded_fraction <= kMaxExcludedFraction && r.max_error <= tolerance;
    return r;
}

std::string report_to_json(const VerificationReport &r) {
    nlohmann::ordered_json j;
    j["S"] = r.S;
    j["k"] = r.k;
    j["T"] = r.T;
    j["family"] = r.family;
    j["variant"] = r.variant;
    j["kappa_pos"] = r.kappa_pos;
    j["kappa_sim"] = r.kappa_sim;
    j["tolerance"] = r.tolerance;
    j["max_error"] = r.max_error;
    j["median_error"] = r.median_error;
    j["p90_error"] = r.p90_error;
    j["p99_error"] = r.p99_error;
    j["excluded"] = r.excluded;
    j["excluded_fraction"] = r.excluded_fraction;
    j["pass"] = r.pass;
    auto &rows = j["sequences"] = nlohmann::ordered_json::array();
    for (const auto &s : r.sequences)
        rows.push_back({{"seed", s.seed}, {"error", s.error}, {"denominator", s.denominator}, {"excluded", s.excluded}});
    return j.dump(2) + "\n";
}

PseudoAttention pseudo_attention_map(const std::vector<int> &symbols, int k) {
    if (symbols.size() < static_cast<std::size_t>(k) + 1) throw std::invalid_argument("pseudo_attention_map: sequence too short");
    const std::size_t N = symbols.size();
    PseudoAttention p{Matrix(N, N), std::vector<bool>(N, false)};
    for (std::size_t n = k; n < N; ++n) {
        const MatchSet I = match_set(symbols, k, n);
        if (I.indices.empty()) continue;
        p.defined[n] = true;
        for (std::size_t i : I.indices) p.map(n, i) = 1.0 / static_cast<double>(I.indices.size());
    }
    return p;
}

Matrix attention_abs_diff(const Matrix &a, const Matrix &b) {
    if (a.rows != b.rows || a.cols != b.cols) throw std::invalid_argument("attention_abs_diff: shape mismatch");
    Matrix d(a.rows, a.cols);
    for (std::size_t i = 0; i < a.data.size(); ++i) d.data[i] = std::fabs(a.data[i] - b.data[i]);
    return d;
}

Matrix averaged_attention(const TransformerWeights &w, const std::vector<MarkovSequence> &batch, std::size_t layer,
                          std::size_t head) {
    if (batch.empty()) throw std::invalid_argument("averaged_attention: empty batch");
    const std::size_t N = batch.front().symbols.size();
    Matrix acc(N, N);
    for (const auto &seq : batch) {
        if (seq.symbols.size() != N) throw std::invalid_argument("averaged_attention: sequences differ in length");
        const ForwardTrace tr = forward(w, seq.symbols);
        const Matrix A = extract_attention(tr, layer, head);
        for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += A.data[i];
    }
    for (double &v : acc.data) v /= static_cast<double>(batch.size());
    return acc;
}

} // namespace icl
