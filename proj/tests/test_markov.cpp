#include "icl/markov.hpp"

#include "doctest.h"

#include <cmath>

using namespace icl;

TEST_CASE("rng is deterministic and splits independently") {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 10; ++i) {
        const auto x = a.next();
        CHECK(x == b.next());
        CHECK(x != c.next());
    }
    CHECK(Rng(5).derive_seed(1) != Rng(5).derive_seed(2));
    Rng r(9);
    for (int i = 0; i < 1000; ++i) {
        const double u = r.uniform();
        CHECK((u > 0.0 && u < 1.0));
        CHECK(r.below(7) < 7u);
    }
}

TEST_CASE("sample_kernel rows are distributions and reproducible") {
    for (int k = 1; k <= 3; ++k)
        for (int S = 2; S <= 4; ++S) {
            const TransitionKernel K = sample_kernel(k, S, 100 + k * S);
            for (std::size_t c = 0; c < K.num_contexts(); ++c) {
                double s = 0.0;
                for (int j = 0; j < S; ++j) s += K.row(c)[j];
                CHECK(std::fabs(s - 1.0) < 1e-12);
            }
            CHECK(K.table == sample_kernel(k, S, 100 + k * S).table);
        }
}

TEST_CASE("Dirichlet(1,1) mean") {
    double mean = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) mean += sample_kernel(1, 2, 7000000 + i).row(0)[0] / n;
    CHECK(std::fabs(mean - 0.5) < 0.01);
}

TEST_CASE("context indexing round trips") {
    TransitionKernel K = uniform_kernel(3, 3);
    for (std::size_t c = 0; c < K.num_contexts(); ++c) CHECK(K.context_index(K.context_tuple(c)) == c);
    CHECK(K.context_index({1, 0, 0}) == 1u);
    CHECK(K.context_index({0, 1, 0}) == 3u);
    CHECK(context_before({0, 1, 2, 0}, 3, 2, 3) == K.context_index({2, 1, 0}) % 9);
    CHECK_THROWS(K.context_index({0, 1}));
}

TEST_CASE("generate_sequence") {
    TransitionKernel K = uniform_kernel(2, 2);
    for (std::size_t c = 0; c < 4; ++c) {
        K.row(c)[0] = 1.0;
        K.row(c)[1] = 0.0;
    }
    const MarkovSequence s = generate_sequence(K, 50, 3);
    CHECK(s.symbols.size() == 51u);
    for (std::size_t i = 2; i < s.symbols.size(); ++i) CHECK(s.symbols[i] == 0);
    CHECK(generate_sequence(K, 50, 3).symbols == s.symbols);

    const TransitionKernel B = sample_kernel(1, 3, 11);
    const MarkovSequence long_seq = generate_sequence(B, 100000, 12);
    double counts[3][3] = {};
    double totals[3] = {};
    for (std::size_t i = 1; i < long_seq.symbols.size(); ++i) {
        counts[long_seq.symbols[i - 1]][long_seq.symbols[i]] += 1;
        totals[long_seq.symbols[i - 1]] += 1;
    }
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) CHECK(std::fabs(counts[a][b] / totals[a] - B.row(a)[b]) < 0.02);
}

TEST_CASE("conditional_kgram examples") {
    KgramEstimate e = conditional_kgram({0, 0, 0, 0, 0}, 2, 1);
    CHECK(e.probs == Vec{1.0, 0.0});
    e = conditional_kgram({0, 1, 0, 1, 0}, 2, 1);
    CHECK(e.probs == Vec{0.0, 1.0});
    CHECK(e.denominator == 2u);
    e = conditional_kgram({0, 0, 1, 0, 0, 1, 0}, 2, 2);
    CHECK(e.probs == Vec{1.0, 0.0});
    e = conditional_kgram({0, 1}, 2, 1);
    CHECK(e.zero_denominator);
    CHECK(e.probs == Vec{0.5, 0.5});
    CHECK_THROWS(conditional_kgram({0, 1}, 2, 2));
}

TEST_CASE("conditional_kgram matches a brute force on all short ternary sequences") {
    for (std::size_t len = 2; len <= 7; ++len) {
        std::size_t total = 1;
        for (std::size_t i = 0; i < len; ++i) total *= 3;
        for (std::size_t code = 0; code < total; ++code) {
            std::vector<int> x(len);
            std::size_t c = code;
            for (auto &v : x) {
                v = static_cast<int>(c % 3);
                c /= 3;
            }
            for (int k = 1; k < static_cast<int>(len) && k <= 3; ++k) {
                const std::size_t T = len - 1;
                double num[3] = {}, den = 0;
                for (std::size_t i = k; i <= T; ++i) {
                    if (!std::equal(x.begin() + (i - k), x.begin() + i, x.begin() + (T + 1 - k))) continue;
                    den += 1;
                    num[x[i]] += 1;
                }
                const KgramEstimate e = conditional_kgram(x, 3, k);
                REQUIRE(e.zero_denominator == (den == 0));
                if (den > 0)
                    for (int s = 0; s < 3; ++s) CHECK(e.probs[s] == num[s] / den);
            }
        }
    }
}

TEST_CASE("chain statistics") {
    const ChainStatistics u = chain_statistics(uniform_kernel(1, 3), {1, 2});
    for (double v : u.stationary) CHECK(v == doctest::Approx(1.0 / 3));
    CHECK(u.lambda < 1e-9);

    TransitionKernel K = uniform_kernel(1, 2);
    const double q = 0.2;
    K.row(0)[0] = 1 - q;
    K.row(0)[1] = q;
    K.row(1)[0] = q;
    K.row(1)[1] = 1 - q;
    const ChainStatistics st = chain_statistics(K, {1, 3});
    CHECK(st.lambda == doctest::Approx(std::fabs(1 - 2 * q)).epsilon(1e-9));

    const TransitionKernel G = sample_kernel(2, 3, 77);
    const Matrix P = lifted_matrix(G);
    REQUIRE(is_ergodic(P));
    const ChainStatistics gs = chain_statistics(G, {1, 2, 5});
    for (std::size_t j = 0; j < P.cols; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < P.rows; ++i) s += gs.stationary[i] * P(i, j);
        CHECK(std::fabs(s - gs.stationary[j]) < 1e-10);
    }
    for (const auto &[lag, J] : gs.joint) {
        double s = 0.0;
        for (double v : J.data) s += v;
        CHECK(std::fabs(s - 1.0) < 1e-10);
    }
}

TEST_CASE("iterated return probability") {
    TransitionKernel K = uniform_kernel(2, 2);
    auto set = [&](std::vector<int> ctx, double p0) {
        const std::size_t c = K.context_index(ctx);
        K.row(c)[0] = p0;
        K.row(c)[1] = 1 - p0;
    };
    set({0, 0}, 0.8);
    set({1, 0}, 0.3);
    set({1, 1}, 0.4);
    set({0, 1}, 0.5);
    CHECK(iterated_return_probability(K, 1).p00_closed == doctest::Approx(0.8));
    CHECK(iterated_return_probability(K, 2).p00_closed == doctest::Approx(0.7));
    CHECK(iterated_return_probability(K, 3).p00_closed == doctest::Approx(0.65));
    for (int i = 1; i <= 50; ++i) {
        const ReturnProbability r = iterated_return_probability(K, i);
        CHECK(std::fabs(r.p00_closed - r.p00_brute) < 1e-10);
        CHECK(std::fabs(r.p11_closed - r.p11_brute) < 1e-10);
    }
    set({1, 0}, 0.8);
    CHECK(iterated_return_probability(K, 7).p00_closed == doctest::Approx(0.8));
    CHECK_THROWS(iterated_return_probability(uniform_kernel(1, 2), 1));
}

TEST_CASE("reversible sampler") {
    for (int k = 1; k <= 3; ++k) {
        const TransitionKernel K = sample_reversible_kernel(k, 2, 5 + k);
        K.validate();
        CHECK(reversibility_defect(K) < 1e-10);
    }
}

TEST_CASE("serialization round trip") {
    const TransitionKernel K = sample_kernel(2, 3, 4);
    const TransitionKernel R = kernel_from_json(kernel_to_json(K));
    CHECK(R.k == 2);
    CHECK(R.S == 3);
    for (std::size_t i = 0; i < K.table.size(); ++i) CHECK(R.table[i] == doctest::Approx(K.table[i]).epsilon(1e-15));
    const auto seqs = sample_sequences(1, 2, 5, 2, 9);
    CHECK(sequences_to_csv(seqs) == sequences_to_csv(sample_sequences(1, 2, 5, 2, 9)));
}
