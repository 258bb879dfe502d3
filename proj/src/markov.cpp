#include "icl/markov.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace icl {

namespace {

std::size_t ipow(std::size_t b, int e) {
    std::size_t r = 1;
    for (int i = 0; i < e; ++i) r *= b;
    return r;
}

Matrix matmul(const Matrix &a, const Matrix &b) {
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t l = 0; l < a.cols; ++l) {
            double v = a(i, l);
            if (v == 0.0) continue;
            const double *br = b.row(l);
            double *cr = c.row(i);
            for (std::size_t j = 0; j < b.cols; ++j) cr[j] += v * br[j];
        }
    return c;
}

} // namespace

std::uint64_t Rng::mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t Rng::next() { return mix(key_ + 0x9e3779b97f4a7c15ULL * (++counter_)); }

double Rng::uniform() { return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53; }

double Rng::exponential() { return -std::log(uniform()); }

double Rng::normal() {
    double u1 = uniform(), u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::size_t Rng::below(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n; }

std::size_t Rng::categorical(const double *probs, std::size_t n) {
    double u = uniform(), acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        acc += probs[i];
        if (u < acc) return i;
    }
    // rounding: fall back to the last symbol with positive mass
    for (std::size_t i = n; i-- > 0;)
        if (probs[i] > 0.0) return i;
    return n - 1;
}

std::uint64_t Rng::derive_seed(std::uint64_t stream) const { return mix(key_ ^ mix(stream + 0x3c6ef372fe94f82bULL)); }

Rng Rng::split(std::uint64_t stream) const { return Rng(derive_seed(stream)); }

std::size_t TransitionKernel::num_contexts() const { return ipow(static_cast<std::size_t>(S), k); }

std::size_t TransitionKernel::context_index(const std::vector<int> &context) const {
    if (static_cast<int>(context.size()) != k) throw std::invalid_argument("context length must equal k");
    std::size_t idx = 0, mult = 1;
    for (int c : context) {
        if (c < 0 || c >= S) throw std::invalid_argument("context symbol out of range");
        idx += static_cast<std::size_t>(c) * mult;
        mult *= static_cast<std::size_t>(S);
    }
    return idx;
}

std::vector<int> TransitionKernel::context_tuple(std::size_t ctx) const {
    std::vector<int> out(k);
    for (int j = 0; j < k; ++j) {
        out[j] = static_cast<int>(ctx % S);
        ctx /= S;
    }
    return out;
}

double TransitionKernel::prob(int next, const std::vector<int> &context) const { return row(context_index(context))[next]; }

void TransitionKernel::validate(double tol) const {
    if (k < 1 || S < 2) throw std::invalid_argument("kernel needs k >= 1 and S >= 2");
    if (table.size() != num_contexts() * S) throw std::invalid_argument("kernel table does not cover all contexts");
    for (std::size_t c = 0; c < num_contexts(); ++c) {
        double sum = 0.0;
        for (int s = 0; s < S; ++s) {
            double p = row(c)[s];
            if (!(p >= 0.0)) throw std::invalid_argument("kernel entry negative or NaN");
            sum += p;
        }
        if (std::abs(sum - 1.0) > tol) throw std::invalid_argument("kernel row does not sum to 1");
    }
}

std::size_t context_before(const std::vector<int> &symbols, std::size_t n, int k, int S) {
    std::size_t idx = 0, mult = 1;
    for (int j = 1; j <= k; ++j) {
        idx += static_cast<std::size_t>(symbols[n - j]) * mult;
        mult *= static_cast<std::size_t>(S);
    }
    return idx;
}

TransitionKernel sample_kernel(int k, int S, std::uint64_t seed) {
    if (k < 1 || S < 2) throw std::invalid_argument("sample_kernel: need k >= 1, S >= 2");
    TransitionKernel K{k, S, {}};
    K.table.resize(K.num_contexts() * S);
    Rng rng(seed);
    // Dirichlet(1,...,1) = normalized Exp(1) draws
    for (std::size_t c = 0; c < K.num_contexts(); ++c) {
        double total = 0.0;
        for (int s = 0; s < S; ++s) total += (K.row(c)[s] = rng.exponential());
        for (int s = 0; s < S; ++s) K.row(c)[s] /= total;
    }
    return K;
}

TransitionKernel uniform_kernel(int k, int S) {
    TransitionKernel K{k, S, {}};
    K.table.assign(K.num_contexts() * S, 1.0 / S);
    return K;
}

MarkovSequence generate_sequence(const TransitionKernel &kernel, std::size_t T, std::uint64_t seed) {
    if (T < static_cast<std::size_t>(kernel.k)) throw std::invalid_argument("generate_sequence: T must be >= k");
    MarkovSequence seq;
    seq.S = kernel.S;
    seq.k = kernel.k;
    seq.seed = seed;
    seq.symbols.resize(T + 1);
    Rng rng(seed);
    for (int n = 0; n < kernel.k; ++n) seq.symbols[n] = static_cast<int>(rng.below(kernel.S));
    for (std::size_t n = kernel.k; n <= T; ++n) {
        std::size_t ctx = context_before(seq.symbols, n, kernel.k, kernel.S);
        seq.symbols[n] = static_cast<int>(rng.categorical(kernel.row(ctx), kernel.S));
    }
    return seq;
}

std::vector<MarkovSequence> sample_sequences(int k, int S, std::size_t T, std::size_t count, std::uint64_t seed) {
    const Rng master(seed);
    std::vector<MarkovSequence> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        auto kernel = std::make_shared<const TransitionKernel>(sample_kernel(k, S, master.derive_seed(2 * i)));
        MarkovSequence seq = generate_sequence(*kernel, T, master.derive_seed(2 * i + 1));
        seq.kernel = kernel;
        out.push_back(std::move(seq));
    }
    return out;
}

KgramEstimate conditional_kgram(const std::vector<int> &symbols, int S, int k) {
    if (symbols.size() < static_cast<std::size_t>(k) + 1) throw std::invalid_argument("conditional_kgram: sequence too short");
    const std::size_t T = symbols.size() - 1;
    KgramEstimate est;
    est.probs.assign(S, 0.0);
    for (std::size_t i = k; i <= T; ++i) {
        bool match = true;
        for (int j = 1; j <= k && match; ++j) match = symbols[i - j] == symbols[T - j + 1];
        if (!match) continue;
        ++est.denominator;
        est.probs[symbols[i]] += 1.0;
    }
    if (est.denominator == 0) {
        est.zero_denominator = true;
        est.probs.assign(S, 1.0 / S);
        return est;
    }
    for (double &p : est.probs) p /= static_cast<double>(est.denominator);
    return est;
}

Matrix lifted_matrix(const TransitionKernel &kernel) {
    const std::size_t N = kernel.num_contexts();
    const std::size_t S = kernel.S;
    const std::size_t tail = N / S; // S^(k-1)
    Matrix P(N, N);
    for (std::size_t a = 0; a < N; ++a)
        for (std::size_t s = 0; s < S; ++s) P(a, s + S * (a % tail)) += kernel.row(a)[s];
    return P;
}

bool is_ergodic(const Matrix &lifted) {
    Matrix Q = lifted;
    for (std::size_t i = 1; i < lifted.rows; ++i) Q = matmul(Q, lifted);
    return std::all_of(Q.data.begin(), Q.data.end(), [](double v) { return v > 0.0; });
}

Vec stationary_distribution(const Matrix &P) {
    const std::size_t N = P.rows;
    Vec mu(N, 1.0 / N), next(N);
    for (int it = 0; it < 2000000; ++it) {
        std::fill(next.begin(), next.end(), 0.0);
        for (std::size_t a = 0; a < N; ++a)
            for (std::size_t b = 0; b < N; ++b) next[b] += mu[a] * P(a, b);
        double total = 0.0;
        for (double v : next) total += v;
        double change = 0.0;
        for (std::size_t b = 0; b < N; ++b) {
            next[b] /= total;
            change += std::abs(next[b] - mu[b]);
        }
        mu.swap(next);
        if (change < 1e-15) break;
    }
    return mu;
}

double second_eigenvalue_modulus(const Matrix &P, const Vec &mu) {
    // Powers of the deflated matrix P - 1 mu^T by repeated squaring; the growth
    // rate of ||B^(2^m)|| gives the spectral radius of B, i.e. lambda.
    const std::size_t N = P.rows;
    Matrix B = P;
    for (std::size_t a = 0; a < N; ++a)
        for (std::size_t b = 0; b < N; ++b) B(a, b) -= mu[b];
    double log_norm = 0.0;
    double power = 1.0;
    auto frob = [](const Matrix &m) {
        double s = 0.0;
        for (double v : m.data) s += v * v;
        return std::sqrt(s);
    };
    double n0 = frob(B);
    if (n0 < 1e-300) return 0.0;
    for (auto &v : B.data) v /= n0;
    log_norm = std::log(n0);
    for (int m = 0; m < 60; ++m) {
        B = matmul(B, B);
        power *= 2.0;
        double n = frob(B);
        if (n < 1e-300) return 0.0;
        for (auto &v : B.data) v /= n;
        log_norm = 2.0 * log_norm + std::log(n);
        if (log_norm / power < -700.0) return 0.0;
    }
    return std::exp(log_norm / power);
}

Matrix lagged_joint(const TransitionKernel &kernel, const Matrix &P, const Vec &mu, int lag) {
    const std::size_t N = P.rows;
    const int S = kernel.S;
    Matrix J(S, S);
    if (lag == 0) {
        for (std::size_t a = 0; a < N; ++a) J(a % S, a % S) += mu[a];
        return J;
    }
    if (lag < 0) throw std::invalid_argument("lagged_joint: negative lag");
    Matrix Pj = P;
    for (int i = 1; i < lag; ++i) Pj = matmul(Pj, P);
    for (std::size_t a = 0; a < N; ++a)
        for (std::size_t b = 0; b < N; ++b) J(a % S, b % S) += mu[a] * Pj(a, b);
    return J;
}

ChainStatistics chain_statistics(const TransitionKernel &kernel, const std::vector<int> &lags) {
    kernel.validate();
    Matrix P = lifted_matrix(kernel);
    if (!is_ergodic(P)) throw std::runtime_error("chain not ergodic");
    ChainStatistics st;
    st.stationary = stationary_distribution(P);
    st.symbol_marginal.assign(kernel.S, 0.0);
    for (std::size_t a = 0; a < st.stationary.size(); ++a) st.symbol_marginal[a % kernel.S] += st.stationary[a];
    st.lambda = second_eigenvalue_modulus(P, st.stationary);
    for (int j : lags) st.joint[j] = lagged_joint(kernel, P, st.stationary, j);
    return st;
}

ReturnProbability iterated_return_probability(const TransitionKernel &kernel, int steps) {
    if (kernel.k != 2 || kernel.S != 2) throw std::invalid_argument("iterated_return_probability: needs k=2, S=2");
    if (steps < 1) throw std::invalid_argument("iterated_return_probability: steps >= 1");
    auto closed = [steps](double a, double b) {
        double fixed = b / (1.0 - a + b);
        return fixed + (a - fixed) * std::pow(a - b, steps - 1);
    };
    auto brute = [steps](double a, double b) {
        // [[a, 1-a], [b, 1-b]]^steps, entry (0,0)
        double m00 = 1, m01 = 0, m10 = 0, m11 = 1;
        for (int i = 0; i < steps; ++i) {
            double n00 = m00 * a + m01 * b, n01 = m00 * (1 - a) + m01 * (1 - b);
            double n10 = m10 * a + m11 * b, n11 = m10 * (1 - a) + m11 * (1 - b);
            m00 = n00; m01 = n01; m10 = n10; m11 = n11;
        }
        return m00;
    };
    double a0 = kernel.prob(0, {0, 0}), b0 = kernel.prob(0, {1, 0});
    double a1 = kernel.prob(1, {1, 1}), b1 = kernel.prob(1, {0, 1});
    return {closed(a0, b0), closed(a1, b1), brute(a0, b0), brute(a1, b1)};
}

TransitionKernel sample_reversible_kernel(int k, int S, std::uint64_t seed) {
    const std::size_t N = ipow(S, k);
    const std::size_t W = N * S;
    Rng rng(seed);
    // window (x_t, x_{t-1}, ..., x_{t-k}) indexed like a context of length k+1
    auto reverse_index = [&](std::size_t w) {
        std::vector<int> digits(k + 1);
        for (int j = 0; j <= k; ++j) { digits[j] = static_cast<int>(w % S); w /= S; }
        std::size_t r = 0, mult = 1;
        for (int j = k; j >= 0; --j) { r += digits[j] * mult; mult *= S; }
        return r;
    };
    Vec phi(W, -1.0);
    for (std::size_t w = 0; w < W; ++w) {
        if (phi[w] >= 0.0) continue;
        double v = rng.exponential();
        phi[w] = v;
        phi[reverse_index(w)] = v;
    }
    // M(a -> b) = phi(window); b = (s, a_0..a_{k-2}), window = (s, a_0..a_{k-1})
    const std::size_t tail = N / S;
    Matrix M(N, N);
    for (std::size_t a = 0; a < N; ++a)
        for (int s = 0; s < S; ++s) M(a, s + S * (a % tail)) = phi[s + S * a];
    Vec r(N, 1.0), next(N);
    double rho = 1.0;
    for (int it = 0; it < 100000; ++it) {
        for (std::size_t a = 0; a < N; ++a) {
            double acc = 0.0;
            for (std::size_t b = 0; b < N; ++b) acc += M(a, b) * r[b];
            next[a] = acc;
        }
        double mx = *std::max_element(next.begin(), next.end());
        double change = 0.0;
        for (std::size_t a = 0; a < N; ++a) {
            next[a] /= mx;
            change = std::max(change, std::abs(next[a] - r[a]));
        }
        r.swap(next);
        rho = mx;
        if (change < 1e-15) break;
    }
    TransitionKernel K{k, S, {}};
    K.table.resize(N * S);
    for (std::size_t a = 0; a < N; ++a) {
        double total = 0.0;
        for (int s = 0; s < S; ++s) {
            std::size_t b = s + S * (a % tail);
            total += (K.row(a)[s] = M(a, b) * r[b] / (rho * r[a]));
        }
        for (int s = 0; s < S; ++s) K.row(a)[s] /= total;
    }
    return K;
}

double reversibility_defect(const TransitionKernel &kernel) {
    Matrix P = lifted_matrix(kernel);
    Vec mu = stationary_distribution(P);
    const int k = kernel.k, S = kernel.S;
    const std::size_t W = kernel.num_contexts() * S;
    auto window_prob = [&](std::size_t w) { return mu[w / S] * kernel.row(w / S)[w % S]; };
    double worst = 0.0;
    for (std::size_t w = 0; w < W; ++w) {
        std::size_t x = w, r = 0;
        std::vector<int> digits(k + 1);
        for (int j = 0; j <= k; ++j) { digits[j] = static_cast<int>(x % S); x /= S; }
        std::size_t mult = 1;
        for (int j = k; j >= 0; --j) { r += digits[j] * mult; mult *= S; }
        worst = std::max(worst, std::abs(window_prob(w) - window_prob(r)));
    }
    return worst;
}

std::string kernel_to_json(const TransitionKernel &kernel) {
    nlohmann::ordered_json j;
    j["k"] = kernel.k;
    j["S"] = kernel.S;
    nlohmann::ordered_json rows = nlohmann::ordered_json::object();
    for (std::size_t c = 0; c < kernel.num_contexts(); ++c) {
        std::string key;
        for (int s : kernel.context_tuple(c)) key += (key.empty() ? "" : ",") + std::to_string(s);
        rows[key] = std::vector<double>(kernel.row(c), kernel.row(c) + kernel.S);
    }
    j["rows"] = rows;
    return j.dump(2);
}

TransitionKernel kernel_from_json(const std::string &text) {
    auto j = nlohmann::json::parse(text);
    TransitionKernel K{j.at("k").get<int>(), j.at("S").get<int>(), {}};
    K.table.assign(K.num_contexts() * K.S, -1.0);
    for (auto &[key, row] : j.at("rows").items()) {
        std::vector<int> ctx;
        std::stringstream ss(key);
        std::string tok;
        while (std::getline(ss, tok, ',')) ctx.push_back(std::stoi(tok));
        auto vals = row.get<std::vector<double>>();
        if (static_cast<int>(vals.size()) != K.S) throw std::invalid_argument("kernel row has wrong length");
        std::copy(vals.begin(), vals.end(), K.row(K.context_index(ctx)));
    }
    K.validate(1e-9);
    return K;
}

std::string sequences_to_csv(const std::vector<MarkovSequence> &seqs) {
    std::ostringstream os;
    std::size_t len = 0;
    for (auto &s : seqs) len = std::max(len, s.symbols.size());
    os << "S,k,seed";
    for (std::size_t i = 0; i < len; ++i) os << ",x" << i;
    os << '\n';
    for (auto &s : seqs) {
        os << s.S << ',' << s.k << ',' << s.seed;
        for (int x : s.symbols) os << ',' << x;
        os << '\n';
    }
    return os.str();
}

} // namespace icl
