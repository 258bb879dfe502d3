#include "icl/constructions.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace icl {

namespace {

double pow3(int e) { return std::pow(3.0, e); }

// Geometric normalizer for m terms: 1 + 3 + ... + 3^(m-1).
double geom(int m) { return (pow3(m) - 1.0) / 2.0; }

Head empty_head(std::size_t d, std::size_t t_max) {
    Head h;
    h.wq = Matrix(d, d);
    h.wk = Matrix(d, d);
    h.wv = Matrix(d, d);
    h.pos_k.assign(t_max + 1, Vec(d, 0.0));
    h.pos_v.assign(t_max + 1, Vec(d, 0.0));
    return h;
}

MlpSublayer empty_mlp(std::size_t d, bool ln, SkipSource skip) {
    MlpSublayer m;
    m.w = Matrix(d, d);
    m.b.assign(d, 0.0);
    m.layer_norm = ln;
    m.skip = skip;
    return m;
}

// Query is the constant e_0 at every position; keys carry only positions.
Head positional_head(const ConstructionSpec &sp, const Layout &L, int first_offset, int last_offset) {
    const std::size_t d = sp.dim();
    Head h = empty_head(d, sp.t_max);
    for (int s = 0; s < sp.S; ++s) h.wq(0, L.e(s)) = 1.0;
    for (int i = first_offset; i <= last_offset; ++i) h.pos_k[i][0] = i * std::log(3.0) + sp.kappa_pos;
    return h;
}

} // namespace

std::string to_string(Family f) { return f == Family::two_head ? "two_head" : "single_head"; }
std::string to_string(Variant v) { return v == Variant::mlp_only ? "mlp_only" : "ln_in_attention"; }

Family family_from_string(const std::string &s) {
    if (s == "two_head") return Family::two_head;
    if (s == "single_head") return Family::single_head;
    throw std::invalid_argument("unknown family: " + s);
}

Variant variant_from_string(const std::string &s) {
    if (s == "mlp_only") return Variant::mlp_only;
    if (s == "ln_in_attention") return Variant::ln_in_attention;
    throw std::invalid_argument("unknown variant: " + s);
}

void ConstructionSpec::validate() const {
    if (S < 2) throw std::invalid_argument("construction: S must be >= 2");
    if (k < 1) throw std::invalid_argument("construction: k must be >= 1");
    if (!(kappa_pos > 0.0) || !(kappa_sim > 0.0) || !std::isfinite(kappa_pos) || !std::isfinite(kappa_sim))
        throw std::invalid_argument("construction: kappa must be positive and finite");
    if (t_max < static_cast<std::size_t>(k) + 1) throw std::invalid_argument("construction: T_max must be >= k+1");
}

double default_kappa_pos(int k) { return 30.0 + 2.0 * k * std::log(3.0); }

double default_kappa_sim(int k, std::size_t T) { return 20.0 * k * std::log(static_cast<double>(T) + 1.0); }

double large_kappa_sim(int k, std::size_t T) { return 2.0 * pow3(2 * k) * (std::log(static_cast<double>(T) + 1.0) + 10.0); }

ConstructionSpec make_spec(int S, int k, std::size_t T, Family f, Variant v) {
    ConstructionSpec sp;
    sp.S = S;
    sp.k = k;
    sp.kappa_pos = default_kappa_pos(k);
    sp.kappa_sim = default_kappa_sim(k, T);
    sp.t_max = T;
    sp.family = f;
    sp.variant = v;
    return sp;
}

ReferenceQuantities reference_quantities(int k) {
    ReferenceQuantities r;
    r.c_attn = geom(k);
    r.z_gate = pow3(k + 1) / 5.0;
    r.margin = 1.0 / pow3(k);
    r.mlp_bias = -(pow3(k - 1) - 1.0) / (2.0 * r.c_attn);
    return r;
}

TransformerWeights build(const ConstructionSpec &sp) {
    sp.validate();
    const std::size_t d = sp.dim();
    const Layout L{static_cast<std::size_t>(sp.S)};
    const ReferenceQuantities ref = reference_quantities(sp.k);
    const double C = ref.c_attn;
    const int S = sp.S;
    const bool ln_attn = sp.variant == Variant::ln_in_attention;

    TransformerWeights w;
    w.S = S;
    w.d = d;
    w.t_max = sp.t_max;
    w.info = {sp.k, sp.kappa_pos, sp.kappa_sim, to_string(sp.family), to_string(sp.variant)};
    w.embedding = Matrix(d, S);
    for (int s = 0; s < S; ++s) w.embedding(L.e(s), s) = 1.0;

    LayerWeights first;
    // v-head: offsets 1..k with weights 3^(i-1)/C, v_n into B3, gate Z into coordinate 0
    Head vhead = positional_head(sp, L, 1, sp.k);
    for (int c = 0; c < 3; ++c) vhead.wv(c, c) = 1.0;
    for (int s = 0; s < S; ++s) vhead.wv(L.b3(s), L.e(s)) = 1.0;
    vhead.pos_v[sp.k][L.z()] = 9.0 / 5.0 * C;

    if (sp.family == Family::two_head) {
        // u-head: offsets 0..k-1 with weights 3^i/C, u_n into B1
        Head uhead = positional_head(sp, L, 0, sp.k - 1);
        for (int s = 0; s < S; ++s) uhead.wv(L.b1(s), L.e(s)) = 1.0;
        first.heads.push_back(std::move(uhead));
        first.heads.push_back(std::move(vhead));
        if (!ln_attn) {
            MlpSublayer m1 = empty_mlp(d, true, SkipSource::previous);
            MlpSublayer m2 = empty_mlp(d, true, SkipSource::previous);
            for (int s = 0; s < S; ++s) {
                m1.w(L.b2(s), L.b1(s)) = 1.0;
                m2.w(L.b4(s), L.b3(s)) = 1.0;
            }
            first.mlp = {m1, m2};
        }
    } else {
        first.heads.push_back(std::move(vhead));
        // isolate e_{x_{n-k}} from v_n into B1
        MlpSublayer m1 = empty_mlp(d, true, SkipSource::previous);
        for (int s = 0; s < S; ++s) {
            m1.w(L.b1(s), L.b3(s)) = 1.0;
            m1.b[L.b1(s)] = ref.mlp_bias;
        }
        // u_n = e_{x_n}/C + 3 v_n - 3^k e_{x_{n-k}}/C into B2
        MlpSublayer m2 = empty_mlp(d, !ln_attn, SkipSource::attention);
        for (int s = 0; s < S; ++s) {
            m2.w(L.b2(s), L.e(s)) = 1.0 / C;
            m2.w(L.b2(s), L.b1(s)) = -pow3(sp.k) / C;
            m2.w(L.b2(s), L.b3(s)) = 3.0;
        }
        first.mlp = {m1, m2};
        if (!ln_attn) {
            MlpSublayer m3 = empty_mlp(d, true, SkipSource::previous);
            for (int s = 0; s < S; ++s) m3.w(L.b4(s), L.b3(s)) = 1.0;
            first.mlp.push_back(m3);
        }
    }
    w.layers.push_back(std::move(first));

    LayerWeights second;
    Head ind = empty_head(d, sp.t_max);
    const std::size_t u_block = (sp.family == Family::two_head && ln_attn) ? L.b1(0) : L.b2(0);
    const std::size_t v_block = ln_attn ? L.b3(0) : L.b4(0);
    if (ln_attn) {
        ind.qk_layer_norm = true;
        ind.logit_scale = sp.kappa_sim;
        for (int s = 0; s < S; ++s) {
            ind.wq(1 + s, u_block + s) = 1.0;
            ind.wk(1 + s, v_block + s) = 1.0;
        }
    } else {
        const double r = std::sqrt(sp.kappa_sim);
        ind.wq(0, L.z()) = r;
        ind.wk(0, L.z()) = r;
        for (int s = 0; s < S; ++s) {
            ind.wq(1 + s, u_block + s) = r;
            ind.wk(1 + s, v_block + s) = r;
        }
    }
    for (int s = 0; s < S; ++s) ind.wv(L.b5(s), L.e(s)) = 1.0;
    second.heads.push_back(std::move(ind));
    w.layers.push_back(std::move(second));

    w.wo = Matrix(S, d);
    for (int s = 0; s < S; ++s) w.wo(s, L.b5(s)) = 1.0;
    w.bo.assign(S, 0.0);
    w.validate();
    return w;
}

Vec expected_first_layer_row(int k, std::size_t n) {
    Vec row(n + 1, 0.0);
    if (n == 0) {
        row[0] = 1.0;
        return row;
    }
    const int m = static_cast<int>(std::min<std::size_t>(n, k));
    const double c = geom(m);
    for (int i = 1; i <= m; ++i) row[i] = pow3(i - 1) / c;
    return row;
}

Vec expected_u_head_row(int k, std::size_t n) {
    Vec row(n + 1, 0.0);
    const int m = static_cast<int>(std::min<std::size_t>(n, k - 1));
    const double c = geom(m + 1);
    for (int i = 0; i <= m; ++i) row[i] = pow3(i) / c;
    return row;
}

Matrix expected_first_layer_map(int k, std::size_t N, bool u_head) {
    Matrix A(N, N);
    for (std::size_t n = 0; n < N; ++n) {
        const Vec row = u_head ? expected_u_head_row(k, n) : expected_first_layer_row(k, n);
        for (std::size_t off = 0; off <= n; ++off) A(n, n - off) = row[off];
    }
    return A;
}

ContextVectors context_vectors(const std::vector<int> &symbols, int S, int k) {
    if (symbols.empty()) throw std::invalid_argument("context_vectors: empty sequence");
    const std::size_t N = symbols.size();
    ContextVectors cv;
    const double gate = reference_quantities(k).z_gate;
    for (std::size_t n = 0; n < N; ++n) {
        Vec u(S, 0.0), v(S, 0.0);
        const int mu = static_cast<int>(std::min<std::size_t>(n, k - 1));
        for (int i = 0; i <= mu; ++i) u[symbols[n - i]] += pow3(i) / geom(mu + 1);
        const int mv = static_cast<int>(std::min<std::size_t>(n, k));
        for (int i = 1; i <= mv; ++i) v[symbols[n - i]] += pow3(i - 1) / geom(mv);
        cv.u.push_back(u);
        cv.v.push_back(v);
        cv.z.push_back(n >= static_cast<std::size_t>(k) ? gate : 0.0);
    }
    return cv;
}

double exhaustive_margin(int S, int k) {
    std::size_t count = 1;
    for (int j = 0; j < k; ++j) count *= S;
    auto encode = [&](std::size_t ctx) {
        Vec w(S, 0.0);
        for (int j = 0; j < k; ++j) {
            w[ctx % S] += pow3(j);
            ctx /= S;
        }
        return modified_layer_norm(w);
    };
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < count; ++a)
        for (std::size_t b = 0; b < count; ++b) {
            if (a == b) continue;
            Vec x = encode(a), y = encode(b);
            double s = 0.0;
            for (int j = 0; j < S; ++j) s += (x[j] - y[j]) * (x[j] - y[j]);
            best = std::min(best, std::sqrt(s));
        }
    return best;
}

} // namespace icl
