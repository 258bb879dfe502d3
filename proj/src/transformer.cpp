#include "icl/transformer.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace icl {

namespace {

void require_shape(const Matrix &m, std::size_t r, std::size_t c, const std::string &where) {
    if (m.rows != r || m.cols != c || m.data.size() != r * c)
        throw std::invalid_argument("shape mismatch in " + where + ": expected " + std::to_string(r) + "x" +
                                    std::to_string(c) + ", got " + std::to_string(m.rows) + "x" + std::to_string(m.cols));
}

// Largest offset whose positional vector is nonzero, or -1.
long nonzero_extent(const std::vector<Vec> &table) {
    for (long o = static_cast<long>(table.size()) - 1; o >= 0; --o)
        for (double v : table[o])
            if (v != 0.0) return o;
    return -1;
}

Matrix project_rows(const Matrix &X, const Matrix &w, std::size_t first) {
    Matrix out(X.rows, w.rows);
    for (std::size_t n = first; n < X.rows; ++n) matvec_into(w, X.row(n), out.row(n));
    return out;
}

void normalize_in_place(double *v, std::size_t d, const std::string &where) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += v[j] * v[j];
    if (!(s > 0.0)) throw std::invalid_argument("modified_layer_norm: zero-norm input in " + where);
    s = std::sqrt(s);
    for (std::size_t j = 0; j < d; ++j) v[j] /= s;
}

} // namespace

void TransformerWeights::validate() const {
    if (S < 1 || d < 1) throw std::invalid_argument("weights: empty shapes");
    require_shape(embedding, d, S, "embedding");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto &L = layers[l];
        if (L.heads.empty()) throw std::invalid_argument("layer " + std::to_string(l + 1) + " has no heads");
        for (std::size_t h = 0; h < L.heads.size(); ++h) {
            std::string tag = "layer " + std::to_string(l + 1) + " head " + std::to_string(h + 1);
            const auto &H = L.heads[h];
            require_shape(H.wq, d, d, tag + " W_Q");
            require_shape(H.wk, d, d, tag + " W_K");
            require_shape(H.wv, d, d, tag + " W_V");
            if (H.pos_k.size() != t_max + 1 || H.pos_v.size() != t_max + 1)
                throw std::invalid_argument("shape mismatch in " + tag + ": positional tables must cover offsets 0..t_max");
            for (const auto &p : H.pos_k)
                if (p.size() != d) throw std::invalid_argument("shape mismatch in " + tag + " key positional vector");
            for (const auto &p : H.pos_v)
                if (p.size() != d) throw std::invalid_argument("shape mismatch in " + tag + " value positional vector");
        }
        for (std::size_t m = 0; m < L.mlp.size(); ++m) {
            std::string tag = "layer " + std::to_string(l + 1) + " mlp " + std::to_string(m + 1);
            require_shape(L.mlp[m].w, d, d, tag + " W");
            if (L.mlp[m].b.size() != d) throw std::invalid_argument("shape mismatch in " + tag + " bias");
        }
    }
    require_shape(wo, S, d, "output head W_o");
    if (bo.size() != static_cast<std::size_t>(S)) throw std::invalid_argument("shape mismatch in output head b_o");
}

const Matrix &ForwardTrace::output() const {
    const auto &L = layers.back();
    return L.post_mlp.empty() ? L.post_attention : L.post_mlp.back();
}

ForwardTrace forward(const TransformerWeights &w, const std::vector<int> &symbols, Positions positions) {
    w.validate();
    const std::size_t N = symbols.size();
    const std::size_t d = w.d;
    if (N == 0) throw std::invalid_argument("forward: empty sequence");
    if (N > w.t_max + 1) throw std::invalid_argument("forward: sequence longer than positional tables");

    Matrix X(N, d);
    for (std::size_t n = 0; n < N; ++n) {
        int s = symbols[n];
        if (s < 0 || s >= w.S) throw std::invalid_argument("forward: symbol out of range");
        for (std::size_t j = 0; j < d; ++j) X(n, j) = w.embedding(j, s);
    }

    ForwardTrace trace;
    trace.length = N;
    Vec logits(N), buf(d), hidden(d);

    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        const auto &L = w.layers[l];
        const bool last_layer = l + 1 == w.layers.size();
        const std::size_t first = (last_layer && positions == Positions::last) ? N - 1 : 0;

        LayerTrace lt;
        lt.first_row = first;
        lt.post_attention = Matrix(N, d);
        for (std::size_t n = first; n < N; ++n)
            std::copy(X.row(n), X.row(n) + d, lt.post_attention.row(n));

        for (std::size_t h = 0; h < L.heads.size(); ++h) {
            const auto &H = L.heads[h];
            Matrix Q = project_rows(X, H.wq, first);
            Matrix K = project_rows(X, H.wk, 0);
            Matrix V = project_rows(X, H.wv, 0);
            const long ext_k = nonzero_extent(H.pos_k);
            const long ext_v = nonzero_extent(H.pos_v);
            const std::string tag = "layer " + std::to_string(l + 1) + " head " + std::to_string(h + 1);

            if (H.qk_layer_norm) {
                for (std::size_t n = first; n < N; ++n) normalize_in_place(Q.row(n), d, tag + " query");
                if (ext_k < 0)
                    for (std::size_t i = 0; i < N; ++i) normalize_in_place(K.row(i), d, tag + " key");
            }
            const bool pairwise_ln = H.qk_layer_norm && ext_k >= 0;

            Matrix att(N, N);
            for (std::size_t n = first; n < N; ++n) {
                const double *q = Q.row(n);
                for (std::size_t i = 0; i <= n; ++i) {
                    const double *kv = K.row(i);
                    const std::size_t off = n - i;
                    const bool with_pos = static_cast<long>(off) <= ext_k;
                    double acc = 0.0;
                    if (pairwise_ln) {
                        for (std::size_t j = 0; j < d; ++j) buf[j] = kv[j] + (with_pos ? H.pos_k[off][j] : 0.0);
                        normalize_in_place(buf.data(), d, tag + " key");
                        for (std::size_t j = 0; j < d; ++j) acc += buf[j] * q[j];
                    } else {
                        for (std::size_t j = 0; j < d; ++j) acc += kv[j] * q[j];
                        if (with_pos) {
                            const double *p = H.pos_k[off].data();
                            for (std::size_t j = 0; j < d; ++j) acc += p[j] * q[j];
                        }
                    }
                    logits[i] = H.qk_layer_norm ? H.logit_scale * acc : acc;
                }
                double mx = logits[0];
                for (std::size_t i = 1; i <= n; ++i) mx = std::max(mx, logits[i]);
                double total = 0.0;
                double *arow = att.row(n);
                for (std::size_t i = 0; i <= n; ++i) total += (arow[i] = std::exp(logits[i] - mx));
                for (std::size_t i = 0; i <= n; ++i) arow[i] /= total;

                double *out = lt.post_attention.row(n);
                for (std::size_t i = 0; i <= n; ++i) {
                    const double a = arow[i];
                    const double *vv = V.row(i);
                    for (std::size_t j = 0; j < d; ++j) out[j] += a * vv[j];
                    const std::size_t off = n - i;
                    if (static_cast<long>(off) <= ext_v) {
                        const double *p = H.pos_v[off].data();
                        for (std::size_t j = 0; j < d; ++j) out[j] += a * p[j];
                    }
                }
            }
            lt.attention.push_back(std::move(att));
        }

        const Matrix *prev = &lt.post_attention;
        for (std::size_t m = 0; m < L.mlp.size(); ++m) {
            const auto &M = L.mlp[m];
            const std::string tag = "layer " + std::to_string(l + 1) + " mlp " + std::to_string(m + 1);
            Matrix out(N, d);
            for (std::size_t n = first; n < N; ++n) {
                matvec_into(M.w, prev->row(n), hidden.data());
                for (std::size_t j = 0; j < d; ++j) hidden[j] = std::max(0.0, hidden[j] + M.b[j]);
                if (M.layer_norm) normalize_in_place(hidden.data(), d, tag);
                const double *skip = (M.skip == SkipSource::attention ? lt.post_attention : *prev).row(n);
                double *o = out.row(n);
                for (std::size_t j = 0; j < d; ++j) o[j] = skip[j] + hidden[j];
            }
            lt.post_mlp.push_back(std::move(out));
            prev = &lt.post_mlp.back();
        }
        X = *prev;
        trace.layers.push_back(std::move(lt));
    }

    Vec xT(X.row(N - 1), X.row(N - 1) + d);
    trace.logits = matvec(w.wo, xT);
    for (int s = 0; s < w.S; ++s) trace.logits[s] = std::max(0.0, trace.logits[s] + w.bo[s]);
    return trace;
}

Matrix extract_attention(const ForwardTrace &trace, std::size_t layer, std::size_t head) {
    if (layer >= trace.layers.size()) throw std::out_of_range("extract_attention: layer out of range");
    const auto &L = trace.layers[layer];
    if (head >= L.attention.size()) throw std::out_of_range("extract_attention: head out of range");
    return L.attention[head];
}

std::size_t parameter_count(const TransformerWeights &w, std::size_t T) {
    std::size_t square = 0;
    for (const auto &L : w.layers) square += 3 * L.heads.size() + L.mlp.size();
    return square * w.d * w.d + static_cast<std::size_t>(w.S) * w.d + T * w.d;
}

std::size_t stored_scalar_count(const TransformerWeights &w) {
    std::size_t n = w.embedding.data.size() + w.wo.data.size() + w.bo.size();
    for (const auto &L : w.layers) {
        for (const auto &H : L.heads) {
            n += H.wq.data.size() + H.wk.data.size() + H.wv.data.size();
            for (const auto &p : H.pos_k) n += p.size();
            for (const auto &p : H.pos_v) n += p.size();
            if (H.qk_layer_norm) n += 1;
        }
        for (const auto &M : L.mlp) n += M.w.data.size() + M.b.size();
    }
    return n;
}

namespace {

using ojson = nlohmann::ordered_json;

ojson matrix_json(const Matrix &m) {
    ojson j;
    j["shape"] = {m.rows, m.cols};
    j["entries"] = m.data;
    return j;
}

Matrix matrix_from(const nlohmann::json &j) {
    auto shape = j.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2) throw std::invalid_argument("matrix shape must have two entries");
    Matrix m(shape[0], shape[1]);
    m.data = j.at("entries").get<std::vector<double>>();
    if (m.data.size() != m.rows * m.cols) throw std::invalid_argument("matrix entry count does not match shape");
    return m;
}

ojson table_json(const std::vector<Vec> &table) {
    // zero rows are omitted; offsets are explicit
    ojson rows = ojson::object();
    for (std::size_t o = 0; o < table.size(); ++o)
        if (std::any_of(table[o].begin(), table[o].end(), [](double v) { return v != 0.0; }))
            rows[std::to_string(o)] = table[o];
    return rows;
}

std::vector<Vec> table_from(const nlohmann::json &j, std::size_t size, std::size_t d) {
    std::vector<Vec> table(size, Vec(d, 0.0));
    for (auto &[key, val] : j.items()) {
        std::size_t o = std::stoul(key);
        if (o >= size) throw std::invalid_argument("positional offset beyond t_max");
        table[o] = val.get<Vec>();
    }
    return table;
}

} // namespace

std::string weights_to_json(const TransformerWeights &w) {
    ojson j;
    j["variant"] = w.info.family + "/" + w.info.variant;
    j["S"] = w.S;
    j["d"] = w.d;
    j["t_max"] = w.t_max;
    j["k"] = w.info.k;
    j["kappa_pos"] = w.info.kappa_pos;
    j["kappa_sim"] = w.info.kappa_sim;
    j["embedding"] = matrix_json(w.embedding);
    ojson layers = ojson::array();
    for (const auto &L : w.layers) {
        ojson lj;
        ojson heads = ojson::array();
        for (const auto &H : L.heads) {
            ojson hj;
            hj["W_Q"] = matrix_json(H.wq);
            hj["W_K"] = matrix_json(H.wk);
            hj["W_V"] = matrix_json(H.wv);
            hj["p_K"] = table_json(H.pos_k);
            hj["p_V"] = table_json(H.pos_v);
            hj["qk_layer_norm"] = H.qk_layer_norm;
            hj["logit_scale"] = H.logit_scale;
            heads.push_back(hj);
        }
        lj["heads"] = heads;
        ojson mlp = ojson::array();
        for (const auto &M : L.mlp) {
            ojson mj;
            mj["W"] = matrix_json(M.w);
            mj["b"] = M.b;
            mj["layer_norm"] = M.layer_norm;
            mj["skip"] = M.skip == SkipSource::attention ? "attention" : "previous";
            mlp.push_back(mj);
        }
        lj["mlp"] = mlp;
        layers.push_back(lj);
    }
    j["layers"] = layers;
    j["W_o"] = matrix_json(w.wo);
    j["b_o"] = w.bo;
    return j.dump(1);
}

TransformerWeights weights_from_json(const std::string &text) {
    auto j = nlohmann::json::parse(text);
    TransformerWeights w;
    std::string tag = j.at("variant").get<std::string>();
    auto slash = tag.find('/');
    w.info.family = tag.substr(0, slash);
    w.info.variant = slash == std::string::npos ? "" : tag.substr(slash + 1);
    w.S = j.at("S").get<int>();
    w.d = j.at("d").get<std::size_t>();
    w.t_max = j.at("t_max").get<std::size_t>();
    w.info.k = j.at("k").get<int>();
    w.info.kappa_pos = j.at("kappa_pos").get<double>();
    w.info.kappa_sim = j.at("kappa_sim").get<double>();
    w.embedding = matrix_from(j.at("embedding"));
    for (const auto &lj : j.at("layers")) {
        LayerWeights L;
        for (const auto &hj : lj.at("heads")) {
            Head H;
            H.wq = matrix_from(hj.at("W_Q"));
            H.wk = matrix_from(hj.at("W_K"));
            H.wv = matrix_from(hj.at("W_V"));
            H.pos_k = table_from(hj.at("p_K"), w.t_max + 1, w.d);
            H.pos_v = table_from(hj.at("p_V"), w.t_max + 1, w.d);
            H.qk_layer_norm = hj.at("qk_layer_norm").get<bool>();
            H.logit_scale = hj.at("logit_scale").get<double>();
            L.heads.push_back(std::move(H));
        }
        for (const auto &mj : lj.at("mlp")) {
            MlpSublayer M;
            M.w = matrix_from(mj.at("W"));
            M.b = mj.at("b").get<Vec>();
            M.layer_norm = mj.at("layer_norm").get<bool>();
            std::string skip = mj.at("skip").get<std::string>();
            if (skip != "attention" && skip != "previous") throw std::invalid_argument("unknown skip source: " + skip);
            M.skip = skip == "attention" ? SkipSource::attention : SkipSource::previous;
            L.mlp.push_back(std::move(M));
        }
        w.layers.push_back(std::move(L));
    }
    w.wo = matrix_from(j.at("W_o"));
    w.bo = j.at("b_o").get<Vec>();
    w.validate();
    return w;
}

std::string matrix_to_csv(const Matrix &m) {
    std::ostringstream os;
    os.imbue(std::locale::classic());
    os << std::setprecision(17);
    for (std::size_t r = 0; r < m.rows; ++r) {
        for (std::size_t c = 0; c < m.cols; ++c) os << (c ? "," : "") << m(r, c);
        os << '\n';
    }
    return os.str();
}

} // namespace icl
