#include "icl/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace icl {

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Vec softmax(const Vec &logits) {
    double mx = kMasked;
    for (double v : logits) mx = std::max(mx, v);
    if (mx == kMasked) throw std::invalid_argument("softmax: empty support");

    Vec out(logits.size(), 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (logits[i] == kMasked) continue;
        out[i] = std::exp(logits[i] - mx);
        total += out[i];
    }
    for (double &v : out) v /= total;
    return out;
}

Vec modified_layer_norm(const Vec &v) {
    double n = norm2(v);
    if (!(n > 0.0)) throw std::invalid_argument("modified_layer_norm: zero-norm input");
    Vec out(v);
    for (double &x : out) x /= n;
    return out;
}

Vec relu(Vec v) {
    for (double &x : v) x = x > 0.0 ? x : 0.0;
    return v;
}

void matvec_into(const Matrix &m, const double *x, double *out) {
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double *w = m.row(r);
        double acc = 0.0;
        for (std::size_t c = 0; c < m.cols; ++c) acc += w[c] * x[c];
        out[r] = acc;
    }
}

Vec matvec(const Matrix &m, const Vec &x) {
    if (x.size() != m.cols) throw std::invalid_argument("matvec: shape mismatch");
    Vec out(m.rows);
    matvec_into(m, x.data(), out.data());
    return out;
}

double dot(const Vec &a, const Vec &b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double norm2(const Vec &v) {
    // scaled to avoid overflow on large logits
    double scale = 0.0;
    for (double x : v) scale = std::max(scale, std::abs(x));
    if (scale == 0.0) return 0.0;
    double acc = 0.0;
    for (double x : v) acc += (x / scale) * (x / scale);
    return scale * std::sqrt(acc);
}

double sup_distance(const Vec &a, const Vec &b) {
    if (a.size() != b.size()) throw std::invalid_argument("sup_distance: size mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace icl
