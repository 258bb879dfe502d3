#pragma once

#include <cstddef>
#include <limits>
#include <vector>

namespace icl {

using Vec = std::vector<double>;

inline constexpr double kMasked = -std::numeric_limits<double>::infinity();

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data; // row-major

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double &operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    const double *row(std::size_t r) const { return data.data() + r * cols; }
    double *row(std::size_t r) { return data.data() + r * cols; }

    static Matrix identity(std::size_t n);
};

// Entries equal to kMasked get exactly zero weight.
Vec softmax(const Vec &logits);

// v / ||v||_2; throws on a zero vector.
Vec modified_layer_norm(const Vec &v);

Vec relu(Vec v);

Vec matvec(const Matrix &m, const Vec &x);
void matvec_into(const Matrix &m, const double *x, double *out);

double dot(const Vec &a, const Vec &b);
double norm2(const Vec &v);
double sup_distance(const Vec &a, const Vec &b);

} // namespace icl
