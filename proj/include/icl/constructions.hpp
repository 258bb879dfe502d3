#pragma once

#include "icl/transformer.hpp"

#include <string>
#include <vector>

namespace icl {

enum class Family { two_head, single_head };
enum class Variant { mlp_only, ln_in_attention };

std::string to_string(Family f);
std::string to_string(Variant v);
Family family_from_string(const std::string &s);
Variant variant_from_string(const std::string &s);

struct ConstructionSpec {
    int S = 2;
    int k = 1;
    double kappa_pos = 0.0; // first-layer positional sharpness
    double kappa_sim = 0.0; // second-layer similarity scale
    std::size_t t_max = 0;
    Family family = Family::single_head;
    Variant variant = Variant::mlp_only;

    std::size_t dim() const { return 6 * static_cast<std::size_t>(S) + 3; }
    void validate() const;
};

double default_kappa_pos(int k);
double default_kappa_sim(int k, std::size_t T);
// Large enough that the worst cosine gap 3^{-2k}/2 costs more than log(T+1) + 10 nats.
double large_kappa_sim(int k, std::size_t T);

ConstructionSpec make_spec(int S, int k, std::size_t T, Family f, Variant v);

// Embedding coordinates of the constructions.
struct Layout {
    std::size_t S;
    std::size_t z() const { return 0; }
    std::size_t e(std::size_t s) const { return 3 + s; }
    std::size_t b1(std::size_t s) const { return 3 + S + s; }
    std::size_t b2(std::size_t s) const { return 3 + 2 * S + s; }
    std::size_t b3(std::size_t s) const { return 3 + 3 * S + s; }
    std::size_t b4(std::size_t s) const { return 3 + 4 * S + s; }
    std::size_t b5(std::size_t s) const { return 3 + 5 * S + s; }
};

struct ReferenceQuantities {
    double c_attn = 0.0;
    double z_gate = 0.0;
    double margin = 0.0;
    double mlp_bias = 0.0;
};

ReferenceQuantities reference_quantities(int k);

TransformerWeights build(const ConstructionSpec &spec);

// Closed-form first-layer row at position n, indexed by offset 0..n.
Vec expected_first_layer_row(int k, std::size_t n);
// Same for the two-head u-head: offsets 0..k-1 with weights 3^i.
Vec expected_u_head_row(int k, std::size_t n);
// Full N x N map indexed (position, attended position).
Matrix expected_first_layer_map(int k, std::size_t N, bool u_head = false);

struct ContextVectors {
    std::vector<Vec> u;
    std::vector<Vec> v;
    Vec z;
};

ContextVectors context_vectors(const std::vector<int> &symbols, int S, int k);

// Minimum of || v/|v| - u/|u| || over all pairs of distinct length-k contexts.
double exhaustive_margin(int S, int k);

} // namespace icl
