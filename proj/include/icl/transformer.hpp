#pragma once

#include "icl/numerics.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace icl {

struct Head {
    Matrix wq, wk, wv;
    std::vector<Vec> pos_k; // indexed by offset n - i
    std::vector<Vec> pos_v;
    // Apply modified LN to query and key vectors; logits are then scaled by logit_scale.
    bool qk_layer_norm = false;
    double logit_scale = 1.0;
};

// Which stream is added back after an MLP sublayer.
enum class SkipSource { attention, previous };

struct MlpSublayer {
    Matrix w;
    Vec b;
    bool layer_norm = true;
    SkipSource skip = SkipSource::previous;
};

struct LayerWeights {
    std::vector<Head> heads;
    std::vector<MlpSublayer> mlp;
};

struct ConstructionInfo {
    int k = 0;
    double kappa_pos = 0.0;
    double kappa_sim = 0.0;
    std::string family;
    std::string variant;
};

struct TransformerWeights {
    int S = 0;
    std::size_t d = 0;
    std::size_t t_max = 0; // positional tables cover offsets 0..t_max
    Matrix embedding;      // d x S, column s is Emb(s)
    std::vector<LayerWeights> layers;
    Matrix wo; // S x d
    Vec bo;
    ConstructionInfo info;

    void validate() const;
};

enum class Positions { all, last };

struct LayerTrace {
    std::vector<Matrix> attention; // per head, (T+1) x (T+1)
    Matrix post_attention;         // (T+1) x d
    std::vector<Matrix> post_mlp;  // one per sublayer
    std::size_t first_row = 0;     // rows before this were not computed
};

struct ForwardTrace {
    std::vector<LayerTrace> layers;
    Vec logits;
    std::size_t length = 0;

    const Matrix &output() const;
};

ForwardTrace forward(const TransformerWeights &weights, const std::vector<int> &symbols,
                     Positions positions = Positions::all);

Matrix extract_attention(const ForwardTrace &trace, std::size_t layer, std::size_t head);

// d x d matrices + embedding table + key positional table of the first layer
// (T offsets).
std::size_t parameter_count(const TransformerWeights &weights, std::size_t T);
// Every stored scalar, including zero positional rows, biases and the head.
std::size_t stored_scalar_count(const TransformerWeights &weights);

std::string weights_to_json(const TransformerWeights &weights);
TransformerWeights weights_from_json(const std::string &text);

std::string matrix_to_csv(const Matrix &m);

} // namespace icl
