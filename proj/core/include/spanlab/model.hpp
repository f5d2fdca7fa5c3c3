#pragma once

#include <cstdint>
#include <vector>

#include "spanlab/quada.hpp"
#include "spanlab/tensor.hpp"

namespace spanlab {

struct SteeringConfig;  // baselines.hpp
struct ConcatAux;       // baselines.hpp

enum class PositionalScheme : std::uint32_t { LearnedAbsolute = 0 };

struct ModelConfig {
    int vocab_size = 96;
    int d_model = 64;
    int n_heads = 4;
    int d_head = 16;
    int n_layers = 2;
    int max_seq_len = 192;
    int ff_width = 256;
    PositionalScheme positional = PositionalScheme::LearnedAbsolute;
    double ln_eps = 1e-5;

    void validate() const;  // d_model == n_heads * d_head, extents >= 1
};

std::size_t backbone_param_count(const ModelConfig& cfg);

struct LayerWeights {
    Tensor wq, wk, wv, wo;              // [D x D]
    Tensor ln1_gain, ln1_bias;          // [D]
    Tensor ln2_gain, ln2_bias;          // [D]
    Tensor ff_in, ff_out;               // [D x F], [F x D]
};

// Frozen-able decoder weights. The token embedding doubles as the output
// head (weight tying).
struct BackboneWeights {
    ModelConfig config;
    Tensor tok_emb;  // [V x D]
    Tensor pos_emb;  // [max_seq_len x D]
    std::vector<LayerWeights> layers;
    Tensor lnf_gain, lnf_bias;

    static BackboneWeights init(const ModelConfig& cfg, std::uint64_t seed);

    std::vector<Tensor> all_params() const;  // fixed traversal order
    std::size_t param_count() const;

    // Frozen weights take no gradients; a training step must leave every
    // entry bit-identical.
    void set_frozen(bool frozen);
    bool frozen() const { return frozen_; }

private:
    bool frozen_ = false;
};

// Captured post-softmax attention, one [T x T] row-major matrix per
// (layer, head). Filled during forward_full when requested.
struct AttentionCapture {
    int T = 0;
    std::vector<std::vector<double>> maps;  // indexed layer * n_heads + head
};

struct ForwardOptions {
    const ModulationContext* ctx = nullptr;
    const QuadaParams* quada = nullptr;
    const SteeringConfig* steering = nullptr;
    const ConcatAux* concat_aux = nullptr;
    const std::vector<bool>* duplicate_mask = nullptr;  // concat_aux positions
    AttentionCapture* capture = nullptr;
};

// Causal logits [T x V] for the whole sequence. Differentiable; record on a
// tape to train. With absent (or zero-initialized) modulation the result is
// the plain transformer.
Tensor forward_full(const BackboneWeights& w, const std::vector<int>& tokens,
                    const ForwardOptions& opts = {});

// scores_j = q . k_j / sqrt(d), keys row-major [T x d]. The causal cut is the
// caller's job (pass only keys with j <= i).
std::vector<double> attention_scores(std::span<const double> q, const double* keys, int T, int d);

// Incremental decoding state. Keys/values are cached unenriched; value
// enrichment is applied on read.
struct KVCache {
    struct Head {
        std::vector<double> keys;    // [len x d_head]
        std::vector<double> values;  // [len x d_head]
    };
    std::vector<std::vector<Head>> layers;  // [layer][head]
    int len = 0;
    int capacity = 0;
    int d_head = 0;

    explicit KVCache(const ModelConfig& cfg);
};

// Appends next_token at position cache.len and returns the logits [V] for the
// new position. Matches column T-1 of forward_full on the extended sequence.
std::vector<double> decode_incremental(const BackboneWeights& w, KVCache& cache, int next_token,
                                       const ForwardOptions& opts = {});

// Argmax decoding; ties break toward the lowest token id. Stops after
// emitting stop_token or after max_new tokens.
std::vector<int> generate_greedy(const BackboneWeights& w, const std::vector<int>& prompt,
                                 const ForwardOptions& opts, int max_new, int stop_token);

// Mean log-likelihood of `continuation` given `prompt` under the model
// (teacher forcing), used by head profiling and evaluation.
double sequence_log_likelihood(const BackboneWeights& w, const std::vector<int>& prompt,
                               const std::vector<int>& continuation, const ForwardOptions& opts);

}  // namespace spanlab
