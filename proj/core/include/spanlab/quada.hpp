#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "spanlab/span.hpp"
#include "spanlab/tensor.hpp"

namespace spanlab {

struct ModelConfig;

// Two-layer bottleneck map d -> r -> d, bias-free. With a zero up-projection
// the map is identically zero, so freshly attached adapters leave the model
// untouched.
struct BottleneckMlp {
    enum class Activation { Linear, Gelu };

    Tensor down;  // [d x r]
    Tensor up;    // [r x d]
    Activation act = Activation::Linear;

    int d() const { return down.dim(0); }
    int r() const { return down.dim(1); }
    std::size_t param_count() const { return down.numel() + up.numel(); }

    // y = up * act(down * x) for a single vector.
    std::vector<double> apply_vec(std::span<const double> x) const;
    // Batched tape form, rows of x mapped independently.
    Tensor apply(const Tensor& x) const;
};

// One (E_q, E_v) pair per layer and head.
struct QuadaParams {
    int bottleneck_width = 0;
    std::vector<std::vector<BottleneckMlp>> query;  // [layer][head]
    std::vector<std::vector<BottleneckMlp>> value;  // [layer][head]

    // Down-projections from a scaled normal (stddev 1/sqrt(d)), up-projections
    // zero: the initial model is exactly the backbone.
    static QuadaParams init(const ModelConfig& cfg, int r, std::uint64_t seed,
                            BottleneckMlp::Activation act = BottleneckMlp::Activation::Linear);
    // All-zero maps, as produced when a checkpoint carries no adapter section.
    static QuadaParams zeros(const ModelConfig& cfg, int r);

    bool empty() const { return query.empty(); }
    std::vector<Tensor> all_params() const;        // fixed traversal order
    std::vector<Tensor> query_params() const;
    std::vector<Tensor> value_params() const;
    std::size_t extra_param_count() const;
    void set_requires_grad(bool query_side, bool value_side);
};

// Extra trainable weights: L * h * (2dr + 2rd).
std::size_t quada_param_count(const ModelConfig& cfg, int r);
// Same, as a fraction of the backbone parameter count.
double quada_param_fraction(const ModelConfig& cfg, int r);

// Bottleneck width used at production scale; the desk-scale default lives in
// the run configuration.
inline constexpr int kFullScaleBottleneckWidth = 256;

// Per-position masks steering the modulation. Quotes address history only;
// question positions start at s_q and include generated tokens.
struct ModulationContext {
    std::vector<bool> quote_mask;
    std::vector<bool> q_mask;
    int question_start = 0;
    bool enabled = true;

    static ModulationContext make(const SpanSet& spans, QuestionSpan q, int total_len);

    bool quoted(int j) const {
        return j >= 0 && j < static_cast<int>(quote_mask.size()) && quote_mask[j];
    }
    bool in_question(int i) const { return enabled && i >= question_start; }
    // Grows both masks to cover appended (generated) positions.
    void extend_to(int total_len);
    // Lengths agree with T; quote and question never overlap.
    void check_against(int T) const;
};

// ---- per-head operations (single query position) ---------------------------
// These are the inference-path building blocks; the batched training path in
// the backbone follows the same algebra through tape ops.

// E_q(q_i) when the position is in the question, zero vector otherwise.
std::vector<double> query_bias(const BottleneckMlp& eq, std::span<const double> q_i,
                               bool i_in_question);

// scores_j = (q_i . k_j + 1[j quoted] * b_q . k_j) / sqrt(d); keys row-major [T x d].
std::vector<double> modulated_scores(std::span<const double> q_i, const double* keys, int T,
                                     int d, std::span<const double> b_q,
                                     const std::vector<bool>& quote_mask);

// Rows with mask true become v_j + E_v(v_j); input rows are not mutated.
std::vector<double> enrich_values(const BottleneckMlp& ev, const double* values, int T, int d,
                                  const std::vector<bool>& quote_mask);

// Just the additive part: row j is 1[j quoted] * E_v(v_j).
std::vector<double> enrichment_delta(const BottleneckMlp& ev, const double* values, int T, int d,
                                     const std::vector<bool>& quote_mask);

// sum_j a_j v_j + [i in question] sum_j a_j delta_j, delta = 1[j quoted] E_v(v_j).
std::vector<double> head_attention_output(std::span<const double> attn_weights,
                                          const double* values, const double* enriched_delta,
                                          int T, int d, bool i_in_question);

}  // namespace spanlab
