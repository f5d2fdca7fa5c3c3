#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "spanlab/quada.hpp"
#include "spanlab/span.hpp"
#include "spanlab/tensor.hpp"
#include "spanlab/vocab.hpp"

namespace spanlab {

struct BackboneWeights;
struct ModelConfig;

// The two boundary tokens wrapped around quoted spans. Their ids live
// outside the generator's base vocabulary; in the trainable variant only
// their two embedding rows receive gradient.
struct MarkerVocab {
    int open_id = Vocab::kOpenEmph;
    int close_id = Vocab::kCloseEmph;
    bool trainable = false;
};

// PASTA-style head scaling: attention weights of quoted positions on the
// selected heads are multiplied by alpha post-softmax, then renormalized.
struct SteeringConfig {
    std::vector<std::pair<int, int>> heads;  // (layer, head)
    double alpha = 5.0;
    bool renormalize = true;

    bool selected(int layer, int head) const;
    void validate(const ModelConfig& cfg) const;
};

// Auxiliary per-head bottlenecks for the trainable concat variant: tokens in
// the duplicated span block gain aux(v) on their value projection.
struct ConcatAux {
    std::vector<std::vector<BottleneckMlp>> aux;  // [layer][head]

    static ConcatAux init(const ModelConfig& cfg, int r, std::uint64_t seed);
    bool empty() const { return aux.empty(); }
    std::vector<Tensor> all_params() const;
    void set_requires_grad(bool rg);
};

struct ConcatResult {
    std::vector<int> tokens;            // history ++ duplicated spans ++ question
    QuestionSpan question;              // points at the first duplicated token
    int overhead = 0;                   // sum of span lengths
    std::vector<bool> duplicate_mask;   // true on the duplicated block
};

// Prepends the verbatim quoted content to the question block. The duplicate
// belongs to the question: s_q' is the first duplicated token.
ConcatResult concat_repeat_transform(const std::vector<int>& history, const SpanSet& spans,
                                     const std::vector<int>& question);

struct MarkerResult {
    std::vector<int> tokens;  // history with boundary tokens inserted
    SpanSet remapped;         // span content offsets in the new coordinates
};

// Wraps each span in open/close markers, remapping offsets for earlier
// insertions. Length grows by 2 * |spans|.
MarkerResult marker_insert_transform(const std::vector<int>& history, const SpanSet& spans,
                                     const MarkerVocab& markers = {});

// Inverse of marker_insert_transform: drops the marker tokens.
std::vector<int> strip_markers(const std::vector<int>& tokens, const MarkerVocab& markers = {});

// One attention row. On a selected head, weights of quoted positions are
// multiplied by alpha and the row is renormalized; other heads pass through.
std::vector<double> apply_static_steering(std::span<const double> attn_weights,
                                          const std::vector<bool>& quote_mask,
                                          const SteeringConfig& cfg, int layer, int head);

// Profiling item for head reranking: gold continuation likelihood is measured
// with steering enabled on one head at a time.
struct ProfilingItem {
    std::vector<int> prompt;
    std::vector<int> gold;
    ModulationContext ctx;
};

struct HeadGain {
    int layer = 0;
    int head = 0;
    double gain = 0.0;
};

// Ranks heads by mean gold log-likelihood gain when steering only that head,
// returning the top_k as a SteeringConfig. Ties break by (layer, head).
SteeringConfig rerank_heads(const BackboneWeights& model,
                            const std::vector<ProfilingItem>& profiling_set,
                            double candidate_alpha, int top_k,
                            std::vector<HeadGain>* gains_out = nullptr);

// Value rows in the duplicate block gain aux(v); used by the backbone hook
// and directly testable.
Tensor concat_aux_values(const Tensor& v_head, const BottleneckMlp& aux,
                         const std::vector<double>& duplicate_mask);

}  // namespace spanlab
