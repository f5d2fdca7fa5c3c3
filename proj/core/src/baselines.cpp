#include "spanlab/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "spanlab/model.hpp"

namespace spanlab {

bool SteeringConfig::selected(int layer, int head) const {
    for (const auto& [l, h] : heads)
        if (l == layer && h == head) return true;
    return false;
}

void SteeringConfig::validate(const ModelConfig& cfg) const {
    if (heads.empty()) throw UsageError("steering config selects no heads");
    if (!std::isfinite(alpha)) throw UsageError("steering alpha must be finite");
    for (const auto& [l, h] : heads)
        if (l < 0 || l >= cfg.n_layers || h < 0 || h >= cfg.n_heads)
            throw UsageError("steering head (" + std::to_string(l) + "," + std::to_string(h) +
                             ") outside model");
}

ConcatAux ConcatAux::init(const ModelConfig& cfg, int r, std::uint64_t seed) {
    ConcatAux a;
    Rng rng(seed);
    const double stddev = 1.0 / std::sqrt(static_cast<double>(cfg.d_head));
    a.aux.resize(static_cast<std::size_t>(cfg.n_layers));
    for (int l = 0; l < cfg.n_layers; ++l) {
        for (int h = 0; h < cfg.n_heads; ++h) {
            BottleneckMlp m;
            m.down = Tensor::randn({cfg.d_head, r}, rng, stddev);
            m.up = Tensor::zeros({r, cfg.d_head});
            a.aux[static_cast<std::size_t>(l)].push_back(std::move(m));
        }
    }
    return a;
}

std::vector<Tensor> ConcatAux::all_params() const {
    std::vector<Tensor> out;
    for (const auto& layer : aux)
        for (const auto& m : layer) {
            out.push_back(m.down);
            out.push_back(m.up);
        }
    return out;
}

void ConcatAux::set_requires_grad(bool rg) {
    for (auto& layer : aux)
        for (auto& m : layer) {
            m.down.set_requires_grad(rg);
            m.up.set_requires_grad(rg);
        }
}

ConcatResult concat_repeat_transform(const std::vector<int>& history, const SpanSet& spans,
                                     const std::vector<int>& question) {
    if (!is_valid(spans))
        throw UsageError("concat_repeat_transform: invalid span set: " +
                         validate(spans)[0].message);
    if (spans.history_len != static_cast<int>(history.size()))
        throw UsageError("span set history length " + std::to_string(spans.history_len) +
                         " does not match history tokens " + std::to_string(history.size()));
    ConcatResult out;
    out.tokens = history;
    for (const Span& s : spans.spans) {
        out.tokens.insert(out.tokens.end(), history.begin() + s.start,
                          history.begin() + s.end + 1);
        out.overhead += s.length();
    }
    out.question.start = static_cast<int>(history.size());
    out.tokens.insert(out.tokens.end(), question.begin(), question.end());
    out.duplicate_mask.assign(out.tokens.size(), false);
    for (int j = 0; j < out.overhead; ++j)
        out.duplicate_mask[static_cast<std::size_t>(spans.history_len + j)] = true;
    return out;
}

MarkerResult marker_insert_transform(const std::vector<int>& history, const SpanSet& spans,
                                     const MarkerVocab& markers) {
    if (!is_valid(spans))
        throw UsageError("marker_insert_transform: invalid span set: " +
                         validate(spans)[0].message);
    if (spans.history_len != static_cast<int>(history.size()))
        throw UsageError("span set history length does not match history tokens");
    MarkerResult out;
    out.tokens.reserve(history.size() + 2 * spans.spans.size());
    out.remapped.spans.reserve(spans.spans.size());
    int cursor = 0;
    for (const Span& s : spans.spans) {
        out.tokens.insert(out.tokens.end(), history.begin() + cursor, history.begin() + s.start);
        out.tokens.push_back(markers.open_id);
        const int new_start = static_cast<int>(out.tokens.size());
        out.tokens.insert(out.tokens.end(), history.begin() + s.start,
                          history.begin() + s.end + 1);
        const int new_end = static_cast<int>(out.tokens.size()) - 1;
        out.tokens.push_back(markers.close_id);
        out.remapped.spans.push_back({new_start, new_end});
        cursor = s.end + 1;
    }
    out.tokens.insert(out.tokens.end(), history.begin() + cursor, history.end());
    out.remapped.history_len = static_cast<int>(out.tokens.size());
    return out;
}

std::vector<int> strip_markers(const std::vector<int>& tokens, const MarkerVocab& markers) {
    std::vector<int> out;
    out.reserve(tokens.size());
    for (int t : tokens)
        if (t != markers.open_id && t != markers.close_id) out.push_back(t);
    return out;
}

std::vector<double> apply_static_steering(std::span<const double> attn_weights,
                                          const std::vector<bool>& quote_mask,
                                          const SteeringConfig& cfg, int layer, int head) {
    std::vector<double> out(attn_weights.begin(), attn_weights.end());
    if (!cfg.selected(layer, head)) return out;
    double total = 0.0;
    for (std::size_t j = 0; j < out.size(); ++j) {
        if (j < quote_mask.size() && quote_mask[j]) out[j] *= cfg.alpha;
        total += out[j];
    }
    if (cfg.renormalize && total > 0.0) {
        const double inv = 1.0 / total;
        for (auto& v : out) v *= inv;
    }
    return out;
}

SteeringConfig rerank_heads(const BackboneWeights& model,
                            const std::vector<ProfilingItem>& profiling_set,
                            double candidate_alpha, int top_k,
                            std::vector<HeadGain>* gains_out) {
    if (profiling_set.empty()) throw UsageError("rerank_heads: empty profiling set");
    const ModelConfig& cfg = model.config;
    std::vector<double> baseline(profiling_set.size());
    for (std::size_t i = 0; i < profiling_set.size(); ++i) {
        const auto& item = profiling_set[i];
        ForwardOptions opts;
        opts.ctx = &item.ctx;
        baseline[i] = sequence_log_likelihood(model, item.prompt, item.gold, opts);
    }
    std::vector<HeadGain> gains;
    for (int l = 0; l < cfg.n_layers; ++l) {
        for (int h = 0; h < cfg.n_heads; ++h) {
            SteeringConfig single;
            single.heads = {{l, h}};
            single.alpha = candidate_alpha;
            double gain = 0.0;
            for (std::size_t i = 0; i < profiling_set.size(); ++i) {
                const auto& item = profiling_set[i];
                ForwardOptions opts;
                opts.ctx = &item.ctx;
                opts.steering = &single;
                gain += sequence_log_likelihood(model, item.prompt, item.gold, opts) -
                        baseline[i];
            }
            gains.push_back({l, h, gain / static_cast<double>(profiling_set.size())});
        }
    }
    std::stable_sort(gains.begin(), gains.end(), [](const HeadGain& a, const HeadGain& b) {
        if (a.gain != b.gain) return a.gain > b.gain;
        if (a.layer != b.layer) return a.layer < b.layer;
        return a.head < b.head;
    });
    if (gains_out != nullptr) *gains_out = gains;
    SteeringConfig out;
    out.alpha = candidate_alpha;
    const int keep = std::min<int>(top_k, static_cast<int>(gains.size()));
    for (int i = 0; i < keep; ++i) out.heads.emplace_back(gains[i].layer, gains[i].head);
    return out;
}

Tensor concat_aux_values(const Tensor& v_head, const BottleneckMlp& aux,
                         const std::vector<double>& duplicate_mask) {
    return add(v_head, row_scale(aux.apply(v_head), duplicate_mask));
}

}  // namespace spanlab
