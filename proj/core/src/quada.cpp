#include "spanlab/quada.hpp"

#include <cmath>

#include "spanlab/model.hpp"

namespace spanlab {

namespace {

double act_apply(BottleneckMlp::Activation a, double x) {
    if (a == BottleneckMlp::Activation::Linear) return x;
    return 0.5 * x * (1.0 + std::erf(x * 0.70710678118654752440));
}

}  // namespace

std::vector<double> BottleneckMlp::apply_vec(std::span<const double> x) const {
    const int dd = d(), rr = r();
    const auto& dn = down.data();
    const auto& upd = up.data();
    std::vector<double> hidden(static_cast<std::size_t>(rr), 0.0);
    for (int i = 0; i < dd; ++i) {
        const double xv = x[static_cast<std::size_t>(i)];
        const double* row = dn.data() + static_cast<std::size_t>(i) * rr;
        for (int j = 0; j < rr; ++j) hidden[static_cast<std::size_t>(j)] += xv * row[j];
    }
    for (auto& h : hidden) h = act_apply(act, h);
    std::vector<double> out(static_cast<std::size_t>(dd), 0.0);
    for (int i = 0; i < rr; ++i) {
        const double hv = hidden[static_cast<std::size_t>(i)];
        const double* row = upd.data() + static_cast<std::size_t>(i) * dd;
        for (int j = 0; j < dd; ++j) out[static_cast<std::size_t>(j)] += hv * row[j];
    }
    return out;
}

Tensor BottleneckMlp::apply(const Tensor& x) const {
    Tensor h = matmul(x, down);
    if (act == Activation::Gelu) h = gelu(h);
    return matmul(h, up);
}

QuadaParams QuadaParams::init(const ModelConfig& cfg, int r, std::uint64_t seed,
                              BottleneckMlp::Activation act) {
    if (r < 1) throw UsageError("adapter bottleneck width must be >= 1");
    QuadaParams p;
    p.bottleneck_width = r;
    const double stddev = 1.0 / std::sqrt(static_cast<double>(cfg.d_head));
    Rng rng(seed);
    p.query.resize(static_cast<std::size_t>(cfg.n_layers));
    p.value.resize(static_cast<std::size_t>(cfg.n_layers));
    for (int l = 0; l < cfg.n_layers; ++l) {
        for (int h = 0; h < cfg.n_heads; ++h) {
            for (auto* side : {&p.query, &p.value}) {
                BottleneckMlp m;
                m.down = Tensor::randn({cfg.d_head, r}, rng, stddev);
                m.up = Tensor::zeros({r, cfg.d_head});
                m.act = act;
                (*side)[static_cast<std::size_t>(l)].push_back(std::move(m));
            }
        }
    }
    return p;
}

QuadaParams QuadaParams::zeros(const ModelConfig& cfg, int r) {
    QuadaParams p;
    p.bottleneck_width = r;
    p.query.resize(static_cast<std::size_t>(cfg.n_layers));
    p.value.resize(static_cast<std::size_t>(cfg.n_layers));
    for (int l = 0; l < cfg.n_layers; ++l) {
        for (int h = 0; h < cfg.n_heads; ++h) {
            for (auto* side : {&p.query, &p.value}) {
                BottleneckMlp m;
                m.down = Tensor::zeros({cfg.d_head, r});
                m.up = Tensor::zeros({r, cfg.d_head});
                (*side)[static_cast<std::size_t>(l)].push_back(std::move(m));
            }
        }
    }
    return p;
}

std::vector<Tensor> QuadaParams::all_params() const {
    std::vector<Tensor> out;
    for (std::size_t l = 0; l < query.size(); ++l) {
        for (std::size_t h = 0; h < query[l].size(); ++h) {
            out.push_back(query[l][h].down);
            out.push_back(query[l][h].up);
            out.push_back(value[l][h].down);
            out.push_back(value[l][h].up);
        }
    }
    return out;
}

std::vector<Tensor> QuadaParams::query_params() const {
    std::vector<Tensor> out;
    for (const auto& layer : query)
        for (const auto& m : layer) {
            out.push_back(m.down);
            out.push_back(m.up);
        }
    return out;
}

std::vector<Tensor> QuadaParams::value_params() const {
    std::vector<Tensor> out;
    for (const auto& layer : value)
        for (const auto& m : layer) {
            out.push_back(m.down);
            out.push_back(m.up);
        }
    return out;
}

std::size_t QuadaParams::extra_param_count() const {
    std::size_t n = 0;
    for (const auto& layer : query)
        for (const auto& m : layer) n += m.param_count();
    for (const auto& layer : value)
        for (const auto& m : layer) n += m.param_count();
    return n;
}

void QuadaParams::set_requires_grad(bool query_side, bool value_side) {
    for (auto& layer : query)
        for (auto& m : layer) {
            m.down.set_requires_grad(query_side);
            m.up.set_requires_grad(query_side);
        }
    for (auto& layer : value)
        for (auto& m : layer) {
            m.down.set_requires_grad(value_side);
            m.up.set_requires_grad(value_side);
        }
}

std::size_t quada_param_count(const ModelConfig& cfg, int r) {
    if (r <= 0) return 0;
    const std::size_t per_head = 2ull * cfg.d_head * r + 2ull * r * cfg.d_head;
    return static_cast<std::size_t>(cfg.n_layers) * static_cast<std::size_t>(cfg.n_heads) *
           per_head;
}

double quada_param_fraction(const ModelConfig& cfg, int r) {
    return static_cast<double>(quada_param_count(cfg, r)) /
           static_cast<double>(backbone_param_count(cfg));
}

ModulationContext ModulationContext::make(const SpanSet& spans, QuestionSpan q, int total_len) {
    if (q.start < spans.history_len)
        throw UsageError("question start " + std::to_string(q.start) +
                         " precedes end of history " + std::to_string(spans.history_len));
    if (q.start >= total_len)
        throw UsageError("question start " + std::to_string(q.start) +
                         " outside sequence of length " + std::to_string(total_len));
    ModulationContext ctx;
    ctx.quote_mask = indicator_mask(spans, total_len);
    ctx.q_mask = question_mask(q, total_len);
    ctx.question_start = q.start;
    return ctx;
}

void ModulationContext::extend_to(int total_len) {
    const auto n = static_cast<std::size_t>(total_len);
    while (quote_mask.size() < n) quote_mask.push_back(false);
    while (q_mask.size() < n)
        q_mask.push_back(static_cast<int>(q_mask.size()) >= question_start);
}

void ModulationContext::check_against(int T) const {
    if (static_cast<int>(quote_mask.size()) != T || static_cast<int>(q_mask.size()) != T)
        throw UsageError("modulation masks of length " + std::to_string(quote_mask.size()) +
                         "/" + std::to_string(q_mask.size()) + " do not cover sequence length " +
                         std::to_string(T));
    for (int i = 0; i < T; ++i)
        if (quote_mask[static_cast<std::size_t>(i)] && q_mask[static_cast<std::size_t>(i)])
            throw UsageError("position " + std::to_string(i) +
                             " is both quoted and inside the question");
}

std::vector<double> query_bias(const BottleneckMlp& eq, std::span<const double> q_i,
                               bool i_in_question) {
    if (!i_in_question) return std::vector<double>(q_i.size(), 0.0);
    return eq.apply_vec(q_i);
}

std::vector<double> modulated_scores(std::span<const double> q_i, const double* keys, int T,
                                     int d, std::span<const double> b_q,
                                     const std::vector<bool>& quote_mask) {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<double> scores(static_cast<std::size_t>(T));
    for (int j = 0; j < T; ++j) {
        const double* k = keys + static_cast<std::size_t>(j) * d;
        double s = 0.0;
        for (int p = 0; p < d; ++p) s += q_i[static_cast<std::size_t>(p)] * k[p];
        if (j < static_cast<int>(quote_mask.size()) && quote_mask[static_cast<std::size_t>(j)]) {
            double b = 0.0;
            for (int p = 0; p < d; ++p) b += b_q[static_cast<std::size_t>(p)] * k[p];
            s += b;
        }
        scores[static_cast<std::size_t>(j)] = s * inv_sqrt_d;
    }
    return scores;
}

std::vector<double> enrich_values(const BottleneckMlp& ev, const double* values, int T, int d,
                                  const std::vector<bool>& quote_mask) {
    std::vector<double> out(static_cast<std::size_t>(T) * d);
    std::copy_n(values, out.size(), out.data());
    for (int j = 0; j < T && j < static_cast<int>(quote_mask.size()); ++j) {
        if (!quote_mask[static_cast<std::size_t>(j)]) continue;
        const double* v = values + static_cast<std::size_t>(j) * d;
        std::vector<double> delta = ev.apply_vec(std::span<const double>(v, static_cast<std::size_t>(d)));
        double* o = out.data() + static_cast<std::size_t>(j) * d;
        for (int p = 0; p < d; ++p) o[p] += delta[static_cast<std::size_t>(p)];
    }
    return out;
}

std::vector<double> enrichment_delta(const BottleneckMlp& ev, const double* values, int T, int d,
                                     const std::vector<bool>& quote_mask) {
    std::vector<double> out(static_cast<std::size_t>(T) * d, 0.0);
    for (int j = 0; j < T && j < static_cast<int>(quote_mask.size()); ++j) {
        if (!quote_mask[static_cast<std::size_t>(j)]) continue;
        const double* v = values + static_cast<std::size_t>(j) * d;
        std::vector<double> delta =
            ev.apply_vec(std::span<const double>(v, static_cast<std::size_t>(d)));
        std::copy_n(delta.data(), d, out.data() + static_cast<std::size_t>(j) * d);
    }
    return out;
}

std::vector<double> head_attention_output(std::span<const double> attn_weights,
                                          const double* values, const double* enriched_delta,
                                          int T, int d, bool i_in_question) {
    std::vector<double> out(static_cast<std::size_t>(d), 0.0);
    for (int j = 0; j < T; ++j) {
        const double a = attn_weights[static_cast<std::size_t>(j)];
        if (a == 0.0) continue;
        const double* v = values + static_cast<std::size_t>(j) * d;
        for (int p = 0; p < d; ++p) out[static_cast<std::size_t>(p)] += a * v[p];
    }
    if (i_in_question && enriched_delta != nullptr) {
        for (int j = 0; j < T; ++j) {
            const double a = attn_weights[static_cast<std::size_t>(j)];
            if (a == 0.0) continue;
            const double* dd = enriched_delta + static_cast<std::size_t>(j) * d;
            for (int p = 0; p < d; ++p) out[static_cast<std::size_t>(p)] += a * dd[p];
        }
    }
    return out;
}

}  // namespace spanlab
