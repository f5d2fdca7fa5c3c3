#include "spanlab/model.hpp"

#include <cmath>
#include <numeric>

#include "spanlab/baselines.hpp"

namespace spanlab {

namespace {

// y[n] += x[m] . W[m x n]
void vec_mat_acc(const double* x, const double* w, double* y, int m, int n) {
    for (int p = 0; p < m; ++p) {
        const double xv = x[p];
        const double* row = w + static_cast<std::size_t>(p) * n;
        for (int j = 0; j < n; ++j) y[j] += xv * row[j];
    }
}

void layernorm_vec(const double* x, const double* gain, const double* bias, double eps, int n,
                   double* y) {
    double mean = 0.0;
    for (int j = 0; j < n; ++j) mean += x[j];
    mean /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
        const double d = x[j] - mean;
        var += d * d;
    }
    var /= n;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < n; ++j) y[j] = gain[j] * ((x[j] - mean) * inv) + bias[j];
}

double gelu_scalar(double v) { return 0.5 * v * (1.0 + std::erf(v * 0.70710678118654752440)); }

std::vector<double> mask_to_double(const std::vector<bool>& m) {
    std::vector<double> out(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) out[i] = m[i] ? 1.0 : 0.0;
    return out;
}

void softmax_inplace(std::vector<double>& v) {
    double mx = v[0];
    for (double x : v) mx = std::max(mx, x);
    double s = 0.0;
    for (auto& x : v) {
        x = std::exp(x - mx);
        s += x;
    }
    const double inv = 1.0 / s;
    for (auto& x : v) x *= inv;
}

}  // namespace

void ModelConfig::validate() const {
    if (vocab_size < 1 || d_model < 1 || n_heads < 1 || d_head < 1 || n_layers < 1 ||
        max_seq_len < 1 || ff_width < 1)
        throw UsageError("model config has a non-positive extent");
    if (d_model != n_heads * d_head)
        throw UsageError("d_model " + std::to_string(d_model) + " != n_heads*d_head " +
                         std::to_string(n_heads * d_head));
    if (ln_eps <= 0.0) throw UsageError("layernorm epsilon must be positive");
}

std::size_t backbone_param_count(const ModelConfig& cfg) {
    const std::size_t D = static_cast<std::size_t>(cfg.d_model);
    const std::size_t F = static_cast<std::size_t>(cfg.ff_width);
    std::size_t per_layer = 4 * D * D + 4 * D + D * F + F * D;
    return static_cast<std::size_t>(cfg.vocab_size) * D +
           static_cast<std::size_t>(cfg.max_seq_len) * D +
           static_cast<std::size_t>(cfg.n_layers) * per_layer + 2 * D;
}

BackboneWeights BackboneWeights::init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    BackboneWeights w;
    w.config = cfg;
    Rng rng(seed);
    const double proj_std = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    const double ff_out_std = 1.0 / std::sqrt(static_cast<double>(cfg.ff_width));
    // Residual-branch outputs scaled down with depth.
    const double resid = 1.0 / std::sqrt(2.0 * cfg.n_layers);
    w.tok_emb = Tensor::randn({cfg.vocab_size, cfg.d_model}, rng, 0.1);
    w.pos_emb = Tensor::randn({cfg.max_seq_len, cfg.d_model}, rng, 0.1);
    for (int l = 0; l < cfg.n_layers; ++l) {
        LayerWeights lw;
        lw.wq = Tensor::randn({cfg.d_model, cfg.d_model}, rng, proj_std);
        lw.wk = Tensor::randn({cfg.d_model, cfg.d_model}, rng, proj_std);
        lw.wv = Tensor::randn({cfg.d_model, cfg.d_model}, rng, proj_std);
        lw.wo = Tensor::randn({cfg.d_model, cfg.d_model}, rng, proj_std * resid);
        lw.ln1_gain = Tensor::full({cfg.d_model}, 1.0);
        lw.ln1_bias = Tensor::zeros({cfg.d_model});
        lw.ln2_gain = Tensor::full({cfg.d_model}, 1.0);
        lw.ln2_bias = Tensor::zeros({cfg.d_model});
        lw.ff_in = Tensor::randn({cfg.d_model, cfg.ff_width}, rng, proj_std);
        lw.ff_out = Tensor::randn({cfg.ff_width, cfg.d_model}, rng, ff_out_std * resid);
        w.layers.push_back(std::move(lw));
    }
    w.lnf_gain = Tensor::full({cfg.d_model}, 1.0);
    w.lnf_bias = Tensor::zeros({cfg.d_model});
    return w;
}

std::vector<Tensor> BackboneWeights::all_params() const {
    std::vector<Tensor> out{tok_emb, pos_emb};
    for (const auto& l : layers) {
        out.push_back(l.wq);
        out.push_back(l.wk);
        out.push_back(l.wv);
        out.push_back(l.wo);
        out.push_back(l.ln1_gain);
        out.push_back(l.ln1_bias);
        out.push_back(l.ln2_gain);
        out.push_back(l.ln2_bias);
        out.push_back(l.ff_in);
        out.push_back(l.ff_out);
    }
    out.push_back(lnf_gain);
    out.push_back(lnf_bias);
    return out;
}

std::size_t BackboneWeights::param_count() const {
    std::size_t n = 0;
    for (const auto& p : all_params()) n += p.numel();
    return n;
}

void BackboneWeights::set_frozen(bool frozen) {
    frozen_ = frozen;
    for (auto& p : all_params()) const_cast<Tensor&>(p).set_requires_grad(!frozen);
}

Tensor forward_full(const BackboneWeights& w, const std::vector<int>& tokens,
                    const ForwardOptions& opts) {
    const ModelConfig& cfg = w.config;
    const int T = static_cast<int>(tokens.size());
    if (T < 1) throw UsageError("forward_full on an empty token sequence");
    if (T > cfg.max_seq_len)
        throw UsageError("sequence length " + std::to_string(T) + " exceeds max_seq_len " +
                         std::to_string(cfg.max_seq_len));

    const bool modulate = opts.quada != nullptr && !opts.quada->empty() && opts.ctx != nullptr &&
                          opts.ctx->enabled;
    const bool steer = opts.steering != nullptr && opts.ctx != nullptr && opts.ctx->enabled;
    const bool aux = opts.concat_aux != nullptr && !opts.concat_aux->empty() &&
                     opts.duplicate_mask != nullptr;
    if (opts.ctx != nullptr && opts.ctx->enabled) opts.ctx->check_against(T);
    if (steer) opts.steering->validate(cfg);
    if (aux && static_cast<int>(opts.duplicate_mask->size()) != T)
        throw UsageError("duplicate mask length does not match sequence length");

    std::vector<double> quote_d, q_d, dup_d;
    if (modulate || steer) {
        quote_d = mask_to_double(opts.ctx->quote_mask);
        q_d = mask_to_double(opts.ctx->q_mask);
    }
    if (aux) dup_d = mask_to_double(*opts.duplicate_mask);

    if (opts.capture != nullptr) {
        opts.capture->T = T;
        opts.capture->maps.assign(
            static_cast<std::size_t>(cfg.n_layers) * static_cast<std::size_t>(cfg.n_heads), {});
    }

    std::vector<int> positions(static_cast<std::size_t>(T));
    std::iota(positions.begin(), positions.end(), 0);

    Tensor x = add(embedding(w.tok_emb, tokens), embedding(w.pos_emb, positions));
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.d_head));

    for (int l = 0; l < cfg.n_layers; ++l) {
        const LayerWeights& lw = w.layers[static_cast<std::size_t>(l)];
        Tensor xn = layernorm(x, lw.ln1_gain, lw.ln1_bias, cfg.ln_eps);
        Tensor q = matmul(xn, lw.wq);
        Tensor k = matmul(xn, lw.wk);
        Tensor v = matmul(xn, lw.wv);
        std::vector<Tensor> head_outs;
        head_outs.reserve(static_cast<std::size_t>(cfg.n_heads));
        for (int h = 0; h < cfg.n_heads; ++h) {
            Tensor qh = slice_cols(q, h * cfg.d_head, cfg.d_head);
            Tensor kh = slice_cols(k, h * cfg.d_head, cfg.d_head);
            Tensor vh = slice_cols(v, h * cfg.d_head, cfg.d_head);
            Tensor scores = matmul_nt(qh, kh);
            if (modulate) {
                const BottleneckMlp& eq =
                    opts.quada->query[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)];
                Tensor bias_rows = row_scale(eq.apply(qh), q_d);
                scores = add(scores, col_scale(matmul_nt(bias_rows, kh), quote_d));
            }
            Tensor attn = causal_softmax(scale(scores, inv_sqrt_d));
            if (steer && opts.steering->selected(l, h))
                attn = attn_steer(attn, quote_d, opts.steering->alpha);
            if (opts.capture != nullptr)
                opts.capture->maps[static_cast<std::size_t>(l) * cfg.n_heads + h] = attn.data();
            Tensor vh_eff = vh;
            if (aux) {
                const BottleneckMlp& am =
                    opts.concat_aux->aux[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)];
                vh_eff = add(vh, row_scale(am.apply(vh), dup_d));
            }
            Tensor head_out = matmul(attn, vh_eff);
            if (modulate) {
                const BottleneckMlp& ev =
                    opts.quada->value[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)];
                // Enrichment reads the unenriched values and only reaches
                // question-side queries.
                Tensor delta = row_scale(ev.apply(vh), quote_d);
                head_out = add(head_out, row_scale(matmul(attn, delta), q_d));
            }
            head_outs.push_back(std::move(head_out));
        }
        Tensor attn_out = matmul(concat_cols(head_outs), lw.wo);
        x = add(x, attn_out);
        Tensor xn2 = layernorm(x, lw.ln2_gain, lw.ln2_bias, cfg.ln_eps);
        Tensor ff = matmul(gelu(matmul(xn2, lw.ff_in)), lw.ff_out);
        x = add(x, ff);
    }
    Tensor xf = layernorm(x, w.lnf_gain, w.lnf_bias, cfg.ln_eps);
    return matmul_nt(xf, w.tok_emb);  // weight-tied output head
}

std::vector<double> attention_scores(std::span<const double> q, const double* keys, int T,
                                     int d) {
    const double inv = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<double> out(static_cast<std::size_t>(T));
    for (int j = 0; j < T; ++j) {
        const double* k = keys + static_cast<std::size_t>(j) * d;
        double s = 0.0;
        for (int p = 0; p < d; ++p) s += q[static_cast<std::size_t>(p)] * k[p];
        out[static_cast<std::size_t>(j)] = s * inv;
    }
    return out;
}

KVCache::KVCache(const ModelConfig& cfg) {
    cfg.validate();
    layers.assign(static_cast<std::size_t>(cfg.n_layers),
                  std::vector<Head>(static_cast<std::size_t>(cfg.n_heads)));
    capacity = cfg.max_seq_len;
    d_head = cfg.d_head;
}

std::vector<double> decode_incremental(const BackboneWeights& w, KVCache& cache, int next_token,
                                       const ForwardOptions& opts) {
    const ModelConfig& cfg = w.config;
    if (cache.len + 1 > cache.capacity)
        throw UsageError("KV cache overflow: capacity " + std::to_string(cache.capacity));
    if (next_token < 0 || next_token >= cfg.vocab_size)
        throw UsageError("token id " + std::to_string(next_token) + " outside vocabulary");

    const int pos = cache.len;
    const int T = pos + 1;
    const int D = cfg.d_model;
    const int dh = cfg.d_head;
    const bool modulate = opts.quada != nullptr && !opts.quada->empty() && opts.ctx != nullptr &&
                          opts.ctx->enabled;
    const bool steer = opts.steering != nullptr && opts.ctx != nullptr && opts.ctx->enabled;
    const bool aux = opts.concat_aux != nullptr && !opts.concat_aux->empty() &&
                     opts.duplicate_mask != nullptr;

    std::vector<bool> quote_t(static_cast<std::size_t>(T), false);
    if (modulate || steer)
        for (int j = 0; j < T; ++j) quote_t[static_cast<std::size_t>(j)] = opts.ctx->quoted(j);
    std::vector<bool> dup_t(static_cast<std::size_t>(T), false);
    if (aux)
        for (int j = 0; j < T && j < static_cast<int>(opts.duplicate_mask->size()); ++j)
            dup_t[static_cast<std::size_t>(j)] = (*opts.duplicate_mask)[static_cast<std::size_t>(j)];

    std::vector<double> x(static_cast<std::size_t>(D));
    {
        const double* te = w.tok_emb.data().data() + static_cast<std::size_t>(next_token) * D;
        const double* pe = w.pos_emb.data().data() + static_cast<std::size_t>(pos) * D;
        for (int j = 0; j < D; ++j) x[static_cast<std::size_t>(j)] = te[j] + pe[j];
    }

    std::vector<double> xn(static_cast<std::size_t>(D));
    std::vector<double> qkv(static_cast<std::size_t>(3 * D));
    std::vector<double> concat(static_cast<std::size_t>(D));
    std::vector<double> hidden(static_cast<std::size_t>(cfg.ff_width));

    for (int l = 0; l < cfg.n_layers; ++l) {
        const LayerWeights& lw = w.layers[static_cast<std::size_t>(l)];
        layernorm_vec(x.data(), lw.ln1_gain.data().data(), lw.ln1_bias.data().data(), cfg.ln_eps,
                      D, xn.data());
        std::fill(qkv.begin(), qkv.end(), 0.0);
        double* qrow = qkv.data();
        double* krow = qkv.data() + D;
        double* vrow = qkv.data() + 2 * D;
        vec_mat_acc(xn.data(), lw.wq.data().data(), qrow, D, D);
        vec_mat_acc(xn.data(), lw.wk.data().data(), krow, D, D);
        vec_mat_acc(xn.data(), lw.wv.data().data(), vrow, D, D);

        for (int h = 0; h < cfg.n_heads; ++h) {
            KVCache::Head& hc = cache.layers[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)];
            hc.keys.insert(hc.keys.end(), krow + h * dh, krow + (h + 1) * dh);
            hc.values.insert(hc.values.end(), vrow + h * dh, vrow + (h + 1) * dh);
        }

        std::fill(concat.begin(), concat.end(), 0.0);
        for (int h = 0; h < cfg.n_heads; ++h) {
            const KVCache::Head& hc =
                cache.layers[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)];
            std::span<const double> qh(qrow + h * dh, static_cast<std::size_t>(dh));
            const bool in_q = modulate && opts.ctx->in_question(pos);
            std::vector<double> scores;
            if (modulate) {
                const BottleneckMlp& eq =
                    opts.quada->query[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)];
                std::vector<double> bq = query_bias(eq, qh, in_q);
                scores = modulated_scores(qh, hc.keys.data(), T, dh, bq, quote_t);
            } else {
                scores = attention_scores(qh, hc.keys.data(), T, dh);
            }
            softmax_inplace(scores);
            if (steer) scores = apply_static_steering(scores, quote_t, *opts.steering, l, h);

            std::vector<double> base = hc.values;
            if (aux) {
                const BottleneckMlp& am =
                    opts.concat_aux->aux[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)];
                std::vector<double> ad = enrichment_delta(am, hc.values.data(), T, dh, dup_t);
                for (std::size_t i = 0; i < base.size(); ++i) base[i] += ad[i];
            }
            std::vector<double> delta;
            if (modulate && in_q) {
                const BottleneckMlp& ev =
                    opts.quada->value[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)];
                delta = enrichment_delta(ev, hc.values.data(), T, dh, quote_t);
            }
            std::vector<double> out = head_attention_output(
                scores, base.data(), delta.empty() ? nullptr : delta.data(), T, dh,
                modulate ? in_q : false);
            std::copy_n(out.data(), dh, concat.data() + h * dh);
        }

        std::vector<double> attn_out(static_cast<std::size_t>(D), 0.0);
        vec_mat_acc(concat.data(), lw.wo.data().data(), attn_out.data(), D, D);
        for (int j = 0; j < D; ++j) x[static_cast<std::size_t>(j)] += attn_out[static_cast<std::size_t>(j)];

        layernorm_vec(x.data(), lw.ln2_gain.data().data(), lw.ln2_bias.data().data(), cfg.ln_eps,
                      D, xn.data());
        std::fill(hidden.begin(), hidden.end(), 0.0);
        vec_mat_acc(xn.data(), lw.ff_in.data().data(), hidden.data(), D, cfg.ff_width);
        for (auto& hv : hidden) hv = gelu_scalar(hv);
        std::vector<double> ff(static_cast<std::size_t>(D), 0.0);
        vec_mat_acc(hidden.data(), lw.ff_out.data().data(), ff.data(), cfg.ff_width, D);
        for (int j = 0; j < D; ++j) x[static_cast<std::size_t>(j)] += ff[static_cast<std::size_t>(j)];
    }

    layernorm_vec(x.data(), w.lnf_gain.data().data(), w.lnf_bias.data().data(), cfg.ln_eps, D,
                  xn.data());
    std::vector<double> logits(static_cast<std::size_t>(cfg.vocab_size), 0.0);
    const double* emb = w.tok_emb.data().data();
    for (int vtok = 0; vtok < cfg.vocab_size; ++vtok) {
        const double* row = emb + static_cast<std::size_t>(vtok) * D;
        double s = 0.0;
        for (int j = 0; j < D; ++j) s += xn[static_cast<std::size_t>(j)] * row[j];
        logits[static_cast<std::size_t>(vtok)] = s;
    }
    cache.len = T;
    return logits;
}

std::vector<int> generate_greedy(const BackboneWeights& w, const std::vector<int>& prompt,
                                 const ForwardOptions& opts, int max_new, int stop_token) {
    if (prompt.empty()) throw UsageError("generate_greedy requires a nonempty prompt");
    KVCache cache(w.config);
    std::vector<double> logits;
    for (int tok : prompt) logits = decode_incremental(w, cache, tok, opts);
    std::vector<int> out;
    for (int step = 0; step < max_new; ++step) {
        int best = 0;
        for (int j = 1; j < static_cast<int>(logits.size()); ++j)
            if (logits[static_cast<std::size_t>(j)] > logits[static_cast<std::size_t>(best)])
                best = j;  // ties keep the lowest id
        out.push_back(best);
        if (best == stop_token) break;
        if (cache.len + 1 > cache.capacity) break;
        logits = decode_incremental(w, cache, best, opts);
    }
    return out;
}

double sequence_log_likelihood(const BackboneWeights& w, const std::vector<int>& prompt,
                               const std::vector<int>& continuation, const ForwardOptions& opts) {
    if (continuation.empty()) throw UsageError("log-likelihood of an empty continuation");
    std::vector<int> full = prompt;
    full.insert(full.end(), continuation.begin(), continuation.end());
    Tensor logits = forward_full(w, full, opts);
    const int V = w.config.vocab_size;
    const auto& d = logits.data();
    double total = 0.0;
    for (std::size_t i = 0; i < continuation.size(); ++i) {
        const std::size_t row = prompt.size() + i - 1;
        const double* lr = d.data() + row * V;
        double mx = lr[0];
        for (int j = 1; j < V; ++j) mx = std::max(mx, lr[j]);
        double s = 0.0;
        for (int j = 0; j < V; ++j) s += std::exp(lr[j] - mx);
        total += lr[continuation[i]] - (std::log(s) + mx);
    }
    return total / static_cast<double>(continuation.size());
}

}  // namespace spanlab
