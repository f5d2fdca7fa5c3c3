#include <cmath>

#include "doctest.h"
#include "spanlab/baselines.hpp"
#include "spanlab/model.hpp"
#include "support/gradcheck.hpp"

using namespace spanlab;
using testsupport::random_tensor;

TEST_CASE("concat transform: identity on an empty span set") {
    const std::vector<int> hist{10, 11, 12, 13};
    const std::vector<int> q{20, 21};
    const auto out = concat_repeat_transform(hist, {{}, 4}, q);
    CHECK(out.tokens == std::vector<int>{10, 11, 12, 13, 20, 21});
    CHECK(out.overhead == 0);
    CHECK(out.question.start == 4);
}

TEST_CASE("concat transform duplicates spans in order") {
    const std::vector<int> hist{10, 11, 12, 13, 14, 15};
    const std::vector<int> q{30};

    const auto one = concat_repeat_transform(hist, {{{2, 4}}, 6}, q);
    CHECK(one.tokens.size() == hist.size() + 3 + q.size());
    CHECK(one.overhead == 3);

    const auto two = concat_repeat_transform(hist, {{{0, 1}, {4, 4}}, 6}, q);
    // slice-and-concatenate oracle
    std::vector<int> want = hist;
    want.push_back(10);
    want.push_back(11);
    want.push_back(14);
    want.push_back(30);
    CHECK(two.tokens == want);
    CHECK(two.question.start == 6);
    CHECK(two.overhead == 3);
    // the duplicate block is flagged for the trainable variant
    for (std::size_t i = 0; i < two.tokens.size(); ++i)
        CHECK(two.duplicate_mask[i] == (i >= 6 && i < 9));

    CHECK_THROWS_AS(concat_repeat_transform(hist, {{{4, 2}}, 6}, q), UsageError);
}

TEST_CASE("marker transform inserts boundaries and remaps offsets") {
    const std::vector<int> hist{10, 11, 12, 13};

    const auto none = marker_insert_transform(hist, {{}, 4});
    CHECK(none.tokens == hist);
    CHECK(none.remapped.spans.empty());

    const auto one = marker_insert_transform(hist, {{{1, 2}}, 4});
    CHECK(one.tokens.size() == 6);
    CHECK(one.tokens[1] == Vocab::kOpenEmph);
    CHECK(one.tokens[4] == Vocab::kCloseEmph);
    REQUIRE(one.remapped.spans.size() == 1);
    CHECK(one.remapped.spans[0] == Span{2, 3});

    const auto two = marker_insert_transform(hist, {{{0, 0}, {1, 2}}, 4});
    CHECK(two.tokens.size() == 8);
    int markers = 0;
    std::vector<int> content;
    for (int t : two.tokens) {
        if (t == Vocab::kOpenEmph || t == Vocab::kCloseEmph)
            ++markers;
        else
            content.push_back(t);
    }
    CHECK(markers == 4);
    CHECK(content == hist);
}

TEST_CASE("stripping markers recovers the original history") {
    Rng rng(51);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = static_cast<int>(rng.range(1, 30));
        std::vector<int> hist(static_cast<std::size_t>(n));
        for (auto& t : hist) t = static_cast<int>(rng.range(5, 80));
        SpanSet spans;
        spans.history_len = n;
        int cursor = 0;
        while (cursor < n) {
            const int start = cursor + static_cast<int>(rng.range(0, 2));
            if (start >= n) break;
            const int end = std::min(n - 1, start + static_cast<int>(rng.range(0, 3)));
            spans.spans.push_back({start, end});
            cursor = end + 2;
            if (rng.next_double() < 0.3) break;
        }
        const auto out = marker_insert_transform(hist, spans);
        CHECK(out.tokens.size() == hist.size() + 2 * spans.spans.size());
        CHECK(strip_markers(out.tokens) == hist);
        // remapped spans point at the original content
        for (std::size_t i = 0; i < spans.spans.size(); ++i) {
            const Span& orig = spans.spans[i];
            const Span& moved = out.remapped.spans[i];
            CHECK(moved.length() == orig.length());
            for (int k = 0; k < orig.length(); ++k)
                CHECK(out.tokens[static_cast<std::size_t>(moved.start + k)] ==
                      hist[static_cast<std::size_t>(orig.start + k)]);
        }
    }
}

TEST_CASE("static steering rescales and renormalizes") {
    SteeringConfig cfg;
    cfg.heads = {{0, 0}};
    std::vector<bool> mask{true, false, false};
    std::vector<double> attn{0.5, 0.3, 0.2};

    SUBCASE("alpha=1 is a no-op") {
        cfg.alpha = 1.0;
        const auto out = apply_static_steering(attn, mask, cfg, 0, 0);
        for (int j = 0; j < 3; ++j) CHECK(out[j] == doctest::Approx(attn[j]).epsilon(1e-15));
    }
    SUBCASE("an all-true mask cancels after renormalization") {
        cfg.alpha = 4.0;
        const std::vector<bool> all{true, true, true};
        const auto out = apply_static_steering(attn, all, cfg, 0, 0);
        for (int j = 0; j < 3; ++j) CHECK(out[j] == doctest::Approx(attn[j]).epsilon(1e-12));
    }
    SUBCASE("hand-renormalized example") {
        cfg.alpha = 2.0;
        const auto out = apply_static_steering(attn, mask, cfg, 0, 0);
        CHECK(out[0] == doctest::Approx(10.0 / 15.0).epsilon(1e-12));
        CHECK(out[1] == doctest::Approx(3.0 / 15.0).epsilon(1e-12));
        CHECK(out[2] == doctest::Approx(2.0 / 15.0).epsilon(1e-12));
        double s = 0.0;
        for (double v : out) {
            CHECK(v >= 0.0);
            s += v;
        }
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
    SUBCASE("unselected heads pass through untouched") {
        cfg.alpha = 7.0;
        const auto out = apply_static_steering(attn, mask, cfg, 1, 0);
        CHECK(out == attn);
    }
}

TEST_CASE("steering config validation") {
    ModelConfig cfg;
    SteeringConfig empty;
    CHECK_THROWS_AS(empty.validate(cfg), UsageError);
    SteeringConfig oob;
    oob.heads = {{9, 0}};
    CHECK_THROWS_AS(oob.validate(cfg), UsageError);
}

TEST_CASE("head reranking finds the hand-wired span head") {
    // One layer, two heads. Value/output paths are wired so head 0 copies the
    // (normalized) token identity of attended positions into the residual
    // stream, while head 1 carries nothing. Boosting attention onto the quoted
    // token therefore raises the quoted token's own logit only through head 0.
    ModelConfig cfg;
    cfg.vocab_size = 8;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.d_head = 4;
    cfg.n_layers = 1;
    cfg.max_seq_len = 16;
    cfg.ff_width = 4;

    BackboneWeights w = BackboneWeights::init(cfg, 61);
    auto zero = [](Tensor& t) { std::fill(t.raw().begin(), t.raw().end(), 0.0); };
    zero(w.pos_emb);
    for (auto& layer : w.layers) {
        zero(layer.wq);
        zero(layer.wk);
        zero(layer.wv);
        zero(layer.wo);
        zero(layer.ff_in);
        zero(layer.ff_out);
    }
    // distinct token directions
    zero(w.tok_emb);
    for (int vtok = 0; vtok < cfg.vocab_size; ++vtok)
        w.tok_emb.raw()[static_cast<std::size_t>(vtok) * cfg.d_model + vtok] = 3.0;
    // head 0 value projection: first 4 residual dims; wo maps them back
    for (int i = 0; i < 4; ++i) {
        w.layers[0].wv.raw()[static_cast<std::size_t>(i) * cfg.d_model + i] = 1.0;
        w.layers[0].wo.raw()[static_cast<std::size_t>(i) * cfg.d_model + i] = 1.0;
    }

    std::vector<ProfilingItem> items;
    for (int gold = 0; gold < 4; ++gold) {
        ProfilingItem item;
        item.prompt = {5, gold, 6, 7};
        item.gold = {gold};
        SpanSet spans{{{1, 1}}, 3};
        item.ctx = ModulationContext::make(spans, {3}, 5);
        items.push_back(std::move(item));
    }

    std::vector<HeadGain> gains;
    SteeringConfig top = rerank_heads(w, items, 4.0, 1, &gains);
    REQUIRE(top.heads.size() == 1);
    CHECK(top.heads[0] == std::pair<int, int>{0, 0});
    REQUIRE(gains.size() == 2);
    CHECK(gains[0].gain > 0.0);
    CHECK(gains[1].gain == doctest::Approx(0.0).epsilon(1e-12));

    // top_k covering all heads returns them ordered by gain
    SteeringConfig all = rerank_heads(w, items, 4.0, 99);
    CHECK(all.heads.size() == 2);

    CHECK_THROWS_AS(rerank_heads(w, {}, 4.0, 1), UsageError);
}

TEST_CASE("concat aux bottleneck perturbs only the duplicate block") {
    Rng rng(71);
    const int T = 5, d = 4;
    BottleneckMlp aux;
    aux.down = random_tensor({d, 2}, rng);
    aux.up = random_tensor({2, d}, rng);
    Tensor v = random_tensor({T, d}, rng);

    std::vector<double> none(T, 0.0);
    CHECK(concat_aux_values(v, aux, none).data() == v.data());

    BottleneckMlp aux_zero = aux;
    aux_zero.up = Tensor::zeros({2, d});
    std::vector<double> all(T, 1.0);
    CHECK(concat_aux_values(v, aux_zero, all).data() == v.data());

    std::vector<double> one(T, 0.0);
    one[2] = 1.0;
    const auto out = concat_aux_values(v, aux, one).data();
    const auto delta = aux.apply(v).data();
    for (int t = 0; t < T; ++t)
        for (int p = 0; p < d; ++p) {
            const double want = v.data()[t * d + p] + (t == 2 ? delta[t * d + p] : 0.0);
            CHECK(std::abs(out[t * d + p] - want) < 1e-12);
        }
}

TEST_CASE("prompt overhead accounting per method") {
    const std::vector<int> hist{10, 11, 12, 13, 14};
    const std::vector<int> q{20, 21, 22};
    const SpanSet spans{{{1, 2}}, 5};

    const auto concat = concat_repeat_transform(hist, spans, q);
    CHECK(concat.tokens.size() == hist.size() + q.size() + 2);  // lengthens

    const auto marker = marker_insert_transform(hist, spans);
    CHECK(marker.tokens.size() == hist.size() + 2);  // lengthens

    // steering and quada leave the token stream unchanged by construction:
    // they only touch attention, so the prompt is hist ++ q verbatim.
    std::vector<int> plain = hist;
    plain.insert(plain.end(), q.begin(), q.end());
    CHECK(plain.size() == hist.size() + q.size());
}
