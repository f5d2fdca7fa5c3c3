#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "spanlab/checkpoint.hpp"
#include "spanlab/datapipe.hpp"
#include "spanlab/tensor.hpp"

using namespace spanlab;

namespace {

PipelineConfig tiny_cfg() {
    PipelineConfig cfg;
    cfg.count_scale = 0.005;  // 11-12 train pairs per scenario, 2-3 test
    return cfg;
}

GeneratedPair must_generate(Scenario s, std::uint64_t seed, bool test_split = false) {
    auto pair = generate_sample_pair(s, test_split, PipelineConfig{}, seed, "t");
    REQUIRE(pair.has_value());
    return *pair;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("attribute draws stay inside the published ranges") {
    PipelineConfig cfg;
    Rng rng(1);
    for (int i = 0; i < 300; ++i) {
        const bool test_split = i % 2 == 1;
        const AttributeSet a = sample_attributes(rng, test_split, cfg, Scenario::Base);
        CHECK(a.history_turns >= 1);
        CHECK(a.history_turns <= 10);
        CHECK(a.info_points >= 2);
        CHECK(a.info_points <= 10);
        CHECK(a.tone >= 0);
        CHECK(a.tone < Vocab::kNumTones);
        if (test_split) {
            CHECK(a.topic_id >= cfg.train_topics);
            CHECK(a.topic_id < cfg.topic_count);
        } else {
            CHECK(a.topic_id >= 0);
            CHECK(a.topic_id < cfg.train_topics);
        }
    }
    // determinism
    Rng r1(9), r2(9);
    for (int i = 0; i < 20; ++i) {
        const AttributeSet a = sample_attributes(r1, false, cfg, Scenario::Exclude);
        const AttributeSet b = sample_attributes(r2, false, cfg, Scenario::Exclude);
        CHECK(a.topic_id == b.topic_id);
        CHECK(a.history_turns == b.history_turns);
        CHECK(a.info_points == b.info_points);
        CHECK(a.granularity == b.granularity);
    }
}

TEST_CASE("conversations record every fact span verbatim") {
    PipelineConfig cfg;
    Rng rng(2);
    for (int trial = 0; trial < 40; ++trial) {
        const AttributeSet attrs = sample_attributes(rng, false, cfg, Scenario::Base);
        const Conversation conv = generate_conversation(attrs, Scenario::Base, rng);
        CHECK(static_cast<int>(conv.facts.size()) == attrs.info_points);
        for (const Fact& f : conv.facts) {
            REQUIRE(f.range.end < static_cast<int>(conv.history.size()));
            CHECK(conv.history[static_cast<std::size_t>(f.range.start)] == f.entity);
            CHECK(conv.history[static_cast<std::size_t>(f.range.start) + 1] == f.relation);
            CHECK(conv.history[static_cast<std::size_t>(f.range.start) + 2] == f.value);
        }
        // values pairwise distinct
        std::set<int> values;
        for (const Fact& f : conv.facts) CHECK(values.insert(f.value).second);
    }
}

TEST_CASE("coref conversations never emit dangling pointers") {
    PipelineConfig cfg;
    Rng rng(3);
    for (int trial = 0; trial < 60; ++trial) {
        AttributeSet attrs = sample_attributes(rng, false, cfg, Scenario::Coref);
        if (attrs.info_points < scenario_min_facts(Scenario::Coref)) continue;
        const Conversation conv = generate_conversation(attrs, Scenario::Coref, rng);
        int pointers = 0;
        for (const Fact& f : conv.facts) {
            if (!f.pointer) continue;
            ++pointers;
            CHECK(f.entity == Vocab::kPronoun);
            CHECK(Vocab::is_entity(f.antecedent));
            // membership oracle: the antecedent is the nearest preceding
            // regular entity token
            int expect = -1;
            for (const Fact& g : conv.facts)
                if (!g.pointer && g.range.start < f.range.start &&
                    (expect == -1 || g.range.start > 0))
                    if (g.range.start < f.range.start) expect = g.entity;
            CHECK(f.antecedent == expect);
        }
        CHECK(pointers >= 2);
    }
}

TEST_CASE("oracle answers follow the scenario semantics") {
    // facts: (e1, likes, v3), (e2, likes, v7), (e3, likes, v5)
    std::vector<Fact> facts;
    auto mk = [&](int e, int v, int s) {
        Fact f;
        f.entity = Vocab::entity(e);
        f.relation = Vocab::relation(1);
        f.value = Vocab::value(v);
        f.range = {s, s + 2};
        return f;
    };
    facts.push_back(mk(1, 3, 10));
    facts.push_back(mk(2, 7, 14));
    facts.push_back(mk(3, 5, 18));

    CHECK(oracle_answer(facts, Scenario::Base, {0}) == std::vector<int>{Vocab::value(3)});
    CHECK(oracle_answer(facts, Scenario::Exclude, {0}) ==
          std::vector<int>{Vocab::value(7), Vocab::value(5)});
    CHECK(oracle_answer(facts, Scenario::MultiSpan, {2, 0}) ==
          std::vector<int>{Vocab::value(3), Vocab::value(5)});
    // info-combine: quote the rank-2 fact among ranks {3,5,7} -> only e2 (v7) exceeds
    CHECK(oracle_answer(facts, Scenario::InfoCombine, {2}) ==
          std::vector<int>{Vocab::entity(2)});
    // quote the maximum -> nothing exceeds
    CHECK(oracle_answer(facts, Scenario::InfoCombine, {1}) == std::vector<int>{Vocab::kNone});

    Fact ptr;
    ptr.pointer = true;
    ptr.entity = Vocab::kPronoun;
    ptr.antecedent = Vocab::entity(3);
    ptr.range = {22, 24};
    ptr.value = Vocab::value(9);
    facts.push_back(ptr);
    CHECK(oracle_answer(facts, Scenario::Coref, {3}) == std::vector<int>{Vocab::entity(3)});

    CHECK_THROWS_AS(oracle_answer(facts, Scenario::Base, {0, 1}), UsageError);
    CHECK_THROWS_AS(oracle_answer(facts, Scenario::Coref, {0}), UsageError);
}

TEST_CASE("generated samples pass oracle closure and the validity checks") {
    SolverClient oracle;
    std::uint64_t seed = 1000;
    for (Scenario s : {Scenario::Base, Scenario::MultiSpan, Scenario::Exclude,
                       Scenario::InfoCombine, Scenario::Coref}) {
        for (int i = 0; i < 6; ++i) {
            const GeneratedPair pair = must_generate(s, seed++);

            // oracle closure on both formats
            const std::string open_answer =
                oracle.solve(render_solver_view(pair.open, SolverView::Full));
            CHECK(Vocab::instance().tokenize(open_answer) == pair.open.gold_tokens);

            std::string why;
            CHECK_MESSAGE(run_validity_checks(pair.mcq, oracle, &why), why);

            // MCQ construction invariants
            CHECK(pair.mcq.gold_option >= 0);
            CHECK(pair.mcq.gold_option < 3);
            for (int o = 0; o < 3; ++o)
                if (o != pair.mcq.gold_option)
                    CHECK(pair.mcq.options[static_cast<std::size_t>(o)] !=
                          pair.mcq.options[static_cast<std::size_t>(pair.mcq.gold_option)]);
            CHECK(pair.mcq.options[3] == std::vector<int>{Vocab::kInsufficient});

            // spans stay valid and inside history
            CHECK(validate(pair.mcq.span_set()).empty());
        }
    }
}

TEST_CASE("constructed counterexamples are rejected") {
    SolverClient oracle;

    SUBCASE("wrong-span quotes fail sufficiency") {
        for (std::uint64_t seed = 50; seed < 62; ++seed) {
            const GeneratedPair pair = must_generate(Scenario::Base, seed);
            const Sample bad = make_counterexample_wrong_span(pair.mcq);
            CHECK_FALSE(check_sufficiency(bad, oracle).pass);
        }
    }
    SUBCASE("a gold value leaked outside the quote fails necessity") {
        for (std::uint64_t seed = 70; seed < 82; ++seed) {
            const GeneratedPair pair = must_generate(Scenario::Base, seed);
            const Sample bad = make_counterexample_gold_leak(pair.mcq);
            CHECK_FALSE(check_necessity(bad, oracle).pass);
        }
    }
    SUBCASE("a quote-sufficient info-combine item fails the context check") {
        for (std::uint64_t seed = 90; seed < 102; ++seed) {
            const GeneratedPair pair = must_generate(Scenario::InfoCombine, seed);
            const Sample bad = make_counterexample_quote_sufficient(pair.mcq);
            CHECK_FALSE(check_context_requirement(bad, oracle).pass);
        }
    }
    SUBCASE("an empty quote set fails sufficiency by construction") {
        GeneratedPair pair = must_generate(Scenario::Base, 111);
        Sample bad = pair.mcq;
        bad.quote_spans.clear();
        CHECK_FALSE(check_sufficiency(bad, oracle).pass);
    }
    SUBCASE("the context check refuses other scenarios") {
        const GeneratedPair pair = must_generate(Scenario::Base, 112);
        CHECK_THROWS_AS(check_context_requirement(pair.mcq, oracle), UsageError);
    }
    SUBCASE("a sample with no question is rejected upstream") {
        GeneratedPair pair = must_generate(Scenario::Base, 113);
        Sample bad = pair.mcq;
        bad.question_span = {0, 3};
        CHECK_THROWS_AS(render_solver_view(bad, SolverView::Necessity), UsageError);
    }
}

TEST_CASE("step-5 scoring accepts sound samples and flags broken ones") {
    SolverClient oracle;
    const GeneratedPair pair = must_generate(Scenario::MultiSpan, 200);

    const FlagResult good = score_and_flag(pair.mcq, oracle, 1.0);
    CHECK(good.accepted);
    CHECK(good.score == doctest::Approx(1.0));

    Sample broken = pair.mcq;
    broken.quote_spans[0].end = broken.history_len + 50;  // out of bounds
    const FlagResult bad = score_and_flag(broken, oracle, 1.0);
    CHECK_FALSE(bad.accepted);
    CHECK_FALSE(bad.reason.empty());

    // threshold above the maximum score flags everything
    const FlagResult impossible = score_and_flag(pair.mcq, oracle, 1.0 + 1.0);
    CHECK_FALSE(impossible.accepted);
}

TEST_CASE("records round-trip byte-identically") {
    std::uint64_t seed = 300;
    for (Scenario s : {Scenario::Base, Scenario::Exclude, Scenario::Coref}) {
        const GeneratedPair pair = must_generate(s, seed++);
        for (const Sample* sample : {&pair.open, &pair.mcq}) {
            const std::string line = sample->to_jsonl();
            CHECK(Sample::from_jsonl(line).to_jsonl() == line);
        }
    }
}

TEST_CASE("MCQ casting is deterministic under the seed") {
    const GeneratedPair a = must_generate(Scenario::Base, 400);
    const GeneratedPair b = must_generate(Scenario::Base, 400);
    CHECK(a.mcq.to_jsonl() == b.mcq.to_jsonl());
    CHECK(a.open.to_jsonl() == b.open.to_jsonl());
}

TEST_CASE("corpus emission: counts, split hygiene, determinism") {
    namespace fs = std::filesystem;
    const PipelineConfig cfg = tiny_cfg();
    const auto dir1 = fs::temp_directory_path() / "spanlab_corpus_a";
    const auto dir2 = fs::temp_directory_path() / "spanlab_corpus_b";
    fs::remove_all(dir1);
    fs::remove_all(dir2);

    const CorpusPaths p1 = emit_corpus(cfg, 77, dir1.string(), 2);
    const CorpusPaths p2 = emit_corpus(cfg, 77, dir2.string(), 1);
    REQUIRE(p1.files.size() == 20);  // 2 splits x 5 scenarios x 2 formats

    // determinism: per-file bytes identical regardless of thread count
    for (std::size_t i = 0; i < p1.files.size(); ++i) {
        CHECK(slurp(p1.files[i]) == slurp(p2.files[i]));
    }

    // expected counts and split hygiene
    std::set<int> train_topics, test_topics;
    for (const std::string& path : p1.files) {
        const auto samples = load_corpus_file(path);
        const bool is_test = path.find("test_") != std::string::npos;
        Scenario sc = samples.at(0).scenario;
        CHECK(static_cast<int>(samples.size()) == cfg.scaled(sc, is_test));
        for (const Sample& s : samples) {
            (is_test ? test_topics : train_topics).insert(s.attrs.topic_id);
            CHECK(s.attrs.test_topic == is_test);
        }
    }
    for (int t : train_topics) CHECK(test_topics.count(t) == 0);

    fs::remove_all(dir1);
    fs::remove_all(dir2);
}

TEST_CASE("table-scaled corpus targets") {
    PipelineConfig cfg;  // default scale 0.1
    CHECK(cfg.scaled(Scenario::Base, false) == 220);
    CHECK(cfg.scaled(Scenario::MultiSpan, false) == 240);
    CHECK(cfg.scaled(Scenario::Exclude, false) == 240);
    CHECK(cfg.scaled(Scenario::InfoCombine, false) == 230);
    CHECK(cfg.scaled(Scenario::Coref, false) == 220);
    CHECK(cfg.scaled(Scenario::Base, true) == 50);
    PipelineConfig zero = cfg;
    zero.count_scale = 0.0;
    CHECK(zero.scaled(Scenario::Base, false) == 0);
}

TEST_CASE("solver port machinery: retries, backoff, failure surfacing") {
    int calls = 0;
    std::vector<std::chrono::milliseconds> naps;
    Transport failing = [&](const std::string&, PortError* err) -> std::optional<std::string> {
        ++calls;
        if (err) *err = {"connection refused", false};
        return std::nullopt;
    };
    RetryPolicy policy;
    policy.max_attempts = 3;
    policy.initial_backoff = std::chrono::milliseconds(10);
    TextPort port("solver", failing, policy,
                  [&](std::chrono::milliseconds d) { naps.push_back(d); });

    PortError err;
    CHECK_FALSE(port.complete({"hello", 8, 0.0}, &err).has_value());
    CHECK(calls == 3);
    REQUIRE(naps.size() == 2);
    CHECK(naps[0].count() == 10);
    CHECK(naps[1].count() == 20);
    CHECK(err.message == "connection refused");

    SolverClient failing_client(port);
    CHECK_THROWS_AS(failing_client.solve("<usr>"), IoError);

    // a healthy fake transport round-trips the {text} body
    Transport ok = [&](const std::string& payload, PortError*) -> std::optional<std::string> {
        CHECK(payload.find("\"prompt\"") != std::string::npos);
        return std::string("{\"text\":\"B\"}");
    };
    TextPort good("solver", ok, policy, [](std::chrono::milliseconds) {});
    SolverClient good_client(good);
    CHECK(good_client.solve("anything") == "B");

    // unset env vars leave the port unconfigured
    CHECK_FALSE(port_from_env("gen", "SPANLAB_DEFINITELY_UNSET_URL").configured());
}

TEST_CASE("solver abstains on unanswerable prompts") {
    // a lone question with no facts and no options
    const std::string prompt = Vocab::instance().render(
        {Vocab::kUser, Vocab::kTaskExtract, Vocab::kQMark});
    CHECK(oracle_solve(prompt) == "abstain");
}
