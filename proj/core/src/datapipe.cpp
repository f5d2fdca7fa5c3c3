#include "spanlab/datapipe.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "json.hpp"
#include "spanlab/checkpoint.hpp"
#include "spanlab/parallel.hpp"
#include "spanlab/tensor.hpp"

namespace spanlab {

namespace {

using nlohmann::ordered_json;

const Vocab& vocab() { return Vocab::instance(); }

int task_token(Scenario s) {
    switch (s) {
        case Scenario::Base: return Vocab::kTaskExtract;
        case Scenario::MultiSpan: return Vocab::kTaskListQuoted;
        case Scenario::Exclude: return Vocab::kTaskListOther;
        case Scenario::InfoCombine: return Vocab::kTaskExceed;
        case Scenario::Coref: return Vocab::kTaskAntecedent;
    }
    return Vocab::kTaskSpare;
}

std::optional<Scenario> scenario_of_task_token(int tok) {
    for (Scenario s : {Scenario::Base, Scenario::MultiSpan, Scenario::Exclude,
                       Scenario::InfoCombine, Scenario::Coref})
        if (task_token(s) == tok) return s;
    return std::nullopt;
}

std::string task_name(Scenario s) { return vocab().name(task_token(s)); }

}  // namespace

const char* granularity_name(SpanGranularity g) {
    switch (g) {
        case SpanGranularity::Word: return "word";
        case SpanGranularity::Sentence: return "sentence";
        case SpanGranularity::Paragraph: return "paragraph";
    }
    return "?";
}

bool granularity_from_name(const std::string& name, SpanGranularity* out) {
    for (SpanGranularity g :
         {SpanGranularity::Word, SpanGranularity::Sentence, SpanGranularity::Paragraph}) {
        if (name == granularity_name(g)) {
            *out = g;
            return true;
        }
    }
    return false;
}

const char* format_name(SampleFormat f) {
    return f == SampleFormat::Mcq ? "mcq" : "open_ended";
}

bool format_from_name(const std::string& name, SampleFormat* out) {
    if (name == "mcq") {
        *out = SampleFormat::Mcq;
        return true;
    }
    if (name == "open_ended") {
        *out = SampleFormat::OpenEnded;
        return true;
    }
    return false;
}

int PipelineConfig::scaled(Scenario s, bool test_split) const {
    int base = 0;
    if (test_split) {
        base = bench_count;
    } else {
        switch (s) {
            case Scenario::Base: base = base_count; break;
            case Scenario::MultiSpan: base = multi_count; break;
            case Scenario::Exclude: base = exclude_count; break;
            case Scenario::InfoCombine: base = info_count; break;
            case Scenario::Coref: base = coref_count; break;
        }
    }
    const int n = static_cast<int>(base * count_scale + 0.5);
    return std::max(n, 0);
}

// ---- Sample helpers ---------------------------------------------------------

std::vector<int> Sample::prompt_tokens() const { return vocab().tokenize(instruction); }
std::vector<int> Sample::output_tokens() const { return vocab().tokenize(output); }

SpanSet Sample::span_set() const {
    SpanSet set;
    set.spans = quote_spans;
    set.history_len = history_len;
    return set;
}

std::string Sample::to_jsonl() const {
    ordered_json j;
    j["instruction"] = instruction;
    j["input"] = input;
    j["output"] = output;
    ordered_json spans = ordered_json::array();
    for (const Span& s : quote_spans) spans.push_back({s.start, s.end});
    j["quote_token_span"] = spans;
    j["question_token_span"] = {question_span.start, question_span.end};
    j["scenario"] = scenario_name(scenario);
    j["format"] = format_name(format);
    ordered_json meta;
    meta["id"] = id;
    meta["topic"] = attrs.topic_id;
    meta["test_topic"] = attrs.test_topic;
    meta["tone"] = attrs.tone;
    meta["turns"] = attrs.history_turns;
    meta["info_points"] = attrs.info_points;
    meta["task"] = attrs.task_tag;
    meta["granularity"] = granularity_name(attrs.granularity);
    meta["seed"] = std::to_string(seed);
    meta["history_len"] = history_len;
    ordered_json facts_j = ordered_json::array();
    for (const Fact& f : facts) {
        ordered_json fj;
        fj["e"] = f.entity;
        fj["r"] = f.relation;
        fj["v"] = f.value;
        fj["s"] = f.range.start;
        fj["t"] = f.range.end;
        fj["p"] = f.pointer;
        fj["a"] = f.antecedent;
        facts_j.push_back(std::move(fj));
    }
    meta["facts"] = std::move(facts_j);
    ordered_json quoted = ordered_json::array();
    for (std::size_t q : quoted_facts) quoted.push_back(q);
    meta["quoted"] = std::move(quoted);
    meta["options"] = options;
    meta["gold_option"] = gold_option;
    meta["foil_option"] = foil_option;
    meta["gold_tokens"] = gold_tokens;
    j["meta"] = std::move(meta);
    return j.dump();
}

Sample Sample::from_jsonl(const std::string& line) {
    const auto j = ordered_json::parse(line);
    Sample s;
    s.instruction = j.at("instruction").get<std::string>();
    s.input = j.at("input").get<std::string>();
    s.output = j.at("output").get<std::string>();
    for (const auto& sp : j.at("quote_token_span"))
        s.quote_spans.push_back({sp.at(0).get<int>(), sp.at(1).get<int>()});
    s.question_span = {j.at("question_token_span").at(0).get<int>(),
                       j.at("question_token_span").at(1).get<int>()};
    if (!scenario_from_name(j.at("scenario").get<std::string>(), &s.scenario))
        throw UsageError("unknown scenario in record: " + line.substr(0, 60));
    if (!format_from_name(j.at("format").get<std::string>(), &s.format))
        throw UsageError("unknown format in record");
    const auto& meta = j.at("meta");
    s.id = meta.at("id").get<std::string>();
    s.attrs.topic_id = meta.at("topic").get<int>();
    s.attrs.test_topic = meta.at("test_topic").get<bool>();
    s.attrs.tone = meta.at("tone").get<int>();
    s.attrs.history_turns = meta.at("turns").get<int>();
    s.attrs.info_points = meta.at("info_points").get<int>();
    s.attrs.task_tag = meta.at("task").get<std::string>();
    if (!granularity_from_name(meta.at("granularity").get<std::string>(), &s.attrs.granularity))
        throw UsageError("unknown granularity in record");
    s.seed = std::stoull(meta.at("seed").get<std::string>());
    s.history_len = meta.at("history_len").get<int>();
    for (const auto& fj : meta.at("facts")) {
        Fact f;
        f.entity = fj.at("e").get<int>();
        f.relation = fj.at("r").get<int>();
        f.value = fj.at("v").get<int>();
        f.range = {fj.at("s").get<int>(), fj.at("t").get<int>()};
        f.pointer = fj.at("p").get<bool>();
        f.antecedent = fj.at("a").get<int>();
        s.facts.push_back(f);
    }
    for (const auto& q : meta.at("quoted")) s.quoted_facts.push_back(q.get<std::size_t>());
    for (const auto& opt : meta.at("options"))
        s.options.push_back(opt.get<std::vector<int>>());
    s.gold_option = meta.at("gold_option").get<int>();
    s.foil_option = meta.at("foil_option").get<int>();
    s.gold_tokens = meta.at("gold_tokens").get<std::vector<int>>();
    return s;
}

// ---- Step 1: attributes -----------------------------------------------------

AttributeSet sample_attributes(Rng& rng, bool test_split, const PipelineConfig& cfg,
                               Scenario scenario) {
    AttributeSet a;
    if (test_split)
        a.topic_id = static_cast<int>(rng.range(cfg.train_topics, cfg.topic_count - 1));
    else
        a.topic_id = static_cast<int>(rng.range(0, cfg.train_topics - 1));
    a.test_topic = test_split;
    a.tone = static_cast<int>(rng.range(0, Vocab::kNumTones - 1));
    a.history_turns = static_cast<int>(rng.range(1, 10));
    a.info_points = static_cast<int>(rng.range(2, 10));
    a.task_tag = task_name(scenario);
    const int g = static_cast<int>(rng.range(0, 2));
    a.granularity = g == 0 ? SpanGranularity::Word
                           : (g == 1 ? SpanGranularity::Sentence : SpanGranularity::Paragraph);
    return a;
}

// ---- Step 2: conversation ---------------------------------------------------

Conversation generate_conversation(const AttributeSet& attrs, Scenario scenario, Rng& rng) {
    Conversation conv;
    const int m = attrs.info_points;
    const int pointer_count =
        scenario == Scenario::Coref ? static_cast<int>(rng.range(2, std::min(3, m))) : 0;

    // distinct entities and values across all facts
    std::vector<int> entity_pool(Vocab::kNumEntities);
    for (int i = 0; i < Vocab::kNumEntities; ++i) entity_pool[i] = Vocab::entity(i);
    rng.shuffle(entity_pool);
    std::vector<int> value_pool(Vocab::kNumValues);
    for (int i = 0; i < Vocab::kNumValues; ++i) value_pool[i] = Vocab::value(i);
    rng.shuffle(value_pool);

    struct Planned {
        bool pointer;
        int entity;  // pronoun token for pointers
        int relation;
        int value;
        int after;  // insertion slot for pointers
    };
    std::vector<Planned> plan;
    for (int i = 0; i < m; ++i)
        plan.push_back({false, entity_pool[static_cast<std::size_t>(i)],
                        Vocab::relation(static_cast<int>(rng.range(0, Vocab::kNumRelations - 1))),
                        value_pool[static_cast<std::size_t>(i)], 0});

    if (pointer_count > 0) {
        // choose distinct insertion slots 1..m so every pointer has an
        // antecedent and at least two pointers resolve differently
        std::vector<int> slots;
        for (int i = 1; i <= m; ++i) slots.push_back(i);
        rng.shuffle(slots);
        slots.resize(static_cast<std::size_t>(pointer_count));
        std::sort(slots.begin(), slots.end());
        std::vector<Planned> merged;
        std::size_t next_pointer = 0;
        for (int i = 0; i <= m; ++i) {
            while (next_pointer < slots.size() && slots[next_pointer] == i) {
                merged.push_back({true, Vocab::kPronoun,
                                  Vocab::relation(static_cast<int>(
                                      rng.range(0, Vocab::kNumRelations - 1))),
                                  value_pool[static_cast<std::size_t>(m) + next_pointer], i});
                ++next_pointer;
            }
            if (i < m) merged.push_back(plan[static_cast<std::size_t>(i)]);
        }
        plan = std::move(merged);
    }

    // turn assignment: nondecreasing turn index per planned fact
    std::vector<int> turn_of(plan.size());
    for (auto& t : turn_of) t = static_cast<int>(rng.range(0, attrs.history_turns - 1));
    std::sort(turn_of.begin(), turn_of.end());

    auto& h = conv.history;
    h.push_back(Vocab::kBos);
    h.push_back(Vocab::kTopic);
    h.push_back(Vocab::digit((attrs.topic_id >> 4) & 0xF));
    h.push_back(Vocab::digit(attrs.topic_id & 0xF));
    h.push_back(Vocab::kTone);
    h.push_back(Vocab::tone(attrs.tone));

    int last_regular_entity = -1;
    std::size_t fact_idx = 0;
    for (int turn = 0; turn < attrs.history_turns; ++turn) {
        h.push_back(Vocab::kUser);
        h.push_back(Vocab::relation(static_cast<int>(rng.range(0, Vocab::kNumRelations - 1))));
        h.push_back(Vocab::kQMark);
        h.push_back(Vocab::kAssistant);
        while (fact_idx < plan.size() && turn_of[fact_idx] == turn) {
            const Planned& p = plan[fact_idx];
            Fact f;
            f.pointer = p.pointer;
            f.relation = p.relation;
            f.value = p.value;
            f.entity = p.entity;
            if (p.pointer) {
                if (last_regular_entity < 0)
                    throw UsageError("pointer fact scheduled before any antecedent");
                f.antecedent = last_regular_entity;
            } else {
                last_regular_entity = p.entity;
            }
            f.range.start = static_cast<int>(h.size());
            h.push_back(p.entity);
            h.push_back(p.relation);
            h.push_back(p.value);
            f.range.end = static_cast<int>(h.size()) - 1;
            h.push_back(Vocab::kSep);
            conv.facts.push_back(f);
            ++fact_idx;
        }
    }
    return conv;
}

// ---- oracle answers ---------------------------------------------------------

std::vector<int> oracle_answer(const std::vector<Fact>& facts, Scenario scenario,
                               const std::vector<std::size_t>& quoted) {
    auto in_quoted = [&](std::size_t i) {
        return std::find(quoted.begin(), quoted.end(), i) != quoted.end();
    };
    std::vector<int> out;
    switch (scenario) {
        case Scenario::Base:
            if (quoted.size() != 1) throw UsageError("base scenario quotes exactly one span");
            out.push_back(facts[quoted[0]].value);
            break;
        case Scenario::MultiSpan: {
            if (quoted.size() < 2) throw UsageError("multi-span scenario quotes >= 2 spans");
            std::vector<std::size_t> sorted = quoted;
            std::sort(sorted.begin(), sorted.end(), [&](std::size_t a, std::size_t b) {
                return facts[a].range.start < facts[b].range.start;
            });
            for (std::size_t i : sorted) out.push_back(facts[i].value);
            break;
        }
        case Scenario::Exclude:
            if (quoted.empty()) throw UsageError("exclude scenario quotes at least one span");
            for (std::size_t i = 0; i < facts.size(); ++i)
                if (!in_quoted(i)) out.push_back(facts[i].value);
            break;
        case Scenario::InfoCombine: {
            if (quoted.size() != 1)
                throw UsageError("info-combine quotes exactly one reference span");
            const int ref_rank = Vocab::value_rank(facts[quoted[0]].value);
            for (std::size_t i = 0; i < facts.size(); ++i)
                if (i != quoted[0] && Vocab::value_rank(facts[i].value) > ref_rank)
                    out.push_back(facts[i].entity);
            if (out.empty()) out.push_back(Vocab::kNone);
            break;
        }
        case Scenario::Coref:
            if (quoted.size() != 1) throw UsageError("coref quotes exactly one pointer span");
            if (!facts[quoted[0]].pointer)
                throw UsageError("coref quote must land on a pointer fact");
            out.push_back(facts[quoted[0]].antecedent);
            break;
    }
    return out;
}

// ---- Step 3: task build -----------------------------------------------------

namespace {

std::vector<std::size_t> sorted_by_position(const std::vector<Fact>& facts,
                                            std::vector<std::size_t> idx) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return facts[a].range.start < facts[b].range.start;
    });
    return idx;
}

}  // namespace

TaskBuild build_task(const Conversation& conv, Scenario scenario, const std::string& task_tag,
                     Rng& rng) {
    const auto& facts = conv.facts;
    std::vector<std::size_t> regular, pointers;
    for (std::size_t i = 0; i < facts.size(); ++i)
        (facts[i].pointer ? pointers : regular).push_back(i);
    const int m = static_cast<int>(regular.size());
    if (m < scenario_min_facts(scenario))
        throw UsageError("scenario " + std::string(scenario_name(scenario)) + " needs >= " +
                         std::to_string(scenario_min_facts(scenario)) + " facts, got " +
                         std::to_string(m));
    if (task_tag != task_name(scenario))
        throw UsageError("task tag '" + task_tag + "' does not belong to scenario " +
                         scenario_name(scenario));

    TaskBuild t;
    t.question = {Vocab::kUser, task_token(scenario), Vocab::kQMark};

    switch (scenario) {
        case Scenario::Base: {
            t.quoted = {regular[static_cast<std::size_t>(rng.range(0, m - 1))]};
            t.gold = oracle_answer(facts, scenario, t.quoted);
            for (std::size_t i : regular)
                if (i != t.quoted[0]) t.alternatives.push_back({facts[i].value});
            break;
        }
        case Scenario::MultiSpan: {
            const int k = static_cast<int>(rng.range(2, std::min(3, m)));
            std::vector<std::size_t> pool = regular;
            rng.shuffle(pool);
            t.quoted = sorted_by_position(facts, {pool.begin(), pool.begin() + k});
            t.gold = oracle_answer(facts, scenario, t.quoted);
            // other same-size subsets as distractor sources
            for (int attempt = 0; attempt < 24 && t.alternatives.size() < 6; ++attempt) {
                std::vector<std::size_t> alt = regular;
                rng.shuffle(alt);
                alt.resize(static_cast<std::size_t>(k));
                alt = sorted_by_position(facts, std::move(alt));
                auto answer = oracle_answer(facts, scenario, alt);
                if (answer != t.gold &&
                    std::find(t.alternatives.begin(), t.alternatives.end(), answer) ==
                        t.alternatives.end())
                    t.alternatives.push_back(std::move(answer));
            }
            break;
        }
        case Scenario::Exclude: {
            const int c = static_cast<int>(rng.range(1, std::min(3, m - 2)));
            std::vector<std::size_t> pool = regular;
            rng.shuffle(pool);
            std::vector<std::size_t> complement(pool.begin(), pool.begin() + c);
            t.quoted = sorted_by_position(
                facts, std::vector<std::size_t>(pool.begin() + c, pool.end()));
            t.gold = oracle_answer(facts, scenario, t.quoted);
            // distractors swap one unquoted fact for a quoted one, so each
            // contains exactly one value the instruction says to ignore
            std::vector<std::size_t> comp_sorted = sorted_by_position(facts, complement);
            for (std::size_t qi : t.quoted) {
                for (std::size_t ci : comp_sorted) {
                    std::vector<std::size_t> swapped;
                    for (std::size_t x : comp_sorted)
                        if (x != ci) swapped.push_back(x);
                    swapped.push_back(qi);
                    swapped = sorted_by_position(facts, std::move(swapped));
                    std::vector<int> answer;
                    for (std::size_t x : swapped) answer.push_back(facts[x].value);
                    if (answer != t.gold &&
                        std::find(t.alternatives.begin(), t.alternatives.end(), answer) ==
                            t.alternatives.end())
                        t.alternatives.push_back(std::move(answer));
                    if (t.alternatives.size() >= 6) break;
                }
                if (t.alternatives.size() >= 6) break;
            }
            break;
        }
        case Scenario::InfoCombine: {
            // reference fact must have at least one value above and one below
            std::vector<std::size_t> by_rank = regular;
            std::sort(by_rank.begin(), by_rank.end(), [&](std::size_t a, std::size_t b) {
                return Vocab::value_rank(facts[a].value) < Vocab::value_rank(facts[b].value);
            });
            const int pick = static_cast<int>(rng.range(1, m - 2));
            t.quoted = {by_rank[static_cast<std::size_t>(pick)]};
            t.gold = oracle_answer(facts, scenario, t.quoted);
            t.foil = {Vocab::kNone};
            // entities strictly below the reference, in history order
            std::vector<int> below;
            const int ref_rank = Vocab::value_rank(facts[t.quoted[0]].value);
            for (std::size_t i : sorted_by_position(facts, regular))
                if (i != t.quoted[0] && Vocab::value_rank(facts[i].value) < ref_rank)
                    below.push_back(facts[i].entity);
            if (!below.empty() && below != t.gold) t.alternatives.push_back(below);
            break;
        }
        case Scenario::Coref: {
            if (pointers.size() < 2)
                throw UsageError("coref conversations need at least two pointer facts");
            std::set<int> antecedents;
            for (std::size_t i : pointers) antecedents.insert(facts[i].antecedent);
            if (antecedents.size() < 2)
                throw UsageError("coref pointers must resolve to distinct antecedents");
            t.quoted = {pointers[static_cast<std::size_t>(
                rng.range(0, static_cast<int>(pointers.size()) - 1))]};
            t.gold = oracle_answer(facts, scenario, t.quoted);
            // another pointer's antecedent leads the distractor list so the
            // cast item stays ambiguous once the quoted pointer is blanked
            std::set<int> seen{t.gold[0]};
            for (std::size_t i : sorted_by_position(facts, pointers))
                if (facts[i].antecedent != t.gold[0] && seen.insert(facts[i].antecedent).second)
                    t.alternatives.push_back({facts[i].antecedent});
            for (std::size_t i : sorted_by_position(facts, regular)) {
                if (seen.insert(facts[i].entity).second)
                    t.alternatives.push_back({facts[i].entity});
            }
            break;
        }
    }
    return t;
}

// ---- sample assembly --------------------------------------------------------

namespace {

Span granular_span(const Fact& f, SpanGranularity g) {
    if (f.pointer) {
        // the pointer position itself is the quotable thing
        switch (g) {
            case SpanGranularity::Word: return {f.range.start, f.range.start};
            case SpanGranularity::Sentence: return {f.range.start, f.range.end};
            case SpanGranularity::Paragraph: return {f.range.start, f.range.end + 1};
        }
    }
    switch (g) {
        case SpanGranularity::Word: return {f.range.end, f.range.end};  // the value token
        case SpanGranularity::Sentence: return {f.range.start, f.range.end};
        case SpanGranularity::Paragraph: return {f.range.start, f.range.end + 1};
    }
    return f.range;
}

}  // namespace

Sample assemble_open_sample(const AttributeSet& attrs, const Conversation& conv,
                            const TaskBuild& task, Scenario scenario, std::uint64_t seed) {
    Sample s;
    s.scenario = scenario;
    s.format = SampleFormat::OpenEnded;
    s.attrs = attrs;
    s.seed = seed;
    s.history_len = static_cast<int>(conv.history.size());
    s.facts = conv.facts;
    s.quoted_facts = task.quoted;
    s.gold_tokens = task.gold;

    std::vector<int> prompt = conv.history;
    const int q_start = static_cast<int>(prompt.size());
    prompt.insert(prompt.end(), task.question.begin(), task.question.end());
    s.question_span = {q_start, static_cast<int>(prompt.size()) - 1};
    s.instruction = vocab().render(prompt);
    s.output = vocab().render(task.gold);

    for (std::size_t qi : task.quoted)
        s.quote_spans.push_back(granular_span(conv.facts[qi], attrs.granularity));
    std::sort(s.quote_spans.begin(), s.quote_spans.end(),
              [](const Span& a, const Span& b) { return a.start < b.start; });
    const auto violations = validate(s.span_set());
    if (!violations.empty())
        throw UsageError("assembled spans invalid: " + violations[0].message);
    return s;
}

Sample cast_mcq(const Sample& open_sample, const TaskBuild& task, Rng& rng) {
    std::vector<std::vector<int>> distractors;
    for (const auto& alt : task.alternatives) {
        if (alt == task.gold) continue;
        if (std::find(distractors.begin(), distractors.end(), alt) != distractors.end())
            continue;
        distractors.push_back(alt);
    }
    const bool needs_foil = open_sample.scenario == Scenario::InfoCombine;
    if (needs_foil) {
        // the foil must sit among the lettered options
        auto it = std::find(distractors.begin(), distractors.end(), task.foil);
        if (it != distractors.end()) distractors.erase(it);
    }
    const std::size_t wanted = needs_foil ? 1 : 2;
    if (distractors.size() < wanted)
        throw UsageError("too few distinct distractors to cast a 4-option item");
    // the first alternative is guaranteed an option slot; the rest of the
    // pool fills the remaining one at random
    std::vector<std::vector<int>> contents{task.gold};
    if (needs_foil) contents.push_back(task.foil);
    contents.push_back(distractors[0]);
    if (!needs_foil)
        contents.push_back(
            distractors[1 + static_cast<std::size_t>(
                                rng.range(0, static_cast<int>(distractors.size()) - 2))]);

    std::vector<int> order{0, 1, 2};
    rng.shuffle(order);

    Sample s = open_sample;
    s.format = SampleFormat::Mcq;
    s.options.assign(4, {});
    for (int pos = 0; pos < 3; ++pos) {
        s.options[static_cast<std::size_t>(pos)] = contents[static_cast<std::size_t>(order[pos])];
        if (order[pos] == 0) s.gold_option = pos;
        if (needs_foil && order[pos] == 1) s.foil_option = pos;
    }
    s.options[3] = {Vocab::kInsufficient};

    std::vector<int> prompt = vocab().tokenize(open_sample.instruction);
    for (int pos = 0; pos < 4; ++pos) {
        prompt.push_back(Vocab::letter(pos));
        prompt.insert(prompt.end(), s.options[static_cast<std::size_t>(pos)].begin(),
                      s.options[static_cast<std::size_t>(pos)].end());
    }
    prompt.push_back(Vocab::kFormatMcq);
    s.question_span.end = static_cast<int>(prompt.size()) - 1;
    s.instruction = vocab().render(prompt);
    s.output = vocab().render({Vocab::kAnswerIs, Vocab::letter(s.gold_option), Vocab::kPeriod});
    return s;
}

// ---- solver views -----------------------------------------------------------

namespace {

bool is_fact_content(int tok) {
    return Vocab::is_entity(tok) || Vocab::is_value(tok) || tok == Vocab::kPronoun ||
           (tok >= Vocab::kRelation0 && tok < Vocab::kRelation0 + Vocab::kNumRelations);
}

}  // namespace

std::string render_solver_view(const Sample& sample, SolverView view) {
    const std::vector<int> tokens = sample.prompt_tokens();
    const int T = static_cast<int>(tokens.size());
    if (sample.question_span.start <= 0 || sample.question_span.start >= T ||
        sample.question_span.end != T - 1)
        throw UsageError("sample has no well-formed question span");
    if (view == SolverView::ContextQuoteOnly && sample.scenario != Scenario::InfoCombine)
        throw UsageError("context view only applies to info-combine samples");

    std::vector<bool> quoted(static_cast<std::size_t>(T), false);
    for (const Span& sp : sample.quote_spans)
        for (int j = sp.start; j <= sp.end && j < T; ++j) quoted[static_cast<std::size_t>(j)] = true;

    // which fact-content positions stay visible
    std::vector<bool> visible(static_cast<std::size_t>(T), true);
    auto blank_unquoted_facts = [&] {
        for (const Fact& f : sample.facts)
            for (int j = f.range.start; j <= f.range.end; ++j)
                if (!quoted[static_cast<std::size_t>(j)]) visible[static_cast<std::size_t>(j)] = false;
    };
    switch (view) {
        case SolverView::Full:
            break;
        case SolverView::Sufficiency:
            switch (sample.scenario) {
                case Scenario::Base:
                case Scenario::MultiSpan:
                case Scenario::Exclude:
                    blank_unquoted_facts();
                    break;
                case Scenario::InfoCombine:
                    break;  // quoted plus full background context
                case Scenario::Coref: {
                    // prefix view: everything after the quoted pointer is blanked
                    int span_end = 0;
                    for (const Span& sp : sample.quote_spans) span_end = std::max(span_end, sp.end);
                    for (const Fact& f : sample.facts)
                        for (int j = f.range.start; j <= f.range.end; ++j)
                            if (j > span_end) visible[static_cast<std::size_t>(j)] = false;
                    break;
                }
            }
            break;
        case SolverView::Necessity:
            for (int j = 0; j < sample.history_len; ++j)
                if (quoted[static_cast<std::size_t>(j)]) visible[static_cast<std::size_t>(j)] = false;
            break;
        case SolverView::ContextQuoteOnly:
            blank_unquoted_facts();
            break;
    }

    const bool mark = view != SolverView::Necessity;
    std::vector<int> out;
    out.reserve(tokens.size() + 2 * sample.quote_spans.size());
    for (int j = 0; j < T; ++j) {
        const bool q = quoted[static_cast<std::size_t>(j)];
        const bool prev_q = j > 0 && quoted[static_cast<std::size_t>(j - 1)];
        if (mark && q && !prev_q) out.push_back(Vocab::kOpenEmph);
        int tok = tokens[static_cast<std::size_t>(j)];
        if (!visible[static_cast<std::size_t>(j)] && is_fact_content(tok)) tok = Vocab::kPad;
        out.push_back(tok);
        const bool next_q = j + 1 < T && quoted[static_cast<std::size_t>(j + 1)];
        if (mark && q && !next_q) out.push_back(Vocab::kCloseEmph);
    }
    return vocab().render(out);
}

// ---- the oracle solver ------------------------------------------------------

namespace {

struct ParsedFactSlot {
    std::optional<int> entity;    // nullopt when blanked; pronoun recorded as kPronoun
    std::optional<int> relation;
    std::optional<int> value;
    bool quoted = false;
    int position = 0;  // slot order
};

struct ParsedPrompt {
    std::vector<ParsedFactSlot> slots;
    Scenario scenario = Scenario::Base;
    bool has_options = false;
    std::vector<std::vector<int>> options;
    bool selection_marked = false;
};

// answer pattern: one entry per answer token; nullopt = unknown content
using Pattern = std::vector<std::optional<int>>;

ParsedPrompt parse_prompt(const std::string& prompt) {
    const auto tokens = vocab().tokenize(prompt);
    // split at the last <usr>
    int q_start = -1;
    for (int i = 0; i < static_cast<int>(tokens.size()); ++i)
        if (tokens[static_cast<std::size_t>(i)] == Vocab::kUser) q_start = i;
    if (q_start < 0 || q_start + 1 >= static_cast<int>(tokens.size()))
        throw UsageError("solver prompt has no question");

    ParsedPrompt p;
    auto maybe_sc = scenario_of_task_token(tokens[static_cast<std::size_t>(q_start) + 1]);
    if (!maybe_sc) throw UsageError("solver prompt has no recognizable task token");
    p.scenario = *maybe_sc;

    // history fact slots
    bool in_quote = false;
    std::vector<std::pair<int, bool>> content;  // (token, quoted), markers stripped
    for (int i = 0; i < q_start; ++i) {
        const int tok = tokens[static_cast<std::size_t>(i)];
        if (tok == Vocab::kOpenEmph) {
            in_quote = true;
            p.selection_marked = true;
            continue;
        }
        if (tok == Vocab::kCloseEmph) {
            in_quote = false;
            continue;
        }
        content.emplace_back(tok, in_quote);
    }
    auto slot_of = [](int tok) -> std::optional<int> {
        if (tok == Vocab::kPad) return std::nullopt;
        return tok;
    };
    int pos = 0;
    for (std::size_t i = 0; i + 4 <= content.size(); ++i) {
        const auto [t0, q0] = content[i];
        const auto [t1, q1] = content[i + 1];
        const auto [t2, q2] = content[i + 2];
        if (content[i + 3].first != Vocab::kSep) continue;
        const bool e_ok = Vocab::is_entity(t0) || t0 == Vocab::kPronoun || t0 == Vocab::kPad;
        const bool r_ok =
            (t1 >= Vocab::kRelation0 && t1 < Vocab::kRelation0 + Vocab::kNumRelations) ||
            t1 == Vocab::kPad;
        const bool v_ok = Vocab::is_value(t2) || t2 == Vocab::kPad;
        if (!e_ok || !r_ok || !v_ok) continue;
        ParsedFactSlot slot;
        slot.entity = slot_of(t0);
        slot.relation = slot_of(t1);
        slot.value = slot_of(t2);
        slot.quoted = q0 || q1 || q2;
        slot.position = pos++;
        p.slots.push_back(slot);
        i += 3;  // skip past this fact
    }

    // options
    for (std::size_t i = static_cast<std::size_t>(q_start); i < tokens.size(); ++i) {
        if (Vocab::is_letter(tokens[i])) {
            p.has_options = true;
            std::vector<int> content_toks;
            for (std::size_t j = i + 1;
                 j < tokens.size() && !Vocab::is_letter(tokens[j]) &&
                 tokens[j] != Vocab::kFormatMcq;
                 ++j)
                content_toks.push_back(tokens[j]);
            p.options.push_back(std::move(content_toks));
        }
    }
    return p;
}

bool pattern_concrete(const Pattern& pat) {
    for (const auto& t : pat)
        if (!t.has_value()) return false;
    return true;
}

// wildcards may only stand for values that are not visible anywhere else
// (fact values are pairwise distinct within a conversation)
bool pattern_matches(const Pattern& pat, const std::vector<int>& option,
                     const std::set<int>& visible_values) {
    if (pat.size() != option.size()) return false;
    for (std::size_t i = 0; i < pat.size(); ++i) {
        if (pat[i].has_value()) {
            if (*pat[i] != option[i]) return false;
        } else {
            if (visible_values.count(option[i]) > 0) return false;
        }
    }
    return true;
}

void enumerate_subsets(std::size_t n, std::size_t k, std::vector<std::size_t>& cur,
                       std::size_t start, const std::function<void(const std::vector<std::size_t>&)>& emit) {
    if (cur.size() == k) {
        emit(cur);
        return;
    }
    for (std::size_t i = start; i < n; ++i) {
        cur.push_back(i);
        enumerate_subsets(n, k, cur, i + 1, emit);
        cur.pop_back();
    }
}

struct Decision {
    std::vector<int> letters;   // option indices in the decision set
    std::set<int> starred;      // concretely matched options
    Pattern sole_pattern;       // for open-ended responses
    bool sole_pattern_valid = false;
};

Decision decide(const ParsedPrompt& p) {
    const auto& slots = p.slots;
    const std::size_t n = slots.size();
    std::set<int> visible_values;
    for (const auto& s : slots)
        if (s.value) visible_values.insert(*s.value);

    std::vector<std::size_t> marked;
    for (std::size_t i = 0; i < n; ++i)
        if (slots[i].quoted) marked.push_back(i);

    std::vector<Pattern> patterns;
    bool unresolvable = false;

    auto value_pattern = [&](const std::vector<std::size_t>& idx) {
        Pattern pat;
        for (std::size_t i : idx) pat.push_back(slots[i].value);
        return pat;
    };

    switch (p.scenario) {
        case Scenario::Base: {
            if (p.selection_marked) {
                if (marked.size() == 1) patterns.push_back(value_pattern(marked));
            } else {
                for (std::size_t i = 0; i < n; ++i) patterns.push_back(value_pattern({i}));
            }
            break;
        }
        case Scenario::MultiSpan: {
            if (p.selection_marked) {
                patterns.push_back(value_pattern(marked));
            } else {
                std::vector<std::size_t> cur;
                for (std::size_t k = 2; k <= std::min<std::size_t>(3, n); ++k)
                    enumerate_subsets(n, k, cur, 0, [&](const std::vector<std::size_t>& s) {
                        patterns.push_back(value_pattern(s));
                    });
            }
            break;
        }
        case Scenario::Exclude: {
            if (p.selection_marked) {
                std::vector<std::size_t> complement;
                for (std::size_t i = 0; i < n; ++i)
                    if (!slots[i].quoted) complement.push_back(i);
                patterns.push_back(value_pattern(complement));
            } else {
                // complements of size 1..3: the hidden selection is everything else
                std::vector<std::size_t> cur;
                for (std::size_t c = 1; c <= std::min<std::size_t>(3, n - 1); ++c)
                    enumerate_subsets(n, c, cur, 0, [&](const std::vector<std::size_t>& s) {
                        patterns.push_back(value_pattern(s));
                    });
            }
            break;
        }
        case Scenario::InfoCombine: {
            auto exceed_pattern = [&](std::size_t ref) -> std::optional<Pattern> {
                if (!slots[ref].value) return std::nullopt;
                const int ref_rank = Vocab::value_rank(*slots[ref].value);
                Pattern pat;
                for (std::size_t i = 0; i < n; ++i) {
                    if (i == ref) continue;
                    if (!slots[i].value) return std::nullopt;  // comparison unresolvable
                    if (Vocab::value_rank(*slots[i].value) > ref_rank) {
                        if (!slots[i].entity) return std::nullopt;
                        pat.push_back(slots[i].entity);
                    }
                }
                if (pat.empty()) pat.push_back(Vocab::kNone);
                return pat;
            };
            if (p.selection_marked) {
                if (marked.size() == 1) {
                    // background = every other visible fact; if none are
                    // visible the over-focused reading says nothing exceeds
                    bool any_background = false;
                    for (std::size_t i = 0; i < n; ++i)
                        if (i != marked[0] && (slots[i].value || slots[i].entity))
                            any_background = true;
                    if (!any_background) {
                        patterns.push_back({std::optional<int>(Vocab::kNone)});
                    } else {
                        auto pat = exceed_pattern(marked[0]);
                        if (pat)
                            patterns.push_back(*pat);
                        else
                            unresolvable = true;
                    }
                }
            } else {
                for (std::size_t i = 0; i < n; ++i) {
                    auto pat = exceed_pattern(i);
                    if (pat)
                        patterns.push_back(*pat);
                    else
                        unresolvable = true;
                }
            }
            break;
        }
        case Scenario::Coref: {
            auto antecedent_of = [&](std::size_t ptr) -> std::optional<int> {
                for (std::size_t j = ptr; j-- > 0;) {
                    if (slots[j].entity && Vocab::is_entity(*slots[j].entity))
                        return slots[j].entity;
                }
                return std::nullopt;
            };
            if (p.selection_marked) {
                if (marked.size() == 1) {
                    auto a = antecedent_of(marked[0]);
                    if (a)
                        patterns.push_back({a});
                    else
                        unresolvable = true;
                }
            } else {
                // hypotheses: visible pronouns and blanked entity slots
                for (std::size_t i = 0; i < n; ++i) {
                    const bool pronoun = slots[i].entity && *slots[i].entity == Vocab::kPronoun;
                    const bool blank = !slots[i].entity;
                    if (!pronoun && !blank) continue;
                    auto a = antecedent_of(i);
                    if (a)
                        patterns.push_back({a});
                    else
                        unresolvable = true;
                }
            }
            break;
        }
    }

    Decision d;
    if (!p.has_options) {
        if (patterns.size() == 1 && pattern_concrete(patterns[0]) && !unresolvable) {
            d.sole_pattern = patterns[0];
            d.sole_pattern_valid = true;
        }
        return d;
    }

    // match options A..C (D is the fixed insufficiency sentence)
    const int lettered = std::min<int>(3, static_cast<int>(p.options.size()));
    bool any_matched = false;
    for (int o = 0; o < lettered; ++o) {
        bool matched = unresolvable;  // unresolvable comparisons rule nothing out
        bool concrete = false;
        for (const auto& pat : patterns) {
            if (pattern_matches(pat, p.options[static_cast<std::size_t>(o)], visible_values)) {
                matched = true;
                if (pattern_concrete(pat)) concrete = true;
            }
        }
        if (matched) {
            d.letters.push_back(o);
            any_matched = true;
            if (concrete) d.starred.insert(o);
        }
    }
    if (!any_matched && p.options.size() >= 4) d.letters.push_back(3);  // insufficiency
    return d;
}

}  // namespace

std::string oracle_solve(const std::string& prompt) {
    const ParsedPrompt parsed = parse_prompt(prompt);
    const Decision d = decide(parsed);
    if (!parsed.has_options) {
        if (!d.sole_pattern_valid) return "abstain";
        std::vector<int> toks;
        for (const auto& t : d.sole_pattern) toks.push_back(*t);
        return vocab().render(toks);
    }
    if (d.letters.empty()) return "abstain";
    std::string out;
    for (std::size_t i = 0; i < d.letters.size(); ++i) {
        if (i) out += ' ';
        out += vocab().name(Vocab::letter(d.letters[i]));
        if (d.starred.count(d.letters[i])) out += '*';
    }
    return out;
}

std::string SolverClient::solve(const std::string& prompt) const {
    if (!port_.configured()) return oracle_solve(prompt);
    PortRequest req;
    req.prompt = prompt;
    req.max_tokens = 64;
    PortError err;
    auto text = port_.complete(req, &err);
    if (!text)
        throw IoError("solver port '" + port_.name() + "' failed: " + err.message +
                      (err.timeout ? " (timeout)" : ""));
    return *text;
}

// ---- the three validity checks ----------------------------------------------

namespace {

struct LetterSet {
    std::set<int> all;
    std::set<int> starred;
};

LetterSet parse_letters(const std::string& response) {
    LetterSet out;
    std::istringstream in(response);
    std::string tok;
    while (in >> tok) {
        if (tok == "abstain") continue;
        bool star = false;
        if (!tok.empty() && tok.back() == '*') {
            star = true;
            tok.pop_back();
        }
        if (tok.size() != 1 || tok[0] < 'A' || tok[0] > 'D') continue;
        const int idx = tok[0] - 'A';
        out.all.insert(idx);
        if (star) out.starred.insert(idx);
    }
    return out;
}

bool selection_bearing(Scenario s) {
    return s == Scenario::Exclude || s == Scenario::InfoCombine || s == Scenario::Coref;
}

}  // namespace

CheckOutcome check_sufficiency(const Sample& mcq, const SolverClient& solver) {
    if (mcq.format != SampleFormat::Mcq)
        throw UsageError("validity checks run on MCQ-cast samples");
    const auto response = solver.solve(render_solver_view(mcq, SolverView::Sufficiency));
    const LetterSet ls = parse_letters(response);
    const bool pass = ls.all == std::set<int>{mcq.gold_option};
    return {pass, "solver chose [" + response + "], gold " +
                      std::string(1, static_cast<char>('A' + mcq.gold_option))};
}

CheckOutcome check_necessity(const Sample& mcq, const SolverClient& solver) {
    if (mcq.format != SampleFormat::Mcq)
        throw UsageError("validity checks run on MCQ-cast samples");
    const auto response = solver.solve(render_solver_view(mcq, SolverView::Necessity));
    const LetterSet ls = parse_letters(response);
    const bool unique_gold = ls.all == std::set<int>{mcq.gold_option};
    bool pass;
    if (selection_bearing(mcq.scenario)) {
        // the answer lives outside the spans; necessity = the hidden
        // selection leaves several complements open
        pass = !unique_gold;
    } else {
        // the answer lives inside the spans; necessity = the gold is not
        // concretely recoverable once they are blanked
        pass = !unique_gold && ls.starred.count(mcq.gold_option) == 0;
    }
    return {pass, "solver chose [" + response + "] without the spans"};
}

CheckOutcome check_context_requirement(const Sample& mcq, const SolverClient& solver) {
    if (mcq.format != SampleFormat::Mcq)
        throw UsageError("validity checks run on MCQ-cast samples");
    if (mcq.scenario != Scenario::InfoCombine)
        throw UsageError("context check applies only to info-combine samples");
    if (mcq.foil_option < 0) return {false, "no foil option recorded"};
    if (mcq.foil_option == mcq.gold_option) return {false, "foil coincides with gold"};
    const auto starved = solver.solve(render_solver_view(mcq, SolverView::ContextQuoteOnly));
    const auto informed = solver.solve(render_solver_view(mcq, SolverView::Full));
    const bool foiled = parse_letters(starved).all == std::set<int>{mcq.foil_option};
    const bool golded = parse_letters(informed).all == std::set<int>{mcq.gold_option};
    return {foiled && golded,
            "starved -> [" + starved + "], informed -> [" + informed + "]"};
}

bool run_validity_checks(const Sample& mcq, const SolverClient& solver, std::string* why) {
    const CheckOutcome s = check_sufficiency(mcq, solver);
    if (!s.pass) {
        if (why) *why = "sufficiency: " + s.detail;
        return false;
    }
    const CheckOutcome n = check_necessity(mcq, solver);
    if (!n.pass) {
        if (why) *why = "necessity: " + n.detail;
        return false;
    }
    if (mcq.scenario == Scenario::InfoCombine) {
        const CheckOutcome c = check_context_requirement(mcq, solver);
        if (!c.pass) {
            if (why) *why = "context: " + c.detail;
            return false;
        }
    }
    return true;
}

// ---- step-5 scoring hook ------------------------------------------------------

FlagResult score_and_flag(const Sample& sample, const SolverClient& solver, double threshold) {
    double score = 0.0;
    std::string reason;

    // structural lint: spans valid, question span sane, record round-trips
    bool structural = validate(sample.span_set()).empty();
    const auto toks = sample.prompt_tokens();
    structural = structural && sample.question_span.start > 0 &&
                 sample.question_span.end == static_cast<int>(toks.size()) - 1 &&
                 sample.question_span.start >= sample.history_len;
    try {
        structural = structural && Sample::from_jsonl(sample.to_jsonl()).to_jsonl() ==
                                       sample.to_jsonl();
    } catch (const std::exception&) {
        structural = false;
    }
    if (structural)
        score += 0.5;
    else
        reason = "structural lint failed";

    // oracle re-solve agreement
    try {
        const std::string answer = solver.solve(render_solver_view(sample, SolverView::Full));
        bool agrees;
        if (sample.format == SampleFormat::Mcq) {
            agrees = parse_letters(answer).all == std::set<int>{sample.gold_option};
        } else {
            agrees = vocab().tokenize(answer) == sample.gold_tokens;
        }
        if (agrees)
            score += 0.5;
        else if (reason.empty())
            reason = "oracle re-solve disagrees: [" + answer + "]";
    } catch (const std::exception& e) {
        if (reason.empty()) reason = std::string("judge failure: ") + e.what();
    }

    FlagResult out;
    out.score = score;
    out.accepted = score >= threshold;
    out.reason = out.accepted ? "" : reason;
    return out;
}

// ---- generation driver --------------------------------------------------------

std::optional<GeneratedPair> generate_sample_pair(Scenario scenario, bool test_split,
                                                  const PipelineConfig& cfg,
                                                  std::uint64_t sample_seed,
                                                  const std::string& id_prefix,
                                                  std::vector<std::string>* review_out) {
    Rng rng(sample_seed);
    SolverClient oracle;
    auto flag_to_review = [&](const Sample& s, const std::string& reason) {
        if (review_out == nullptr) return;
        ordered_json j;
        j["reason"] = reason;
        j["record"] = s.to_jsonl();
        review_out->push_back(j.dump());
    };
    for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
        AttributeSet attrs = sample_attributes(rng, test_split, cfg, scenario);
        if (attrs.info_points < scenario_min_facts(scenario)) continue;
        Conversation conv = generate_conversation(attrs, scenario, rng);
        TaskBuild task;
        Sample open, mcq;
        try {
            task = build_task(conv, scenario, attrs.task_tag, rng);
            open = assemble_open_sample(attrs, conv, task, scenario, sample_seed);
            mcq = cast_mcq(open, task, rng);
        } catch (const UsageError&) {
            continue;  // arity or distractor shortfall; redraw
        }
        std::string why;
        if (!run_validity_checks(mcq, oracle, &why)) continue;
        const FlagResult open_flag = score_and_flag(open, oracle, cfg.flag_threshold);
        if (!open_flag.accepted) {
            flag_to_review(open, open_flag.reason);
            continue;
        }
        const FlagResult mcq_flag = score_and_flag(mcq, oracle, cfg.flag_threshold);
        if (!mcq_flag.accepted) {
            flag_to_review(mcq, mcq_flag.reason);
            continue;
        }
        open.id = id_prefix + "-open";
        mcq.id = id_prefix + "-mcq";
        return GeneratedPair{std::move(open), std::move(mcq)};
    }
    return std::nullopt;
}

CorpusPaths emit_corpus(const PipelineConfig& cfg, std::uint64_t seed,
                        const std::string& out_dir, int threads) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create corpus directory " + out_dir + ": " + ec.message());

    CorpusPaths paths;
    const Scenario all[] = {Scenario::Base, Scenario::MultiSpan, Scenario::Exclude,
                            Scenario::InfoCombine, Scenario::Coref};
    for (int split = 0; split < 2; ++split) {
        const bool test_split = split == 1;
        const std::string split_name = test_split ? "test" : "train";
        for (int sc = 0; sc < 5; ++sc) {
            const Scenario scenario = all[sc];
            const int n = cfg.scaled(scenario, test_split);
            std::vector<std::optional<GeneratedPair>> pairs(static_cast<std::size_t>(n));
            std::vector<std::vector<std::string>> reviews(static_cast<std::size_t>(n));
            parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t i) {
                const std::uint64_t k =
                    (static_cast<std::uint64_t>(split) * 5 + static_cast<std::uint64_t>(sc)) *
                        1000000ull +
                    i;
                const std::string prefix =
                    split_name + "-" + scenario_name(scenario) + "-" + std::to_string(i);
                pairs[i] = generate_sample_pair(scenario, test_split, cfg,
                                                Rng::split(seed, k).next_u64(), prefix,
                                                &reviews[i]);
            });
            for (std::size_t i = 0; i < pairs.size(); ++i)
                if (!pairs[i])
                    throw UsageError("generation exhausted retries for " + split_name + "/" +
                                     scenario_name(scenario) + " sample " + std::to_string(i));
            std::vector<std::string> flagged;
            for (auto& r : reviews) flagged.insert(flagged.end(), r.begin(), r.end());
            if (!flagged.empty()) {
                const std::string path =
                    (fs::path(out_dir) /
                     ("review_" + split_name + "_" + std::string(scenario_name(scenario)) +
                      ".jsonl"))
                        .string();
                std::ofstream out(path, std::ios::binary | std::ios::trunc);
                for (const auto& line : flagged) out << line << '\n';
                paths.review.push_back(path);
            }

            for (SampleFormat fmt : {SampleFormat::Mcq, SampleFormat::OpenEnded}) {
                const std::string path = (fs::path(out_dir) /
                                          (split_name + "_" + scenario_name(scenario) + "_" +
                                           format_name(fmt) + ".jsonl"))
                                             .string();
                std::ofstream out(path, std::ios::binary | std::ios::trunc);
                if (!out) throw IoError("cannot open corpus file for writing: " + path);
                for (const auto& pair : pairs) {
                    const Sample& s = fmt == SampleFormat::Mcq ? pair->mcq : pair->open;
                    out << s.to_jsonl() << '\n';
                }
                if (!out) throw IoError("write failure on corpus file: " + path);
                paths.files.push_back(path);
            }
        }
    }
    return paths;
}

std::vector<Sample> load_corpus_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open corpus file: " + path);
    std::vector<Sample> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(Sample::from_jsonl(line));
        } catch (const std::exception& e) {
            throw IoError(path + ":" + std::to_string(lineno) + ": bad record: " + e.what());
        }
    }
    return out;
}

// ---- counterexample families --------------------------------------------------

Sample make_counterexample_wrong_span(const Sample& mcq) {
    Sample bad = mcq;
    // re-point the quote at a fact outside the recorded selection
    std::optional<std::size_t> other;
    for (std::size_t i = 0; i < bad.facts.size(); ++i) {
        if (std::find(bad.quoted_facts.begin(), bad.quoted_facts.end(), i) !=
            bad.quoted_facts.end())
            continue;
        if (bad.scenario == Scenario::Coref && !bad.facts[i].pointer) continue;
        other = i;
        break;
    }
    if (!other) throw UsageError("no unquoted fact available for the wrong-span family");
    bad.quote_spans = {granular_span(bad.facts[*other], bad.attrs.granularity)};
    return bad;
}

Sample make_counterexample_gold_leak(const Sample& mcq) {
    if (mcq.scenario != Scenario::Base)
        throw UsageError("the gold-leak family is built from base samples");
    Sample bad = mcq;
    const int gold_value = bad.facts[bad.quoted_facts[0]].value;
    // duplicate the gold value into some unquoted fact, violating the
    // distinct-value guarantee the necessity check leans on
    std::optional<std::size_t> victim;
    for (std::size_t i = 0; i < bad.facts.size(); ++i)
        if (i != bad.quoted_facts[0]) {
            victim = i;
            break;
        }
    if (!victim) throw UsageError("no second fact available for the gold-leak family");
    auto tokens = bad.prompt_tokens();
    tokens[static_cast<std::size_t>(bad.facts[*victim].range.end)] = gold_value;
    bad.facts[*victim].value = gold_value;
    bad.instruction = vocab().render(tokens);
    return bad;
}

Sample make_counterexample_quote_sufficient(const Sample& info_combine_mcq) {
    if (info_combine_mcq.scenario != Scenario::InfoCombine)
        throw UsageError("the quote-sufficient family is built from info-combine samples");
    Sample bad = info_combine_mcq;
    // pretend the over-focused reading is the gold: the quote alone now
    // "answers" the question, so the context check must reject it
    bad.gold_option = bad.foil_option;
    bad.output = vocab().render({Vocab::kAnswerIs, Vocab::letter(bad.gold_option), Vocab::kPeriod});
    return bad;
}

}  // namespace spanlab
