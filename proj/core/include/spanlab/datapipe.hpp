#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "spanlab/ports.hpp"
#include "spanlab/rng.hpp"
#include "spanlab/span.hpp"
#include "spanlab/vocab.hpp"

namespace spanlab {

enum class SpanGranularity { Word, Sentence, Paragraph };
const char* granularity_name(SpanGranularity g);
bool granularity_from_name(const std::string& name, SpanGranularity* out);

enum class SampleFormat { Mcq, OpenEnded };
const char* format_name(SampleFormat f);
bool format_from_name(const std::string& name, SampleFormat* out);

// Structured attribute set drawn before anything else; it fully determines
// the conversation and task that follow.
struct AttributeSet {
    int topic_id = 0;
    bool test_topic = false;
    int tone = 0;            // index into the tone pool
    int history_turns = 1;   // 1..10
    int info_points = 2;     // 2..10
    std::string task_tag;
    SpanGranularity granularity = SpanGranularity::Sentence;
};

// One quotable information point: "entity relation value" emitted verbatim
// at `range` in the history. Coref pointer facts carry the pronoun token in
// the entity slot and record their resolved antecedent.
struct Fact {
    int entity = 0;
    int relation = 0;
    int value = 0;
    Span range;             // the three content tokens
    bool pointer = false;
    int antecedent = -1;    // entity token the pointer resolves to
};

struct PipelineConfig {
    int topic_count = 102;
    int train_topics = 67;  // remaining topics form the held-out pool
    double count_scale = 0.1;
    int max_attempts = 64;  // per-sample generation retries
    double flag_threshold = 1.0;  // minimum judge score for acceptance

    // per-scenario training-set targets at scale 1.0 (each format)
    int base_count = 2200;
    int multi_count = 2400;
    int exclude_count = 2400;
    int info_count = 2300;
    int coref_count = 2200;
    // benchmark split target at scale 1.0 (each scenario and format)
    int bench_count = 500;

    int scaled(Scenario s, bool test_split) const;
};

struct Sample {
    std::string id;
    Scenario scenario = Scenario::Base;
    SampleFormat format = SampleFormat::OpenEnded;
    std::string instruction;  // rendered prompt token stream
    std::string input;        // always empty, kept for the record schema
    std::string output;       // rendered gold answer
    std::vector<Span> quote_spans;  // offsets into the instruction tokens
    Span question_span;
    // metadata
    AttributeSet attrs;
    std::uint64_t seed = 0;
    int history_len = 0;
    std::vector<Fact> facts;
    std::vector<std::size_t> quoted_facts;
    std::vector<std::vector<int>> options;  // MCQ option content tokens
    int gold_option = -1;
    int foil_option = -1;                   // info-combine over-focus option
    std::vector<int> gold_tokens;           // semantic answer tokens

    std::vector<int> prompt_tokens() const;
    std::vector<int> output_tokens() const;
    SpanSet span_set() const;

    std::string to_jsonl() const;
    static Sample from_jsonl(const std::string& line);
};

// ---- pipeline stages --------------------------------------------------------

// Step 1: attribute synthesis. Topics come from the split's pool only.
AttributeSet sample_attributes(Rng& rng, bool test_split, const PipelineConfig& cfg,
                               Scenario scenario);

struct Conversation {
    std::vector<int> history;
    std::vector<Fact> facts;
};

// Step 2: conversation + exhaustive fact spans. Coref conversations insert
// pointer facts whose antecedent is the nearest preceding entity.
Conversation generate_conversation(const AttributeSet& attrs, Scenario scenario, Rng& rng);

struct TaskBuild {
    std::vector<int> question;             // U tokens (open-ended form)
    std::vector<std::size_t> quoted;       // chosen fact subset
    std::vector<int> gold;                 // answer for the chosen subset
    std::vector<std::vector<int>> alternatives;  // answers to other span subsets
    std::vector<int> foil;                 // info-combine: the over-focused answer
};

// Step 3: task-driven question + span-subset selection + per-subset answers.
TaskBuild build_task(const Conversation& conv, Scenario scenario, const std::string& task_tag,
                     Rng& rng);

// The deterministic answer oracle used for gold labels and all checks.
std::vector<int> oracle_answer(const std::vector<Fact>& facts, Scenario scenario,
                               const std::vector<std::size_t>& quoted);

// Assembles the open-ended sample for a finished task build.
Sample assemble_open_sample(const AttributeSet& attrs, const Conversation& conv,
                            const TaskBuild& task, Scenario scenario, std::uint64_t seed);

// Step 4 casting: options A-C are the gold plus two distractor answers,
// option D is the fixed insufficiency sentence. Throws UsageError when too
// few distinct distractors exist.
Sample cast_mcq(const Sample& open_sample, const TaskBuild& task, Rng& rng);

// ---- the oracle solver ------------------------------------------------------

// Restricted renderings of a sample handed to the solver port.
enum class SolverView {
    Full,             // everything visible, selection marked
    Sufficiency,      // scenario-specific visibility, selection marked
    Necessity,        // quoted spans blanked, selection withheld
    ContextQuoteOnly  // info-combine: background withheld, selection marked
};

std::string render_solver_view(const Sample& sample, SolverView view);

// Deterministic in-process solver implementing the port contract: MCQ
// prompts return consistent option letters ("B" / "A C" / "abstain"),
// concretely-derivable options starred ("B*"); open-ended prompts return the
// derived answer tokens.
std::string oracle_solve(const std::string& prompt);

// Wraps oracle_solve or an external port into one call.
class SolverClient {
public:
    SolverClient() = default;
    explicit SolverClient(TextPort port) : port_(std::move(port)) {}
    // Throws IoError when a configured external port keeps failing.
    std::string solve(const std::string& prompt) const;

private:
    TextPort port_;
};

struct CheckOutcome {
    bool pass = false;
    std::string detail;
};

// Step 4(i): with only the chosen spans (plus context where the scenario
// needs it), the solver must pick the gold option uniquely.
CheckOutcome check_sufficiency(const Sample& mcq, const SolverClient& solver = {});
// Step 4(ii): with the spans blanked and the selection withheld, the solver
// must not uniquely arrive at the gold.
CheckOutcome check_necessity(const Sample& mcq, const SolverClient& solver = {});
// Step 4(iii), info-combine only: without the background the solver must
// fall for the foil; with it, the gold.
CheckOutcome check_context_requirement(const Sample& mcq, const SolverClient& solver = {});

bool run_validity_checks(const Sample& mcq, const SolverClient& solver, std::string* why);

// Step 5 hook: template judge = oracle re-solve + structural lint. Returns
// the score in [0,1]; samples below the threshold are flagged for review.
struct FlagResult {
    bool accepted = false;
    double score = 0.0;
    std::string reason;
};
FlagResult score_and_flag(const Sample& sample, const SolverClient& solver,
                          double threshold);

// ---- corpus emission --------------------------------------------------------

struct GeneratedPair {
    Sample open;
    Sample mcq;
};

// Deterministically generates one validated sample pair (or nullopt after
// max_attempts rejections, which indicates a configuration problem). Judge-
// flagged candidates are appended to review_out instead of the corpus.
std::optional<GeneratedPair> generate_sample_pair(Scenario scenario, bool test_split,
                                                  const PipelineConfig& cfg,
                                                  std::uint64_t sample_seed,
                                                  const std::string& id_prefix,
                                                  std::vector<std::string>* review_out = nullptr);

struct CorpusPaths {
    std::vector<std::string> files;   // emitted corpus files
    std::vector<std::string> review;  // flagged-sample files (possibly empty)
};

// Emits JSONL files per scenario x format x split under out_dir. Identical
// (config, seed) produce byte-identical files.
CorpusPaths emit_corpus(const PipelineConfig& cfg, std::uint64_t seed,
                        const std::string& out_dir, int threads = 1);

std::vector<Sample> load_corpus_file(const std::string& path);

// Test fixtures for the three rejection families: a wrong-span quote (fails
// sufficiency), a gold value duplicated outside the quote (fails necessity),
// and a quote answerable without background (fails the context check).
Sample make_counterexample_wrong_span(const Sample& mcq);
Sample make_counterexample_gold_leak(const Sample& mcq);
Sample make_counterexample_quote_sufficient(const Sample& info_combine_mcq);

}  // namespace spanlab
