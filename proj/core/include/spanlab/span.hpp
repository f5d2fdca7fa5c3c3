#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace spanlab {

// Contiguous token range in the conversation history, 0-based inclusive on
// both ends. A single-token quote is therefore {p, p}.
struct Span {
    int start = 0;
    int end = 0;

    int length() const { return end - start + 1; }
    bool contains(int pos) const { return pos >= start && pos <= end; }
    bool operator==(const Span&) const = default;
};

// The user's reference set: disjoint spans sorted by start, all inside the
// history prefix of length history_len.
struct SpanSet {
    std::vector<Span> spans;
    int history_len = 0;
};

// First token index of the user's latest utterance. Query positions at or
// after this index (including generated tokens) count as "in question".
struct QuestionSpan {
    int start = 0;
};

enum class Scenario { Base, MultiSpan, Exclude, InfoCombine, Coref };

const char* scenario_name(Scenario s);
bool scenario_from_name(const std::string& name, Scenario* out);

// Minimum number of facts a conversation must expose for the scenario, and
// the quoted-span arity the scenario demands.
int scenario_min_facts(Scenario s);
int scenario_min_quoted(Scenario s);

struct SpanViolation {
    std::string message;
    int span_index = -1;
};

// Reports every violated invariant (ordering, overlap, bounds). Empty result
// means the set is well-formed. Never throws.
std::vector<SpanViolation> validate(const SpanSet& set);
bool is_valid(const SpanSet& set);

// Position j is true iff some span covers j. Positions >= history_len are
// always false. Throws UsageError on an invalid set.
std::vector<bool> indicator_mask(const SpanSet& set, int total_len);

// Position i is true iff i >= q.start.
std::vector<bool> question_mask(const QuestionSpan& q, int total_len);

}  // namespace spanlab
