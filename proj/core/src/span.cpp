#include "spanlab/span.hpp"

#include "spanlab/tensor.hpp"

namespace spanlab {

const char* scenario_name(Scenario s) {
    switch (s) {
        case Scenario::Base: return "base";
        case Scenario::MultiSpan: return "multi_span";
        case Scenario::Exclude: return "exclude";
        case Scenario::InfoCombine: return "info_combine";
        case Scenario::Coref: return "coref";
    }
    return "?";
}

bool scenario_from_name(const std::string& name, Scenario* out) {
    for (Scenario s : {Scenario::Base, Scenario::MultiSpan, Scenario::Exclude,
                       Scenario::InfoCombine, Scenario::Coref}) {
        if (name == scenario_name(s)) {
            *out = s;
            return true;
        }
    }
    return false;
}

int scenario_min_facts(Scenario s) {
    switch (s) {
        case Scenario::Base: return 3;         // two MCQ distractors need two other facts
        case Scenario::MultiSpan: return 3;
        case Scenario::Exclude: return 3;      // keeps quoted >= 2 with a nonempty remainder
        case Scenario::InfoCombine: return 3;
        case Scenario::Coref: return 3;
    }
    return 1;
}

int scenario_min_quoted(Scenario s) {
    switch (s) {
        case Scenario::Base:
        case Scenario::Coref: return 1;
        case Scenario::MultiSpan:
        case Scenario::Exclude: return 2;
        case Scenario::InfoCombine: return 1;
    }
    return 1;
}

std::vector<SpanViolation> validate(const SpanSet& set) {
    std::vector<SpanViolation> out;
    for (std::size_t i = 0; i < set.spans.size(); ++i) {
        const Span& s = set.spans[i];
        const int idx = static_cast<int>(i);
        if (s.start < 0)
            out.push_back({"start<0 at span " + std::to_string(i), idx});
        if (s.start > s.end)
            out.push_back({"start>end at span " + std::to_string(i), idx});
        if (s.end >= set.history_len)
            out.push_back({"end beyond history at span " + std::to_string(i), idx});
        if (i > 0) {
            const Span& prev = set.spans[i - 1];
            if (s.start < prev.start)
                out.push_back({"order violation between spans " + std::to_string(i - 1) + "," +
                                   std::to_string(i),
                               idx});
            if (s.start <= prev.end && prev.start <= s.end)
                out.push_back({"overlap between spans " + std::to_string(i - 1) + "," +
                                   std::to_string(i),
                               idx});
        }
    }
    return out;
}

bool is_valid(const SpanSet& set) { return validate(set).empty(); }

std::vector<bool> indicator_mask(const SpanSet& set, int total_len) {
    if (!is_valid(set))
        throw UsageError("indicator_mask on invalid span set: " + validate(set)[0].message);
    if (total_len < set.history_len)
        throw UsageError("indicator_mask: total_len " + std::to_string(total_len) +
                         " shorter than history " + std::to_string(set.history_len));
    std::vector<bool> mask(static_cast<std::size_t>(total_len), false);
    for (const Span& s : set.spans)
        for (int j = s.start; j <= s.end; ++j) mask[static_cast<std::size_t>(j)] = true;
    return mask;
}

std::vector<bool> question_mask(const QuestionSpan& q, int total_len) {
    std::vector<bool> mask(static_cast<std::size_t>(total_len), false);
    for (int i = q.start; i < total_len; ++i)
        if (i >= 0) mask[static_cast<std::size_t>(i)] = true;
    return mask;
}

}  // namespace spanlab
