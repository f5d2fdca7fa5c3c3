#include <algorithm>

#include "doctest.h"
#include "spanlab/rng.hpp"
#include "spanlab/span.hpp"
#include "spanlab/tensor.hpp"

using namespace spanlab;

namespace {

// Membership-loop oracle: a span set is well-formed iff bounds hold, no
// position is covered twice, and starts are nondecreasing.
bool oracle_valid(const SpanSet& set) {
    std::vector<int> cover(static_cast<std::size_t>(std::max(set.history_len, 0)), 0);
    int prev_start = -1;
    for (const Span& s : set.spans) {
        if (s.start < 0 || s.start > s.end || s.end >= set.history_len) return false;
        if (s.start < prev_start) return false;
        prev_start = s.start;
        for (int j = s.start; j <= s.end; ++j)
            if (++cover[static_cast<std::size_t>(j)] > 1) return false;
    }
    return true;
}

std::vector<bool> oracle_mask(const SpanSet& set, int total_len) {
    std::vector<bool> m(static_cast<std::size_t>(total_len), false);
    for (int j = 0; j < total_len; ++j)
        for (const Span& s : set.spans)
            if (s.contains(j)) m[static_cast<std::size_t>(j)] = true;
    return m;
}

}  // namespace

TEST_CASE("validate flags the spec'd violations") {
    CHECK(is_valid({{{2, 4}}, 10}));

    const auto v1 = validate({{{4, 2}}, 10});
    REQUIRE(v1.size() == 1);
    CHECK(v1[0].message == "start>end at span 0");

    const auto v2 = validate({{{1, 3}, {3, 5}}, 10});
    REQUIRE(v2.size() == 1);
    CHECK(v2[0].message == "overlap between spans 0,1");

    CHECK_FALSE(is_valid({{{0, 12}}, 10}));  // bounds
    CHECK_FALSE(is_valid({{{5, 6}, {0, 1}}, 10}));  // order
}

TEST_CASE("indicator mask basics") {
    const auto m1 = indicator_mask({{{1, 2}}, 5}, 5);
    CHECK(m1 == std::vector<bool>{false, true, true, false, false});

    const auto m2 = indicator_mask({{}, 4}, 4);
    CHECK(m2 == std::vector<bool>{false, false, false, false});

    const SpanSet two{{{0, 0}, {3, 4}}, 6};
    const auto m3 = indicator_mask(two, 6);
    CHECK(m3 == oracle_mask(two, 6));
    CHECK(m3 == std::vector<bool>{true, false, false, true, true, false});
}

TEST_CASE("indicator mask leaves question positions false") {
    const auto m = indicator_mask({{{1, 2}}, 3}, 7);
    for (int j = 3; j < 7; ++j) CHECK_FALSE(m[static_cast<std::size_t>(j)]);
}

TEST_CASE("indicator mask rejects invalid input") {
    CHECK_THROWS_AS(indicator_mask({{{3, 1}}, 5}, 5), UsageError);
    CHECK_THROWS_AS(indicator_mask({{{0, 1}}, 5}, 4), UsageError);
}

TEST_CASE("question mask basics and regrowth") {
    CHECK(question_mask({3}, 5) == std::vector<bool>{false, false, false, true, true});
    CHECK(question_mask({0}, 2) == std::vector<bool>{true, true});

    // appending two generated tokens re-derives the longer mask
    const auto grown = question_mask({3}, 7);
    CHECK(grown.size() == 7);
    int trues = 0;
    for (bool b : grown) trues += b ? 1 : 0;
    CHECK(trues == 4);
}

TEST_CASE("mask popcount equals total span length") {
    Rng rng(41);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = static_cast<int>(rng.range(1, 64));
        SpanSet set;
        set.history_len = n;
        int cursor = 0;
        while (cursor < n) {
            const int start = cursor + static_cast<int>(rng.range(0, 3));
            if (start >= n) break;
            const int end = std::min<int>(n - 1, start + static_cast<int>(rng.range(0, 4)));
            set.spans.push_back({start, end});
            cursor = end + 2;
            if (rng.next_double() < 0.3) break;
        }
        REQUIRE(is_valid(set));
        const auto mask = indicator_mask(set, n);
        int pop = 0;
        for (bool b : mask) pop += b ? 1 : 0;
        int expect = 0;
        for (const Span& s : set.spans) expect += s.length();
        CHECK(pop == expect);
    }
}

TEST_CASE("indicator of a disjoint union is the elementwise OR") {
    SpanSet a{{{0, 1}, {6, 7}}, 12};
    SpanSet b{{{3, 4}, {9, 9}}, 12};
    SpanSet both{{{0, 1}, {3, 4}, {6, 7}, {9, 9}}, 12};
    const auto ma = indicator_mask(a, 12);
    const auto mb = indicator_mask(b, 12);
    const auto mu = indicator_mask(both, 12);
    for (int j = 0; j < 12; ++j)
        CHECK(mu[static_cast<std::size_t>(j)] ==
              (ma[static_cast<std::size_t>(j)] || mb[static_cast<std::size_t>(j)]));
}

TEST_CASE("validate agrees with the membership-loop oracle on random sets") {
    Rng rng(42);
    for (int trial = 0; trial < 500; ++trial) {
        const int n = static_cast<int>(rng.range(1, 64));
        SpanSet set;
        set.history_len = n;
        const int k = static_cast<int>(rng.range(0, 4));
        for (int i = 0; i < k; ++i) {
            const int a = static_cast<int>(rng.range(0, n - 1));
            const int b = static_cast<int>(rng.range(std::max(0, a - 2), std::min(n - 1, a + 4)));
            set.spans.push_back({a, b});
        }
        if (rng.next_double() < 0.5)
            std::sort(set.spans.begin(), set.spans.end(),
                      [](const Span& x, const Span& y) { return x.start < y.start; });
        CHECK(is_valid(set) == oracle_valid(set));
    }
}

TEST_CASE("scenario names round trip") {
    for (Scenario s : {Scenario::Base, Scenario::MultiSpan, Scenario::Exclude,
                       Scenario::InfoCombine, Scenario::Coref}) {
        Scenario back;
        REQUIRE(scenario_from_name(scenario_name(s), &back));
        CHECK(back == s);
    }
    Scenario dummy;
    CHECK_FALSE(scenario_from_name("unknown", &dummy));
}
