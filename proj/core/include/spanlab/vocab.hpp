#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace spanlab {

// Symbolic vocabulary of the synthetic dialogue language. Rendering joins
// token names with single spaces; tokenizing splits on whitespace, so token
// offsets in rendered text equal indices in the id sequence.
class Vocab {
public:
    // Control / structure
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUser = 3;
    static constexpr int kAssistant = 4;
    static constexpr int kSep = 5;       // ";" fact separator
    static constexpr int kTopic = 6;
    static constexpr int kTone = 7;
    static constexpr int kQMark = 8;     // "?"
    static constexpr int kAnswerIs = 9;  // "answer_is", opens the closing sentence
    static constexpr int kPeriod = 10;   // "."
    static constexpr int kNone = 11;     // empty-result answer
    static constexpr int kInsufficient = 12;  // option-D content
    static constexpr int kFormatMcq = 13;     // trailing answer-format instruction
    static constexpr int kPronoun = 14;       // "it", the coref pointer token

    static constexpr int kLetterA = 15;  // A..D are 15..18

    static constexpr int kTaskExtract = 19;     // base: report the quoted fact's value
    static constexpr int kTaskListQuoted = 20;  // multi-span: values of quoted facts
    static constexpr int kTaskListOther = 21;   // exclude: values of unquoted facts
    static constexpr int kTaskExceed = 22;      // info-combine: entities above the quoted value
    static constexpr int kTaskAntecedent = 23;  // coref: entity the pointer refers to
    static constexpr int kTaskSpare = 24;

    static constexpr int kDigit0 = 25;   // d0..d15
    static constexpr int kNumDigits = 16;
    static constexpr int kRelation0 = 41;  // r0..r7
    static constexpr int kNumRelations = 8;
    static constexpr int kValue0 = 49;   // v0..v15, ordinal rank = index
    static constexpr int kNumValues = 16;
    static constexpr int kEntity0 = 65;  // e0..e11
    static constexpr int kNumEntities = 12;
    static constexpr int kTone0 = 77;    // tn0..tn6
    static constexpr int kNumTones = 7;

    // 84..93 reserved for growth; the two marker ids sit outside the
    // generator's base vocabulary.
    static constexpr int kOpenEmph = 94;
    static constexpr int kCloseEmph = 95;

    static constexpr int kSize = 96;

    Vocab();

    const std::string& name(int id) const;
    int id(const std::string& name) const;  // throws on unknown token

    std::string render(const std::vector<int>& ids) const;
    std::vector<int> tokenize(const std::string& text) const;

    static int letter(int index) { return kLetterA + index; }  // 0->A .. 3->D
    static bool is_letter(int id) { return id >= kLetterA && id <= kLetterA + 3; }
    static int letter_index(int id) { return id - kLetterA; }

    static int digit(int k) { return kDigit0 + k; }
    static int relation(int k) { return kRelation0 + k; }
    static int value(int rank) { return kValue0 + rank; }
    static bool is_value(int id) { return id >= kValue0 && id < kValue0 + kNumValues; }
    static int value_rank(int id) { return id - kValue0; }
    static int entity(int k) { return kEntity0 + k; }
    static bool is_entity(int id) { return id >= kEntity0 && id < kEntity0 + kNumEntities; }
    static int tone(int k) { return kTone0 + k; }

    static const Vocab& instance();

private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, int> ids_;
};

}  // namespace spanlab
