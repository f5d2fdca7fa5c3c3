#include "spanlab/vocab.hpp"

#include <sstream>

#include "spanlab/tensor.hpp"

namespace spanlab {

Vocab::Vocab() {
    names_.assign(kSize, "");
    names_[kPad] = "<pad>";
    names_[kBos] = "<bos>";
    names_[kEos] = "<eos>";
    names_[kUser] = "<usr>";
    names_[kAssistant] = "<asst>";
    names_[kSep] = ";";
    names_[kTopic] = "topic";
    names_[kTone] = "tone";
    names_[kQMark] = "?";
    names_[kAnswerIs] = "answer_is";
    names_[kPeriod] = ".";
    names_[kNone] = "none";
    names_[kInsufficient] = "insufficient";
    names_[kFormatMcq] = "answer_format";
    names_[kPronoun] = "it";
    const char* letters[4] = {"A", "B", "C", "D"};
    for (int i = 0; i < 4; ++i) names_[kLetterA + i] = letters[i];
    names_[kTaskExtract] = "extract_quoted_value";
    names_[kTaskListQuoted] = "list_quoted_values";
    names_[kTaskListOther] = "list_unquoted_values";
    names_[kTaskExceed] = "which_exceed_quoted";
    names_[kTaskAntecedent] = "resolve_pointer";
    names_[kTaskSpare] = "task_spare";
    for (int i = 0; i < kNumDigits; ++i) names_[kDigit0 + i] = "d" + std::to_string(i);
    for (int i = 0; i < kNumRelations; ++i) names_[kRelation0 + i] = "r" + std::to_string(i);
    for (int i = 0; i < kNumValues; ++i) names_[kValue0 + i] = "v" + std::to_string(i);
    for (int i = 0; i < kNumEntities; ++i) names_[kEntity0 + i] = "e" + std::to_string(i);
    for (int i = 0; i < kNumTones; ++i) names_[kTone0 + i] = "tn" + std::to_string(i);
    for (int i = 84; i <= 93; ++i) names_[i] = "reserved" + std::to_string(i);
    names_[kOpenEmph] = "<emph>";
    names_[kCloseEmph] = "</emph>";
    for (int i = 0; i < kSize; ++i) ids_[names_[i]] = i;
}

const std::string& Vocab::name(int id) const {
    if (id < 0 || id >= kSize) throw UsageError("token id out of range: " + std::to_string(id));
    return names_[static_cast<std::size_t>(id)];
}

int Vocab::id(const std::string& name) const {
    auto it = ids_.find(name);
    if (it == ids_.end()) throw UsageError("unknown token name: '" + name + "'");
    return it->second;
}

std::string Vocab::render(const std::vector<int>& ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ' ';
        out += name(ids[i]);
    }
    return out;
}

std::vector<int> Vocab::tokenize(const std::string& text) const {
    std::vector<int> out;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) out.push_back(id(tok));
    return out;
}

const Vocab& Vocab::instance() {
    static const Vocab v;
    return v;
}

}  // namespace spanlab
