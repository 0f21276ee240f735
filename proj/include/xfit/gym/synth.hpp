#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "xfit/gym/task.hpp"
#include "xfit/json_util.hpp"

namespace xfit::gym {

// Families: copy, reverse, upper, sort (transduction, rouge_l); parity
// (accuracy); keyword, tag (classification_f1); slot (MRC-style span copy,
// qa_f1).
struct FamilySpec {
    std::string family;
    int instances = 1;
    // Raw examples per task before the test holdout; 0 picks the family default.
    int examples = 0;
    // Tag family only; 0 draws 2 to 4 classes per instance.
    int classes = 0;
};

struct SynthConfig {
    std::vector<FamilySpec> families;
    int lexicon_size = 12;
    int min_words = 2;
    int max_words = 4;

    void validate() const;
};

const std::vector<std::string>& synth_families();
bool is_transduction(std::string_view family);

Json to_json(const SynthConfig& c);
SynthConfig synth_config_from_json(const Json& j);

// Tasks are named "<family>-<instance>". Lexicons are disjoint across the
// tasks of one suite; words are two consonant-vowel syllables.
std::vector<Task> synth_suite(const SynthConfig& config, std::uint64_t seed);

}  // namespace xfit::gym
