#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "xfit/example.hpp"
#include "xfit/json_util.hpp"
#include "xfit/metrics/metrics.hpp"

namespace xfit::gym {

enum class TaskKind { classification, other };

const char* to_string(TaskKind k);
TaskKind parse_task_kind(std::string_view s);

using Record = std::map<std::string, std::string>;

// Renders "prefix1 value1 prefix2 value2 ..." joined by single spaces; an
// empty prefix contributes only its value.
struct Template {
    std::string name;
    std::vector<std::pair<std::string, std::string>> fields;
    std::string target;
};

Template nli_template();
Template mrc_template();
// Reads "input" and "output" unchanged.
Template identity_template();
// Built-in templates by name ("nli", "mrc", "identity").
Template named_template(std::string_view name);

Json to_json(const Template& t);
Template template_from_json(const Json& j);

// Throws DataError naming the first missing field.
Example apply_template(const Template& t, const Record& record);

struct Task {
    std::string name;
    TaskKind kind = TaskKind::other;
    std::vector<std::string> labels;
    metrics::Metric metric = metrics::Metric::rouge_l;
    std::vector<Example> pool;
    std::vector<Example> test;

    // Throws DataError on a violated invariant: labels iff classification,
    // outputs within the label set, a metric valid for the kind, non-empty
    // inputs and outputs, test disjoint from pool.
    void validate() const;
};

bool metric_valid_for(metrics::Metric m, TaskKind k);

struct FewShotSplit {
    std::string task;
    std::uint64_t seed = 0;
    std::vector<Example> train;
    std::vector<Example> dev;

    bool operator==(const FewShotSplit&) const = default;
};

const std::vector<std::uint64_t>& default_seeds();

struct SamplingSizes {
    int per_class = 16;
    int non_classification = 32;
};

// Stratified per class for classification (train and dev alike), uniform
// without replacement otherwise. Pool examples equal to a test example and
// repeated pool examples are never drawn.
FewShotSplit sample_few_shot(const Task& task, std::uint64_t seed, const SamplingSizes& sizes = {});

// Without an official dev set, floor(20%) (at least 1) of the distinct raw
// examples become the test set; otherwise the official dev set is the test
// set and pool is the raw train data minus any example also in test.
std::pair<std::vector<Example>, std::vector<Example>> holdout_test(const std::vector<Example>& raw,
                                                                   const std::optional<std::vector<Example>>& official_dev,
                                                                   std::uint64_t seed);

// Task file: JSON lines. The first line is {"task": {name, kind, labels,
// metric[, template]}}; each further line is {"split": "pool"|"test",
// "input", "output"} or {"split", "fields"} when a template is declared.
void write_task(const std::filesystem::path& path, const Task& task);
Task load_task(const std::filesystem::path& path);

// Split file: {"split": {"task", "seed"}} then {"part": "train"|"dev", "input", "output"} lines.
void write_split(const std::filesystem::path& path, const FewShotSplit& split);
FewShotSplit load_split(const std::filesystem::path& path);

}  // namespace xfit::gym
