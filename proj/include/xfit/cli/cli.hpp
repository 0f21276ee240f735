#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "xfit/fewshot/fewshot.hpp"
#include "xfit/gym/synth.hpp"
#include "xfit/gym/task.hpp"
#include "xfit/json_util.hpp"
#include "xfit/model/checkpoint.hpp"
#include "xfit/upstream/upstream.hpp"

namespace xfit::cli {

namespace fs = std::filesystem;

const char* tool_version();

struct VocabSpec {
    model::TokenMode mode = model::TokenMode::word;
    std::size_t max_size = 10000;
};

struct RunConfig {
    fs::path gym = "gym";
    fs::path partition;
    // Load partitions whose lists share a task name (held_out_nli).
    bool allow_overlap = false;
    model::Method method = model::Method::mtl;
    // vocab_size comes from the gym vocabulary, init_seed from `seed`.
    model::ModelConfig model;
    VocabSpec vocab;
    gym::SynthConfig synth;
    upstream::MetaConfig upstream;
    fewshot::FinetuneConfig fewshot;
    fs::path out = "run";
    // Drives the synthetic suite, model init, upstream and fine-tuning seeds.
    std::uint64_t seed = 0;
    int jobs = 1;

    // Copies `seed` into every component config.
    void apply_seed();
    // Throws UsageError on an invalid method, jobs < 1 or an invalid section.
    void validate() const;
};

// Defaults, with the gym root taken from CROSSFIT_HOME when set.
RunConfig default_run_config();
// Keys absent from `j` keep their value in `base`. Component sections
// reject seed keys and vocab_size; both are set globally.
RunConfig run_config_from_json(const Json& j, RunConfig base);
Json to_json(const RunConfig& c);

// manifest.json: one per output directory.
struct RunManifest {
    std::string command;
    std::string version;
    Json config = Json::object();
    // Stage name to "complete" or "incomplete".
    std::map<std::string, std::string> stages;
    // Path relative to the directory, to SHA-256 of the contents.
    std::map<std::string, std::string> files;
    Json info = Json::object();
};

Json to_json(const RunManifest& m);
RunManifest manifest_from_json(const Json& j);
// Refreshes m.files from disk and writes dir/manifest.json. Subdirectories
// holding their own manifest and *.tmp files are not inventoried.
void write_manifest(const fs::path& dir, RunManifest& m);
RunManifest read_manifest(const fs::path& dir);
// Digest mismatches, missing files and files on disk that are not listed.
std::vector<std::string> verify_manifest(const fs::path& dir);

// A materialized gym: tasks/<name>.jsonl, splits/<name>/seed-<s>.jsonl,
// vocab.json and index.json.
struct Gym {
    fs::path root;
    std::vector<gym::Task> tasks;
    model::Vocabulary vocab;

    [[nodiscard]] std::set<std::string> names() const;
    [[nodiscard]] const gym::Task& task(const std::string& name) const;
    [[nodiscard]] gym::FewShotSplit split(const std::string& task, std::uint64_t seed) const;
};

Gym load_gym(const fs::path& root);

// Builds the gym from `task_dir` (every *.jsonl file) or, without one, from
// config.synth. Invalid task files are reported together, one per line.
RunManifest cmd_gym(const RunConfig& config, const std::optional<fs::path>& task_dir, const fs::path& out);

// Trains config.method on the partition's T_train into config.out. An
// incomplete run with the same config resumes from its resume state; a
// complete one is left as is. `stop_after` ends this invocation early.
RunManifest cmd_upstream(const RunConfig& config, std::optional<long> stop_after = {});

// hp_search for every T_test task x 5 seeds from `checkpoint`, or from the
// base parameters when it is empty. Writes results/<task>.jsonl.
RunManifest cmd_fewshot(const RunConfig& config, const std::optional<fs::path>& checkpoint);

// Reads every results directory; mean test score per task over seeds.
struct ResultSet {
    std::string name;
    std::map<std::string, double> means;
    std::map<std::string, std::string> metrics;
};

ResultSet load_results(const fs::path& dir, const std::string& name = {});

// One ARG column per method against the baseline. Writes report.json and
// report.txt into `out`; returns the text table.
std::string cmd_report(const fs::path& baseline, const std::vector<std::pair<std::string, fs::path>>& methods,
                       const fs::path& out);

// The command-line entry point; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace xfit::cli
