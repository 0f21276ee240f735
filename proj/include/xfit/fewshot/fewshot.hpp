#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xfit/gym/task.hpp"
#include "xfit/json_util.hpp"
#include "xfit/model/config.hpp"
#include "xfit/model/params.hpp"
#include "xfit/model/vocab.hpp"

namespace xfit::fewshot {

using model::Parameters;

struct FinetuneConfig {
    std::vector<double> learning_rates{1e-3, 3e-4, 1e-4};
    std::vector<int> batch_sizes{4, 8};
    long total_updates = 1000;
    long warmup_updates = 100;
    long eval_every = 100;
    std::uint64_t seed = 0;

    // Throws UsageError: empty or non-positive grid, warmup >= total, or
    // eval_every not dividing total.
    void validate() const;

    // lrs {1e-5, 2e-5, 5e-5} x batches {2, 4, 8}, 1000 updates, 100 warmup, dev every 100.
    static FinetuneConfig paper_grid();
};

Json to_json(const FinetuneConfig& c);
FinetuneConfig finetune_config_from_json(const Json& j);

// Linear warmup to `peak` over `warmup` updates, then linear decay to 0 at
// `total`. `update` counts from 1.
double lr_at(long update, double peak, long warmup, long total);

// The model and vocabulary a fine-tuning run operates on.
struct ModelRef {
    const model::ModelConfig& config;
    const model::Vocabulary& vocab;
};

struct DevPoint {
    long step = 0;
    double score = 0;
};

struct CellRecord {
    double lr = 0;
    int batch_size = 0;
    bool failed = false;
    std::string error;
    // Mean training loss over each evaluation window.
    std::vector<double> losses;
    std::vector<DevPoint> dev_curve;
    long best_step = 0;
    double dev_score = 0;
};

struct FinetuneResult {
    CellRecord record;
    // Snapshot with the best dev score (earliest on ties).
    Parameters<float> params;
};

// Adam with the lr_at schedule; the dev metric is computed on greedy
// decodes every eval_every updates. A non-finite loss marks the cell failed.
FinetuneResult finetune(const ModelRef& m, const Parameters<float>& start, const gym::Task& task,
                        const gym::FewShotSplit& split, double lr, int batch_size, const FinetuneConfig& config);

// Hands out a task's test examples and counts every access.
class TestGate {
public:
    explicit TestGate(const std::vector<Example>& test) : test_(test) {}
    const std::vector<Example>& open() {
        ++opened_;
        return test_;
    }
    [[nodiscard]] int opened() const { return opened_; }

private:
    const std::vector<Example>& test_;
    int opened_ = 0;
};

struct TaskResult {
    std::string task;
    std::uint64_t seed = 0;
    std::string metric;
    double dev_score = 0;
    double test_score = 0;
    double chosen_lr = 0;
    int chosen_batch_size = 0;
    std::vector<CellRecord> cells;
    // Test-set opens made while producing this result; always 1.
    int test_accesses = 0;
};

// Every (lr, batch) cell; best dev score wins, ties go to the lower lr and
// then the smaller batch. Only the winner is scored on the test set. `jobs`
// bounds the number of cells fine-tuned concurrently.
TaskResult hp_search(const ModelRef& m, const Parameters<float>& start, const gym::Task& task,
                     const gym::FewShotSplit& split, const FinetuneConfig& config, int jobs = 1,
                     TestGate* gate = nullptr);

// The baseline: hp_search from the untrained base parameters.
TaskResult evaluate_direct(const ModelRef& m, const Parameters<float>& base, const gym::Task& task,
                           const gym::FewShotSplit& split, const FinetuneConfig& config, int jobs = 1);

// Scores predictions for `examples` with the task's metric.
double score_examples(const ModelRef& m, const Parameters<float>& params, const gym::Task& task,
                      std::span<const Example> examples);

// Mean test score per task over seeds.
std::map<std::string, double> mean_by_task(std::span<const TaskResult> results);

Json to_json(const TaskResult& r);
TaskResult task_result_from_json(const Json& j);

// One JSON line per (seed, grid cell); the chosen cell's line carries the
// test score. Reading regroups lines into TaskResults in file order.
void write_results(const std::filesystem::path& path, std::span<const TaskResult> results);
std::vector<TaskResult> read_results(const std::filesystem::path& path);

// Mean relative gain of `scores` over `baseline`, per task name. Tasks with a
// non-positive baseline are left out; with none left, the mean raw score.
double relative_gain_score(const std::map<std::string, double>& baseline, const std::map<std::string, double>& scores);

// T_dev scorer for upstream checkpoint selection: relative_gain_score of
// hp_search test scores against direct fine-tuning on the same splits. The
// baseline is computed once, here. Copies everything it needs.
std::function<double(const Parameters<float>&)> dev_validator(const model::ModelConfig& config,
                                                               const model::Vocabulary& vocab,
                                                               const Parameters<float>& base,
                                                               std::vector<gym::Task> tasks,
                                                               std::vector<gym::FewShotSplit> splits,
                                                               const FinetuneConfig& finetune, int jobs = 1);

// Runs fn(i) for i in [0, n) on up to `jobs` threads.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

}  // namespace xfit::fewshot
