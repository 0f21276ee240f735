#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>

#include "xfit/gym/task.hpp"
#include "xfit/json_util.hpp"
#include "xfit/model/checkpoint.hpp"
#include "xfit/optim.hpp"

namespace xfit::upstream {

using model::Checkpoint;
using model::Method;

struct MetaConfig {
    double inner_lr = 1e-3;
    double outer_lr = 1e-3;
    int inner_steps = 1;
    int support_batch = 4;
    int query_batch = 4;
    // Multi-task training mini-batch; it uses outer_lr as its learning rate.
    int batch_size = 8;
    long total_steps = 1000;
    // 0 disables periodic validation and intermediate checkpoints.
    long validation_every = 100;
    std::uint64_t seed = 0;
    OptimizerKind optimizer = OptimizerKind::sgd;

    // Throws UsageError; MAML and FoMAML require inner_steps == 1.
    void validate(Method method) const;
};

Json to_json(const MetaConfig& c);
MetaConfig meta_config_from_json(const Json& j);

// Everything a checkpoint records besides the weights.
struct ModelContext {
    model::ModelConfig config;
    model::Vocabulary vocab;
    std::string partition;
};

// Scores a frozen parameter snapshot on T_dev; higher is better.
using Validator = std::function<double(const model::Parameters<float>&)>;

struct TrainOptions {
    // Receives step-NNNNNN.ckpt at every validation point, best.ckpt,
    // log.jsonl and the resume state.
    std::optional<std::filesystem::path> run_dir{};
    // Empty when T_dev is empty; the final step is returned then.
    Validator validate{};
    // Continue from the resume state in run_dir if one exists.
    bool resume = false;
    // Stop after this many steps in this invocation (the run stays resumable).
    std::optional<long> stop_after{};
};

// One record of log.jsonl.
struct StepLog {
    long step = 0;
    std::string task;
    std::vector<std::size_t> support;
    std::vector<std::size_t> query;
    double support_loss = 0;
    std::optional<double> query_loss;
    double grad_norm = 0;
    bool skipped = false;
    std::string error;
};

Json to_json(const StepLog& s);
StepLog step_log_from_json(const Json& j);
std::vector<StepLog> read_log(const std::filesystem::path& path);

// Train and dev of every split pooled into one set of examples.
std::vector<Example> pooled_examples(std::span<const gym::FewShotSplit> splits);

Checkpoint multitask_train(const ModelContext& ctx, const model::Parameters<float>& base,
                           std::span<const gym::FewShotSplit> splits, const MetaConfig& config,
                           const TrainOptions& options = {});

// Method is maml, fomaml or reptile. One task per outer step; support batches
// come from a split's train part, query batches from its dev part.
Checkpoint meta_train(const ModelContext& ctx, const model::Parameters<float>& base,
                      std::span<const gym::FewShotSplit> splits, Method method, const MetaConfig& config,
                      const TrainOptions& options = {});

// Dispatches on method (mtl or a meta method).
Checkpoint upstream_train(const ModelContext& ctx, const model::Parameters<float>& base,
                          std::span<const gym::FewShotSplit> splits, Method method, const MetaConfig& config,
                          const TrainOptions& options = {});

// True when run_dir holds a completed run (final checkpoint written).
bool run_complete(const std::filesystem::path& run_dir);

// SHA-256 (hex) of the parameter values only, in block order.
std::string parameter_digest(const model::Parameters<float>& params);

}  // namespace xfit::upstream
