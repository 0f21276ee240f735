#include "xfit/fewshot/fewshot.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "xfit/metrics/metrics.hpp"
#include "xfit/model/transformer.hpp"
#include "xfit/optim.hpp"
#include "xfit/rng.hpp"

namespace xfit::fewshot {

void FinetuneConfig::validate() const {
    if (learning_rates.empty() || batch_sizes.empty()) throw UsageError("fewshot: empty hyperparameter grid");
    for (double lr : learning_rates) {
        if (!(lr > 0)) throw UsageError("fewshot: learning rates must be positive");
    }
    for (int b : batch_sizes) {
        if (b < 1) throw UsageError("fewshot: batch sizes must be positive");
    }
    for (std::size_t i = 0; i < learning_rates.size(); ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            if (learning_rates[i] == learning_rates[j]) throw UsageError("fewshot: repeated learning rate in grid");
        }
    }
    for (std::size_t i = 0; i < batch_sizes.size(); ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            if (batch_sizes[i] == batch_sizes[j]) throw UsageError("fewshot: repeated batch size in grid");
        }
    }
    if (total_updates < 1) throw UsageError("fewshot: total_updates must be positive");
    if (warmup_updates < 0 || warmup_updates >= total_updates) {
        throw UsageError("fewshot: need 0 <= warmup_updates < total_updates");
    }
    if (eval_every < 1 || total_updates % eval_every != 0) {
        throw UsageError("fewshot: eval_every must divide total_updates");
    }
}

FinetuneConfig FinetuneConfig::paper_grid() {
    FinetuneConfig c;
    c.learning_rates = {1e-5, 2e-5, 5e-5};
    c.batch_sizes = {2, 4, 8};
    c.total_updates = 1000;
    c.warmup_updates = 100;
    c.eval_every = 100;
    return c;
}

Json to_json(const FinetuneConfig& c) {
    return Json{{"learning_rates", c.learning_rates}, {"batch_sizes", c.batch_sizes},
                {"total_updates", c.total_updates},   {"warmup_updates", c.warmup_updates},
                {"eval_every", c.eval_every},         {"seed", c.seed}};
}

FinetuneConfig finetune_config_from_json(const Json& j) {
    constexpr const char* ctx = "fewshot";
    check_keys(j, {"learning_rates", "batch_sizes", "total_updates", "warmup_updates", "eval_every", "seed"}, ctx);
    FinetuneConfig c;
    read_opt(j, "learning_rates", c.learning_rates, ctx);
    read_opt(j, "batch_sizes", c.batch_sizes, ctx);
    read_opt(j, "total_updates", c.total_updates, ctx);
    read_opt(j, "warmup_updates", c.warmup_updates, ctx);
    read_opt(j, "eval_every", c.eval_every, ctx);
    read_opt(j, "seed", c.seed, ctx);
    c.validate();
    return c;
}

double lr_at(long update, double peak, long warmup, long total) {
    if (update < warmup) return peak * static_cast<double>(update) / static_cast<double>(warmup);
    return peak * static_cast<double>(total - update) / static_cast<double>(total - warmup);
}

double score_examples(const ModelRef& m, const Parameters<float>& params, const gym::Task& task,
                      std::span<const Example> examples) {
    std::vector<std::string> inputs, golds;
    for (const auto& e : examples) {
        inputs.push_back(e.input);
        golds.push_back(e.output);
    }
    const auto preds = model::predict<float>(m.config, m.vocab, params, inputs);
    return metrics::score(task.metric, preds, golds, task.labels);
}

FinetuneResult finetune(const ModelRef& m, const Parameters<float>& start, const gym::Task& task,
                        const gym::FewShotSplit& split, double lr, int batch_size, const FinetuneConfig& config) {
    if (lr < 0 || batch_size < 1) throw UsageError("finetune: need lr >= 0 and batch_size >= 1");
    if (split.train.empty()) throw DataError("finetune: empty train split for " + split.task);
    std::vector<std::vector<int>> in, out;
    for (const auto& e : split.train) {
        in.push_back(m.vocab.encode(e.input));
        out.push_back(m.vocab.encode(e.output));
    }
    const std::size_t n = in.size();
    const auto bs = static_cast<std::size_t>(batch_size);
    // Data order depends on the task, split and batch size but not on the lr,
    // so learning rates are compared on identical batches.
    const std::uint64_t order_seed =
        derive_seed(config.seed, {hash_string(split.task), split.seed, static_cast<std::uint64_t>(batch_size)});
    std::vector<std::size_t> order;
    long cached_epoch = -1;

    FinetuneResult r;
    r.record.lr = lr;
    r.record.batch_size = batch_size;
    r.params = start;
    Parameters<float> params = start;
    Optimizer<float> opt(OptimizerKind::adam, start);
    double window_loss = 0;
    long window = 0;
    bool have_best = false;
    try {
        for (long u = 1; u <= config.total_updates; ++u) {
            std::vector<std::vector<int>> bi, bo;
            for (std::size_t k = 0; k < bs; ++k) {
                const std::size_t pos = static_cast<std::size_t>(u - 1) * bs + k;
                const auto epoch = static_cast<long>(pos / n);
                if (epoch != cached_epoch) {
                    Rng rng(derive_seed(order_seed, {static_cast<std::uint64_t>(epoch)}));
                    order = permutation(n, rng);
                    cached_epoch = epoch;
                }
                bi.push_back(in[order[pos % n]]);
                bo.push_back(out[order[pos % n]]);
            }
            auto step = model::loss_and_grad<float>(m.config, params, model::make_batch(m.config, bi, bo));
            opt.apply(params, step.grad, lr_at(u, lr, config.warmup_updates, config.total_updates));
            window_loss += step.loss;
            ++window;
            if (u % config.eval_every == 0) {
                const double s = score_examples(m, params, task, split.dev);
                r.record.dev_curve.push_back({u, s});
                r.record.losses.push_back(window_loss / static_cast<double>(window));
                window_loss = 0;
                window = 0;
                if (!have_best || s > r.record.dev_score) {
                    have_best = true;
                    r.record.dev_score = s;
                    r.record.best_step = u;
                    r.params = params;
                }
            }
        }
    } catch (const NumericError& e) {
        r.record.failed = true;
        r.record.error = e.what();
    }
    return r;
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
    const auto workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) {
        threads.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
}

TaskResult hp_search(const ModelRef& m, const Parameters<float>& start, const gym::Task& task,
                     const gym::FewShotSplit& split, const FinetuneConfig& config, int jobs, TestGate* gate) {
    config.validate();
    if (split.task != task.name) throw DataError("hp_search: split of " + split.task + " given for task " + task.name);
    std::vector<std::pair<double, int>> grid;
    for (double lr : config.learning_rates) {
        for (int b : config.batch_sizes) grid.emplace_back(lr, b);
    }
    std::vector<FinetuneResult> runs(grid.size());
    parallel_for(grid.size(), jobs, [&](std::size_t i) {
        runs[i] = finetune(m, start, task, split, grid[i].first, grid[i].second, config);
    });

    std::optional<std::size_t> win;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const auto& c = runs[i].record;
        if (c.failed) continue;
        if (!win) {
            win = i;
            continue;
        }
        const auto& w = runs[*win].record;
        const bool better = c.dev_score > w.dev_score ||
                            (c.dev_score == w.dev_score &&
                             (c.lr < w.lr || (c.lr == w.lr && c.batch_size < w.batch_size)));
        if (better) win = i;
    }
    if (!win) throw NumericError("hp_search: every grid cell failed for task " + task.name);

    TaskResult r;
    r.task = task.name;
    r.seed = split.seed;
    r.metric = metrics::to_string(task.metric);
    r.dev_score = runs[*win].record.dev_score;
    r.chosen_lr = runs[*win].record.lr;
    r.chosen_batch_size = runs[*win].record.batch_size;
    for (auto& run : runs) r.cells.push_back(std::move(run.record));

    TestGate local(task.test);
    TestGate& g = gate ? *gate : local;
    const int before = g.opened();
    r.test_score = score_examples(m, runs[*win].params, task, g.open());
    r.test_accesses = g.opened() - before;
    return r;
}

TaskResult evaluate_direct(const ModelRef& m, const Parameters<float>& base, const gym::Task& task,
                           const gym::FewShotSplit& split, const FinetuneConfig& config, int jobs) {
    return hp_search(m, base, task, split, config, jobs);
}

std::map<std::string, double> mean_by_task(std::span<const TaskResult> results) {
    std::map<std::string, std::pair<double, int>> acc;
    for (const auto& r : results) {
        auto& [sum, count] = acc[r.task];
        sum += r.test_score;
        ++count;
    }
    std::map<std::string, double> out;
    for (const auto& [task, sc] : acc) out[task] = sc.first / sc.second;
    return out;
}

namespace {

Json cell_json(const CellRecord& c) {
    Json curve = Json::array();
    for (const auto& p : c.dev_curve) curve.push_back({p.step, p.score});
    Json j{{"lr", c.lr},           {"batch_size", c.batch_size}, {"failed", c.failed},
           {"losses", c.losses},   {"dev_curve", curve},         {"best_step", c.best_step},
           {"dev_score", c.dev_score}};
    if (c.failed) j["error"] = c.error;
    return j;
}

CellRecord cell_from_json(const Json& j) {
    CellRecord c;
    c.lr = j.at("lr").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.failed = j.at("failed").get<bool>();
    c.error = j.value("error", "");
    c.losses = j.at("losses").get<std::vector<double>>();
    for (const auto& p : j.at("dev_curve")) c.dev_curve.push_back({p.at(0).get<long>(), p.at(1).get<double>()});
    c.best_step = j.at("best_step").get<long>();
    c.dev_score = j.at("dev_score").get<double>();
    return c;
}

}  // namespace

Json to_json(const TaskResult& r) {
    Json cells = Json::array();
    for (const auto& c : r.cells) cells.push_back(cell_json(c));
    return Json{{"task", r.task},
                {"seed", r.seed},
                {"metric", r.metric},
                {"dev_score", r.dev_score},
                {"test_score", r.test_score},
                {"chosen_lr", r.chosen_lr},
                {"chosen_batch_size", r.chosen_batch_size},
                {"test_accesses", r.test_accesses},
                {"cells", cells}};
}

TaskResult task_result_from_json(const Json& j) {
    TaskResult r;
    r.task = j.at("task").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.metric = j.at("metric").get<std::string>();
    r.dev_score = j.at("dev_score").get<double>();
    r.test_score = j.at("test_score").get<double>();
    r.chosen_lr = j.at("chosen_lr").get<double>();
    r.chosen_batch_size = j.at("chosen_batch_size").get<int>();
    r.test_accesses = j.at("test_accesses").get<int>();
    for (const auto& c : j.at("cells")) r.cells.push_back(cell_from_json(c));
    return r;
}

void write_results(const std::filesystem::path& path, std::span<const TaskResult> results) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("cannot write " + path.string());
        for (const auto& r : results) {
            for (const auto& c : r.cells) {
                Json j{{"task", r.task}, {"seed", r.seed}, {"metric", r.metric}};
                j.update(cell_json(c));
                const bool chosen = c.lr == r.chosen_lr && c.batch_size == r.chosen_batch_size;
                j["chosen"] = chosen;
                if (chosen) {
                    j["test_score"] = r.test_score;
                    j["test_accesses"] = r.test_accesses;
                }
                f << j.dump() << '\n';
            }
        }
    }
    std::filesystem::rename(tmp, path);
}

std::vector<TaskResult> read_results(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path.string());
    std::vector<TaskResult> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(f, line)) {
        ++n;
        if (line.empty()) continue;
        try {
            const Json j = Json::parse(line);
            const auto task = j.at("task").get<std::string>();
            const auto seed = j.at("seed").get<std::uint64_t>();
            if (out.empty() || out.back().task != task || out.back().seed != seed) {
                TaskResult r;
                r.task = task;
                r.seed = seed;
                r.metric = j.at("metric").get<std::string>();
                out.push_back(std::move(r));
            }
            auto& r = out.back();
            r.cells.push_back(cell_from_json(j));
            if (j.at("chosen").get<bool>()) {
                r.dev_score = r.cells.back().dev_score;
                r.chosen_lr = r.cells.back().lr;
                r.chosen_batch_size = r.cells.back().batch_size;
                r.test_score = j.at("test_score").get<double>();
                r.test_accesses = j.at("test_accesses").get<int>();
            }
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    for (const auto& r : out) {
        if (r.test_accesses != 1) throw DataError(path.string() + ": no chosen cell for " + r.task);
    }
    return out;
}

double relative_gain_score(const std::map<std::string, double>& baseline, const std::map<std::string, double>& scores) {
    double gain = 0;
    int counted = 0;
    double raw = 0;
    for (const auto& [task, s] : scores) {
        raw += s;
        auto it = baseline.find(task);
        if (it == baseline.end()) throw DataError("relative_gain_score: no baseline for " + task);
        if (it->second <= 0) continue;
        gain += (s - it->second) / it->second;
        ++counted;
    }
    if (counted == 0) return scores.empty() ? 0.0 : raw / static_cast<double>(scores.size());
    return gain / counted;
}

std::function<double(const Parameters<float>&)> dev_validator(const model::ModelConfig& config,
                                                               const model::Vocabulary& vocab,
                                                               const Parameters<float>& base,
                                                               std::vector<gym::Task> tasks,
                                                               std::vector<gym::FewShotSplit> splits,
                                                               const FinetuneConfig& finetune, int jobs) {
    if (tasks.size() != splits.size()) throw DataError("dev_validator: one split per task expected");
    struct State {
        model::ModelConfig config;
        model::Vocabulary vocab;
        std::vector<gym::Task> tasks;
        std::vector<gym::FewShotSplit> splits;
        FinetuneConfig finetune;
        int jobs;
        std::map<std::string, double> baseline;

        std::map<std::string, double> run(const Parameters<float>& p) const {
            std::vector<TaskResult> results(tasks.size());
            const ModelRef m{config, vocab};
            parallel_for(tasks.size(), jobs, [&](std::size_t i) {
                results[i] = hp_search(m, p, tasks[i], splits[i], finetune);
            });
            return mean_by_task(results);
        }
    };
    auto state = std::make_shared<State>(State{config, vocab, std::move(tasks), std::move(splits), finetune, jobs, {}});
    state->baseline = state->run(base);
    return [state](const Parameters<float>& p) { return relative_gain_score(state->baseline, state->run(p)); };
}

}  // namespace xfit::fewshot
