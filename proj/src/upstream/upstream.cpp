#include "xfit/upstream/upstream.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "xfit/digest.hpp"
#include "xfit/model/transformer.hpp"
#include "xfit/rng.hpp"
#include "xfit/upstream/steps.hpp"

namespace xfit::upstream {

namespace fs = std::filesystem;
using model::Parameters;

namespace {

struct Encoded {
    std::vector<int> input;
    std::vector<int> output;
};

std::vector<Encoded> encode_all(const model::Vocabulary& vocab, std::span<const Example> examples) {
    std::vector<Encoded> out;
    out.reserve(examples.size());
    for (const auto& e : examples) out.push_back({vocab.encode(e.input), vocab.encode(e.output)});
    return out;
}

model::Batch batch_of(const model::ModelConfig& config, const std::vector<Encoded>& data,
                      const std::vector<std::size_t>& idx) {
    std::vector<std::vector<int>> in, out;
    for (auto i : idx) {
        in.push_back(data[i].input);
        out.push_back(data[i].output);
    }
    return model::make_batch(config, in, out);
}

std::vector<std::size_t> draw(std::size_t n, int k, Rng& rng) {
    auto p = permutation(n, rng);
    p.resize(std::min(n, static_cast<std::size_t>(k)));
    return p;
}

Objective<float> loss_on(const model::ModelConfig& config, model::Batch batch) {
    return [&config, b = std::move(batch)](std::span<const ad::Var<float>> vars) {
        return model::forward_loss<float>(config, vars, b);
    };
}

double norm_of(const Parameters<float>& g) {
    double s = 0;
    for (std::size_t i = 0; i < g.size(); ++i) s += static_cast<double>(g[i].squaredNorm());
    return std::sqrt(s);
}

bool all_finite(const Parameters<float>& g) {
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!g[i].allFinite()) return false;
    }
    return true;
}

std::string step_file(long step) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "step-%06ld.ckpt", step);
    return buf;
}

// Result of one update: a gradient-like direction for the optimizer, or a
// skipped step.
struct Update {
    Parameters<float> grad;
    StepLog log;
};

// Fills `out` as it goes, so a failed step still reports its task.
using StepFn = std::function<void(long step, const Parameters<float>& current, Update& out)>;

// Shared driver: optimizer, validation, checkpoints, log and resume.
class Loop {
public:
    Loop(const ModelContext& ctx, const Parameters<float>& base, Method method, const MetaConfig& config,
         const TrainOptions& options)
        : ctx_(ctx), method_(method), config_(config), options_(options), current_(base),
          opt_(config.optimizer, base) {}

    Checkpoint run(const StepFn& step_fn) {
        long step = 0;
        if (options_.run_dir) {
            fs::create_directories(*options_.run_dir);
            step = options_.resume ? restore() : clear();
            log_.open(*options_.run_dir / "log.jsonl", std::ios::app);
            if (!log_) throw DataError("cannot write " + (*options_.run_dir / "log.jsonl").string());
        }
        long done_here = 0;
        while (step < config_.total_steps) {
            if (options_.stop_after && done_here >= *options_.stop_after) {
                save_resume(step);
                return make(current_, step, std::nullopt);
            }
            ++step;
            ++done_here;
            Update u;
            try {
                step_fn(step, current_, u);
                if (!all_finite(u.grad)) throw NumericError("non-finite gradient");
                u.log.grad_norm = norm_of(u.grad);
                opt_.apply(current_, u.grad, config_.outer_lr);
            } catch (const NumericError& e) {
                u.log.skipped = true;
                u.log.error = e.what();
            }
            u.log.step = step;
            if (log_.is_open()) log_ << to_json(u.log).dump() << '\n' << std::flush;
            const bool periodic = config_.validation_every > 0 && step % config_.validation_every == 0;
            const bool last = step == config_.total_steps;
            if (periodic || (last && options_.validate)) checkpoint_point(step);
        }
        if (!options_.validate || best_step_ == 0) {
            return finish(make(current_, step, last_score_));
        }
        return finish(make(best_, best_step_, best_score_));
    }

private:
    Checkpoint make(const Parameters<float>& p, long step, std::optional<double> score) const {
        Checkpoint c;
        c.config = ctx_.config;
        c.vocab = ctx_.vocab;
        c.params = p;
        c.method = method_;
        c.partition = ctx_.partition;
        c.meta_step = step;
        c.validation_score = score;
        c.meta = Json{{"upstream", to_json(config_)}};
        return c;
    }

    void checkpoint_point(long step) {
        std::optional<double> score;
        if (options_.validate) {
            score = options_.validate(current_);
            if (!best_step_ || *score > best_score_) {
                best_step_ = step;
                best_score_ = *score;
                best_ = current_;
                if (options_.run_dir) model::write_checkpoint(*options_.run_dir / "best.ckpt", make(best_, step, score));
            }
        }
        last_score_ = score;
        if (options_.run_dir) {
            model::write_checkpoint(*options_.run_dir / step_file(step), make(current_, step, score));
            save_resume(step);
        }
    }

    void save_resume(long step) {
        if (!options_.run_dir) return;
        Checkpoint c = make(current_, step, last_score_);
        c.extra = opt_.state();
        c.meta["resume"] = Json{{"step", step},
                                {"optimizer_steps", opt_.steps()},
                                {"best_step", best_step_},
                                {"best_score", best_step_ ? Json(best_score_) : Json(nullptr)}};
        model::write_checkpoint(*options_.run_dir / "resume.ckpt", c);
    }

    long clear() {
        for (const auto& entry : fs::directory_iterator(*options_.run_dir)) {
            const auto name = entry.path().filename().string();
            if (name == "log.jsonl" || entry.path().extension() == ".ckpt") fs::remove(entry.path());
        }
        return 0;
    }

    long restore() {
        const fs::path dir = *options_.run_dir;
        const fs::path resume = dir / "resume.ckpt";
        const fs::path log = dir / "log.jsonl";
        if (!fs::exists(resume)) return clear();
        const Checkpoint c = model::read_checkpoint(resume);
        if (!c.params.same_layout(current_)) throw DataError(resume.string() + ": parameter layout differs from base");
        if (c.method != method_) throw DataError(resume.string() + ": run was started with another method");
        const Json& r = c.meta.at("resume");
        const long step = r.at("step").get<long>();
        current_ = c.params;
        opt_.restore(c.extra, r.at("optimizer_steps").get<long>());
        last_score_ = c.validation_score;
        best_step_ = r.at("best_step").get<long>();
        if (best_step_) {
            best_score_ = r.at("best_score").get<double>();
            best_ = model::read_checkpoint(dir / "best.ckpt").params;
        }
        // Drop log records past the resume point.
        std::vector<std::string> keep;
        if (std::ifstream in(log); in) {
            std::string line;
            while (std::getline(in, line)) {
                // A run killed mid-write can leave a torn last line.
                const Json j = Json::parse(line, nullptr, false);
                if (j.is_discarded() || !j.contains("step")) break;
                if (j.at("step").get<long>() <= step) keep.push_back(line);
            }
        }
        std::ofstream out(log, std::ios::trunc);
        for (const auto& l : keep) out << l << '\n';
        return step;
    }

    Checkpoint finish(Checkpoint c) {
        if (options_.run_dir) {
            save_resume(config_.total_steps);
            model::write_checkpoint(*options_.run_dir / "checkpoint.ckpt", c);
        }
        return c;
    }

    const ModelContext& ctx_;
    Method method_;
    const MetaConfig& config_;
    const TrainOptions& options_;
    Parameters<float> current_;
    Optimizer<float> opt_;
    std::ofstream log_;
    Parameters<float> best_;
    long best_step_ = 0;
    double best_score_ = 0;
    std::optional<double> last_score_;
};

}  // namespace

void MetaConfig::validate(Method method) const {
    if (!(inner_lr > 0) || !(outer_lr > 0)) throw UsageError("upstream: learning rates must be positive");
    if (inner_steps < 1) throw UsageError("upstream: inner_steps must be at least 1");
    if ((method == Method::maml || method == Method::fomaml) && inner_steps != 1) {
        throw UsageError("upstream: " + std::string(model::to_string(method)) + " uses exactly one inner step");
    }
    if (support_batch < 1 || query_batch < 1 || batch_size < 1) throw UsageError("upstream: batch sizes must be positive");
    if (total_steps < 0) throw UsageError("upstream: total_steps must be non-negative");
    if (validation_every < 0) throw UsageError("upstream: validation_every must be non-negative");
}

Json to_json(const MetaConfig& c) {
    return Json{{"inner_lr", c.inner_lr},
                {"outer_lr", c.outer_lr},
                {"inner_steps", c.inner_steps},
                {"support_batch", c.support_batch},
                {"query_batch", c.query_batch},
                {"batch_size", c.batch_size},
                {"total_steps", c.total_steps},
                {"validation_every", c.validation_every},
                {"seed", c.seed},
                {"optimizer", to_string(c.optimizer)}};
}

MetaConfig meta_config_from_json(const Json& j) {
    constexpr const char* ctx = "upstream";
    check_keys(j,
               {"inner_lr", "outer_lr", "inner_steps", "support_batch", "query_batch", "batch_size", "total_steps",
                "validation_every", "seed", "optimizer"},
               ctx);
    MetaConfig c;
    read_opt(j, "inner_lr", c.inner_lr, ctx);
    read_opt(j, "outer_lr", c.outer_lr, ctx);
    read_opt(j, "inner_steps", c.inner_steps, ctx);
    read_opt(j, "support_batch", c.support_batch, ctx);
    read_opt(j, "query_batch", c.query_batch, ctx);
    read_opt(j, "batch_size", c.batch_size, ctx);
    read_opt(j, "total_steps", c.total_steps, ctx);
    read_opt(j, "validation_every", c.validation_every, ctx);
    read_opt(j, "seed", c.seed, ctx);
    std::string opt = to_string(c.optimizer);
    read_opt(j, "optimizer", opt, ctx);
    c.optimizer = parse_optimizer(opt);
    return c;
}

Json to_json(const StepLog& s) {
    Json j{{"step", s.step},
           {"task", s.task},
           {"support", s.support},
           {"query", s.query},
           {"support_loss", s.support_loss},
           {"query_loss", s.query_loss ? Json(*s.query_loss) : Json(nullptr)},
           {"grad_norm", s.grad_norm}};
    if (s.skipped) {
        j["skipped"] = true;
        j["error"] = s.error;
    }
    return j;
}

StepLog step_log_from_json(const Json& j) {
    StepLog s;
    s.step = j.at("step").get<long>();
    s.task = j.at("task").get<std::string>();
    s.support = j.at("support").get<std::vector<std::size_t>>();
    s.query = j.at("query").get<std::vector<std::size_t>>();
    s.support_loss = j.at("support_loss").get<double>();
    if (!j.at("query_loss").is_null()) s.query_loss = j.at("query_loss").get<double>();
    s.grad_norm = j.at("grad_norm").get<double>();
    s.skipped = j.value("skipped", false);
    s.error = j.value("error", "");
    return s;
}

std::vector<StepLog> read_log(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::vector<StepLog> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        try {
            out.push_back(step_log_from_json(Json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

std::vector<Example> pooled_examples(std::span<const gym::FewShotSplit> splits) {
    std::vector<Example> out;
    for (const auto& s : splits) {
        out.insert(out.end(), s.train.begin(), s.train.end());
        out.insert(out.end(), s.dev.begin(), s.dev.end());
    }
    return out;
}

Checkpoint multitask_train(const ModelContext& ctx, const Parameters<float>& base,
                           std::span<const gym::FewShotSplit> splits, const MetaConfig& config,
                           const TrainOptions& options) {
    config.validate(Method::mtl);
    if (splits.empty()) throw DataError("multitask_train: no training tasks");
    const auto pooled = pooled_examples(splits);
    const auto data = encode_all(ctx.vocab, pooled);
    const std::size_t n = data.size();
    const auto bs = static_cast<std::size_t>(config.batch_size);

    // Epoch e visits the pooled set in permutation order e; batches are
    // consecutive windows of the concatenated epochs.
    long cached_epoch = -1;
    std::vector<std::size_t> order;
    auto index_at = [&](std::size_t pos) {
        const auto epoch = static_cast<long>(pos / n);
        if (epoch != cached_epoch) {
            Rng rng(derive_seed(config.seed, {hash_string("mtl-epoch"), static_cast<std::uint64_t>(epoch)}));
            order = permutation(n, rng);
            cached_epoch = epoch;
        }
        return order[pos % n];
    };

    Loop loop(ctx, base, Method::mtl, config, options);
    return loop.run([&](long step, const Parameters<float>& current, Update& u) {
        std::vector<std::size_t> idx;
        for (std::size_t k = 0; k < bs; ++k) idx.push_back(index_at(static_cast<std::size_t>(step - 1) * bs + k));
        u.log.support = idx;
        auto r = model::loss_and_grad<float>(ctx.config, current, batch_of(ctx.config, data, idx));
        u.log.support_loss = r.loss;
        u.grad = std::move(r.grad);
    });
}

Checkpoint meta_train(const ModelContext& ctx, const Parameters<float>& base,
                      std::span<const gym::FewShotSplit> splits, Method method, const MetaConfig& config,
                      const TrainOptions& options) {
    if (method != Method::maml && method != Method::fomaml && method != Method::reptile) {
        throw UsageError(std::string("meta_train: method must be maml, fomaml or reptile, got ") +
                         model::to_string(method));
    }
    config.validate(method);
    if (splits.empty()) throw DataError("meta_train: no training tasks");
    std::vector<std::vector<Encoded>> train, dev;
    for (const auto& s : splits) {
        if (s.train.empty() || s.dev.empty()) throw DataError("meta_train: split of " + s.task + " has an empty part");
        train.push_back(encode_all(ctx.vocab, s.train));
        dev.push_back(encode_all(ctx.vocab, s.dev));
    }
    const std::size_t tasks = splits.size();
    long cached_epoch = -1;
    std::vector<std::size_t> order;
    auto task_at = [&](long step) {
        const auto pos = static_cast<std::size_t>(step - 1);
        const auto epoch = static_cast<long>(pos / tasks);
        if (epoch != cached_epoch) {
            Rng rng(derive_seed(config.seed, {hash_string("task-order"), static_cast<std::uint64_t>(epoch)}));
            order = permutation(tasks, rng);
            cached_epoch = epoch;
        }
        return order[pos % tasks];
    };
    const auto alpha = static_cast<float>(config.inner_lr);

    Loop loop(ctx, base, method, config, options);
    return loop.run([&](long step, const Parameters<float>& current, Update& u) {
        const std::size_t t = task_at(step);
        Rng rng(derive_seed(config.seed, {hash_string("meta-batch"), static_cast<std::uint64_t>(step)}));
        u.log.task = splits[t].task;
        if (method == Method::reptile) {
            std::vector<Objective<float>> inner;
            for (int k = 0; k < config.inner_steps; ++k) {
                auto idx = draw(train[t].size(), config.support_batch, rng);
                inner.push_back(loss_on(ctx.config, batch_of(ctx.config, train[t], idx)));
                u.log.support.insert(u.log.support.end(), idx.begin(), idx.end());
            }
            // beta = 1 gives the raw displacement; the optimizer applies beta.
            auto r = reptile_step<float>(current, inner, alpha, 1.0f);
            u.log.support_loss = r.support_loss;
            u.grad = std::move(r.direction);
            for (std::size_t i = 0; i < u.grad.size(); ++i) u.grad[i] = -u.grad[i];
            return;
        }
        u.log.support = draw(train[t].size(), config.support_batch, rng);
        u.log.query = draw(dev[t].size(), config.query_batch, rng);
        const auto support = loss_on(ctx.config, batch_of(ctx.config, train[t], u.log.support));
        const auto query = loss_on(ctx.config, batch_of(ctx.config, dev[t], u.log.query));
        auto r = method == Method::maml ? maml_step<float>(current, support, query, alpha, 1.0f)
                                        : fomaml_step<float>(current, support, query, alpha, 1.0f);
        u.log.support_loss = r.support_loss;
        u.log.query_loss = r.query_loss;
        u.grad = std::move(r.direction);
    });
}

Checkpoint upstream_train(const ModelContext& ctx, const Parameters<float>& base,
                          std::span<const gym::FewShotSplit> splits, Method method, const MetaConfig& config,
                          const TrainOptions& options) {
    if (method == Method::mtl) return multitask_train(ctx, base, splits, config, options);
    return meta_train(ctx, base, splits, method, config, options);
}

bool run_complete(const fs::path& run_dir) { return fs::exists(run_dir / "checkpoint.ckpt"); }

std::string parameter_digest(const Parameters<float>& params) {
    std::vector<unsigned char> bytes;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto* p = reinterpret_cast<const unsigned char*>(params[i].data());
        bytes.insert(bytes.end(), p, p + params[i].size() * static_cast<model::Index>(sizeof(float)));
    }
    return sha256_hex(bytes);
}

}  // namespace xfit::upstream
