#include "xfit/cli/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "xfit/digest.hpp"
#include "xfit/gym/partition.hpp"
#include "xfit/model/transformer.hpp"

namespace xfit::cli {

namespace {

constexpr const char* manifest_name = "manifest.json";

void write_text(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("cannot write " + path.string());
        f << text;
        if (!f.flush()) throw DataError("cannot write " + path.string());
    }
    fs::rename(tmp, path);
}

Json read_json(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot read " + path.string());
    try {
        return Json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

// Component sections must not carry their own seeds; `seed` sets them all.
Json section(const Json& j, const char* key, std::initializer_list<const char*> forbidden) {
    const Json& s = j.at(key);
    if (!s.is_object()) throw UsageError(std::string(key) + ": expected a JSON object");
    for (const char* f : forbidden) {
        if (s.contains(f)) throw UsageError(std::string(key) + "." + f + ": set by the top-level seed or the gym");
    }
    return s;
}

Json without(Json j, std::initializer_list<const char*> keys) {
    for (const char* k : keys) j.erase(k);
    return j;
}

void create_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw DataError("cannot create directory " + dir.string());
}

void remove_stale_tmp(const fs::path& dir) {
    if (!fs::is_directory(dir)) return;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".tmp") fs::remove(e.path());
    }
}

gym::Partition load_checked_partition(const RunConfig& c, const Gym& g) {
    if (c.partition.empty()) throw UsageError("a partition is required (--partition)");
    if (!fs::exists(c.partition)) throw UsageError("partition file not found: " + c.partition.string());
    const auto names = g.names();
    gym::PartitionOptions options;
    options.allow_overlap = c.allow_overlap;
    options.registry = &names;
    return gym::load_partition(c.partition, options);
}

Gym checked_gym(const RunConfig& c) {
    if (!fs::exists(c.gym / "index.json")) throw UsageError("no gym at " + c.gym.string() + " (run `xfit gym` first)");
    return load_gym(c.gym);
}

model::ModelConfig model_for(const RunConfig& c, const Gym& g) {
    model::ModelConfig m = c.model;
    m.vocab_size = g.vocab.size();
    m.validate();
    return m;
}

// The config snapshot that decides whether two upstream invocations are the same run.
Json run_identity(const RunConfig& c) { return without(to_json(c), {"jobs", "out"}); }

std::string split_file(const std::string& task, std::uint64_t seed) {
    return "splits/" + task + "/seed-" + std::to_string(seed) + ".jsonl";
}

}  // namespace

const char* tool_version() { return "0.1.0"; }

void RunConfig::apply_seed() {
    model.init_seed = seed;
    upstream.seed = seed;
    fewshot.seed = seed;
}

void RunConfig::validate() const {
    if (method == model::Method::none) throw UsageError("method must be one of mtl, maml, fomaml, reptile");
    if (jobs < 1) throw UsageError("jobs must be at least 1");
    if (vocab.max_size <= static_cast<std::size_t>(model::Vocabulary::reserved_count)) {
        throw UsageError("vocab.max_size must exceed the reserved tokens");
    }
    model::ModelConfig m = model;
    m.vocab_size = model::Vocabulary::reserved_count + 1;
    m.validate();
    synth.validate();
    upstream.validate(method);
    fewshot.validate();
}

RunConfig default_run_config() {
    RunConfig c;
    if (const char* home = std::getenv("CROSSFIT_HOME"); home && *home) c.gym = home;
    c.synth.families = {{"copy", 4, 0, 0}, {"reverse", 4, 0, 0}, {"upper", 4, 0, 0}, {"sort", 4, 0, 0}};
    c.apply_seed();
    return c;
}

RunConfig run_config_from_json(const Json& j, RunConfig c) {
    check_keys(j,
               {"gym", "partition", "allow_overlap", "method", "model", "vocab", "synth", "upstream", "fewshot", "out",
                "seed", "jobs"},
               "config");
    std::string s;
    if (j.contains("gym")) {
        read_opt(j, "gym", s, "config");
        c.gym = s;
    }
    if (j.contains("partition")) {
        read_opt(j, "partition", s, "config");
        c.partition = s;
    }
    if (j.contains("out")) {
        read_opt(j, "out", s, "config");
        c.out = s;
    }
    if (j.contains("method")) {
        read_opt(j, "method", s, "config");
        c.method = model::parse_method(s);
    }
    read_opt(j, "allow_overlap", c.allow_overlap, "config");
    read_opt(j, "seed", c.seed, "config");
    read_opt(j, "jobs", c.jobs, "config");
    if (j.contains("model")) {
        Json m = to_json(c.model);
        m.update(section(j, "model", {"init_seed", "vocab_size"}));
        c.model = model::model_config_from_json(m);
    }
    if (j.contains("vocab")) {
        const Json& v = j.at("vocab");
        check_keys(v, {"mode", "max_size"}, "vocab");
        if (v.contains("mode")) {
            read_opt(v, "mode", s, "vocab");
            c.vocab.mode = model::parse_token_mode(s);
        }
        read_opt(v, "max_size", c.vocab.max_size, "vocab");
    }
    if (j.contains("synth")) {
        Json m = gym::to_json(c.synth);
        m.update(section(j, "synth", {}));
        c.synth = gym::synth_config_from_json(m);
    }
    if (j.contains("upstream")) {
        Json m = upstream::to_json(c.upstream);
        m.update(section(j, "upstream", {"seed"}));
        c.upstream = upstream::meta_config_from_json(m);
    }
    if (j.contains("fewshot")) {
        Json m = fewshot::to_json(c.fewshot);
        m.update(section(j, "fewshot", {"seed"}));
        c.fewshot = fewshot::finetune_config_from_json(m);
    }
    c.apply_seed();
    return c;
}

Json to_json(const RunConfig& c) {
    return Json{{"gym", c.gym.string()},
                {"partition", c.partition.string()},
                {"allow_overlap", c.allow_overlap},
                {"method", model::to_string(c.method)},
                {"model", without(model::to_json(c.model), {"init_seed", "vocab_size"})},
                {"vocab", {{"mode", model::to_string(c.vocab.mode)}, {"max_size", c.vocab.max_size}}},
                {"synth", gym::to_json(c.synth)},
                {"upstream", without(upstream::to_json(c.upstream), {"seed"})},
                {"fewshot", without(fewshot::to_json(c.fewshot), {"seed"})},
                {"out", c.out.string()},
                {"seed", c.seed},
                {"jobs", c.jobs}};
}

Json to_json(const RunManifest& m) {
    return Json{{"command", m.command}, {"version", m.version}, {"config", m.config},
                {"stages", m.stages},   {"files", m.files},     {"info", m.info}};
}

RunManifest manifest_from_json(const Json& j) {
    RunManifest m;
    try {
        m.command = j.at("command").get<std::string>();
        m.version = j.at("version").get<std::string>();
        m.config = j.at("config");
        m.stages = j.at("stages").get<std::map<std::string, std::string>>();
        m.files = j.at("files").get<std::map<std::string, std::string>>();
        m.info = j.at("info");
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("manifest: ") + e.what());
    }
    return m;
}

namespace {

void inventory(const fs::path& root, const fs::path& dir, std::map<std::string, std::string>& files) {
    std::vector<fs::path> entries;
    for (const auto& e : fs::directory_iterator(dir)) entries.push_back(e.path());
    std::sort(entries.begin(), entries.end());
    for (const auto& p : entries) {
        if (fs::is_directory(p)) {
            if (!fs::exists(p / manifest_name)) inventory(root, p, files);
        } else if (fs::is_regular_file(p) && p.extension() != ".tmp" && !(dir == root && p.filename() == manifest_name)) {
            files[fs::relative(p, root).generic_string()] = sha256_file(p);
        }
    }
}

}  // namespace

void write_manifest(const fs::path& dir, RunManifest& m) {
    m.files.clear();
    inventory(dir, dir, m.files);
    if (m.version.empty()) m.version = tool_version();
    write_text(dir / manifest_name, to_json(m).dump(2) + "\n");
}

RunManifest read_manifest(const fs::path& dir) { return manifest_from_json(read_json(dir / manifest_name)); }

std::vector<std::string> verify_manifest(const fs::path& dir) {
    const RunManifest m = read_manifest(dir);
    std::map<std::string, std::string> disk;
    inventory(dir, dir, disk);
    std::vector<std::string> problems;
    for (const auto& [path, digest] : m.files) {
        auto it = disk.find(path);
        if (it == disk.end()) {
            problems.push_back("missing: " + path);
        } else if (it->second != digest) {
            problems.push_back("digest mismatch: " + path);
        }
    }
    for (const auto& [path, digest] : disk) {
        if (!m.files.count(path)) problems.push_back("not in manifest: " + path);
    }
    return problems;
}

std::set<std::string> Gym::names() const {
    std::set<std::string> s;
    for (const auto& t : tasks) s.insert(t.name);
    return s;
}

const gym::Task& Gym::task(const std::string& name) const {
    for (const auto& t : tasks) {
        if (t.name == name) return t;
    }
    throw DataError("gym " + root.string() + ": no task '" + name + "'");
}

gym::FewShotSplit Gym::split(const std::string& task, std::uint64_t seed) const {
    const fs::path p = root / split_file(task, seed);
    if (!fs::exists(p)) throw DataError("missing split file " + p.string());
    gym::FewShotSplit s = gym::load_split(p);
    if (s.task != task || s.seed != seed) throw DataError(p.string() + ": split header does not match its path");
    return s;
}

Gym load_gym(const fs::path& root) {
    Gym g;
    g.root = root;
    const Json index = read_json(root / "index.json");
    try {
        for (const auto& t : index.at("tasks")) {
            g.tasks.push_back(gym::load_task(root / t.at("file").get<std::string>()));
            if (g.tasks.back().name != t.at("name").get<std::string>()) {
                throw DataError("index entry '" + t.at("name").get<std::string>() + "' names another task file");
            }
        }
        const Json v = read_json(root / index.at("vocab").get<std::string>());
        auto tokens = v.at("tokens").get<std::vector<std::string>>();
        if (tokens.size() < model::Vocabulary::reserved_count) throw DataError("vocab.json: vocabulary too small");
        g.vocab = model::Vocabulary(std::vector<std::string>(tokens.begin() + model::Vocabulary::reserved_count, tokens.end()),
                                    model::parse_token_mode(v.at("mode").get<std::string>()));
    } catch (const nlohmann::json::exception& e) {
        throw DataError((root / "index.json").string() + ": " + e.what());
    }
    return g;
}

RunManifest cmd_gym(const RunConfig& config, const std::optional<fs::path>& task_dir, const fs::path& out) {
    std::vector<gym::Task> tasks;
    if (task_dir) {
        if (!fs::is_directory(*task_dir)) throw DataError("task directory not found: " + task_dir->string());
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(*task_dir)) {
            if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) throw DataError("no task files (*.jsonl) in " + task_dir->string());
        std::vector<std::string> errors;
        for (const auto& f : files) {
            try {
                tasks.push_back(gym::load_task(f));
            } catch (const DataError& e) {
                errors.push_back(f.filename().string() + ": " + e.what());
            }
        }
        if (!errors.empty()) {
            std::string msg = std::to_string(errors.size()) + " invalid task file(s):";
            for (const auto& e : errors) msg += "\n  " + e;
            throw DataError(msg);
        }
    } else {
        tasks = gym::synth_suite(config.synth, config.seed);
    }
    std::sort(tasks.begin(), tasks.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
    for (std::size_t i = 1; i < tasks.size(); ++i) {
        if (tasks[i].name == tasks[i - 1].name) throw DataError("duplicate task name '" + tasks[i].name + "'");
    }

    create_dir(out);
    for (const char* sub : {"tasks", "splits"}) fs::remove_all(out / sub);
    remove_stale_tmp(out);
    create_dir(out / "tasks");

    std::vector<std::string> corpus;
    Json entries = Json::array();
    for (const auto& t : tasks) {
        const std::string file = "tasks/" + t.name + ".jsonl";
        gym::write_task(out / file, t);
        create_dir(out / "splits" / t.name);
        Json splits = Json::object();
        for (auto seed : gym::default_seeds()) {
            gym::write_split(out / split_file(t.name, seed), gym::sample_few_shot(t, seed));
            splits[std::to_string(seed)] = split_file(t.name, seed);
        }
        for (const auto* part : {&t.pool, &t.test}) {
            for (const auto& e : *part) {
                corpus.push_back(e.input);
                corpus.push_back(e.output);
            }
        }
        entries.push_back(Json{{"name", t.name},
                               {"kind", gym::to_string(t.kind)},
                               {"metric", metrics::to_string(t.metric)},
                               {"labels", t.labels},
                               {"pool", t.pool.size()},
                               {"test", t.test.size()},
                               {"file", file},
                               {"splits", splits}});
    }
    const auto vocab = model::build_vocab(corpus, config.vocab.mode, config.vocab.max_size);
    write_text(out / "vocab.json",
               Json{{"mode", model::to_string(vocab.mode())}, {"tokens", vocab.tokens()}}.dump() + "\n");
    write_text(out / "index.json",
               Json{{"tasks", entries}, {"seeds", gym::default_seeds()}, {"vocab", "vocab.json"}}.dump(2) + "\n");

    RunManifest m;
    m.command = "gym";
    m.config = to_json(config);
    m.stages["gym"] = "complete";
    m.info = Json{{"source", task_dir ? "tasks" : "synth"}, {"tasks", tasks.size()}, {"vocab_size", vocab.size()}};
    write_manifest(out, m);
    return m;
}

RunManifest cmd_upstream(const RunConfig& config, std::optional<long> stop_after) {
    config.validate();
    const Gym g = checked_gym(config);
    const auto partition = load_checked_partition(config, g);
    if (partition.train.empty()) throw DataError("partition " + partition.name + " has no training tasks");
    const auto mc = model_for(config, g);
    const fs::path dir = config.out;

    upstream::TrainOptions options;
    options.run_dir = dir;
    options.stop_after = stop_after;
    if (fs::exists(dir / manifest_name)) {
        RunManifest prev = read_manifest(dir);
        if (prev.command != "upstream" || prev.config.is_null() || without(prev.config, {"jobs", "out"}) != run_identity(config)) {
            throw UsageError(dir.string() + " holds a different run; choose another --out");
        }
        if (prev.stages["upstream"] == "complete" && upstream::run_complete(dir)) return prev;
        options.resume = true;
    }
    create_dir(dir);
    remove_stale_tmp(dir);

    RunManifest m;
    m.command = "upstream";
    m.config = to_json(config);
    m.stages["upstream"] = "incomplete";
    write_manifest(dir, m);

    // Upstream trains on the first default seed's split of every T_train task.
    const auto split_seed = gym::default_seeds().front();
    std::vector<gym::FewShotSplit> splits;
    for (const auto& name : partition.train) splits.push_back(g.split(name, split_seed));
    const auto base = model::init_params<float>(mc);

    if (!partition.dev.empty()) {
        std::vector<gym::Task> dev_tasks;
        std::vector<gym::FewShotSplit> dev_splits;
        for (const auto& name : partition.dev) {
            dev_tasks.push_back(g.task(name));
            dev_splits.push_back(g.split(name, split_seed));
        }
        // Checkpoint selection fine-tunes with the first grid cell only.
        fewshot::FinetuneConfig reduced = config.fewshot;
        reduced.learning_rates = {config.fewshot.learning_rates.front()};
        reduced.batch_sizes = {config.fewshot.batch_sizes.front()};
        options.validate = fewshot::dev_validator(mc, g.vocab, base, std::move(dev_tasks), std::move(dev_splits),
                                                  reduced, config.jobs);
    }

    const upstream::ModelContext ctx{mc, g.vocab, partition.name};
    const auto ckpt = upstream::upstream_train(ctx, base, splits, config.method, config.upstream, options);
    if (!upstream::run_complete(dir)) {
        write_manifest(dir, m);
        return m;
    }
    m.stages["upstream"] = "complete";
    m.info = Json{{"checkpoint", "checkpoint.ckpt"},
                  {"method", model::to_string(ckpt.method)},
                  {"partition", partition.name},
                  {"meta_step", ckpt.meta_step},
                  {"validation_score", ckpt.validation_score ? Json(*ckpt.validation_score) : Json(nullptr)},
                  {"parameter_digest", upstream::parameter_digest(ckpt.params)}};
    write_manifest(dir, m);
    return m;
}

RunManifest cmd_fewshot(const RunConfig& config, const std::optional<fs::path>& checkpoint) {
    config.validate();
    const Gym g = checked_gym(config);
    const auto partition = load_checked_partition(config, g);
    if (partition.test.empty()) throw DataError("partition " + partition.name + " has no test tasks");

    model::Checkpoint start;
    if (checkpoint) {
        if (!fs::exists(*checkpoint)) throw DataError("checkpoint not found: " + checkpoint->string());
        start = model::read_checkpoint(*checkpoint);
    } else {
        start.config = model_for(config, g);
        start.vocab = g.vocab;
        start.params = model::init_params<float>(start.config);
    }
    const fewshot::ModelRef ref{start.config, start.vocab};

    const fs::path dir = config.out;
    create_dir(dir);
    fs::remove_all(dir / "results");
    remove_stale_tmp(dir);
    create_dir(dir / "results");
    RunManifest m;
    m.command = "fewshot";
    m.config = to_json(config);
    m.stages["fewshot"] = "incomplete";
    write_manifest(dir, m);

    struct Job {
        std::size_t task;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    std::vector<gym::FewShotSplit> splits;
    for (std::size_t t = 0; t < partition.test.size(); ++t) {
        for (auto seed : gym::default_seeds()) {
            jobs.push_back({t, seed});
            splits.push_back(g.split(partition.test[t], seed));
        }
    }
    std::vector<fewshot::TaskResult> results(jobs.size());
    fewshot::parallel_for(jobs.size(), config.jobs, [&](std::size_t i) {
        results[i] = fewshot::hp_search(ref, start.params, g.task(partition.test[jobs[i].task]), splits[i],
                                        config.fewshot);
    });

    const std::size_t per_task = gym::default_seeds().size();
    Json tasks = Json::array();
    for (std::size_t t = 0; t < partition.test.size(); ++t) {
        const std::span<const fewshot::TaskResult> mine(results.data() + t * per_task, per_task);
        fewshot::write_results(dir / "results" / (partition.test[t] + ".jsonl"), mine);
        tasks.push_back(Json{{"task", partition.test[t]},
                             {"metric", mine.front().metric},
                             {"mean_test", fewshot::mean_by_task(mine).at(partition.test[t])}});
    }
    const std::string method = checkpoint ? model::to_string(start.method) : "direct";
    m.stages["fewshot"] = "complete";
    m.info = Json{{"method", method},
                  {"source", checkpoint ? checkpoint->string() : "direct"},
                  {"parameter_digest", upstream::parameter_digest(start.params)},
                  {"partition", partition.name},
                  {"results", results.size()},
                  {"tasks", tasks}};
    write_manifest(dir, m);
    return m;
}

ResultSet load_results(const fs::path& dir, const std::string& name) {
    const fs::path rdir = dir / "results";
    if (!fs::is_directory(rdir)) throw DataError("no results directory in " + dir.string());
    ResultSet r;
    r.name = name;
    if (r.name.empty() && fs::exists(dir / manifest_name)) {
        const auto m = read_manifest(dir);
        if (m.info.contains("method")) r.name = m.info.at("method").get<std::string>();
    }
    if (r.name.empty()) r.name = dir.filename().string();
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(rdir)) {
        if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no result files in " + rdir.string());
    for (const auto& f : files) {
        const auto results = fewshot::read_results(f);
        for (const auto& [task, mean] : fewshot::mean_by_task(results)) r.means[task] = mean;
        for (const auto& t : results) r.metrics[t.task] = t.metric;
    }
    return r;
}

std::string cmd_report(const fs::path& baseline, const std::vector<std::pair<std::string, fs::path>>& methods,
                       const fs::path& out) {
    if (methods.empty()) throw UsageError("report needs at least one method results directory");
    const ResultSet base = load_results(baseline, "direct");
    std::vector<ResultSet> sets;
    for (const auto& [name, dir] : methods) sets.push_back(load_results(dir, name));

    std::string diff;
    for (const auto& s : sets) {
        std::vector<std::string> missing, extra;
        for (const auto& [task, v] : base.means) {
            if (!s.means.count(task)) missing.push_back(task);
        }
        for (const auto& [task, v] : s.means) {
            if (!base.means.count(task)) extra.push_back(task);
        }
        auto list = [](const std::vector<std::string>& v) {
            std::string o;
            for (const auto& x : v) o += (o.empty() ? "" : ", ") + x;
            return o;
        };
        if (!missing.empty()) diff += "\n  " + s.name + " lacks: " + list(missing);
        if (!extra.empty()) diff += "\n  " + s.name + " has extra: " + list(extra);
    }
    if (!diff.empty()) throw DataError("result directories cover different task sets:" + diff);

    metrics::ReportTable table;
    for (const auto& [task, mean] : base.means) {
        table.tasks.push_back(task);
        table.task_metrics.push_back(base.metrics.at(task));
        table.baseline.push_back(mean);
    }
    for (const auto& s : sets) {
        std::vector<metrics::ScorePair> pairs;
        for (const auto& task : table.tasks) pairs.push_back({task, base.metrics.at(task), base.means.at(task), s.means.at(task)});
        table.methods.push_back(s.name);
        table.columns.push_back(metrics::arg(pairs));
    }
    const std::string text = metrics::to_text(table);
    create_dir(out);
    remove_stale_tmp(out);
    write_text(out / "report.json", metrics::to_json(table).dump(2) + "\n");
    write_text(out / "report.txt", text);
    RunManifest m;
    m.command = "report";
    Json inputs = Json::array();
    for (const auto& [name, dir] : methods) inputs.push_back(Json{{"name", name}, {"results", dir.string()}});
    m.config = Json{{"baseline", baseline.string()}, {"methods", inputs}};
    m.stages["report"] = "complete";
    write_manifest(out, m);
    return text;
}

}  // namespace xfit::cli
