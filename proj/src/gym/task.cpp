#include "xfit/gym/task.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "xfit/rng.hpp"

namespace xfit::gym {

namespace {

std::vector<Example> distinct(const std::vector<Example>& xs) {
    std::set<Example> seen;
    std::vector<Example> out;
    for (const auto& x : xs) {
        if (seen.insert(x).second) out.push_back(x);
    }
    return out;
}

Json example_line(const char* tag_key, const char* tag, const Example& e) {
    return Json{{tag_key, tag}, {"input", e.input}, {"output", e.output}};
}

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + path.string());
    return f;
}

// Parsed JSON lines with 1-based line numbers; blank lines are skipped.
std::vector<std::pair<std::size_t, Json>> read_json_lines(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError(path.string() + ": cannot open");
    std::vector<std::pair<std::size_t, Json>> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(f, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.emplace_back(n, Json::parse(line));
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError(path.string() + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

std::string get_string(const Json& j, const char* key, const std::string& where) {
    if (!j.contains(key) || !j.at(key).is_string()) throw DataError(where + ": missing string field '" + key + "'");
    return j.at(key).get<std::string>();
}

}  // namespace

const char* to_string(TaskKind k) { return k == TaskKind::classification ? "classification" : "other"; }

TaskKind parse_task_kind(std::string_view s) {
    if (s == "classification") return TaskKind::classification;
    if (s == "other") return TaskKind::other;
    throw DataError("unknown task kind '" + std::string(s) + "'");
}

Template nli_template() { return {"nli", {{"premise:", "premise"}, {"hypothesis:", "hypothesis"}}, "label"}; }
Template mrc_template() { return {"mrc", {{"question:", "question"}, {"context:", "context"}}, "answer"}; }
Template identity_template() { return {"identity", {{"", "input"}}, "output"}; }

Template named_template(std::string_view name) {
    if (name == "nli") return nli_template();
    if (name == "mrc") return mrc_template();
    if (name == "identity") return identity_template();
    throw DataError("unknown template '" + std::string(name) + "'");
}

Json to_json(const Template& t) {
    Json fields = Json::array();
    for (const auto& [prefix, field] : t.fields) fields.push_back({prefix, field});
    return Json{{"name", t.name}, {"fields", fields}, {"target", t.target}};
}

Template template_from_json(const Json& j) {
    if (j.is_string()) return named_template(j.get<std::string>());
    try {
        Template t;
        t.name = j.at("name").get<std::string>();
        for (const auto& f : j.at("fields")) t.fields.emplace_back(f.at(0).get<std::string>(), f.at(1).get<std::string>());
        t.target = j.at("target").get<std::string>();
        if (t.fields.empty()) throw DataError("template '" + t.name + "' has no fields");
        return t;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed template: ") + e.what());
    }
}

Example apply_template(const Template& t, const Record& record) {
    auto field = [&](const std::string& name) -> const std::string& {
        auto it = record.find(name);
        if (it == record.end()) throw DataError("template '" + t.name + "': record has no field '" + name + "'");
        return it->second;
    };
    Example e;
    for (const auto& [prefix, name] : t.fields) {
        const std::string& value = field(name);
        if (!prefix.empty()) {
            if (!e.input.empty()) e.input += ' ';
            e.input += prefix;
        }
        if (!e.input.empty()) e.input += ' ';
        e.input += value;
    }
    e.output = field(t.target);
    return e;
}

bool metric_valid_for(metrics::Metric m, TaskKind k) {
    using metrics::Metric;
    if (k == TaskKind::classification) {
        return m == Metric::accuracy || m == Metric::classification_f1 || m == Metric::matthews;
    }
    return m == Metric::accuracy || m == Metric::exact_match || m == Metric::qa_f1 || m == Metric::rouge_l ||
           m == Metric::pearson;
}

void Task::validate() const {
    const std::string where = "task '" + name + "'";
    if (name.empty()) throw DataError("task with empty name");
    if (kind == TaskKind::classification) {
        if (labels.size() < 2) throw DataError(where + ": classification needs at least 2 labels");
        std::set<std::string> uniq(labels.begin(), labels.end());
        if (uniq.size() != labels.size()) throw DataError(where + ": duplicate labels");
    } else if (!labels.empty()) {
        throw DataError(where + ": only classification tasks carry a label set");
    }
    if (!metric_valid_for(metric, kind)) {
        throw DataError(where + ": metric " + std::string(metrics::to_string(metric)) + " is not valid for kind " +
                        to_string(kind));
    }
    if (metric == metrics::Metric::matthews && labels.size() != 2) {
        throw DataError(where + ": matthews needs exactly 2 labels");
    }
    std::set<std::string> label_set(labels.begin(), labels.end());
    auto check = [&](const std::vector<Example>& xs, const char* part) {
        for (const auto& e : xs) {
            if (e.input.empty() || e.output.empty()) throw DataError(where + ": empty input or output in " + part);
            if (kind == TaskKind::classification && !label_set.count(e.output)) {
                throw DataError(where + ": output '" + e.output + "' in " + part + " is not a label");
            }
        }
    };
    check(pool, "pool");
    check(test, "test");
    std::set<Example> test_set(test.begin(), test.end());
    for (const auto& e : pool) {
        if (test_set.count(e)) throw DataError(where + ": example '" + e.input + "' is in both pool and test");
    }
}

const std::vector<std::uint64_t>& default_seeds() {
    static const std::vector<std::uint64_t> seeds{13, 21, 42, 87, 100};
    return seeds;
}

FewShotSplit sample_few_shot(const Task& task, std::uint64_t seed, const SamplingSizes& sizes) {
    Rng rng(derive_seed(seed, {hash_string(task.name)}));
    const std::set<Example> test_set(task.test.begin(), task.test.end());
    std::vector<Example> pool;
    for (const auto& e : distinct(task.pool)) {
        if (!test_set.count(e)) pool.push_back(e);
    }
    FewShotSplit s{task.name, seed, {}, {}};
    if (task.kind == TaskKind::classification) {
        const auto need = static_cast<std::size_t>(2 * sizes.per_class);
        for (const auto& label : task.labels) {
            std::vector<Example> members;
            for (const auto& e : pool) {
                if (e.output == label) members.push_back(e);
            }
            if (members.size() < need) {
                throw DataError("task '" + task.name + "': class '" + label + "' needs " + std::to_string(need) +
                                " examples, pool has " + std::to_string(members.size()));
            }
            shuffle(members, rng);
            const auto per = static_cast<std::ptrdiff_t>(sizes.per_class);
            s.train.insert(s.train.end(), members.begin(), members.begin() + per);
            s.dev.insert(s.dev.end(), members.begin() + per, members.begin() + 2 * per);
        }
        shuffle(s.train, rng);
        shuffle(s.dev, rng);
    } else {
        const auto n = static_cast<std::size_t>(sizes.non_classification);
        if (pool.size() < 2 * n) {
            throw DataError("task '" + task.name + "': needs " + std::to_string(2 * n) + " examples, pool has " +
                            std::to_string(pool.size()));
        }
        shuffle(pool, rng);
        s.train.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n));
        s.dev.assign(pool.begin() + static_cast<std::ptrdiff_t>(n), pool.begin() + static_cast<std::ptrdiff_t>(2 * n));
    }
    return s;
}

std::pair<std::vector<Example>, std::vector<Example>> holdout_test(const std::vector<Example>& raw,
                                                                   const std::optional<std::vector<Example>>& official_dev,
                                                                   std::uint64_t seed) {
    if (official_dev) {
        if (official_dev->empty()) throw DataError("holdout_test: official dev set is empty");
        const std::set<Example> test_set(official_dev->begin(), official_dev->end());
        std::vector<Example> pool;
        for (const auto& e : raw) {
            if (!test_set.count(e)) pool.push_back(e);
        }
        return {pool, *official_dev};
    }
    auto uniq = distinct(raw);
    if (uniq.size() < 10) {
        throw DataError("holdout_test: needs at least 10 distinct examples, got " + std::to_string(uniq.size()));
    }
    const std::size_t n_test = std::max<std::size_t>(1, uniq.size() / 5);
    Rng rng(derive_seed(seed, {0x686f6c646f7574ull}));
    auto order = permutation(uniq.size(), rng);
    std::vector<char> is_test(uniq.size(), 0);
    for (std::size_t i = 0; i < n_test; ++i) is_test[order[i]] = 1;
    std::vector<Example> pool, test;
    for (std::size_t i = 0; i < uniq.size(); ++i) (is_test[i] ? test : pool).push_back(uniq[i]);
    return {pool, test};
}

void write_task(const std::filesystem::path& path, const Task& task) {
    task.validate();
    auto f = open_out(path);
    Json header{{"name", task.name},
                {"kind", to_string(task.kind)},
                {"labels", task.labels},
                {"metric", metrics::to_string(task.metric)}};
    f << Json{{"task", header}}.dump() << '\n';
    for (const auto& e : task.pool) f << example_line("split", "pool", e).dump() << '\n';
    for (const auto& e : task.test) f << example_line("split", "test", e).dump() << '\n';
    if (!f) throw DataError("failed writing " + path.string());
}

Task load_task(const std::filesystem::path& path) {
    const auto lines = read_json_lines(path);
    if (lines.empty()) throw DataError(path.string() + ": empty task file");
    Task t;
    std::optional<Template> tmpl;
    {
        const auto& [n, j] = lines.front();
        const std::string where = path.string() + ":" + std::to_string(n);
        if (!j.is_object() || !j.contains("task")) throw DataError(where + ": first line must be a {\"task\": ...} header");
        const Json& h = j.at("task");
        try {
            check_keys(h, {"name", "kind", "labels", "metric", "template"}, where);
        } catch (const UsageError& e) {
            throw DataError(e.what());
        }
        t.name = get_string(h, "name", where);
        t.kind = parse_task_kind(get_string(h, "kind", where));
        t.metric = metrics::parse_metric(get_string(h, "metric", where));
        if (h.contains("labels")) {
            try {
                t.labels = h.at("labels").get<std::vector<std::string>>();
            } catch (const nlohmann::json::exception&) {
                throw DataError(where + ": labels must be a list of strings");
            }
        }
        if (h.contains("template")) tmpl = template_from_json(h.at("template"));
    }
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto& [n, j] = lines[i];
        const std::string where = path.string() + ":" + std::to_string(n);
        if (!j.is_object()) throw DataError(where + ": expected a JSON object");
        const std::string split = get_string(j, "split", where);
        Example e;
        if (j.contains("fields")) {
            if (!tmpl) throw DataError(where + ": record has fields but the header declares no template");
            Record r;
            try {
                r = j.at("fields").get<Record>();
            } catch (const nlohmann::json::exception&) {
                throw DataError(where + ": fields must map names to strings");
            }
            try {
                e = apply_template(*tmpl, r);
            } catch (const DataError& err) {
                throw DataError(where + ": " + err.what());
            }
        } else {
            e.input = get_string(j, "input", where);
            e.output = get_string(j, "output", where);
        }
        if (split == "pool") t.pool.push_back(std::move(e));
        else if (split == "test") t.test.push_back(std::move(e));
        else throw DataError(where + ": split must be 'pool' or 'test', got '" + split + "'");
    }
    try {
        t.validate();
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    return t;
}

void write_split(const std::filesystem::path& path, const FewShotSplit& split) {
    auto f = open_out(path);
    f << Json{{"split", {{"task", split.task}, {"seed", split.seed}}}}.dump() << '\n';
    for (const auto& e : split.train) f << example_line("part", "train", e).dump() << '\n';
    for (const auto& e : split.dev) f << example_line("part", "dev", e).dump() << '\n';
    if (!f) throw DataError("failed writing " + path.string());
}

FewShotSplit load_split(const std::filesystem::path& path) {
    const auto lines = read_json_lines(path);
    if (lines.empty()) throw DataError(path.string() + ": empty split file");
    FewShotSplit s;
    {
        const auto& [n, j] = lines.front();
        const std::string where = path.string() + ":" + std::to_string(n);
        if (!j.is_object() || !j.contains("split")) throw DataError(where + ": first line must be a {\"split\": ...} header");
        s.task = get_string(j.at("split"), "task", where);
        if (!j.at("split").contains("seed") || !j.at("split").at("seed").is_number_unsigned()) {
            throw DataError(where + ": missing seed");
        }
        s.seed = j.at("split").at("seed").get<std::uint64_t>();
    }
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto& [n, j] = lines[i];
        const std::string where = path.string() + ":" + std::to_string(n);
        const std::string part = get_string(j, "part", where);
        Example e{get_string(j, "input", where), get_string(j, "output", where)};
        if (part == "train") s.train.push_back(std::move(e));
        else if (part == "dev") s.dev.push_back(std::move(e));
        else throw DataError(where + ": part must be 'train' or 'dev', got '" + part + "'");
    }
    if (s.train.size() != s.dev.size()) throw DataError(path.string() + ": train and dev sizes differ");
    return s;
}

}  // namespace xfit::gym
