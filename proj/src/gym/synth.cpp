#include "xfit/gym/synth.hpp"

#include <algorithm>
#include <functional>
#include <set>

#include "xfit/rng.hpp"

namespace xfit::gym {

namespace {

constexpr std::string_view consonants = "bdfghklmnprstvz";
constexpr std::string_view vowels = "aeiou";
constexpr std::size_t syllables = consonants.size() * vowels.size();
constexpr std::size_t word_space = syllables * syllables;
constexpr int extra_words = 4;

std::string word(std::size_t id) {
    const std::size_t a = id / syllables;
    const std::size_t b = id % syllables;
    return {consonants[a / vowels.size()], vowels[a % vowels.size()], consonants[b / vowels.size()],
            vowels[b % vowels.size()]};
}

std::string join(const std::vector<std::string>& words) {
    std::string out;
    for (const auto& w : words) {
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

int uniform_int(Rng& rng, int lo, int hi) {
    return lo + static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(hi - lo + 1)));
}

template <typename V>
const auto& pick(Rng& rng, const V& v) {
    return v[static_cast<std::size_t>(uniform_below(rng, v.size()))];
}

struct Generated {
    TaskKind kind = TaskKind::other;
    std::vector<std::string> labels;
    metrics::Metric metric = metrics::Metric::rouge_l;
    // Produces one example for the i-th draw.
    std::function<Example(Rng&, int)> draw;
    int default_examples = 120;
};

Generated make_family(const std::string& family, const std::vector<std::string>& lex, const SynthConfig& c,
                      int classes) {
    Generated g;
    auto payload = [lo = c.min_words, hi = c.max_words](Rng& rng, const std::vector<std::string>& from) {
        std::vector<std::string> w(static_cast<std::size_t>(uniform_int(rng, lo, hi)));
        for (auto& x : w) x = pick(rng, from);
        return w;
    };
    const std::vector<std::string> body(lex.begin(), lex.begin() + c.lexicon_size);
    if (is_transduction(family)) {
        g.draw = [family, body, payload](Rng& rng, int) {
            auto w = payload(rng, body);
            Example e{family + ": " + join(w), ""};
            if (family == "reverse") std::reverse(w.begin(), w.end());
            if (family == "sort") std::sort(w.begin(), w.end());
            e.output = join(w);
            if (family == "upper") {
                for (auto& ch : e.output) ch = static_cast<char>(ch >= 'a' && ch <= 'z' ? ch - 'a' + 'A' : ch);
            }
            return e;
        };
        return g;
    }
    if (family == "parity") {
        g.kind = TaskKind::classification;
        g.labels = {"even", "odd"};
        g.metric = metrics::Metric::accuracy;
        g.default_examples = 240;
        const std::string marker = body[0];
        const std::vector<std::string> rest(body.begin() + 1, body.end());
        const int lo = std::max(3, c.min_words);
        const int hi = std::max(lo, c.max_words + 2);
        g.draw = [marker, rest, lo, hi](Rng& rng, int i) {
            const int len = uniform_int(rng, lo, hi);
            const int parity = i % 2;
            int count = uniform_int(rng, 0, len);
            if (count % 2 != parity) count = count > 0 ? count - 1 : 1;
            std::vector<std::string> w(static_cast<std::size_t>(len));
            for (auto& x : w) x = pick(rng, rest);
            auto slots = permutation(w.size(), rng);
            for (int k = 0; k < count; ++k) w[slots[static_cast<std::size_t>(k)]] = marker;
            return Example{"parity: " + join(w), parity ? "odd" : "even"};
        };
        return g;
    }
    if (family == "keyword") {
        g.kind = TaskKind::classification;
        g.labels = {"yes", "no"};
        g.metric = metrics::Metric::classification_f1;
        g.default_examples = 240;
        const std::string key = body[0];
        const std::vector<std::string> rest(body.begin() + 1, body.end());
        g.draw = [key, rest, payload](Rng& rng, int i) {
            auto w = payload(rng, rest);
            const bool yes = i % 2 == 0;
            if (yes) w[static_cast<std::size_t>(uniform_below(rng, w.size()))] = key;
            return Example{"keyword: " + join(w), yes ? "yes" : "no"};
        };
        return g;
    }
    if (family == "tag") {
        g.kind = TaskKind::classification;
        g.metric = metrics::Metric::classification_f1;
        g.default_examples = 240;
        g.labels.assign(lex.begin() + c.lexicon_size, lex.begin() + c.lexicon_size + classes);
        std::vector<std::vector<std::string>> groups(static_cast<std::size_t>(classes));
        for (std::size_t k = 0; k < body.size(); ++k) groups[k % groups.size()].push_back(body[k]);
        const auto labels = g.labels;
        g.draw = [groups, labels, payload](Rng& rng, int i) {
            const auto cls = static_cast<std::size_t>(i) % groups.size();
            return Example{"tag: " + join(payload(rng, groups[cls])), labels[cls]};
        };
        return g;
    }
    if (family == "slot") {
        g.metric = metrics::Metric::qa_f1;
        const std::size_t half = body.size() / 2;
        const std::vector<std::string> keys(body.begin(), body.begin() + static_cast<std::ptrdiff_t>(half));
        const std::vector<std::string> values(body.begin() + static_cast<std::ptrdiff_t>(half), body.end());
        g.draw = [keys, values](Rng& rng, int) {
            auto order = permutation(keys.size(), rng);
            std::vector<std::string> ctx;
            std::vector<std::string> vals;
            for (std::size_t k = 0; k < 3; ++k) {
                vals.push_back(pick(rng, values));
                ctx.push_back(keys[order[k]]);
                ctx.push_back(vals.back());
            }
            const auto q = static_cast<std::size_t>(uniform_below(rng, 3));
            Record r{{"question", keys[order[q]]}, {"context", join(ctx)}, {"answer", vals[q]}};
            return apply_template(mrc_template(), r);
        };
        return g;
    }
    throw UsageError("unknown task family '" + family + "'");
}

}  // namespace

const std::vector<std::string>& synth_families() {
    static const std::vector<std::string> f{"copy", "reverse", "upper", "sort", "parity", "keyword", "tag", "slot"};
    return f;
}

bool is_transduction(std::string_view family) {
    return family == "copy" || family == "reverse" || family == "upper" || family == "sort";
}

void SynthConfig::validate() const {
    if (families.empty()) throw UsageError("synth config: no families");
    if (lexicon_size < 8) throw UsageError("synth config: lexicon_size must be at least 8");
    if (min_words < 1 || max_words < min_words) throw UsageError("synth config: need 1 <= min_words <= max_words");
    std::size_t total = 0;
    for (const auto& f : families) {
        if (std::find(synth_families().begin(), synth_families().end(), f.family) == synth_families().end()) {
            throw UsageError("synth config: unknown family '" + f.family + "'");
        }
        if (f.instances < 1) throw UsageError("synth config: instances must be positive for " + f.family);
        if (f.examples != 0 && f.examples < 10) throw UsageError("synth config: examples must be 0 or >= 10");
        if (f.classes != 0 && (f.family != "tag" || f.classes < 2 || f.classes > 4)) {
            throw UsageError("synth config: classes applies to the tag family and must be in [2, 4]");
        }
        total += static_cast<std::size_t>(f.instances) * static_cast<std::size_t>(lexicon_size + extra_words);
    }
    if (total > word_space) throw UsageError("synth config: lexicons need more words than the word space holds");
}

Json to_json(const SynthConfig& c) {
    Json fams = Json::array();
    for (const auto& f : c.families) {
        fams.push_back({{"family", f.family}, {"instances", f.instances}, {"examples", f.examples}, {"classes", f.classes}});
    }
    return Json{{"families", fams}, {"lexicon_size", c.lexicon_size}, {"min_words", c.min_words}, {"max_words", c.max_words}};
}

SynthConfig synth_config_from_json(const Json& j) {
    constexpr const char* ctx = "synth";
    check_keys(j, {"families", "lexicon_size", "min_words", "max_words"}, ctx);
    SynthConfig c;
    read_opt(j, "lexicon_size", c.lexicon_size, ctx);
    read_opt(j, "min_words", c.min_words, ctx);
    read_opt(j, "max_words", c.max_words, ctx);
    if (j.contains("families")) {
        if (!j.at("families").is_array()) throw UsageError("synth.families must be a list");
        for (const auto& f : j.at("families")) {
            check_keys(f, {"family", "instances", "examples", "classes"}, "synth.families[]");
            FamilySpec s;
            read_opt(f, "family", s.family, "synth.families[]");
            read_opt(f, "instances", s.instances, "synth.families[]");
            read_opt(f, "examples", s.examples, "synth.families[]");
            read_opt(f, "classes", s.classes, "synth.families[]");
            c.families.push_back(s);
        }
    }
    c.validate();
    return c;
}

std::vector<Task> synth_suite(const SynthConfig& config, std::uint64_t seed) {
    config.validate();
    Rng lex_rng(derive_seed(seed, {hash_string("lexicon")}));
    const auto words = permutation(word_space, lex_rng);
    const auto per_task = static_cast<std::size_t>(config.lexicon_size + extra_words);
    std::size_t next = 0;
    std::vector<Task> tasks;
    for (const auto& spec : config.families) {
        for (int inst = 0; inst < spec.instances; ++inst) {
            const std::string name = spec.family + "-" + std::to_string(inst);
            std::vector<std::string> lex;
            for (std::size_t k = 0; k < per_task; ++k) lex.push_back(word(words[next++]));
            Rng rng(derive_seed(seed, {hash_string(name), 1}));
            const int classes = spec.classes ? spec.classes : uniform_int(rng, 2, 4);
            const auto gen = make_family(spec.family, lex, config, classes);
            const int n = spec.examples ? spec.examples : gen.default_examples;
            std::set<Example> seen;
            std::vector<Example> raw;
            const long max_attempts = 200L * n;
            for (long attempt = 0; static_cast<int>(raw.size()) < n && attempt < max_attempts; ++attempt) {
                auto e = gen.draw(rng, static_cast<int>(raw.size()));
                if (seen.insert(e).second) raw.push_back(std::move(e));
            }
            if (static_cast<int>(raw.size()) < n) {
                throw UsageError("synth: could not generate " + std::to_string(n) + " distinct examples for " + name);
            }
            Task t;
            t.name = name;
            t.kind = gen.kind;
            t.labels = gen.labels;
            t.metric = gen.metric;
            std::tie(t.pool, t.test) = holdout_test(raw, std::nullopt, derive_seed(seed, {hash_string(name), 2}));
            t.validate();
            tasks.push_back(std::move(t));
        }
    }
    return tasks;
}

}  // namespace xfit::gym
