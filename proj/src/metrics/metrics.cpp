#include "xfit/metrics/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace xfit::metrics {

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* what) {
    if (a != b) {
        throw DataError(std::string(what) + ": " + std::to_string(a) + " predictions for " + std::to_string(b) +
                        " references");
    }
    if (a == 0) throw DataError(std::string(what) + ": empty input");
}

bool is_space(char c) { return c == ' ' || (c >= '\t' && c <= '\r'); }

char lower(char c) { return c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : c; }

std::vector<std::string_view> split_ws(std::string_view s) {
    std::vector<std::string_view> out;
    out.reserve(s.size() / 2 + 1);
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && is_space(s[i])) ++i;
        std::size_t j = i;
        while (j < s.size() && !is_space(s[j])) ++j;
        if (j > i) out.push_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

double f_measure(double overlap, std::size_t np, std::size_t ng) {
    if (np == 0 && ng == 0) return 1.0;
    if (np == 0 || ng == 0 || overlap == 0) return 0.0;
    const double p = overlap / static_cast<double>(np);
    const double r = overlap / static_cast<double>(ng);
    return 2 * p * r / (p + r);
}

template <typename S>
std::size_t lcs_length(const std::vector<S>& a, const std::vector<S>& b) {
    const std::size_t w = b.size() + 1;
    std::vector<std::size_t> rows(2 * w, 0);
    std::size_t* prev = rows.data();
    std::size_t* cur = rows.data() + w;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

std::vector<std::string> normalized(std::span<const std::string> xs) {
    std::vector<std::string> out;
    out.reserve(xs.size());
    for (const auto& x : xs) out.push_back(normalize_text(x));
    return out;
}

std::vector<std::string> normalized_labels(std::span<const std::string> labels, const char* what) {
    auto out = normalized(labels);
    std::vector<std::string> sorted = out;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw DataError(std::string(what) + ": duplicate labels");
    }
    return out;
}

std::string pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%+.2f%%", 100 * v);
    return buf;
}

std::string fixed(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

}  // namespace

const char* to_string(Metric m) {
    switch (m) {
        case Metric::accuracy: return "accuracy";
        case Metric::exact_match: return "exact_match";
        case Metric::classification_f1: return "classification_f1";
        case Metric::qa_f1: return "qa_f1";
        case Metric::rouge_l: return "rouge_l";
        case Metric::matthews: return "matthews";
        case Metric::pearson: return "pearson";
    }
    return "accuracy";
}

const std::vector<Metric>& all_metrics() {
    static const std::vector<Metric> all{Metric::accuracy, Metric::exact_match, Metric::classification_f1,
                                         Metric::qa_f1,    Metric::rouge_l,     Metric::matthews,
                                         Metric::pearson};
    return all;
}

Metric parse_metric(std::string_view s) {
    for (Metric m : all_metrics()) {
        if (s == to_string(m)) return m;
    }
    throw DataError("unknown metric '" + std::string(s) + "'");
}

std::pair<double, double> metric_range(Metric m) {
    if (m == Metric::matthews || m == Metric::pearson) return {-1.0, 1.0};
    return {0.0, 1.0};
}

std::string normalize_text(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool gap = false;
    for (char c : s) {
        if (is_space(c)) {
            gap = true;
            continue;
        }
        if (gap && !out.empty()) out.push_back(' ');
        gap = false;
        out.push_back(lower(c));
    }
    return out;
}

std::string normalize_answer(std::string_view s) {
    std::string stripped;
    stripped.reserve(s.size());
    for (char c : s) {
        if (!std::ispunct(static_cast<unsigned char>(c))) stripped.push_back(c);
    }
    const std::string lowered = normalize_text(stripped);
    std::string out;
    for (auto w : split_ws(lowered)) {
        if (w == "a" || w == "an" || w == "the") continue;
        if (!out.empty()) out.push_back(' ');
        out.append(w);
    }
    return out;
}

std::vector<std::string> tokens(std::string_view s) {
    std::vector<std::string> out;
    for (auto w : split_ws(s)) out.emplace_back(w);
    return out;
}

double accuracy(std::span<const std::string> preds, std::span<const std::string> golds) {
    check_lengths(preds.size(), golds.size(), "accuracy");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) hit += normalize_text(preds[i]) == normalize_text(golds[i]);
    return static_cast<double>(hit) / static_cast<double>(preds.size());
}

double exact_match(std::span<const std::string> preds, std::span<const std::string> golds) {
    check_lengths(preds.size(), golds.size(), "exact_match");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) hit += normalize_answer(preds[i]) == normalize_answer(golds[i]);
    return static_cast<double>(hit) / static_cast<double>(preds.size());
}

double classification_f1(std::span<const std::string> preds, std::span<const std::string> golds,
                         std::span<const std::string> labels) {
    check_lengths(preds.size(), golds.size(), "classification_f1");
    if (labels.empty()) throw DataError("classification_f1: empty label set");
    const auto labs = normalized_labels(labels, "classification_f1");
    const std::size_t k = labs.size();
    auto index_of = [&](const std::string& s) {
        return static_cast<std::size_t>(std::find(labs.begin(), labs.end(), s) - labs.begin());
    };
    std::vector<std::size_t> tp(k, 0), fp(k, 0), fn(k, 0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const std::size_t g = index_of(normalize_text(golds[i]));
        if (g == k) throw DataError("classification_f1: reference '" + golds[i] + "' is not in the label set");
        const std::size_t p = index_of(normalize_text(preds[i]));
        if (p == g) {
            ++tp[g];
        } else {
            ++fn[g];
            if (p < k) ++fp[p];
        }
    }
    double total = 0;
    std::size_t counted = 0;
    for (std::size_t c = 0; c < k; ++c) {
        if (tp[c] + fp[c] + fn[c] == 0) continue;
        ++counted;
        total += f_measure(static_cast<double>(tp[c]), tp[c] + fp[c], tp[c] + fn[c]);
    }
    return total / static_cast<double>(counted);
}

double qa_f1(std::string_view pred, std::string_view gold) {
    const std::string np = normalize_text(pred);
    const std::string ng = normalize_text(gold);
    auto p = split_ws(np);
    auto g = split_ws(ng);
    std::sort(p.begin(), p.end());
    std::sort(g.begin(), g.end());
    // Multiset intersection of the sorted bags.
    std::size_t overlap = 0;
    for (std::size_t i = 0, j = 0; i < p.size() && j < g.size();) {
        if (p[i] < g[j]) {
            ++i;
        } else if (g[j] < p[i]) {
            ++j;
        } else {
            ++overlap;
            ++i;
            ++j;
        }
    }
    return f_measure(static_cast<double>(overlap), p.size(), g.size());
}

double rouge_l(std::string_view pred, std::string_view gold) {
    const auto p = split_ws(pred);
    const auto g = split_ws(gold);
    return f_measure(static_cast<double>(lcs_length(p, g)), p.size(), g.size());
}

double matthews(std::span<const std::string> preds, std::span<const std::string> golds,
                std::span<const std::string> labels) {
    check_lengths(preds.size(), golds.size(), "matthews");
    if (labels.size() != 2) {
        throw DataError("matthews: needs a binary label set, got " + std::to_string(labels.size()) + " labels");
    }
    const auto labs = normalized_labels(labels, "matthews");
    double tp = 0, tn = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const std::string g = normalize_text(golds[i]);
        const std::string p = normalize_text(preds[i]);
        if (g != labs[0] && g != labs[1]) throw DataError("matthews: reference '" + golds[i] + "' is not a label");
        const bool gold_pos = g == labs[1];
        if (p == g) {
            (gold_pos ? tp : tn) += 1;
        } else {
            (gold_pos ? fn : fp) += 1;
        }
    }
    const double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
    if (denom == 0) return 0.0;
    return (tp * tn - fp * fn) / std::sqrt(denom);
}

double pearson(std::span<const double> preds, std::span<const double> golds) {
    check_lengths(preds.size(), golds.size(), "pearson");
    if (preds.size() < 2) throw DataError("pearson: needs at least 2 points");
    const double n = static_cast<double>(preds.size());
    const double mp = std::accumulate(preds.begin(), preds.end(), 0.0) / n;
    const double mg = std::accumulate(golds.begin(), golds.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double dx = preds[i] - mp;
        const double dy = golds[i] - mg;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0 || syy == 0) return 0.0;
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double parse_real(std::string_view s) {
    auto w = split_ws(s);
    if (w.size() != 1) return 0.0;
    double v = 0;
    auto [end, ec] = std::from_chars(w[0].data(), w[0].data() + w[0].size(), v);
    if (ec != std::errc() || end != w[0].data() + w[0].size() || !std::isfinite(v)) return 0.0;
    return v;
}

double score(Metric m, std::span<const std::string> preds, std::span<const std::string> golds,
             std::span<const std::string> labels) {
    switch (m) {
        case Metric::accuracy: return accuracy(preds, golds);
        case Metric::exact_match: return exact_match(preds, golds);
        case Metric::classification_f1: return classification_f1(preds, golds, labels);
        case Metric::matthews: return matthews(preds, golds, labels);
        case Metric::qa_f1:
        case Metric::rouge_l: {
            check_lengths(preds.size(), golds.size(), to_string(m));
            double total = 0;
            for (std::size_t i = 0; i < preds.size(); ++i) {
                total += m == Metric::qa_f1 ? qa_f1(preds[i], golds[i]) : rouge_l(preds[i], golds[i]);
            }
            return total / static_cast<double>(preds.size());
        }
        case Metric::pearson: {
            std::vector<double> p, g;
            for (const auto& s : preds) p.push_back(parse_real(s));
            for (const auto& s : golds) g.push_back(parse_real(s));
            return pearson(p, g);
        }
    }
    throw DataError("unknown metric");
}

ARGReport arg(std::span<const ScorePair> pairs) {
    if (pairs.empty()) throw DataError("arg: no score pairs");
    ARGReport r;
    r.pairs.assign(pairs.begin(), pairs.end());
    double total = 0;
    for (const auto& p : pairs) {
        if (!(p.base > 0)) {
            throw DataError("arg: task '" + p.task + "' has non-positive base score " + std::to_string(p.base) +
                            "; relative gain is undefined");
        }
        const double g = (p.updated - p.base) / p.base;
        r.relative_gains.push_back(g);
        total += g;
    }
    r.arg = total / static_cast<double>(pairs.size());
    return r;
}

Json to_json(const ReportTable& t) {
    Json rows = Json::array();
    for (std::size_t i = 0; i < t.tasks.size(); ++i) {
        Json row{{"task", t.tasks[i]}, {"metric", t.task_metrics[i]}, {"baseline", t.baseline[i]}};
        Json methods = Json::object();
        for (std::size_t m = 0; m < t.methods.size(); ++m) {
            methods[t.methods[m]] = {{"score", t.columns[m].pairs[i].updated},
                                     {"relative_gain", t.columns[m].relative_gains[i]}};
        }
        row["methods"] = std::move(methods);
        rows.push_back(std::move(row));
    }
    Json summary = Json::object();
    for (std::size_t m = 0; m < t.methods.size(); ++m) summary[t.methods[m]] = {{"arg", t.columns[m].arg}};
    return Json{{"tasks", std::move(rows)}, {"summary", std::move(summary)}};
}

std::string to_text(const ReportTable& t) {
    std::size_t w = 4;
    for (const auto& n : t.tasks) w = std::max(w, n.size());
    auto pad = [](std::string s, std::size_t n) {
        if (s.size() < n) s.append(n - s.size(), ' ');
        return s;
    };
    std::string out = pad("task", w) + "  " + pad("metric", 17) + "  " + pad("direct", 8);
    for (const auto& m : t.methods) out += "  " + pad(m, 18);
    out += '\n';
    for (std::size_t i = 0; i < t.tasks.size(); ++i) {
        out += pad(t.tasks[i], w) + "  " + pad(t.task_metrics[i], 17) + "  " + pad(fixed(t.baseline[i]), 8);
        for (std::size_t m = 0; m < t.methods.size(); ++m) {
            out += "  " + pad(fixed(t.columns[m].pairs[i].updated) + " " + pct(t.columns[m].relative_gains[i]), 18);
        }
        out += '\n';
    }
    out += pad("ARG", w) + "  " + pad("", 17) + "  " + pad("", 8);
    for (const auto& c : t.columns) out += "  " + pad(pct(c.arg), 18);
    out += '\n';
    return out;
}

}  // namespace xfit::metrics
