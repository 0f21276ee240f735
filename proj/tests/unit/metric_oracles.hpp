#pragma once

// Brute-force references for the metrics and exhaustive sweeps over a
// 3-token alphabet. Shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "xfit/metrics/metrics.hpp"

namespace xfit::testing {

struct SweepResult {
    std::uint64_t cases = 0;
    std::uint64_t mismatches = 0;
    std::string first_failure;
};

inline std::string join(const std::vector<std::string>& xs) {
    std::string out;
    for (const auto& x : xs) {
        if (!out.empty()) out += ' ';
        out += x;
    }
    return out;
}

// LCS by enumerating every subsequence of `a` and testing containment in `b`.
inline std::size_t brute_lcs(const std::vector<int>& a, const std::vector<int>& b) {
    std::size_t best = 0;
    const std::uint32_t n = static_cast<std::uint32_t>(a.size());
    for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
        const auto len = static_cast<std::size_t>(__builtin_popcount(mask));
        if (len <= best) continue;
        std::size_t j = 0;
        bool ok = true;
        for (std::uint32_t i = 0; i < n && ok; ++i) {
            if (!(mask & (1u << i))) continue;
            while (j < b.size() && b[j] != a[i]) ++j;
            if (j == b.size()) ok = false;
            else ++j;
        }
        if (ok) best = len;
    }
    return best;
}

inline double brute_f(double overlap, std::size_t np, std::size_t ng) {
    if (np == 0 && ng == 0) return 1.0;
    if (np == 0 || ng == 0) return 0.0;
    const double p = overlap / static_cast<double>(np);
    const double r = overlap / static_cast<double>(ng);
    return p + r == 0 ? 0.0 : 2 * p * r / (p + r);
}

inline bool close(double a, double b, double tol = 1e-12) { return std::abs(a - b) <= tol; }

// All sequences over {0,1,2} of length 0..max_len.
inline std::vector<std::vector<int>> all_sequences(int max_len) {
    std::vector<std::vector<int>> out{{}};
    std::size_t begin = 0;
    for (int len = 1; len <= max_len; ++len) {
        const std::size_t end = out.size();
        for (std::size_t i = begin; i < end; ++i) {
            for (int t = 0; t < 3; ++t) {
                auto s = out[i];
                s.push_back(t);
                out.push_back(std::move(s));
            }
        }
        begin = end;
    }
    return out;
}

// Every subsequence of every sequence, as a bitset over sequence ids. Ids
// are ordered by length, so the highest common bit of two sets is a longest
// common subsequence.
class SubsequenceTable {
public:
    explicit SubsequenceTable(const std::vector<std::vector<int>>& seqs) : words_((seqs.size() + 63) / 64) {
        int max_len = 0;
        for (const auto& s : seqs) max_len = std::max(max_len, static_cast<int>(s.size()));
        std::vector<std::size_t> offset(static_cast<std::size_t>(max_len) + 2, 0);
        std::size_t count = 1;
        for (int len = 0; len <= max_len; ++len) {
            offset[static_cast<std::size_t>(len) + 1] = offset[static_cast<std::size_t>(len)] + count;
            count *= 3;
        }
        auto id_of = [&](const std::vector<int>& s) {
            std::size_t v = 0;
            for (int x : s) v = v * 3 + static_cast<std::size_t>(x);
            return offset[s.size()] + v;
        };
        for (std::size_t i = 0; i < seqs.size(); ++i) {
            if (id_of(seqs[i]) != i) throw std::logic_error("sequence ids out of order");
        }
        length_.resize(seqs.size());
        bits_.assign(seqs.size() * words_, 0);
        std::vector<int> sub;
        for (std::size_t i = 0; i < seqs.size(); ++i) {
            const auto& s = seqs[i];
            length_[i] = s.size();
            for (std::uint32_t mask = 0; mask < (1u << s.size()); ++mask) {
                sub.clear();
                for (std::size_t k = 0; k < s.size(); ++k) {
                    if (mask & (1u << k)) sub.push_back(s[k]);
                }
                const std::size_t id = id_of(sub);
                bits_[i * words_ + id / 64] |= std::uint64_t{1} << (id % 64);
            }
        }
    }

    [[nodiscard]] std::size_t lcs(std::size_t a, std::size_t b) const {
        const std::uint64_t* x = &bits_[a * words_];
        const std::uint64_t* y = &bits_[b * words_];
        for (std::size_t w = words_; w-- > 0;) {
            const std::uint64_t both = x[w] & y[w];
            if (both) return length_[w * 64 + 63 - static_cast<std::size_t>(__builtin_clzll(both))];
        }
        return 0;
    }

private:
    std::size_t words_;
    std::vector<std::size_t> length_;
    std::vector<std::uint64_t> bits_;
};

// qa_f1 and rouge_l against bag-overlap and subsequence-enumeration oracles,
// for every (pred, gold) pair with both lengths <= max_len. rouge_l <= qa_f1
// is checked on the same pairs.
// With canonical_golds, golds are restricted to first-occurrence order
// (a before b before c). Both metrics see tokens only through equality, so
// this covers every pair up to renaming of the alphabet.
inline SweepResult sweep_sequence_metrics(int max_len, bool canonical_golds = false) {
    static const std::array<std::string, 3> alphabet{"a", "b", "c"};
    const auto seqs = all_sequences(max_len);
    const SubsequenceTable table(seqs);
    std::vector<std::string> text;
    text.reserve(seqs.size());
    for (const auto& s : seqs) {
        std::string t;
        for (int x : s) {
            if (!t.empty()) t += ' ';
            t += alphabet[static_cast<std::size_t>(x)];
        }
        text.push_back(std::move(t));
    }
    std::vector<std::array<int, 3>> counts(seqs.size(), {0, 0, 0});
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        for (int x : seqs[i]) ++counts[i][static_cast<std::size_t>(x)];
    }
    auto canonical = [](const std::vector<int>& s) {
        int next = 0;
        for (int x : s) {
            if (x > next) return false;
            if (x == next) ++next;
        }
        return true;
    };
    std::vector<std::size_t> golds;
    for (std::size_t j = 0; j < seqs.size(); ++j) {
        if (!canonical_golds || canonical(seqs[j])) golds.push_back(j);
    }
    SweepResult r;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        for (std::size_t j : golds) {
            int bag = 0;
            for (std::size_t t = 0; t < 3; ++t) bag += std::min(counts[i][t], counts[j][t]);
            const double qa_ref = brute_f(bag, seqs[i].size(), seqs[j].size());
            const double rl_ref = brute_f(static_cast<double>(table.lcs(i, j)), seqs[i].size(), seqs[j].size());
            const double qa = metrics::qa_f1(text[i], text[j]);
            const double rl = metrics::rouge_l(text[i], text[j]);
            r.cases += 2;
            if (!close(qa, qa_ref) || !close(rl, rl_ref) || rl > qa + 1e-12) {
                if (r.mismatches++ == 0) r.first_failure = "pred '" + text[i] + "' gold '" + text[j] + "'";
            }
        }
    }
    return r;
}

struct Confusion {
    double c[3][3] = {};
};

// accuracy, exact_match, classification_f1, matthews and pearson on one
// (pred symbols, gold symbols) case, each against a confusion-matrix or
// direct-formula reference.
inline void check_list_case(const std::vector<int>& p, const std::vector<int>& g, SweepResult& r) {
    // Surface forms chosen so normalization matters: EM folds "The cat." and "cat" together.
    static const std::vector<std::string> labels{"yes", "no", "maybe"};
    static const std::vector<std::string> em_forms{"The cat.", "cat", "a dog"};
    static const std::array<int, 3> em_class{0, 0, 1};
    static const std::vector<std::string> real_forms{"1", "2.5", "n/a"};
    static const std::array<double, 3> real_value{1.0, 2.5, 0.0};
    static const std::vector<std::string> bin_labels{"no", "yes"};

    const std::size_t un = p.size();
    const double n = static_cast<double>(un);
    std::vector<std::string> p_lab(un), g_lab(un), p_em(un), g_em(un), p_real(un), g_real(un), p_bin(un), g_bin(un);
    Confusion cm;
    double acc = 0, em = 0;
    for (std::size_t i = 0; i < un; ++i) {
        const auto pi = static_cast<std::size_t>(p[i]);
        const auto gi = static_cast<std::size_t>(g[i]);
        p_lab[i] = labels[pi];
        g_lab[i] = labels[gi];
        p_em[i] = em_forms[pi];
        g_em[i] = em_forms[gi];
        p_real[i] = real_forms[pi];
        g_real[i] = real_forms[gi];
        cm.c[gi][pi] += 1;
        acc += pi == gi;
        em += em_class[pi] == em_class[gi];
    }
    acc /= n;
    em /= n;

    // Macro F1 from the confusion matrix.
    double f1_sum = 0;
    int f1_count = 0;
    for (int k = 0; k < 3; ++k) {
        double tp = cm.c[k][k], fp = 0, fn = 0;
        for (int o = 0; o < 3; ++o) {
            if (o == k) continue;
            fp += cm.c[o][k];
            fn += cm.c[k][o];
        }
        if (tp + fp + fn == 0) continue;
        ++f1_count;
        f1_sum += tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
    }
    const double f1 = f1_sum / f1_count;

    // MCC on a binary restriction: pred symbol 2 is the out-of-set "maybe",
    // gold symbol 2 folds into the negative class.
    double tp = 0, tn = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < un; ++i) {
        p_bin[i] = p[i] == 2 ? "maybe" : bin_labels[static_cast<std::size_t>(p[i])];
        const int gb = g[i] == 1 ? 1 : 0;
        g_bin[i] = bin_labels[static_cast<std::size_t>(gb)];
        const bool hit = p[i] == gb;
        if (gb == 1) (hit ? tp : fn) += 1;
        else (hit ? tn : fp) += 1;
    }
    const double den = std::sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn));
    const double mcc = den == 0 ? 0.0 : (tp * tn - fp * fn) / den;

    // Pearson by the raw-moment formula.
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < un; ++i) {
        const double x = real_value[static_cast<std::size_t>(p[i])];
        const double y = real_value[static_cast<std::size_t>(g[i])];
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
    }
    const double vx = n * sxx - sx * sx;
    const double vy = n * syy - sy * sy;
    const double pr =
        (un < 2 || std::abs(vx) < 1e-9 || std::abs(vy) < 1e-9) ? 0.0 : (n * sxy - sx * sy) / std::sqrt(vx * vy);

    bool ok = close(metrics::accuracy(p_lab, g_lab), acc) && close(metrics::exact_match(p_em, g_em), em) &&
              close(metrics::classification_f1(p_lab, g_lab, labels), f1) &&
              close(metrics::matthews(p_bin, g_bin, bin_labels), mcc, 1e-9);
    r.cases += 4;
    if (un >= 2) {
        r.cases += 1;
        ok = ok && close(metrics::score(metrics::Metric::pearson, p_real, g_real), pr, 1e-9);
    }
    if (!ok && r.mismatches++ == 0) r.first_failure = "preds '" + join(p_lab) + "' golds '" + join(g_lab) + "'";
}

// Every ordered (pred list, gold list) pair of equal length 1..max_len.
inline SweepResult sweep_list_metrics(int max_len) {
    SweepResult r;
    for (int n = 1; n <= max_len; ++n) {
        const auto un = static_cast<std::size_t>(n);
        std::vector<int> p(un), g(un);
        std::uint64_t total = 1;
        for (int i = 0; i < 2 * n; ++i) total *= 3;
        for (std::uint64_t code = 0; code < total; ++code) {
            std::uint64_t c = code;
            for (std::size_t i = 0; i < un; ++i) {
                p[i] = static_cast<int>(c % 3);
                c /= 3;
                g[i] = static_cast<int>(c % 3);
                c /= 3;
            }
            check_list_case(p, g, r);
        }
    }
    return r;
}

// Every multiset of (pred, gold) symbol pairs of size 1..max_len, i.e. every
// attainable 3x3 confusion matrix. The list metrics depend on the pairs only
// through this multiset; sweep_list_metrics covers the orderings.
inline SweepResult sweep_list_metrics_multisets(int max_len) {
    SweepResult r;
    std::array<int, 9> cells{};
    std::vector<int> p, g;
    auto emit = [&] {
        p.clear();
        g.clear();
        for (int cell = 0; cell < 9; ++cell) {
            for (int k = 0; k < cells[static_cast<std::size_t>(cell)]; ++k) {
                p.push_back(cell % 3);
                g.push_back(cell / 3);
            }
        }
        check_list_case(p, g, r);
    };
    // Compositions of n into 9 ordered cells.
    auto rec = [&](auto& self, int cell, int left) -> void {
        if (cell == 8) {
            cells[8] = left;
            emit();
            return;
        }
        for (int k = 0; k <= left; ++k) {
            cells[static_cast<std::size_t>(cell)] = k;
            self(self, cell + 1, left - k);
        }
    };
    for (int n = 1; n <= max_len; ++n) rec(rec, 0, n);
    return r;
}

}  // namespace xfit::testing
