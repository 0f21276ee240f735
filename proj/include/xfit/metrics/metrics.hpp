#pragma once

#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "xfit/json_util.hpp"

namespace xfit::metrics {

enum class Metric { accuracy, exact_match, classification_f1, qa_f1, rouge_l, matthews, pearson };

const char* to_string(Metric m);
Metric parse_metric(std::string_view s);
const std::vector<Metric>& all_metrics();

// Closed range of attainable values.
std::pair<double, double> metric_range(Metric m);

// Lowercase, trim, collapse internal whitespace to single spaces.
std::string normalize_text(std::string_view s);
// normalize_text after removing ASCII punctuation and the articles a/an/the.
std::string normalize_answer(std::string_view s);
std::vector<std::string> tokens(std::string_view s);

double accuracy(std::span<const std::string> preds, std::span<const std::string> golds);
double exact_match(std::span<const std::string> preds, std::span<const std::string> golds);

// Macro F1 over the label set. Out-of-set predictions are wrong for every
// class; a class is skipped only when it appears in neither golds nor preds.
double classification_f1(std::span<const std::string> preds, std::span<const std::string> golds,
                         std::span<const std::string> labels);

// Bag-of-tokens F1 on normalize_text tokens.
double qa_f1(std::string_view pred, std::string_view gold);
// LCS F-measure (beta 1) over whitespace tokens. Case is kept.
double rouge_l(std::string_view pred, std::string_view gold);

// labels[1] is the positive class.
double matthews(std::span<const std::string> preds, std::span<const std::string> golds,
                std::span<const std::string> labels);

double pearson(std::span<const double> preds, std::span<const double> golds);
// Unparsable strings count as 0.0.
double parse_real(std::string_view s);

// Corpus-level score; qa_f1 and rouge_l are averaged over examples.
double score(Metric m, std::span<const std::string> preds, std::span<const std::string> golds,
             std::span<const std::string> labels = {});

struct ScorePair {
    std::string task;
    std::string metric;
    double base = 0;
    double updated = 0;
};

struct ARGReport {
    std::vector<ScorePair> pairs;
    std::vector<double> relative_gains;
    double arg = 0;
};

// Throws DataError naming the task when a base score is not positive.
ARGReport arg(std::span<const ScorePair> pairs);

// One report column per method against a shared baseline.
struct ReportTable {
    std::vector<std::string> tasks;
    std::vector<std::string> task_metrics;
    std::vector<double> baseline;
    std::vector<std::string> methods;
    std::vector<ARGReport> columns;
};

Json to_json(const ReportTable& t);
std::string to_text(const ReportTable& t);

}  // namespace xfit::metrics
