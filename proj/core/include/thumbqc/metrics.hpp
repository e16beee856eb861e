#pragma once

#include <string>
#include <vector>

namespace thumbqc {

struct ScoredSample {
    std::string slide_id;
    double score = 0.0;  // probability of the positive class (FFPE)
    int label = 0;       // 0 or 1
};

struct MetricsReport {
    double accuracy = 0.0;
    double f1 = 0.0;
    double auroc = 0.0;
    bool auroc_defined = true;
    long tp = 0, fp = 0, tn = 0, fn = 0;
    size_t n = 0;
    double threshold = 0.5;

    std::string to_json() const;
    /// One results-table row: dataset,acc,f1,auroc ("NA" when AUROC undefined).
    std::string to_csv_row(const std::string& dataset) const;
};

/// Fraction of samples with (score >= threshold) == label. Ties at the
/// threshold predict positive.
double accuracy(const std::vector<ScoredSample>& samples, double threshold = 0.5);

/// 2TP / (2TP + FP + FN) with positive class FFPE = 1; 0 when the
/// denominator is 0.
double f1(const std::vector<ScoredSample>& samples, double threshold = 0.5);

/// Mann-Whitney AUROC with midrank tie handling, O(n log n). Throws
/// UndefinedMetric when a class is absent.
double auroc(const std::vector<ScoredSample>& samples);

/// All of the above plus the confusion counts in one pass.
MetricsReport compute_metrics(const std::vector<ScoredSample>& samples, double threshold = 0.5);

}  // namespace thumbqc
