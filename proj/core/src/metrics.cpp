#include "thumbqc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "thumbqc/errors.hpp"

namespace thumbqc {

namespace {

struct Confusion {
    long tp = 0, fp = 0, tn = 0, fn = 0;
};

Confusion confusion(const std::vector<ScoredSample>& samples, double threshold) {
    if (samples.empty()) throw InvalidInput("metrics: empty sample set");
    Confusion c;
    for (const auto& s : samples) {
        if (!std::isfinite(s.score)) throw InvalidInput("metrics: non-finite score");
        const bool pred = s.score >= threshold;
        if (pred && s.label == 1) ++c.tp;
        else if (pred && s.label == 0) ++c.fp;
        else if (!pred && s.label == 0) ++c.tn;
        else ++c.fn;
    }
    return c;
}

}  // namespace

double accuracy(const std::vector<ScoredSample>& samples, double threshold) {
    const Confusion c = confusion(samples, threshold);
    return static_cast<double>(c.tp + c.tn) / static_cast<double>(samples.size());
}

double f1(const std::vector<ScoredSample>& samples, double threshold) {
    const Confusion c = confusion(samples, threshold);
    const long denom = 2 * c.tp + c.fp + c.fn;
    return denom == 0 ? 0.0 : 2.0 * c.tp / static_cast<double>(denom);
}

double auroc(const std::vector<ScoredSample>& samples) {
    if (samples.empty()) throw InvalidInput("metrics: empty sample set");
    size_t n_pos = 0;
    for (const auto& s : samples) {
        if (!std::isfinite(s.score)) throw InvalidInput("metrics: non-finite score");
        if (s.label == 1) ++n_pos;
    }
    const size_t n_neg = samples.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        throw UndefinedMetric("auroc needs at least one sample of each class");
    }

    std::vector<size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return samples[a].score < samples[b].score; });

    // Midranks: tied scores share the average of their 1-based rank range.
    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j + 1 < order.size() && samples[order[j + 1]].score == samples[order[i]].score) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j + 1);
        for (size_t k = i; k <= j; ++k) {
            if (samples[order[k]].label == 1) rank_sum_pos += midrank;
        }
        i = j + 1;
    }
    const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * (n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

MetricsReport compute_metrics(const std::vector<ScoredSample>& samples, double threshold) {
    const Confusion c = confusion(samples, threshold);
    MetricsReport r;
    r.tp = c.tp;
    r.fp = c.fp;
    r.tn = c.tn;
    r.fn = c.fn;
    r.n = samples.size();
    r.threshold = threshold;
    r.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(samples.size());
    const long denom = 2 * c.tp + c.fp + c.fn;
    r.f1 = denom == 0 ? 0.0 : 2.0 * c.tp / static_cast<double>(denom);
    try {
        r.auroc = auroc(samples);
        r.auroc_defined = true;
    } catch (const UndefinedMetric&) {
        r.auroc = 0.0;
        r.auroc_defined = false;
    }
    return r;
}

std::string MetricsReport::to_json() const {
    nlohmann::json j;
    j["accuracy"] = accuracy;
    j["f1"] = f1;
    if (auroc_defined) {
        j["auroc"] = auroc;
    } else {
        j["auroc"] = nullptr;
    }
    j["tp"] = tp;
    j["fp"] = fp;
    j["tn"] = tn;
    j["fn"] = fn;
    j["n"] = n;
    j["threshold"] = threshold;
    return j.dump();
}

std::string MetricsReport::to_csv_row(const std::string& dataset) const {
    std::ostringstream out;
    out.precision(4);
    out << std::fixed << dataset << ',' << accuracy << ',' << f1 << ',';
    if (auroc_defined) {
        out << auroc;
    } else {
        out << "NA";
    }
    return out.str();
}

}  // namespace thumbqc
