#pragma once

#include <cstdint>
#include <vector>

#include "spikefed/tensor.hpp"

namespace spikefed {

struct MetricsReport {
    int classes = 0;
    double accuracy = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    double loss = 0.0;                     // mean cross-entropy, filled by evaluate
    std::vector<std::int64_t> confusion;   // classes x classes, row = truth

    std::int64_t confusion_at(int truth, int pred) const {
        return confusion[static_cast<std::size_t>(truth) * classes + pred];
    }
};

// Confusion matrix plus macro-averaged precision/recall/F1. Classes with an
// empty denominator contribute 0 to the macro average.
inline MetricsReport compute_metrics(const std::vector<int>& predictions,
                                     const std::vector<int>& labels, int classes) {
    if (predictions.size() != labels.size())
        detail::fail("metrics: " + std::to_string(predictions.size()) +
                     " predictions for " + std::to_string(labels.size()) +
                     " labels");
    if (predictions.empty()) detail::fail("metrics: empty prediction set");
    MetricsReport r;
    r.classes = classes;
    r.confusion.assign(static_cast<std::size_t>(classes) * classes, 0);
    std::int64_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i], p = predictions[i];
        if (y < 0 || y >= classes || p < 0 || p >= classes)
            detail::fail("metrics: class index outside [0, " +
                         std::to_string(classes) + ")");
        ++r.confusion[static_cast<std::size_t>(y) * classes + p];
        if (y == p) ++correct;
    }
    r.accuracy = static_cast<double>(correct) / labels.size();
    double psum = 0, rsum = 0, fsum = 0;
    for (int c = 0; c < classes; ++c) {
        const double tp = static_cast<double>(r.confusion_at(c, c));
        double col = 0, row = 0;
        for (int o = 0; o < classes; ++o) {
            col += static_cast<double>(r.confusion_at(o, c));
            row += static_cast<double>(r.confusion_at(c, o));
        }
        const double prec = col > 0 ? tp / col : 0.0;
        const double rec = row > 0 ? tp / row : 0.0;
        const double f1 = (prec + rec) > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
        psum += prec;
        rsum += rec;
        fsum += f1;
    }
    r.macro_precision = psum / classes;
    r.macro_recall = rsum / classes;
    r.macro_f1 = fsum / classes;
    return r;
}

}  // namespace spikefed
