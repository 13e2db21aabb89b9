#include "anl/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "anl/errors.hpp"

namespace anl {

double accuracy(const std::vector<int>& predicted, const std::vector<int>& labels) {
    if (predicted.empty()) throw DataError("accuracy: empty input");
    if (predicted.size() != labels.size()) throw DataError("accuracy: length mismatch");
    int correct = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i)
        if (predicted[i] == labels[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(predicted.size());
}

double average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.empty()) throw DataError("average_precision: empty input");
    if (scores.size() != labels.size()) throw DataError("average_precision: length mismatch");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    int positives = 0;
    for (int y : labels) positives += y;
    if (positives == 0) throw DataError("average_precision: no positive labels");

    double sum = 0.0;
    int hits = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        if (labels[order[k]] == 1) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(k + 1);
        }
    }
    return sum / static_cast<double>(positives);
}

}  // namespace anl
