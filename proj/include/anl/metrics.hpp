#pragma once

#include <vector>

namespace anl {

// Fraction of label matches at the fixed 0.5 threshold (predictions already
// carry hard labels).
double accuracy(const std::vector<int>& predicted, const std::vector<int>& labels);

// Rank-sum average precision: sort by score descending with stable tie-break
// on original order; AP = (1/P) * sum over positive ranks k of precision@k.
// Throws when there is no positive label.
double average_precision(const std::vector<double>& scores, const std::vector<int>& labels);

}  // namespace anl
