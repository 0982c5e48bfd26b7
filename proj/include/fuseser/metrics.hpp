#pragma once

#include <vector>

#include "fuseser/common.hpp"

namespace fuseser {

struct ClassCounts {
  long tp = 0;
  long fp = 0;
  long fn = 0;
};

// Exact per-class tallies; refs and preds must be equal-length label-id
// vectors with every label in [0, num_classes).
std::vector<ClassCounts> confusion_counts(const std::vector<int>& refs,
                                          const std::vector<int>& preds, int num_classes);

struct MetricsReport {
  double macro_f1 = 0.0;
  double micro_f1 = 0.0;
  double macro_recall = 0.0;
  double macro_precision = 0.0;
};

// Per-class F1 = 2TP / (2TP + FP + FN) with 0/0 == 0; macro metrics average
// over the full label set, micro metrics pool counts.
MetricsReport classification_metrics(const std::vector<int>& refs, const std::vector<int>& preds,
                                     int num_classes);

double macro_f1(const std::vector<int>& refs, const std::vector<int>& preds, int num_classes);
double micro_f1(const std::vector<int>& refs, const std::vector<int>& preds, int num_classes);

}  // namespace fuseser
