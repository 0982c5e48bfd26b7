#include "fuseser/metrics.hpp"

#include <string>

namespace fuseser {

std::vector<ClassCounts> confusion_counts(const std::vector<int>& refs,
                                          const std::vector<int>& preds, int num_classes) {
  if (refs.size() != preds.size())
    throw DataError("confusion_counts: " + std::to_string(refs.size()) + " references vs " +
                    std::to_string(preds.size()) + " predictions");
  std::vector<ClassCounts> counts(num_classes);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const int r = refs[i];
    const int p = preds[i];
    if (r < 0 || r >= num_classes || p < 0 || p >= num_classes)
      throw DataError("confusion_counts: label outside [0," + std::to_string(num_classes) +
                      ") at position " + std::to_string(i));
    if (r == p) {
      ++counts[r].tp;
    } else {
      ++counts[r].fn;
      ++counts[p].fp;
    }
  }
  return counts;
}

namespace {
double safe_div(double num, double den) { return den == 0.0 ? 0.0 : num / den; }
}  // namespace

MetricsReport classification_metrics(const std::vector<int>& refs, const std::vector<int>& preds,
                                     int num_classes) {
  const auto counts = confusion_counts(refs, preds, num_classes);
  MetricsReport rep;
  long tp_sum = 0, fp_sum = 0, fn_sum = 0;
  for (const auto& c : counts) {
    rep.macro_f1 += safe_div(2.0 * c.tp, 2.0 * c.tp + c.fp + c.fn);
    rep.macro_recall += safe_div(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn));
    rep.macro_precision += safe_div(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp));
    tp_sum += c.tp;
    fp_sum += c.fp;
    fn_sum += c.fn;
  }
  rep.macro_f1 /= num_classes;
  rep.macro_recall /= num_classes;
  rep.macro_precision /= num_classes;
  rep.micro_f1 = safe_div(2.0 * tp_sum, 2.0 * tp_sum + fp_sum + fn_sum);
  return rep;
}

double macro_f1(const std::vector<int>& refs, const std::vector<int>& preds, int num_classes) {
  return classification_metrics(refs, preds, num_classes).macro_f1;
}

double micro_f1(const std::vector<int>& refs, const std::vector<int>& preds, int num_classes) {
  return classification_metrics(refs, preds, num_classes).micro_f1;
}

}  // namespace fuseser
