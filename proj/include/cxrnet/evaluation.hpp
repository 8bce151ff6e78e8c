#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cxrnet/error.hpp"

namespace cxr {

/// K x K counts; rows are the true class, columns the predicted class.
class ConfusionMatrix {
 public:
  ConfusionMatrix(std::size_t k, std::vector<std::string> class_labels = {})
      : k_(k), counts_(k * k, 0), labels_(std::move(class_labels)) {
    if (k == 0) throw ConfigError("confusion matrix: need at least one class");
    if (labels_.empty()) {
      for (std::size_t i = 0; i < k; ++i) labels_.push_back("class_" + std::to_string(i));
    }
    if (labels_.size() != k) throw ConfigError("confusion matrix: label count does not match K");
  }

  static ConfusionMatrix from_rows(const std::vector<std::vector<std::uint64_t>>& rows,
                                   std::vector<std::string> class_labels = {}) {
    ConfusionMatrix cm(rows.size(), std::move(class_labels));
    for (std::size_t t = 0; t < rows.size(); ++t) {
      if (rows[t].size() != rows.size()) throw ConfigError("confusion matrix: rows must be square");
      for (std::size_t p = 0; p < rows.size(); ++p) cm.at(t, p) = rows[t][p];
    }
    return cm;
  }

  std::size_t classes() const noexcept { return k_; }
  const std::vector<std::string>& class_labels() const noexcept { return labels_; }

  std::uint64_t& at(std::size_t truth, std::size_t predicted) { return counts_.at(truth * k_ + predicted); }
  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts_.at(truth * k_ + predicted); }

  std::uint64_t total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }
  std::uint64_t trace() const {
    std::uint64_t s = 0;
    for (std::size_t i = 0; i < k_; ++i) s += at(i, i);
    return s;
  }
  std::uint64_t row_sum(std::size_t truth) const {
    std::uint64_t s = 0;
    for (std::size_t p = 0; p < k_; ++p) s += at(truth, p);
    return s;
  }
  std::uint64_t col_sum(std::size_t predicted) const {
    std::uint64_t s = 0;
    for (std::size_t t = 0; t < k_; ++t) s += at(t, predicted);
    return s;
  }

  std::vector<std::vector<std::uint64_t>> rows() const {
    std::vector<std::vector<std::uint64_t>> out(k_);
    for (std::size_t t = 0; t < k_; ++t) out[t].assign(counts_.begin() + t * k_, counts_.begin() + (t + 1) * k_);
    return out;
  }

  friend bool operator==(const ConfusionMatrix& a, const ConfusionMatrix& b) {
    return a.k_ == b.k_ && a.counts_ == b.counts_;
  }

 private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
  std::vector<std::string> labels_;
};

inline ConfusionMatrix confusion_matrix(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                                        std::size_t k, std::vector<std::string> class_labels = {}) {
  if (truth.size() != predicted.size()) {
    throw ShapeError("confusion_matrix: " + std::to_string(truth.size()) + " true labels vs " +
                     std::to_string(predicted.size()) + " predictions");
  }
  ConfusionMatrix cm(k, std::move(class_labels));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= k || predicted[i] >= k) {
      throw ValueRangeError("confusion_matrix: label out of range at sample " + std::to_string(i));
    }
    ++cm.at(truth[i], predicted[i]);
  }
  return cm;
}

struct ClassMetrics {
  std::string label;
  double precision = 0.0;
  double recall = 0.0;  // sensitivity
  double specificity = 0.0;
  double f1 = 0.0;
  double one_vs_rest_accuracy = 0.0;
  std::uint64_t support = 0;
};

struct MetricsReport {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::uint64_t total = 0;
  std::vector<ClassMetrics> per_class;
};

namespace detail {
inline double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace detail

/// Accuracy and one-vs-rest per-class metrics. Any zero denominator yields 0.
inline MetricsReport metrics(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw ValueRangeError("metrics: confusion matrix is empty");
  MetricsReport r;
  r.total = total;
  r.accuracy = detail::ratio(cm.trace(), total);
  for (std::size_t c = 0; c < cm.classes(); ++c) {
    const std::uint64_t tp = cm.at(c, c);
    const std::uint64_t fn = cm.row_sum(c) - tp;
    const std::uint64_t fp = cm.col_sum(c) - tp;
    const std::uint64_t tn = total - tp - fn - fp;
    ClassMetrics m;
    m.label = cm.class_labels()[c];
    m.precision = detail::ratio(tp, tp + fp);
    m.recall = detail::ratio(tp, tp + fn);
    m.specificity = detail::ratio(tn, tn + fp);
    m.f1 = (m.precision + m.recall) > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    m.one_vs_rest_accuracy = detail::ratio(tp + tn, total);
    m.support = tp + fn;
    r.per_class.push_back(m);
  }
  double f1_sum = 0.0;
  for (const auto& m : r.per_class) f1_sum += m.f1;
  r.macro_f1 = f1_sum / static_cast<double>(r.per_class.size());
  return r;
}

inline nlohmann::json to_json(const ConfusionMatrix& cm) {
  return {{"orientation", "rows=true,cols=predicted"}, {"labels", cm.class_labels()}, {"counts", cm.rows()}};
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& m : r.per_class) {
    classes.push_back({{"label", m.label},
                       {"precision", m.precision},
                       {"recall", m.recall},
                       {"sensitivity", m.recall},
                       {"specificity", m.specificity},
                       {"f1", m.f1},
                       {"one_vs_rest_accuracy", m.one_vs_rest_accuracy},
                       {"support", m.support}});
  }
  return {{"accuracy", r.accuracy}, {"macro_f1", r.macro_f1}, {"total", r.total}, {"per_class", classes}};
}

/// Confusion matrix with class-label headers (rows = true, columns = predicted).
inline std::string format_confusion_matrix(const ConfusionMatrix& cm) {
  std::size_t width = 10;
  for (const auto& l : cm.class_labels()) width = std::max(width, l.size() + 2);
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(width)) << "true\\pred";
  for (const auto& l : cm.class_labels()) os << std::right << std::setw(static_cast<int>(width)) << l;
  os << '\n';
  for (std::size_t t = 0; t < cm.classes(); ++t) {
    os << std::left << std::setw(static_cast<int>(width)) << cm.class_labels()[t];
    for (std::size_t p = 0; p < cm.classes(); ++p) os << std::right << std::setw(static_cast<int>(width)) << cm.at(t, p);
    os << '\n';
  }
  return os.str();
}

inline std::string format_metrics(const MetricsReport& r) {
  std::size_t width = 8;
  for (const auto& m : r.per_class) width = std::max(width, m.label.size() + 2);
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "accuracy " << r.accuracy << "  macro_f1 " << r.macro_f1 << "  samples " << r.total << '\n';
  os << std::left << std::setw(static_cast<int>(width)) << "class" << std::right << std::setw(11) << "precision"
     << std::setw(11) << "recall" << std::setw(13) << "specificity" << std::setw(9) << "f1" << std::setw(9)
     << "support" << '\n';
  for (const auto& m : r.per_class) {
    os << std::left << std::setw(static_cast<int>(width)) << m.label << std::right << std::setw(11) << m.precision
       << std::setw(11) << m.recall << std::setw(13) << m.specificity << std::setw(9) << m.f1 << std::setw(9)
       << m.support << '\n';
  }
  return os.str();
}

}  // namespace cxr
