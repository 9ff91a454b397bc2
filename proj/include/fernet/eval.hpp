#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "fernet/dataset.hpp"
#include "fernet/network.hpp"

namespace fernet {

/// Square matrix of percentages; rows are actual classes, columns predicted.
struct ConfusionMatrix {
  int classes = 0;
  std::vector<double> cells;

  explicit ConfusionMatrix(int n = kNumExpressions)
      : classes(n), cells(static_cast<std::size_t>(n) * n, 0.0) {}
  double& at(int actual, int predicted) {
    return cells[static_cast<std::size_t>(actual) * classes + predicted];
  }
  double at(int actual, int predicted) const {
    return cells[static_cast<std::size_t>(actual) * classes + predicted];
  }
  double row_sum(int actual) const;
};

struct Metrics {
  double top1 = 0;  // percent
  double top2 = 0;  // percent
  ConfusionMatrix confusion;
  std::size_t samples = 0;
};

struct MeanSd {
  double mean = 0;
  double sd = 0;  // population standard deviation
};

struct AggregateMetrics {
  MeanSd top1;
  MeanSd top2;
  ConfusionMatrix confusion;
  std::vector<Metrics> folds;
};

/// Rank of the true class: classes with higher probability, plus equal
/// probability and lower index, come first.
template <typename T>
double top_k_accuracy(const BasicTensor<T>& probs, std::span<const int> labels, int k);

/// predicted index per row (ties to the lower class index).
template <typename T>
std::vector<int> argmax_rows(const BasicTensor<T>& probs);

/// Row-normalized percentages; rows for absent classes stay zero.
ConfusionMatrix confusion_matrix(std::span<const int> predictions, std::span<const int> labels,
                                 int classes = kNumExpressions);

enum class ViewMode {
  single,  // the 48x48 image as stored
  eleven,  // softmax averaged over the image and its ten crop views
};

int view_count(ViewMode mode);

/// Stacks images into a [n,1,48,48] batch.
template <typename T>
BasicTensor<T> make_batch(std::span<const GrayImage* const> images);

/// Class probabilities for every sample, computed in batches of `batch_size`.
template <typename T>
BasicTensor<T> predict(const Network<T>& net, std::span<const Sample* const> samples, ViewMode mode,
                       int batch_size = 250);

template <typename T>
Metrics evaluate(const Network<T>& net, std::span<const Sample* const> samples, ViewMode mode,
                 int batch_size = 250);

/// Mean and population sd of top-1/top-2; confusion averaged entrywise and
/// each nonzero row rescaled to 100.
AggregateMetrics aggregate_folds(std::span<const Metrics> folds);

/// Human-readable table with expression codes on both axes.
void write_report_text(std::ostream& out, const Metrics& metrics);
void write_report_text(std::ostream& out, const AggregateMetrics& metrics);

/// One metric,value pair per line; confusion cells as confusion_AN_DI.
std::string report_csv(const Metrics& metrics);
std::string report_csv(const AggregateMetrics& metrics);

/// Row/column labels: expression codes for 7 classes, else class indices.
std::string class_label(int index, int classes);

}  // namespace fernet
