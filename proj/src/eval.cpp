#include "fernet/eval.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "fernet/augment.hpp"

namespace fernet {

double ConfusionMatrix::row_sum(int actual) const {
  double sum = 0;
  for (int j = 0; j < classes; ++j) sum += at(actual, j);
  return sum;
}

namespace {

template <typename T>
void check_probs(const BasicTensor<T>& probs, std::span<const int> labels) {
  require_rank(probs, 2, "probabilities");
  if (labels.size() != static_cast<std::size_t>(probs.dim(0))) {
    throw DataError(std::to_string(labels.size()) + " labels for " + std::to_string(probs.dim(0)) +
                    " probability rows");
  }
  for (int label : labels) {
    if (label < 0 || label >= probs.dim(1)) {
      throw LabelError("label " + std::to_string(label) + " outside [0," +
                       std::to_string(probs.dim(1)) + ")");
    }
  }
}

}  // namespace

template <typename T>
double top_k_accuracy(const BasicTensor<T>& probs, std::span<const int> labels, int k) {
  check_probs(probs, labels);
  const int classes = probs.dim(1);
  if (k < 1 || k > classes) {
    throw RangeError("k=" + std::to_string(k) + " outside [1," + std::to_string(classes) + "]");
  }
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (int r = 0; r < probs.dim(0); ++r) {
    const int truth = labels[static_cast<std::size_t>(r)];
    const T p = probs.at(r, truth);
    int rank = 0;
    for (int j = 0; j < classes; ++j) {
      const T q = probs.at(r, j);
      if (q > p || (q == p && j < truth)) ++rank;
    }
    if (rank < k) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(labels.size());
}

template <typename T>
std::vector<int> argmax_rows(const BasicTensor<T>& probs) {
  require_rank(probs, 2, "probabilities");
  std::vector<int> out(static_cast<std::size_t>(probs.dim(0)));
  for (int r = 0; r < probs.dim(0); ++r) {
    int best = 0;
    for (int j = 1; j < probs.dim(1); ++j) {
      if (probs.at(r, j) > probs.at(r, best)) best = j;
    }
    out[static_cast<std::size_t>(r)] = best;
  }
  return out;
}

ConfusionMatrix confusion_matrix(std::span<const int> predictions, std::span<const int> labels,
                                 int classes) {
  if (predictions.size() != labels.size()) {
    throw DataError("confusion matrix: " + std::to_string(predictions.size()) +
                    " predictions vs " + std::to_string(labels.size()) + " labels");
  }
  ConfusionMatrix m(classes);
  std::vector<std::size_t> totals(static_cast<std::size_t>(classes), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int a = labels[i];
    const int p = predictions[i];
    if (a < 0 || a >= classes || p < 0 || p >= classes) {
      throw LabelError("confusion matrix: class index outside [0," + std::to_string(classes) + ")");
    }
    m.at(a, p) += 1.0;
    ++totals[static_cast<std::size_t>(a)];
  }
  for (int a = 0; a < classes; ++a) {
    const std::size_t n = totals[static_cast<std::size_t>(a)];
    if (n == 0) continue;
    for (int p = 0; p < classes; ++p) m.at(a, p) = 100.0 * m.at(a, p) / static_cast<double>(n);
  }
  return m;
}

int view_count(ViewMode mode) { return mode == ViewMode::eleven ? kTrainingViews : 1; }

template <typename T>
BasicTensor<T> make_batch(std::span<const GrayImage* const> images) {
  if (images.empty()) throw DataError("empty batch");
  const int h = images.front()->height;
  const int w = images.front()->width;
  BasicTensor<T> batch({static_cast<int>(images.size()), 1, h, w});
  T* dst = batch.data();
  for (const GrayImage* image : images) {
    if (image->height != h || image->width != w) throw ShapeError("batch images differ in size");
    for (float v : image->pixels) *dst++ = static_cast<T>(v);
  }
  return batch;
}

template <typename T>
BasicTensor<T> predict(const Network<T>& net, std::span<const Sample* const> samples, ViewMode mode,
                       int batch_size) {
  if (samples.empty()) throw DataError("cannot evaluate an empty sample set");
  if (batch_size < 1) throw RangeError("batch size must be >= 1");
  const int classes = net.config().num_classes;
  const int n = static_cast<int>(samples.size());
  const int views = view_count(mode);
  BasicTensor<T> probs({n, classes});
  std::vector<GrayImage> storage;
  std::vector<const GrayImage*> images;
  for (int start = 0; start < n; start += batch_size) {
    const int count = std::min(batch_size, n - start);
    for (int v = 0; v < views; ++v) {
      storage.clear();
      images.clear();
      if (v == 0) {
        for (int i = 0; i < count; ++i) images.push_back(&samples[static_cast<std::size_t>(start + i)]->image);
      } else {
        storage.reserve(static_cast<std::size_t>(count));
        for (int i = 0; i < count; ++i) {
          storage.push_back(training_view(samples[static_cast<std::size_t>(start + i)]->image, v));
        }
        for (const GrayImage& g : storage) images.push_back(&g);
      }
      const BasicTensor<T> logits =
          forward(net, make_batch<T>(images), ForwardMode::inference).logits;
      const BasicTensor<T> p = softmax(logits);
      for (int i = 0; i < count; ++i) {
        for (int j = 0; j < classes; ++j) probs.at(start + i, j) += p.at(i, j);
      }
    }
  }
  if (views > 1) {
    for (T& v : probs.values()) v /= static_cast<T>(views);
  }
  return probs;
}

template <typename T>
Metrics evaluate(const Network<T>& net, std::span<const Sample* const> samples, ViewMode mode,
                 int batch_size) {
  const BasicTensor<T> probs = predict(net, samples, mode, batch_size);
  std::vector<int> labels;
  labels.reserve(samples.size());
  for (const Sample* s : samples) labels.push_back(s->label);
  Metrics m;
  m.samples = samples.size();
  m.top1 = top_k_accuracy(probs, labels, 1);
  m.top2 = top_k_accuracy(probs, labels, std::min(2, probs.dim(1)));
  m.confusion = confusion_matrix(argmax_rows(probs), labels, probs.dim(1));
  return m;
}

namespace {

MeanSd mean_sd(const std::vector<double>& values) {
  MeanSd r;
  for (double v : values) r.mean += v;
  r.mean /= static_cast<double>(values.size());
  double sq = 0;
  for (double v : values) sq += (v - r.mean) * (v - r.mean);
  r.sd = std::sqrt(sq / static_cast<double>(values.size()));
  return r;
}

}  // namespace

AggregateMetrics aggregate_folds(std::span<const Metrics> folds) {
  if (folds.empty()) throw DataError("aggregate_folds needs at least one fold");
  AggregateMetrics agg;
  agg.folds.assign(folds.begin(), folds.end());
  std::vector<double> top1, top2;
  for (const Metrics& m : folds) {
    top1.push_back(m.top1);
    top2.push_back(m.top2);
  }
  agg.top1 = mean_sd(top1);
  agg.top2 = mean_sd(top2);
  const int classes = folds.front().confusion.classes;
  agg.confusion = ConfusionMatrix(classes);
  for (const Metrics& m : folds) {
    if (m.confusion.classes != classes) throw DataError("folds disagree on class count");
    for (std::size_t i = 0; i < agg.confusion.cells.size(); ++i) {
      agg.confusion.cells[i] += m.confusion.cells[i] / static_cast<double>(folds.size());
    }
  }
  for (int a = 0; a < classes; ++a) {
    const double sum = agg.confusion.row_sum(a);
    if (sum <= 0) continue;
    for (int p = 0; p < classes; ++p) agg.confusion.at(a, p) *= 100.0 / sum;
  }
  return agg;
}

std::string class_label(int index, int classes) {
  if (classes == kNumExpressions) return std::string(expression_code(index));
  return std::to_string(index);
}

namespace {

void write_confusion(std::ostream& out, const ConfusionMatrix& m) {
  out << "Confusion matrix (%), rows = actual, columns = predicted\n";
  out << "      ";
  for (int p = 0; p < m.classes; ++p) out << std::setw(7) << class_label(p, m.classes);
  out << '\n';
  out << std::fixed << std::setprecision(1);
  for (int a = 0; a < m.classes; ++a) {
    out << std::setw(6) << std::left << class_label(a, m.classes) << std::right;
    for (int p = 0; p < m.classes; ++p) out << std::setw(7) << m.at(a, p);
    out << '\n';
  }
  out << std::defaultfloat;
}

void write_confusion_csv(std::ostream& out, const ConfusionMatrix& m) {
  for (int a = 0; a < m.classes; ++a) {
    for (int p = 0; p < m.classes; ++p) {
      out << "confusion_" << class_label(a, m.classes) << '_' << class_label(p, m.classes) << ','
          << m.at(a, p) << '\n';
    }
  }
}

}  // namespace

void write_report_text(std::ostream& out, const Metrics& metrics) {
  out << std::fixed << std::setprecision(1);
  out << "samples: " << metrics.samples << '\n';
  out << "top-1:   " << metrics.top1 << "%\n";
  out << "top-2:   " << metrics.top2 << "%\n";
  out << std::defaultfloat;
  write_confusion(out, metrics.confusion);
}

void write_report_text(std::ostream& out, const AggregateMetrics& metrics) {
  out << std::fixed << std::setprecision(1);
  out << "folds:   " << metrics.folds.size() << '\n';
  for (std::size_t i = 0; i < metrics.folds.size(); ++i) {
    out << "  fold " << i << ": top-1 " << metrics.folds[i].top1 << "%, top-2 "
        << metrics.folds[i].top2 << "% (" << metrics.folds[i].samples << " samples)\n";
  }
  out << "top-1:   " << metrics.top1.mean << "±" << metrics.top1.sd << "%\n";
  out << "top-2:   " << metrics.top2.mean << "±" << metrics.top2.sd << "%\n";
  out << std::defaultfloat;
  write_confusion(out, metrics.confusion);
}

std::string report_csv(const Metrics& metrics) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << "metric,value\n";
  out << "samples," << metrics.samples << '\n';
  out << "top1," << metrics.top1 << '\n';
  out << "top2," << metrics.top2 << '\n';
  write_confusion_csv(out, metrics.confusion);
  return out.str();
}

std::string report_csv(const AggregateMetrics& metrics) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << "metric,value\n";
  out << "folds," << metrics.folds.size() << '\n';
  out << "top1," << metrics.top1.mean << '\n';
  out << "top1_sd," << metrics.top1.sd << '\n';
  out << "top2," << metrics.top2.mean << '\n';
  out << "top2_sd," << metrics.top2.sd << '\n';
  for (std::size_t i = 0; i < metrics.folds.size(); ++i) {
    out << "fold" << i << "_top1," << metrics.folds[i].top1 << '\n';
    out << "fold" << i << "_top2," << metrics.folds[i].top2 << '\n';
  }
  write_confusion_csv(out, metrics.confusion);
  return out.str();
}

#define FERNET_INSTANTIATE(T)                                                                  \
  template double top_k_accuracy(const BasicTensor<T>&, std::span<const int>, int);           \
  template std::vector<int> argmax_rows(const BasicTensor<T>&);                               \
  template BasicTensor<T> make_batch(std::span<const GrayImage* const>);                      \
  template BasicTensor<T> predict(const Network<T>&, std::span<const Sample* const>, ViewMode, \
                                  int);                                                       \
  template Metrics evaluate(const Network<T>&, std::span<const Sample* const>, ViewMode, int);

FERNET_INSTANTIATE(float)
FERNET_INSTANTIATE(double)
#undef FERNET_INSTANTIATE

}  // namespace fernet
