#include "fernet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <ostream>

#include "fernet/inception.hpp"
#include "fernet/layers.hpp"
#include "fernet/network.hpp"
#include "fernet/random.hpp"

namespace fernet {

using T64 = BasicTensor<double>;

namespace {

T64 random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  T64 t(std::move(shape));
  for (double& v : t.values()) v = lo + (hi - lo) * uniform_unit(rng);
  return t;
}

// Distinct values on a 0.01 grid in random order, so no max-pool window has a
// near tie that a finite-difference step could flip.
T64 distinct_tensor(Shape shape, Rng& rng) {
  T64 t(std::move(shape));
  std::vector<std::size_t> order(t.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle_in_place(order, rng);
  const double centre = 0.5 * static_cast<double>(t.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    t[i] = 0.01 * (static_cast<double>(order[i]) - centre);
  }
  return t;
}

// ReLU inputs kept away from the kink at 0.
T64 away_from_zero(Shape shape, Rng& rng) {
  T64 t(std::move(shape));
  for (double& v : t.values()) {
    const double mag = 0.1 + 0.9 * uniform_unit(rng);
    v = uniform_index(rng, 2) == 0 ? mag : -mag;
  }
  return t;
}

double dot(const T64& a, const T64& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

class Suite {
 public:
  explicit Suite(const GradCheckOptions& options) : options_(options) {
    report_.tolerance = options.tolerance;
  }

  // Compares `analytic` with central differences of `loss` in every entry
  // of `x`, perturbing x in place.
  void compare(const std::string& check, const std::string& parameter, T64& x, T64 analytic,
               const std::function<double()>& loss) {
    if (check == options_.sabotage && analytic.size() > 0) {
      analytic[0] = analytic[0] * 1.01 + 1e-3;
    }
    GradCheckEntry entry;
    entry.check = check;
    entry.parameter = parameter;
    entry.entries = x.size();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double saved = x[i];
      x[i] = saved + options_.step;
      const double plus = loss();
      x[i] = saved - options_.step;
      const double minus = loss();
      x[i] = saved;
      const double numeric = (plus - minus) / (2 * options_.step);
      const double scale = std::max({std::abs(analytic[i]), std::abs(numeric), options_.floor});
      entry.max_rel_error = std::max(entry.max_rel_error, std::abs(analytic[i] - numeric) / scale);
    }
    entry.passed = entry.max_rel_error < options_.tolerance;
    report_.entries.push_back(entry);
  }

  GradCheckReport take() { return std::move(report_); }

 private:
  const GradCheckOptions& options_;
  GradCheckReport report_;
};

void check_conv(Suite& suite, Rng& rng, const std::string& name, Shape in_shape, Shape w_shape,
                ConvStride geometry) {
  T64 x = random_tensor(in_shape, rng);
  T64 w = random_tensor(w_shape, rng);
  T64 b = random_tensor({w_shape[0]}, rng);
  const T64 out = conv2d_forward(x, w, b, geometry);
  const T64 r = random_tensor(out.shape(), rng);
  const ConvGrads<double> g = conv2d_backward(x, w, r, geometry);
  auto loss = [&] { return dot(conv2d_forward(x, w, b, geometry), r); };
  suite.compare(name, "input", x, g.input, loss);
  suite.compare(name, "weights", w, g.weights, loss);
  suite.compare(name, "bias", b, g.bias, loss);
}

void check_max_pool(Suite& suite, Rng& rng, const std::string& name, Shape in_shape,
                    PoolWindow window) {
  T64 x = distinct_tensor(in_shape, rng);
  const MaxPoolResult<double> fwd = maxpool_forward(x, window);
  const T64 r = random_tensor(fwd.output.shape(), rng);
  const T64 g = maxpool_backward<double>(fwd.argmax, r, x.shape());
  suite.compare(name, "input", x, g, [&] { return dot(maxpool_forward(x, window).output, r); });
}

void check_avg_pool(Suite& suite, Rng& rng) {
  T64 x = random_tensor({2, 3, 5, 4}, rng);
  const T64 r = random_tensor(avgpool_global_forward(x).shape(), rng);
  const T64 g = avgpool_global_backward(r, x.shape());
  suite.compare("avg_pool", "input", x, g, [&] { return dot(avgpool_global_forward(x), r); });
}

void check_relu(Suite& suite, Rng& rng) {
  T64 x = away_from_zero({2, 3, 4, 4}, rng);
  const T64 r = random_tensor(x.shape(), rng);
  const T64 g = relu_backward(x, r);
  suite.compare("relu", "input", x, g, [&] { return dot(relu_forward(x), r); });
}

void check_fc(Suite& suite, Rng& rng) {
  T64 x = random_tensor({3, 2, 2, 2}, rng);
  T64 w = random_tensor({5, 8}, rng);
  T64 b = random_tensor({5}, rng);
  const T64 r = random_tensor({3, 5}, rng);
  const ConvGrads<double> g = fc_backward(x, w, r);
  auto loss = [&] { return dot(fc_forward(x, w, b), r); };
  suite.compare("fully_connected", "input", x, g.input, loss);
  suite.compare("fully_connected", "weights", w, g.weights, loss);
  suite.compare("fully_connected", "bias", b, g.bias, loss);
}

void check_concat(Suite& suite, Rng& rng) {
  std::vector<T64> parts = {random_tensor({2, 1, 3, 3}, rng), random_tensor({2, 3, 3, 3}, rng),
                            random_tensor({2, 2, 3, 3}, rng)};
  const std::vector<int> channels = {1, 3, 2};
  const T64 r = random_tensor({2, 6, 3, 3}, rng);
  const std::vector<T64> g = split_channels(r, std::span<const int>(channels));
  auto loss = [&] { return dot(concat_channels(std::span<const T64>(parts)), r); };
  for (std::size_t i = 0; i < parts.size(); ++i) {
    suite.compare("concat", "input" + std::to_string(i), parts[i], g[i], loss);
  }
}

void check_softmax_loss(Suite& suite, Rng& rng) {
  T64 z = random_tensor({4, 7}, rng, -3.0, 3.0);
  std::vector<int> labels(4);
  for (int& l : labels) l = static_cast<int>(uniform_index(rng, 7));
  const SoftmaxLoss<double> fwd = softmax_cross_entropy(z, std::span<const int>(labels));
  const T64 g = softmax_cross_entropy_backward(fwd.probs, std::span<const int>(labels));
  suite.compare("softmax_cross_entropy", "logits", z, g,
                [&] { return softmax_cross_entropy(z, std::span<const int>(labels)).loss; });
}

void check_inception(Suite& suite, Rng& rng) {
  const InceptionSpec spec{2, 2, 3, 1, 2, 2};
  const int in_c = 3;
  T64 x = distinct_tensor({2, in_c, 5, 5}, rng);
  std::array<T64, kInceptionConvs> w;
  std::array<T64, kInceptionConvs> b;
  InceptionWeights<double> views;
  for (int i = 0; i < kInceptionConvs; ++i) {
    const InceptionConvShape s = inception_conv_shape(spec, in_c, static_cast<InceptionConv>(i));
    w[static_cast<std::size_t>(i)] =
        random_tensor({s.out_channels, s.in_channels, s.kernel, s.kernel}, rng, -0.5, 0.5);
    b[static_cast<std::size_t>(i)] = random_tensor({s.out_channels}, rng, -0.1, 0.1);
    views[static_cast<std::size_t>(i)] = {&w[static_cast<std::size_t>(i)], &b[static_cast<std::size_t>(i)]};
  }
  const InceptionResult<double> fwd = inception_forward(x, spec, views);
  const T64 r = random_tensor(fwd.output.shape(), rng);
  const InceptionGrads<double> g = inception_backward(fwd.cache, spec, views, r);
  auto loss = [&] { return dot(inception_forward(x, spec, views).output, r); };
  suite.compare("inception", "input", x, g.input, loss);
  for (int i = 0; i < kInceptionConvs; ++i) {
    const std::string conv = inception_conv_name(static_cast<InceptionConv>(i));
    suite.compare("inception", conv + ".weight", w[static_cast<std::size_t>(i)],
                  g.weights[static_cast<std::size_t>(i)], loss);
    suite.compare("inception", conv + ".bias", b[static_cast<std::size_t>(i)],
                  g.biases[static_cast<std::size_t>(i)], loss);
  }
}

void check_tiny_network(Suite& suite, Rng& rng, std::uint64_t seed) {
  Network<double> net = Network<double>::build(tiny_network_config(), seed);
  // Zero biases behind ReLU zeros leave pre-activations exactly on the kink.
  for (Parameter<double>& p : net.parameters()) {
    if (p.is_bias) p.value = away_from_zero(p.value.shape(), rng);
  }
  const T64 x = random_tensor({3, 1, 12, 12}, rng, 0.0, 1.0);
  const std::vector<int> labels = {0, 3, 6};
  const auto fwd = forward(net, x, ForwardMode::train);
  const BackwardResult<double> back = backward(net, fwd.cache, std::span<const int>(labels));
  auto loss = [&] { return batch_loss(net, x, std::span<const int>(labels)); };
  for (std::size_t i = 0; i < net.parameters().size(); ++i) {
    Parameter<double>& p = net.parameters()[i];
    suite.compare("tiny_network", p.name, p.value, back.grads[i].value, loss);
  }
}

}  // namespace

bool GradCheckReport::passed() const {
  return !entries.empty() &&
         std::all_of(entries.begin(), entries.end(), [](const GradCheckEntry& e) { return e.passed; });
}

double GradCheckReport::max_rel_error() const {
  double m = 0;
  for (const GradCheckEntry& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

std::vector<std::string> gradcheck_names() {
  return {"conv",   "conv_strided",    "max_pool", "max_pool_padded",       "avg_pool",
          "relu",   "fully_connected", "concat",   "softmax_cross_entropy", "inception",
          "tiny_network"};
}

GradCheckReport run_gradcheck(const GradCheckOptions& options) {
  if (!(options.step > 0) || !(options.tolerance > 0) || !(options.floor > 0)) {
    throw ConfigError("gradient check step, tolerance and floor must be > 0");
  }
  if (!options.sabotage.empty()) {
    const auto names = gradcheck_names();
    if (std::find(names.begin(), names.end(), options.sabotage) == names.end()) {
      throw ConfigError("unknown gradient check '" + options.sabotage + "'");
    }
  }
  Suite suite(options);
  Rng rng(options.seed);
  check_conv(suite, rng, "conv", {2, 3, 6, 5}, {4, 3, 3, 3}, {1, 1});
  check_conv(suite, rng, "conv_strided", {2, 2, 9, 8}, {3, 2, 5, 5}, {2, 2});
  check_max_pool(suite, rng, "max_pool", {2, 2, 7, 7}, {3, 2, 0});
  check_max_pool(suite, rng, "max_pool_padded", {2, 2, 6, 7}, {3, 2, 1});
  check_avg_pool(suite, rng);
  check_relu(suite, rng);
  check_fc(suite, rng);
  check_concat(suite, rng);
  check_softmax_loss(suite, rng);
  check_inception(suite, rng);
  check_tiny_network(suite, rng, options.seed);
  return suite.take();
}

void write_gradcheck_report(std::ostream& out, const GradCheckReport& report) {
  const auto flags = out.flags();
  out << std::left;
  for (const GradCheckEntry& e : report.entries) {
    out << std::setw(22) << e.check << ' ' << std::setw(24) << e.parameter << ' ' << std::right
        << std::setw(5) << e.entries << "  max_rel_err " << std::scientific << std::setprecision(3)
        << e.max_rel_error << std::defaultfloat << "  " << (e.passed ? "ok" : "FAIL") << std::left
        << '\n';
  }
  out << std::scientific << std::setprecision(3) << "max relative error " << report.max_rel_error()
      << " (tolerance " << report.tolerance << "): " << (report.passed() ? "PASS" : "FAIL") << '\n';
  out.flags(flags);
}

}  // namespace fernet
