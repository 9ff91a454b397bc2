#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include <zlib.h>

#include "fernet/checkpoint.hpp"
#include "fernet/error.hpp"
#include "fernet/optim.hpp"
#include "synthetic.hpp"

using namespace fernet;
using fernet::testing::TempDir;

namespace {

LrSchedule poly(double base, std::int64_t max_iter) {
  LrSchedule s;
  s.base_lr = base;
  s.max_iter = max_iter;
  return s;
}

TrainConfig plain_config() {
  TrainConfig cfg;
  cfg.momentum = 0;
  cfg.weight_decay = 0;
  return cfg;
}

template <typename T>
std::vector<NamedTensor<T>> constant_grads(const Network<T>& net, T g) {
  std::vector<NamedTensor<T>> out;
  for (const Parameter<T>& p : net.parameters()) out.push_back({p.name, BasicTensor<T>::filled(p.value.shape(), g)});
  return out;
}

void put_u32(std::string& bytes, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) bytes[at + static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xff);
}

void reseal(std::string& bytes) {
  const std::size_t body = bytes.size() - 4;
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(body)));
  put_u32(bytes, body, crc);
}

template <typename T>
bool same_parameters(const Network<T>& a, const Network<float>& b) {
  if (a.parameters().size() != b.parameters().size()) return false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    const BasicTensor<float> av = a.parameters()[i].value.template cast<float>();
    const BasicTensor<float>& bv = b.parameters()[i].value;
    if (a.parameters()[i].name != b.parameters()[i].name || av.shape() != bv.shape()) return false;
    if (std::memcmp(av.data(), bv.data(), av.size() * sizeof(float)) != 0) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("polynomial learning rate") {
  const LrSchedule s = poly(0.01, 150000);
  CHECK(poly_lr(s, 0) == 0.01);
  CHECK(poly_lr(s, 150000) == 0.0);
  CHECK(poly_lr(s, 75000) == doctest::Approx(0.01 * std::sqrt(0.5)).epsilon(1e-12));
  CHECK(poly_lr(s, 75000) == doctest::Approx(0.00707107).epsilon(1e-6));
  double prev = poly_lr(s, 0);
  for (std::int64_t i = 1; i <= 150000; i += 997) {
    const double lr = poly_lr(s, i);
    CHECK(lr <= prev);
    prev = lr;
  }
  CHECK_THROWS_AS(poly_lr(s, 150001), RangeError);
  CHECK_THROWS_AS(poly_lr(s, -1), RangeError);
  CHECK_THROWS_AS(poly(0, 10).validate(), ConfigError);
  LrSchedule bad = poly(0.01, 10);
  bad.power = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("other learning-rate policies") {
  LrSchedule s = poly(0.1, 100);
  s.policy = LrPolicy::fixed;
  CHECK(learning_rate(s, 50) == 0.1);
  s.policy = LrPolicy::step;
  s.step_size = 10;
  s.gamma = 0.5;
  CHECK(learning_rate(s, 9) == 0.1);
  CHECK(learning_rate(s, 25) == doctest::Approx(0.025));
  s.policy = LrPolicy::exp;
  CHECK(learning_rate(s, 3) == doctest::Approx(0.1 * 0.125));
  s.policy = LrPolicy::poly;
  CHECK(learning_rate(s, 36) == doctest::Approx(0.1 * 0.8));
}

TEST_CASE("sgd step arithmetic") {
  Network<double> net = Network<double>::build(tiny_network_config(), 1);
  const Network<double> before = net;
  SgdState<double> state;
  const auto g = constant_grads(net, 1.0);
  sgd_step(net, std::span<const NamedTensor<double>>(g), 0.1, plain_config(), state);
  for (std::size_t i = 0; i < net.parameters().size(); ++i) {
    const Parameter<double>& p = net.parameters()[i];
    const double want = p.is_bias ? -0.2 : -0.1;
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      CHECK(p.value[j] - before.parameters()[i].value[j] == doctest::Approx(want).epsilon(1e-12));
    }
  }

  Network<double> frozen = before;
  SgdState<double> s0;
  sgd_step(frozen, std::span<const NamedTensor<double>>(g), 0.0, plain_config(), s0);
  for (std::size_t i = 0; i < frozen.parameters().size(); ++i)
    CHECK(frozen.parameters()[i].value == before.parameters()[i].value);
}

TEST_CASE("bias to weight update ratio equals the multiplier") {
  Network<double> net = Network<double>::build(tiny_network_config(), 2);
  net.set_bias_lr_mult(3.0);
  const Network<double> before = net;
  SgdState<double> state;
  const auto g = constant_grads(net, 0.5);
  sgd_step(net, std::span<const NamedTensor<double>>(g), 0.01, plain_config(), state);
  const double dw = net.parameter("conv1.weight").value[0] - before.parameter("conv1.weight").value[0];
  const double db = net.parameter("conv1.bias").value[0] - before.parameter("conv1.bias").value[0];
  CHECK(db / dw == doctest::Approx(3.0).epsilon(1e-9));
}

TEST_CASE("momentum unrolls as expected") {
  Network<double> net = Network<double>::build(tiny_network_config(), 3);
  TrainConfig cfg = plain_config();
  cfg.momentum = 0.9;
  SgdState<double> state;
  const auto g = constant_grads(net, 2.0);
  const double lr = 0.01;
  const double w0 = net.parameter("conv1.weight").value[0];
  sgd_step(net, std::span<const NamedTensor<double>>(g), lr, cfg, state);
  const double w1 = net.parameter("conv1.weight").value[0];
  sgd_step(net, std::span<const NamedTensor<double>>(g), lr, cfg, state);
  const double w2 = net.parameter("conv1.weight").value[0];
  CHECK(w1 - w0 == doctest::Approx(-lr * 2.0).epsilon(1e-9));
  CHECK(w2 - w1 == doctest::Approx(-lr * 2.0 * 1.9).epsilon(1e-9));
}

TEST_CASE("weight decay enters the update") {
  Network<double> net = Network<double>::build(tiny_network_config(), 4);
  TrainConfig cfg = plain_config();
  cfg.weight_decay = 0.5;
  SgdState<double> state;
  const double w0 = net.parameter("conv1.weight").value[1];
  const auto g = constant_grads(net, 0.0);
  sgd_step(net, std::span<const NamedTensor<double>>(g), 0.1, cfg, state);
  CHECK(net.parameter("conv1.weight").value[1] == doctest::Approx(w0 - 0.1 * 0.5 * w0).epsilon(1e-12));
}

TEST_CASE("sgd step rejects mismatched gradients") {
  Network<float> net = Network<float>::build(tiny_network_config(), 5);
  SgdState<float> state;
  auto g = constant_grads(net, 1.0f);
  g.pop_back();
  CHECK_THROWS_AS(sgd_step(net, std::span<const NamedTensor<float>>(g), 0.1, plain_config(), state), ShapeError);
  g = constant_grads(net, 1.0f);
  g[0].value = Tensor({1});
  CHECK_THROWS_AS(sgd_step(net, std::span<const NamedTensor<float>>(g), 0.1, plain_config(), state), ShapeError);
}

TEST_CASE("a small step lowers the loss on a frozen batch") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Network<double> net = Network<double>::build(tiny_network_config(), seed);
    Rng rng(seed + 100);
    Tensor64 batch({6, 1, 12, 12});
    for (double& v : batch.values()) v = uniform_unit(rng);
    std::vector<int> labels;
    for (int i = 0; i < 6; ++i) labels.push_back(static_cast<int>(uniform_index(rng, 7)));
    const ForwardResult<double> f = forward(net, batch, ForwardMode::train);
    const BackwardResult<double> b = backward(net, f.cache, labels);
    SgdState<double> state;
    sgd_step(net, std::span<const NamedTensor<double>>(b.grads), 1e-4, plain_config(), state);
    CHECK(batch_loss(net, batch, labels) < b.loss);
  }
}

TEST_CASE("training loop bookkeeping") {
  const std::vector<Sample> samples = testing::bar_samples(500, 3);
  const auto set = testing::pointers(samples);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 250;
  CHECK(iterations_for(500, cfg) == 2);
  CHECK(iterations_for(501, cfg) == 3);

  Network<float> net = Network<float>::build(testing::small_config(), 1);
  std::vector<std::int64_t> seen;
  TrainCallbacks cb;
  cb.on_iteration = [&](std::int64_t iter, double, double) { seen.push_back(iter); };
  const TrainHistory h = train(net, std::span<const Sample* const>(set), {}, cfg, LrSchedule{}, cb);
  CHECK(h.iterations == 2);
  CHECK(h.losses.size() == 2);
  CHECK(seen == std::vector<std::int64_t>{0, 1});
  REQUIRE(h.epochs.size() == 1);
  CHECK(h.epochs[0].epoch == 1);
  CHECK(h.epochs[0].last_iter == 1);
  CHECK(std::isnan(h.epochs[0].val_top1));
  CHECK(h.samples_seen.at("bars") == 500);

  const std::string csv = history_csv(h);
  CHECK(csv.rfind("iter,loss,epoch,val_top1,val_top2\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}

TEST_CASE("training lowers the loss and is reproducible") {
  const std::vector<Sample> samples = testing::bar_samples(140, 4);
  const std::vector<Sample> val = testing::bar_samples(35, 5);
  const auto set = testing::pointers(samples);
  const auto vset = testing::pointers(val);
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 20;
  cfg.augment = false;
  LrSchedule sched;
  sched.base_lr = 0.01;

  Network<float> a = Network<float>::build(testing::small_config(), 11);
  Network<float> b = Network<float>::build(testing::small_config(), 11);
  const TrainHistory ha = train(a, std::span<const Sample* const>(set), std::span<const Sample* const>(vset), cfg, sched);
  const TrainHistory hb = train(b, std::span<const Sample* const>(set), std::span<const Sample* const>(vset), cfg, sched);
  CHECK(bitwise_equal(ha, hb));
  for (std::size_t i = 0; i < a.parameters().size(); ++i) CHECK(a.parameters()[i].value == b.parameters()[i].value);

  REQUIRE(ha.losses.size() == 42);
  double first = 0, last = 0;
  for (int i = 0; i < 7; ++i) {
    first += ha.losses[static_cast<std::size_t>(i)];
    last += ha.losses[ha.losses.size() - 1 - static_cast<std::size_t>(i)];
  }
  CHECK(last < first);
  REQUIRE(ha.epochs.size() == 6);
  for (const EpochRecord& e : ha.epochs) {
    CHECK(e.val_top1 >= 0);
    CHECK(e.val_top2 >= e.val_top1);
  }

  TrainConfig other = cfg;
  other.seed = 2;
  Network<float> c = Network<float>::build(testing::small_config(), 11);
  CHECK_FALSE(bitwise_equal(ha, train(c, std::span<const Sample* const>(set), {}, other, sched)));
}

TEST_CASE("training errors") {
  Network<float> net = Network<float>::build(testing::small_config(), 1);
  TrainConfig cfg;
  cfg.epochs = 1;
  CHECK_THROWS_AS(train(net, {}, {}, cfg, LrSchedule{}), DataError);

  std::vector<Sample> samples = testing::bar_samples(10, 1);
  samples[3].image.pixels[7] = std::numeric_limits<float>::quiet_NaN();
  auto set = testing::pointers(samples);
  cfg.batch_size = 5;
  cfg.augment = false;
  try {
    train(net, std::span<const Sample* const>(set), {}, cfg, LrSchedule{});
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.iteration() >= 0);
    CHECK(e.iteration() <= 1);
  }

  samples = testing::bar_samples(10, 1);
  samples[2].label = 9;
  set = testing::pointers(samples);
  CHECK_THROWS_AS(train(net, std::span<const Sample* const>(set), {}, cfg, LrSchedule{}), LabelError);

  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("checkpoint round-trip") {
  TempDir dir("ckpt");
  const Network<float> net = Network<float>::build(testing::small_config(), 21);
  save_checkpoint(net, dir / "a.fern");
  const Network<float> back = load_checkpoint(dir / "a.fern");
  CHECK(back.config() == net.config());
  CHECK(same_parameters(net, back));
  CHECK(checkpoint_bytes(back) == checkpoint_bytes(net));

  const Network<double> wide = Network<double>::build(tiny_network_config(3), 22);
  const Network<float> narrowed = parse_checkpoint(checkpoint_bytes(wide));
  CHECK(narrowed.config() == wide.config());
  CHECK(same_parameters(wide, narrowed));

  CHECK_THROWS_AS(load_checkpoint(dir / "missing.fern"), DataError);
}

TEST_CASE("corrupted checkpoints are rejected with an offset") {
  const Network<float> net = Network<float>::build(tiny_network_config(), 23);
  const std::string good = checkpoint_bytes(net);

  auto offset_of = [](const std::string& bytes) -> std::uint64_t {
    try {
      parse_checkpoint(bytes);
    } catch (const FormatError& e) {
      return e.offset();
    }
    FAIL("expected a format error");
    return 0;
  };

  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{8}, std::size_t{20}, good.size() / 2,
                          good.size() - 5, good.size() - 1}) {
    CHECK_THROWS_AS(parse_checkpoint(good.substr(0, cut)), FormatError);
  }

  std::string magic = good;
  magic[0] = 'X';
  CHECK(offset_of(magic) == 0);

  std::string version = good;
  version[4] = 9;
  CHECK(offset_of(version) == 4);

  std::string flipped = good;
  flipped[good.size() - 9] ^= 0x10;
  CHECK(offset_of(flipped) == good.size() - 4);

  std::string extra = good;
  extra.insert(extra.size() - 4, "zz");
  CHECK_THROWS_AS(parse_checkpoint(extra), FormatError);

  // Declare a longer bias than the payload holds; the CRC stays valid.
  const std::string name = "classifier.bias";
  const std::size_t at = good.find(name);
  REQUIRE(at != std::string::npos);
  std::string shape = good;
  const std::size_t extent = at + name.size() + 1;
  CHECK(static_cast<unsigned char>(shape[extent]) == 7);
  put_u32(shape, extent, 8);
  reseal(shape);
  CHECK_THROWS_AS(parse_checkpoint(shape), FormatError);

  std::string smaller = good;
  put_u32(smaller, extent, 6);
  reseal(smaller);
  CHECK_THROWS_AS(parse_checkpoint(smaller), FormatError);
}
