#include <cmath>

#include "doctest.h"
#include "mbaf/model.hpp"
#include "test_util.hpp"

using namespace mbaf;

namespace {

std::vector<std::vector<double>> flat_params(ClassifierParams& p) {
  std::vector<std::vector<double>> out;
  for (const auto& b : blocks(p)) out.emplace_back(b.values.begin(), b.values.end());
  return out;
}

TaskConfig clean_task(std::size_t length = 200) {
  TaskConfig t;
  t.s1 = 4;
  t.s2 = 4;
  t.occlusion_prob = 0.0;
  t.noise_sigma = 0.2;
  t.length = length;
  return t;
}

ClassifierConfig small_config(const char* variant = "na") {
  ClassifierConfig c;
  c.head_hidden = 16;
  c.fusion = parse_variant(variant);
  c.slots = 5;
  c.lr = 0.01;
  c.batch = 4;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("encode") {
    Rng rng(1);
    const auto batch = testutil::normal_batch(rng, 3, 4);
    const auto same = encode(std::nullopt, batch);
    for (std::size_t n = 0; n < 3; ++n) CHECK(same[n] == batch[n]);

    const DenseLayer zero{DenseMatrix(4, 5, 0.0), DenseVector(5, 0.0)};
    for (const auto& e : encode(zero, batch)) CHECK(e == DenseVector(5, 0.0));

    const DenseLayer layer{rng_normal_matrix(rng, 4, 5, 0.0, 1.0), rng_normal(rng, 5, 0.0, 1.0)};
    const auto enc = encode(layer, batch);
    for (std::size_t n = 0; n < 3; ++n) {
      for (std::size_t j = 0; j < 5; ++j) {
        double acc = layer.b[j];
        for (std::size_t i = 0; i < 4; ++i) acc += layer.w(i, j) * batch[n][i];
        CHECK(std::abs(enc[n][j] - std::max(0.0, acc)) < 1e-14);
      }
    }
    CHECK_THROWS_AS(encode(layer, testutil::normal_batch(rng, 1, 3)), ShapeError);
  }

  TEST_CASE("head_forward") {
    ClassifierConfig config = small_config("nf");
    config.classes = 4;
    Rng rng(2);
    ClassifierParams params = init_classifier(config, 3, 2, rng);
    ClassifierParams zero = zeros_like(params);
    const DenseVector fused = rng_normal(rng, 5, 0.0, 1.0);
    const HeadTrace z = head_forward(zero, fused, {});
    for (double p : softmax(z.logits)) CHECK(p == doctest::Approx(0.25));

    CHECK(dropout_mask(rng, 16, 0.0) == DenseVector(16, 1.0));
    for (double m : dropout_mask(rng, 1000, 0.5)) CHECK((m == 0.0 || m == 2.0));

    const DenseVector mask = dropout_mask(rng, config.head_hidden, 0.5);
    const HeadTrace t = head_forward(params, fused, mask);
    const auto& h1 = params.head_hidden;
    const auto& h2 = params.head_out;
    std::vector<double> hidden(config.head_hidden);
    for (std::size_t j = 0; j < hidden.size(); ++j) {
      double acc = h1.b[j];
      for (std::size_t i = 0; i < 5; ++i) acc += h1.w(i, j) * fused[i];
      hidden[j] = std::max(0.0, acc) * mask[j];
    }
    for (std::size_t c = 0; c < 4; ++c) {
      double acc = h2.b[c];
      for (std::size_t j = 0; j < hidden.size(); ++j) acc += h2.w(j, c) * hidden[j];
      CHECK(std::abs(t.logits[c] - acc) < 1e-13);
    }
    CHECK_THROWS_AS(head_forward(params, DenseVector{1, 2}, {}), ShapeError);
  }

  TEST_CASE("cross_entropy") {
    const LossAndGrad u = cross_entropy(DenseVector{0.3, 0.3, 0.3, 0.3}, 2);
    CHECK(std::abs(u.loss - std::log(4.0)) < 1e-15);
    CHECK(cross_entropy(DenseVector{100, 0, 0}, 0).loss < 1e-40);
    CHECK_THROWS_AS(cross_entropy(DenseVector{1, 2}, 2), ParamError);

    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      const DenseVector logits = rng_normal(rng, 5, 0.0, 2.0);
      const std::size_t label = rng.below(5);
      const LossAndGrad lg = cross_entropy(logits, label);
      for (std::size_t i = 0; i < 5; ++i) {
        DenseVector up = logits, down = logits;
        up[i] += 1e-5;
        down[i] -= 1e-5;
        const double numeric =
            (cross_entropy(up, label).loss - cross_entropy(down, label).loss) / 2e-5;
        CHECK(std::abs(numeric - lg.grad_logits[i]) < 1e-7);
      }
    }
  }

  TEST_CASE("adam with zero gradients") {
    TrainState state = make_train_state(small_config(), 2, 2);
    auto before = flat_params(state.params);
    ClassifierParams grads = zeros_like(state.params);
    adam_step(state, grads, 0.01);
    CHECK(flat_params(state.params) == before);
    for (const auto& m : state.adam_m)
      for (double v : m) CHECK(v == 0.0);
    CHECK(state.step == 1);

    // Once the moments are nonzero, a zero gradient decays them geometrically.
    ClassifierParams ones = zeros_like(state.params);
    for (auto& b : blocks(ones))
      for (double& v : b.values) v = 1.0;
    adam_step(state, ones, 0.01);
    const auto m1 = state.adam_m, v1 = state.adam_v;
    ClassifierParams none = zeros_like(state.params);
    adam_step(state, none, 0.01);
    for (std::size_t i = 0; i < m1.size(); ++i) {
      for (std::size_t j = 0; j < m1[i].size(); ++j) {
        CHECK(state.adam_m[i][j] == 0.9 * m1[i][j]);
        CHECK(state.adam_v[i][j] == 0.999 * v1[i][j]);
      }
    }
  }

  TEST_CASE("adam first step moves by the learning rate") {
    TrainState state = make_train_state(small_config(), 2, 2);
    auto before = flat_params(state.params);
    ClassifierParams grads = zeros_like(state.params);
    Rng rng(4);
    for (auto& b : blocks(grads))
      for (double& v : b.values) v = rng.uniform() < 0.5 ? -3.7 : 0.02;
    auto g = flat_params(grads);
    adam_step(state, grads, 0.001);
    auto after = flat_params(state.params);
    for (std::size_t i = 0; i < after.size(); ++i) {
      for (std::size_t j = 0; j < after[i].size(); ++j) {
        const double expect = -0.001 * (g[i][j] > 0 ? 1.0 : -1.0);
        CHECK(std::abs((after[i][j] - before[i][j]) - expect) < 1e-9);
      }
    }
  }

  TEST_CASE("adam on a quadratic shrinks every coordinate") {
    // f = sum theta^2 from theta = 1, compared with a scalar recurrence.
    TrainState state = make_train_state(small_config(), 2, 2);
    for (auto& b : blocks(state.params))
      for (double& v : b.values) v = 1.0;
    double theta = 1.0, m = 0.0, v = 0.0;
    double previous = 1.0;
    for (int t = 1; t <= 10; ++t) {
      ClassifierParams grads = zeros_like(state.params);
      auto gb = blocks(grads);
      auto pb = blocks(state.params);
      for (std::size_t i = 0; i < gb.size(); ++i)
        for (std::size_t j = 0; j < gb[i].values.size(); ++j) gb[i].values[j] = 2.0 * pb[i].values[j];
      adam_step(state, grads, 0.05);

      const double g = 2.0 * theta;
      m = 0.9 * m + (1.0 - 0.9) * g;
      v = 0.999 * v + (1.0 - 0.999) * g * g;
      theta -= 0.05 * (m / (1.0 - std::pow(0.9, t))) /
               (std::sqrt(v / (1.0 - std::pow(0.999, t))) + 1e-8);
      CHECK(std::abs(theta) < previous);
      previous = std::abs(theta);
      for (const auto& b : blocks(state.params))
        for (double x : b.values) CHECK(std::abs(x - theta) < 1e-15);
    }
  }

  TEST_CASE("adam rejects mismatched gradients") {
    TrainState state = make_train_state(small_config(), 2, 2);
    TrainState other = make_train_state(small_config(), 3, 2);
    CHECK_THROWS_AS(adam_step(state, other.params, 0.01), ShapeError);
  }

  TEST_CASE("train_epoch with zero learning rate keeps parameters") {
    const Dataset data = gen_dataset(clean_task());
    ClassifierConfig config = small_config();
    config.lr = 0.0;
    TrainState state = make_train_state(config, 4, 4);
    const auto before = flat_params(state.params);
    const EpochResult r = train_epoch(state, data);
    CHECK(std::isfinite(r.loss));
    CHECK(flat_params(state.params) == before);
  }

  TEST_CASE("training is deterministic") {
    const Dataset data = gen_dataset(clean_task());
    for (const char* variant : {"nf", "na", "ca"}) {
      ClassifierConfig config = small_config(variant);
      config.dropout_rate = 0.3;
      TrainState a = make_train_state(config, 4, 4), b = make_train_state(config, 4, 4);
      for (int e = 0; e < 2; ++e) {
        const double la = train_epoch(a, data).loss, lb = train_epoch(b, data).loss;
        CHECK(la == lb);
      }
      CHECK(flat_params(a.params) == flat_params(b.params));
      CHECK(a.memory.M == b.memory.M);
    }
  }

  TEST_CASE("training reduces the loss") {
    const Dataset data = gen_dataset(clean_task(400));
    TrainState state = make_train_state(small_config(), 4, 4);
    const double first = train_epoch(state, data).loss;
    double last = first;
    for (int e = 0; e < 4; ++e) last = train_epoch(state, data).loss;
    CHECK(last < first);
  }

  TEST_CASE("ragged tail is dropped") {
    const Dataset data = gen_dataset(clean_task(203));
    for (std::size_t batch : {1u, 4u, 7u, 32u}) {
      ClassifierConfig config = small_config();
      config.batch = batch;
      TrainState state = make_train_state(config, 4, 4);
      CHECK(train_epoch(state, data).examples == batch * (203 / batch));
    }
    TrainState state = make_train_state(small_config(), 4, 4);
    CHECK_THROWS_AS(train_epoch(state, Dataset{}), ParamError);
  }

  TEST_CASE("reinitialized memory still trains deterministically") {
    const Dataset data = gen_dataset(clean_task());
    ClassifierConfig config = small_config();
    config.reinit_memory_per_epoch = true;
    TrainState a = make_train_state(config, 4, 4), b = make_train_state(config, 4, 4);
    train_epoch(a, data);
    train_epoch(b, data);
    CHECK(a.memory.M == b.memory.M);
  }

  TEST_CASE("evaluate: perfect and constant predictors") {
    // m2 is the one-hot label, so a head that copies m2 is exact.
    Dataset data;
    for (std::size_t t = 0; t < 30; ++t) {
      Sample s;
      s.m1 = DenseVector{0.5};
      s.m2 = DenseVector(3, 0.0);
      s.label = t % 3;
      s.m2[s.label] = 1.0;
      s.t = t;
      data.push_back(s);
    }
    ClassifierConfig config = small_config("nf");
    config.head_hidden = 3;
    Rng rng(5);
    ClassifierParams params = init_classifier(config, 1, 3, rng);
    params.head_hidden.w = DenseMatrix(4, 3, 0.0);
    for (std::size_t c = 0; c < 3; ++c) params.head_hidden.w(1 + c, c) = 1.0;
    params.head_hidden.b = DenseVector(3, 0.0);
    params.head_out.w = DenseMatrix::identity(3);
    params.head_out.b = DenseVector(3, 0.0);
    const MemoryState none;
    const EvalResult perfect = evaluate(params, none, 3, 4, data, false);
    CHECK(perfect.report.wa == 1.0);
    CHECK(perfect.report.ua == 1.0);

    ClassifierParams constant = zeros_like(params);
    constant.head_out.b = DenseVector{1, 0, 0};
    const EvalResult flat = evaluate(constant, none, 3, 4, data, false);
    CHECK(flat.report.wa == doctest::Approx(1.0 / 3.0));
    CHECK(flat.report.ua == doctest::Approx(1.0 / 3.0));
    CHECK_THROWS_AS(evaluate(params, none, 3, 4, Dataset{}, false), ParamError);
  }

  TEST_CASE("evaluate matches a hand tally") {
    const Dataset data = gen_dataset(clean_task(101));
    ClassifierConfig config = small_config("nf");
    TrainState state = make_train_state(config, 4, 4);
    const EvalResult r = evaluate(state, data, false);
    CHECK(r.predictions.size() == data.size());
    std::vector<std::vector<std::uint64_t>> tally(3, std::vector<std::uint64_t>(3, 0));
    for (std::size_t n = 0; n < data.size(); ++n) {
      const DenseVector logits =
          head_forward(state.params, concat(data[n].m1, data[n].m2), {}).logits;
      std::size_t best = 0;
      for (std::size_t c = 1; c < 3; ++c)
        if (logits[c] > logits[best]) best = c;
      CHECK(r.predictions[n] == best);
      ++tally[data[n].label][best];
    }
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) CHECK(r.report.confusion(i, j) == tally[i][j]);
  }

  TEST_CASE("evaluate leaves the state alone and honours the freeze flag") {
    const Dataset data = gen_dataset(clean_task(50));
    TrainState state = make_train_state(small_config(), 4, 4);
    const DenseMatrix before = state.memory.M;
    const EvalResult live = evaluate(state, data, false);
    CHECK(state.memory.M == before);
    CHECK(!(live.memory.M == before));
    const EvalResult frozen = evaluate(state, data, true);
    CHECK(frozen.memory.M == before);
  }

  TEST_CASE("config validation") {
    ClassifierConfig c = small_config();
    c.classes = 1;
    CHECK_THROWS_AS(c.validate(), ParamError);
    c = small_config();
    c.dropout_rate = 1.0;
    CHECK_THROWS_AS(c.validate(), ParamError);
    c = small_config();
    c.lr = -1.0;
    CHECK_THROWS_AS(c.validate(), ParamError);
    c = small_config();
    c.batch = 0;
    CHECK_THROWS_AS(c.validate(), ParamError);
  }

  TEST_CASE("snapshot and restore round trip") {
    const Dataset data = gen_dataset(clean_task());
    TrainState a = make_train_state(small_config(), 4, 4);
    train_epoch(a, data);
    TrainState b = make_train_state(small_config(), 4, 4);
    restore(b, snapshot(a));
    CHECK(flat_params(a.params) == flat_params(b.params));
    CHECK(a.memory.M == b.memory.M);
    CHECK(evaluate(a, data, false).predictions == evaluate(b, data, false).predictions);
  }
}
