#include <cmath>
#include <numeric>

#include "doctest.h"
#include "mbaf/fusion.hpp"
#include "suites.hpp"
#include "test_util.hpp"

using namespace mbaf;

namespace {

MemoryState memory_from(const DenseMatrix& m) {
  MemoryState mem;
  mem.slots = m.rows();
  mem.dim = m.cols();
  mem.M = m;
  return mem;
}

}  // namespace

TEST_SUITE("fusion") {
  TEST_CASE("memory_init") {
    Rng a(7), b(7);
    const MemoryState ma = memory_init(a, 3, 4), mb = memory_init(b, 3, 4);
    CHECK(ma.M == mb.M);
    CHECK(ma.M.rows() == 3);
    CHECK(ma.M.cols() == 4);
    CHECK(ma.writes_enabled);

    Rng big(8);
    const MemoryState m = memory_init(big, 100, 1000);
    const auto v = m.M.span();
    CHECK(std::abs(std::accumulate(v.begin(), v.end(), 0.0) / v.size()) < 0.01);

    Rng rng(1);
    CHECK_THROWS_AS(memory_init(rng, 0, 3), ParamError);
    CHECK_THROWS_AS(memory_init(rng, 3, 0), ParamError);
  }

  TEST_CASE("read_key") {
    MbafParams p = zero_params(2);
    p.w_read = DenseMatrix::identity(2);
    const MemoryState same = memory_from(DenseMatrix{{1, 2}, {1, 2}, {1, 2}, {1, 2}});
    for (double z : read_key(p, DenseVector{0.3, -0.7}, same)) CHECK(z == doctest::Approx(0.25));

    const MemoryState one = memory_from(DenseMatrix{{5, -5}});
    CHECK(read_key(p, DenseVector{1, 1}, one) == DenseVector{1.0});

    const MemoryState three = memory_from(DenseMatrix{{10, 0}, {0, 10}, {-10, 0}});
    const DenseVector z = read_key(p, DenseVector{1, 0}, three);
    const double total = std::exp(10.0) + 1.0 + std::exp(-10.0);
    CHECK(std::abs(z[0] - std::exp(10.0) / total) < 1e-15);
    CHECK(std::abs(z[1] - 1.0 / total) < 1e-15);
    CHECK(std::abs(z[2] - std::exp(-10.0) / total) < 1e-15);

    CHECK_THROWS_AS(read_key(p, DenseVector{1, 0, 0}, three), ShapeError);
  }

  TEST_CASE("read_key sums to one") {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t d = 1 + rng.below(8), k = 1 + rng.below(8);
      const MbafParams p = init_params(rng, d);
      const MemoryState mem = memory_init(rng, k, d);
      const DenseVector z = read_key(p, rng_normal(rng, d, 0.0, 3.0), mem);
      double total = 0.0;
      for (double v : z) {
        CHECK(v >= 0.0);
        total += v;
      }
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
  }

  TEST_CASE("read_slot") {
    const MemoryState mem = memory_from(DenseMatrix{{1, 2}, {3, 4}, {5, 6}});
    CHECK(read_slot(DenseVector{0, 1, 0}, mem) == DenseVector{3, 4});
    const DenseVector mean = read_slot(DenseVector{1.0 / 3, 1.0 / 3, 1.0 / 3}, mem);
    CHECK(mean[0] == doctest::Approx(3.0));
    CHECK(mean[1] == doctest::Approx(4.0));

    Rng rng(4);
    const MemoryState r = memory_init(rng, 3, 2);
    const DenseVector z = testutil::simplex(rng, 3);
    const DenseVector m = read_slot(z, r);
    for (std::size_t l = 0; l < 2; ++l) {
      double acc = 0.0;
      for (std::size_t j = 0; j < 3; ++j) acc += z[j] * r.M(j, l);
      CHECK(std::abs(m[l] - acc) < 1e-14);
    }
    CHECK_THROWS_AS(read_slot(DenseVector{0.5, 0.5}, mem), ShapeError);
  }

  TEST_CASE("compose") {
    const MbafParams zero = zero_params(3);
    const Composition c0 = compose(zero, DenseVector{1, 2, 3}, DenseVector{4, 5, 6});
    CHECK(c0.b == DenseVector(3, 0.0));
    for (double a : c0.alpha) CHECK(a == doctest::Approx(1.0 / 3.0));
    CHECK(c0.c == DenseVector(3, 0.0));

    MbafParams sym = zero_params(2);
    sym.b_compose = DenseVector{1, 1};
    const Composition c1 = compose(sym, DenseVector{0, 0}, DenseVector{0, 0});
    CHECK(c1.alpha == DenseVector{0.5, 0.5});
    CHECK(c1.c == DenseVector{0.5, 0.5});

    Rng rng(5);
    const MbafParams p = init_params(rng, 3);
    const DenseVector query = rng_normal(rng, 3, 0.0, 1.0), m = rng_normal(rng, 3, 0.0, 1.0);
    const Composition c = compose(p, query, m);
    const oracle::Params op = testutil::to_oracle(p);
    oracle::Vec joined = testutil::to_oracle(query);
    for (double v : m) joined.push_back(v);
    oracle::Vec b(3);
    for (std::size_t j = 0; j < 3; ++j) {
      b[j] = op.b_compose[j];
      for (std::size_t i = 0; i < 6; ++i) b[j] += op.w_compose[i][j] * joined[i];
    }
    const oracle::Vec alpha = oracle::softmax(b);
    CHECK(testutil::max_abs_diff(c.b, b) < 1e-13);
    CHECK(testutil::max_abs_diff(c.alpha, alpha) < 1e-13);
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(c.c[i] - alpha[i] * b[i]) < 1e-13);

    CHECK_THROWS_AS(compose(p, DenseVector{1, 2}, m), ShapeError);
  }

  TEST_CASE("transform") {
    MbafParams p = zero_params(2);
    p.w_scale = DenseVector{2, 2};
    CHECK(transform(p, DenseVector{1, -1}) == DenseVector{2, 0});
    CHECK(transform(p, DenseVector{0, 0}) == DenseVector{0, 0});
    Rng rng(6);
    const MbafParams r = init_params(rng, 5);
    const DenseVector c = rng_normal(rng, 5, 0.0, 1.0);
    const DenseVector h = transform(r, c);
    for (std::size_t i = 0; i < 5; ++i) CHECK(h[i] == std::max(0.0, c[i] * r.w_scale[i]));
    CHECK_THROWS_AS(transform(r, DenseVector{1}), ShapeError);
  }

  TEST_CASE("write_memory examples") {
    Rng rng(9);
    const MemoryState mem = memory_init(rng, 4, 2);
    const std::vector<DenseVector> z{DenseVector{0, 0, 1, 0}}, h{DenseVector{0.5, 2.0}};
    const MemoryState out = write_memory(mem, z, h);
    for (std::size_t j = 0; j < 4; ++j) {
      if (j == 2) {
        CHECK(out.M(2, 0) == 0.5);
        CHECK(out.M(2, 1) == 2.0);
      } else {
        CHECK(out.M(j, 0) == mem.M(j, 0));
        CHECK(out.M(j, 1) == mem.M(j, 1));
      }
    }
    MemoryState frozen = mem;
    frozen.writes_enabled = false;
    CHECK(write_memory(frozen, z, h).M == mem.M);
    CHECK_THROWS_AS(write_memory(mem, std::vector<DenseVector>{}, std::vector<DenseVector>{}),
                    ParamError);
    CHECK_THROWS_AS(write_memory(mem, std::vector<DenseVector>{DenseVector{1, 0}}, h), ShapeError);
  }

  TEST_CASE("write invariants over random cases") {
    for (std::uint64_t seed = 1; seed <= 200; ++seed) {
      std::string why;
      CHECK_MESSAGE(suites::write_case(seed, why), why);
    }
  }

  TEST_CASE("forward is invariant to batch order") {
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
      std::string why;
      CHECK_MESSAGE(suites::forward_order_case(seed, why), why);
    }
  }

  TEST_CASE("disabled writes persist across forwards") {
    Rng rng(10);
    const FusionLayer layer = make_fusion_layer(FusionVariant::naive_attention(), 3, 2, rng);
    MemoryState mem = make_memory(layer, 5, rng);
    mem.writes_enabled = false;
    const DenseMatrix before = mem.M;
    for (int i = 0; i < 10; ++i) {
      const auto m1 = testutil::normal_batch(rng, 3, 3), m2 = testutil::normal_batch(rng, 3, 2);
      mem = mbaf_forward(layer, mem, m1, m2).memory;
    }
    CHECK(mem.M == before);
  }

  TEST_CASE("fuse_output") {
    CHECK(fuse_output(DenseVector{1, 2}, DenseVector{0, 0}) == DenseVector{1, 2});
    CHECK(fuse_output(DenseVector{1, 2}, DenseVector{3, 4}) == DenseVector{4, 6});
    CHECK(fuse_output(DenseVector(6848, 1.0), DenseVector(6848, 0.5)).size() == 6848);
    CHECK_THROWS_AS(fuse_output(DenseVector{1}, DenseVector{1, 2}), ShapeError);
  }

  TEST_CASE("silent composition leaves inputs unchanged") {
    Rng rng(11);
    FusionLayer layer = make_fusion_layer(FusionVariant::naive_attention(), 2, 3, rng);
    layer.unit.w_compose = DenseMatrix(10, 5, 0.0);
    layer.unit.b_compose = DenseVector(5, 0.0);
    const MemoryState mem = make_memory(layer, 4, rng);
    const auto m1 = testutil::normal_batch(rng, 3, 2), m2 = testutil::normal_batch(rng, 3, 3);
    const LayerForward fwd = mbaf_forward(layer, mem, m1, m2);
    for (std::size_t n = 0; n < 3; ++n) CHECK(fwd.outputs[n] == concat(m1[n], m2[n]));
    // h = 0, so every row only decays by its mean key weight.
    std::vector<DenseVector> hs(3, DenseVector(5, 0.0)), zs;
    for (const auto& s : fwd.trace.unit.steps) zs.push_back(s.z);
    CHECK(fwd.memory.M == write_memory(mem, zs, hs).M);
  }

  TEST_CASE("single-mode traces have the width of one mode") {
    Rng rng(12);
    for (int mode : {1, 2}) {
      const FusionLayer layer = make_fusion_layer(FusionVariant::single_mode(mode), 3, 5, rng);
      const MemoryState mem = make_memory(layer, 4, rng);
      CHECK(mem.dim == (mode == 1 ? 3u : 5u));
      const auto m1 = testutil::normal_batch(rng, 2, 3), m2 = testutil::normal_batch(rng, 2, 5);
      const LayerForward fwd = mbaf_forward(layer, mem, m1, m2);
      for (const auto& step : fwd.trace.unit.steps) CHECK(step.x.size() == mem.dim);
      for (std::size_t n = 0; n < 2; ++n) {
        CHECK(fwd.outputs[n].size() == 8);
        // The other mode passes through untouched.
        if (mode == 1)
          for (std::size_t i = 0; i < 5; ++i) CHECK(fwd.outputs[n][3 + i] == m2[n][i]);
        else
          for (std::size_t i = 0; i < 3; ++i) CHECK(fwd.outputs[n][i] == m1[n][i]);
      }
    }
  }

  TEST_CASE("forward matches the straight-line oracle") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      for (bool ca : {false, true}) {
        const suites::OracleCase r = suites::oracle_case(seed, ca);
        CHECK_MESSAGE(r.max_diff < 1e-12, "seed ", seed, " worst ", r.worst);
      }
    }
    // Wider and deeper configurations within the oracle bounds.
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const suites::OracleCase r = suites::oracle_case(seed, seed % 2 == 0, 3, 5, 5, 4);
      CHECK_MESSAGE(r.max_diff < 1e-12, "seed ", seed, " worst ", r.worst);
    }
  }

  TEST_CASE("cross attention reduces to naive attention on symmetric inputs") {
    Rng rng(13);
    const MbafParams params = init_params(rng, 6);
    const MemoryState mem = memory_init(rng, 4, 6);
    const auto m = testutil::normal_batch(rng, 3, 3);
    const FusionLayer na{FusionVariant::naive_attention(), 3, 3, params, {}};
    const FusionLayer ca{FusionVariant::cross_attention(), 3, 3, params, {}};
    const LayerForward a = mbaf_forward(na, mem, m, m), b = mbaf_forward(ca, mem, m, m);
    for (std::size_t n = 0; n < 3; ++n) {
      const StepTrace &sa = a.trace.unit.steps[n], &sb = b.trace.unit.steps[n];
      CHECK(sa.query == sb.query);
      CHECK(sa.z == sb.z);
      CHECK(sa.b == sb.b);
      CHECK(sa.h == sb.h);
      CHECK(sa.o == sb.o);
    }
    CHECK(a.memory.M == b.memory.M);
  }

  TEST_CASE("output width matches concatenation") {
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
      std::string why;
      CHECK_MESSAGE(suites::shape_case(seed, why), why);
    }
  }

  TEST_CASE("backward degenerate cases") {
    Rng rng(14);
    const FusionLayer layer = make_fusion_layer(FusionVariant::naive_attention(), 2, 3, rng);
    const MemoryState mem = make_memory(layer, 4, rng);
    const auto m1 = testutil::normal_batch(rng, 3, 2), m2 = testutil::normal_batch(rng, 3, 3);
    const LayerForward fwd = mbaf_forward(layer, mem, m1, m2);
    const std::vector<DenseVector> zero(3, DenseVector(5, 0.0));
    LayerBackward bwd = mbaf_backward(layer, fwd.trace, mem, zero);
    for (auto& block : blocks(bwd.grads, layer))
      for (double g : block.values) CHECK(g == 0.0);
    for (const auto& g : bwd.grad_m1) CHECK(g == DenseVector(2, 0.0));

    // With the composer silenced only the identity path carries gradient.
    FusionLayer silent = layer;
    silent.unit.w_compose = DenseMatrix(10, 5, 0.0);
    silent.unit.b_compose = DenseVector(5, 0.0);
    const LayerForward sf = mbaf_forward(silent, mem, m1, m2);
    const auto go = testutil::normal_batch(rng, 3, 5);
    const LayerBackward sb = mbaf_backward(silent, sf.trace, mem, go);
    for (std::size_t n = 0; n < 3; ++n) {
      for (std::size_t i = 0; i < 2; ++i) CHECK(sb.grad_m1[n][i] == go[n][i]);
      for (std::size_t i = 0; i < 3; ++i) CHECK(sb.grad_m2[n][i] == go[n][2 + i]);
    }
  }

  TEST_CASE("naive fusion") {
    const std::vector<DenseVector> a{DenseVector{2, 3}}, b{DenseVector{5}};
    CHECK(naive_fusion(a, b)[0] == DenseVector{2, 3, 5});
    const std::vector<DenseVector> big1{DenseVector(2048)}, big2{DenseVector(4800)};
    CHECK(naive_fusion(big1, big2)[0].size() == 6848);

    Rng rng(15);
    const FusionLayer layer = make_fusion_layer(FusionVariant::naive(), 2, 1, rng);
    const MemoryState mem = make_memory(layer, 3, rng);
    const LayerForward fwd = mbaf_forward(layer, mem, a, b);
    CHECK(fwd.outputs[0] == DenseVector{2, 3, 5});
    const std::vector<DenseVector> go{DenseVector{7, 8, 9}};
    const LayerBackward bwd = mbaf_backward(layer, fwd.trace, mem, go);
    CHECK(bwd.grad_m1[0] == DenseVector{7, 8});
    CHECK(bwd.grad_m2[0] == DenseVector{9});
    CHECK_THROWS_AS(naive_fusion(a, std::vector<DenseVector>{}), ShapeError);
  }

  TEST_CASE("swap_concat") {
    CHECK(swap_concat(DenseVector{1}, DenseVector{2, 3}) == DenseVector{2, 3, 1});
    const DenseVector u{1, 2}, v{3, 4};
    CHECK(swap_concat(u, v) == concat(v, u));
    const DenseVector s = swap_concat(u, v);
    const DenseVector back = swap_concat(DenseVector{s[0], s[1]}, DenseVector{s[2], s[3]});
    CHECK(back == concat(u, v));
    CHECK_THROWS_AS(swap_concat(DenseVector{}, v), ShapeError);
  }

  TEST_CASE("resample_output") {
    Rng rng(16);
    const DenseVector o = rng_normal(rng, 4, 0.0, 1.0);
    CHECK(resample_output(o, DenseMatrix::identity(4)) == o);
    for (std::size_t d_out : {512u, 1024u, 2048u, 4096u, 8192u}) {
      const FusionLayer layer = make_fusion_layer(FusionVariant::resampled(d_out), 2, 2, rng);
      CHECK(layer.output_dim() == d_out);
      CHECK(resample_output(o, layer.projection).size() == d_out);
      CHECK(parse_variant("resampled:" + std::to_string(d_out)) == FusionVariant::resampled(d_out));
    }
    const DenseMatrix proj = rng_normal_matrix(rng, 4, 3, 0.0, 1.0);
    const DenseVector y = resample_output(o, proj);
    for (std::size_t j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < 4; ++i) acc += proj(i, j) * o[i];
      CHECK(std::abs(y[j] - acc) < 1e-14);
    }
    CHECK_THROWS_AS(resample_output(DenseVector{1, 2}, proj), ShapeError);
  }

  TEST_CASE("parameter counts") {
    CHECK(param_count_formula(512, 512, 32) == 3180544u);
    CHECK(param_count_formula(512, 512, 32) == 14628867u - 11448323u);
    CHECK(param_count_formula(1, 1, 1) == 18u);
    CHECK(param_count_formula(2048, 4800, 32) == 140918144u);
    CHECK(param_count_actual(zero_params(2)) == 18u);
    CHECK(param_count_actual(zero_params(1024)) == 3148800u);
    Rng rng(17);
    for (std::size_t d : {1u, 3u, 7u}) {
      MbafParams p = init_params(rng, d);
      std::uint64_t total = 0;
      for (const auto& b : blocks(p)) total += b.values.size();
      CHECK(param_count_actual(p) == total);
      CHECK(param_count_actual(p) == 3 * d * d + 3 * d);
    }
  }

  TEST_CASE("init bounds follow fan-in") {
    Rng rng(18);
    const MbafParams p = init_params(rng, 6);
    const double read = 1.0 / std::sqrt(6.0), comp = 1.0 / std::sqrt(12.0);
    for (double w : p.w_read.span()) CHECK(std::abs(w) <= read);
    for (double w : p.w_compose.span()) CHECK(std::abs(w) <= comp);
    for (double w : p.w_scale) CHECK(std::abs(w) <= 1.0);
  }

  TEST_CASE("variant text round trip") {
    for (const char* text : {"nf", "na", "ca", "single:1", "single:2", "resampled:7"})
      CHECK(to_string(parse_variant(text)) == text);
    CHECK_THROWS_AS(parse_variant("bogus"), ParamError);
    CHECK_THROWS_AS(parse_variant("single:3"), ParamError);
    CHECK_THROWS_AS(parse_variant("resampled:0"), ParamError);
  }
}
