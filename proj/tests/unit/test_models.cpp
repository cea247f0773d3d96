// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <vector>

#include "normprobe/models.hpp"
#include "normprobe/ops.hpp"
#include "normprobe/training.hpp"
#include "normprobe/verify.hpp"

using namespace normprobe;

namespace {

ModelConfig small_config(std::optional<NormVariant> norm = std::nullopt) {
  ModelConfig mc;
  mc.length = 48;
  mc.depth = 4;
  mc.kernel = 5;
  mc.hidden = 6;
  mc.norm = norm;
  return mc;
}

ModelConfig overlap_config() {
  ModelConfig mc;
  mc.depth = 3;
  mc.kernel = 3;
  mc.hidden = 4;
  mc.length = 1 + 2 * receptive_field(mc.depth, mc.kernel);
  mc.padding = PaddingMode::None;
  mc.norm = NormVariant::Instance;
  return mc;
}

std::vector<float> input_gradient(LocCnn& model, const Tensor3f& x, std::size_t out_index) {
  Tensor3f in = x.detached();
  in.set_requires_grad(true);
  Tape<float> tape;
  const Var pred = model.forward(tape, tape.leaf(in), false).prediction;
  Tensor3f onehot(tape.shape(pred));
  onehot[out_index] = 1.0f;
  tape.backward(dot(tape, pred, tape.constant(std::move(onehot))));
  return {in.grad().begin(), in.grad().end()};
}

}  // namespace

TEST_CASE("receptive field arithmetic") {
  CHECK(receptive_field(32, 5) == 64);
  CHECK(receptive_field(1, 3) == 1);
  CHECK(receptive_field(12, 5) == 24);
  CHECK(receptive_field(10, 5) == 20);
  CHECK(single_hop_reach(32, 5) == 192);
  CHECK(single_hop_reach(1, 3) == 3);
  CHECK(single_hop_reach(12, 5) == 72);
  CHECK_THROWS(receptive_field(4, 4));
  CHECK_THROWS(single_hop_reach(4, 2));
  CHECK_THROWS(receptive_field(0, 3));
}

TEST_CASE("model config validation") {
  ModelConfig mc = small_config();
  CHECK_NOTHROW(mc.validate());
  mc.kernel = 4;
  CHECK_THROWS(mc.validate());
  mc = small_config();
  mc.depth = 1;
  CHECK_THROWS(mc.validate());
  mc = overlap_config();
  CHECK_NOTHROW(mc.validate());
  mc.length += 2;
  CHECK_THROWS(mc.validate());
  mc = small_config(NormVariant::Group);
  mc.groups = 4;
  CHECK_THROWS(mc.validate());
  mc.groups = 3;
  CHECK_NOTHROW(mc.validate());
}

TEST_CASE("layer layout and parameter names") {
  Rng rng(1);
  LocCnn model(small_config(NormVariant::Instance), rng);
  CHECK(model.convs().size() == 4);
  CHECK(model.norms().size() == 2);
  const auto named = model.named_parameters();
  CHECK(named.size() == 4 * 2 + 2 * 2);
  CHECK(named.front().first == "conv0.weight");
  CHECK(named.front().second->shape() == Shape3{6, 1, 5});
  CHECK(model.convs().back().weight.shape() == Shape3{1, 6, 5});
  const double bound = std::sqrt(1.0 / (6.0 * 5.0));
  for (float w : model.convs()[1].weight.storage()) CHECK(std::abs(w) <= bound);
  for (float b : model.convs()[1].bias.storage()) CHECK(b == 0.0f);

  Rng plain_rng(1);
  LocCnn plain(small_config(), plain_rng);
  CHECK(plain.norms().empty());
}

TEST_CASE("zero weights give the output bias everywhere") {
  Rng rng(2);
  LocCnn model(small_config(), rng);
  for (auto& c : model.convs()) {
    for (auto& w : c.weight.storage()) w = 0.0f;
  }
  model.convs().back().bias[0] = 0.75f;
  Rng data(3);
  const auto [pred, acts] = infer(model, gaussian<float>(data, Shape3{3, 1, 48}), false);
  for (float v : pred.storage()) CHECK(v == 0.75f);
  CHECK(acts.empty());
}

TEST_CASE("activation capture") {
  Rng rng(4);
  LocCnn model(small_config(NormVariant::Instance), rng);
  Rng data(5);
  const Tensor3f x = gaussian<float>(data, Shape3{2, 1, 48});
  const auto [pred, acts] = infer(model, x, true);
  REQUIRE(acts.size() == 3);
  for (const auto& a : acts) CHECK(a.shape() == Shape3{2, 6, 48});
  // z1 is the raw input convolution; later captures have passed a ReLU.
  bool negative = false;
  for (float v : acts[0].storage()) negative = negative || v < 0.0f;
  CHECK(negative);
  for (float v : acts[2].storage()) CHECK(v >= 0.0f);
  CHECK(pred.shape() == Shape3{2, 1, 48});

  Tape<float> tape;
  CHECK_THROWS(model.forward(tape, tape.constant(Tensor3f(Shape3{1, 1, 47})), false));
}

TEST_CASE("norm-free network is translation equivariant in the interior") {
  const ModelConfig mc = small_config();
  const std::size_t r = receptive_field(mc.depth, mc.kernel);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    LocCnn model(mc, rng);
    for (auto& c : model.convs()) {
      for (auto& b : c.bias.storage()) b = static_cast<float>(0.1 * rng.normal());
    }
    const Tensor3f x = gaussian<float>(rng, Shape3{1, 1, mc.length});
    for (std::size_t shift : {1, 4, 9}) {
      Tensor3f xs = gaussian<float>(rng, x.shape());
      for (std::size_t j = 0; j + shift < mc.length; ++j) xs[j + shift] = x[j];
      const Tensor3f f = infer(model, x, false).first;
      const Tensor3f fs = infer(model, xs, false).first;
      for (std::size_t i = r; i + shift + r < mc.length; ++i) CHECK(std::abs(fs[i + shift] - f[i]) <= 1e-4);
    }
  }
}

TEST_CASE("norm-free Jacobian vanishes beyond the receptive field") {
  const ModelConfig mc = small_config();
  const std::size_t r = receptive_field(mc.depth, mc.kernel);
  Rng rng(6);
  LocCnn model(mc, rng);
  const Tensor3f x = gaussian<float>(rng, Shape3{1, 1, mc.length});
  for (std::size_t i : {0, 5, 20, 47}) {
    const auto g = input_gradient(model, x, i);
    for (std::size_t j = 0; j < mc.length; ++j) {
      if ((i > j ? i - j : j - i) > r) CHECK(g[j] == 0.0f);
    }
  }
}

TEST_CASE("spatial normalization opens a side channel") {
  for (NormVariant v : {NormVariant::Instance, NormVariant::Layer, NormVariant::Group}) {
    ModelConfig mc = small_config(v);
    mc.groups = 2;
    const std::size_t r = receptive_field(mc.depth, mc.kernel);
    Rng rng(7);
    LocCnn model(mc, rng);
    const Tensor3f x = gaussian<float>(rng, Shape3{1, 1, mc.length});
    const auto g = input_gradient(model, x, 0);
    double far = 0.0;
    for (std::size_t j = r + 1; j < mc.length; ++j) far = std::max(far, static_cast<double>(std::abs(g[j])));
    INFO(to_string(v));
    CHECK(far > 0.0);
  }
}

TEST_CASE("overlap network symmetry") {
  const ModelConfig mc = overlap_config();
  Rng rng(8);
  LocCnn model(mc, rng);
  const Tensor3f x = gaussian<float>(rng, Shape3{3, 1, mc.length});
  const Tensor3f xt = gaussian<float>(rng, Shape3{3, 1, mc.length});
  Tape<float> tape;
  const Var ab = model.forward_overlap(tape, tape.constant(x), tape.constant(xt));
  const Var ba = model.forward_overlap(tape, tape.constant(xt), tape.constant(x));
  const Var aa = model.forward_overlap(tape, tape.constant(x), tape.constant(x));
  CHECK(tape.shape(ab) == Shape3{3, 1, 2});
  for (std::size_t n = 0; n < 3; ++n) {
    CHECK(tape.value(ab)(n, 0, 0) == tape.value(ba)(n, 0, 1));
    CHECK(tape.value(ab)(n, 0, 1) == tape.value(ba)(n, 0, 0));
    CHECK(tape.value(aa)(n, 0, 0) == tape.value(aa)(n, 0, 1));
  }

  Rng rng2(8);
  LocCnn padded(small_config(NormVariant::Instance), rng2);
  const Tensor3f y = gaussian<float>(rng, Shape3{1, 1, 48});
  CHECK_THROWS(padded.forward_overlap(tape, tape.constant(y), tape.constant(y)));
  CHECK_THROWS(model.forward_overlap(tape, tape.constant(Tensor3f(Shape3{1, 1, mc.length + 2})),
                                     tape.constant(Tensor3f(Shape3{1, 1, mc.length + 2}))));
}

TEST_CASE("overlap pairs") {
  Rng rng(9);
  SUBCASE("full overlap copies the sequence") {
    auto [x, xt] = make_overlap_pair(rng, 7, 7);
    CHECK(x.storage() == xt.storage());
  }
  SUBCASE("index arithmetic for o = 3, length 5") {
    auto [x, xt] = make_overlap_pair(rng, 5, 3);
    CHECK(xt[0] == x[2]);
    CHECK(xt[1] == x[3]);
    CHECK(xt[2] == x[4]);
    CHECK(xt[3] != x[0]);
  }
  SUBCASE("overlap beyond the length is rejected") { CHECK_THROWS(make_overlap_pair(rng, 5, 6)); }
  SUBCASE("batches share the overlap row by row") {
    auto [x, xt] = make_overlap_batch(rng, 4, 9, 5);
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 5; ++i) CHECK(xt(n, 0, i) == x(n, 0, 9 - 5 + i));
  }
  SUBCASE("zero overlap draws uncorrelated sequences") {
    auto [x, xt] = make_overlap_batch(rng, 20000, 5, 0);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      sxy += x[i] * xt[i];
      sxx += x[i] * x[i];
      syy += xt[i] * xt[i];
    }
    CHECK(std::abs(sxy / std::sqrt(sxx * syy)) < 0.01);
  }
}

TEST_CASE("target sequence") {
  const Tensor3f y3 = target_sequence(3);
  CHECK(y3.storage() == std::vector<float>{-0.5f, 0.0f, 0.5f});
  for (std::size_t len : {2, 7, 200, 600}) {
    const Tensor3f y = target_sequence(len);
    CHECK(y[0] == -0.5f);
    CHECK(y[len - 1] == 0.5f);
  }
  CHECK(target_sequence(600)[64] == doctest::Approx(64.0 / 599.0 - 0.5));
  CHECK(target_sequence(600)[64] == doctest::Approx(-0.39316).epsilon(1e-4));
  CHECK_THROWS(target_sequence(1));
}

TEST_CASE("probe") {
  Rng rng(10);
  Probe probe(4, 8, 2, rng);
  CHECK(probe.depth_index() == 2);
  CHECK(probe.named_parameters().size() == 6);
  CHECK_THROWS_AS(probe.evaluate(std::vector<float>(3)), ShapeError);

  SUBCASE("zero weights give zero") {
    for (auto* p : probe.parameters()) {
      for (auto& v : p->storage()) v = 0.0f;
    }
    CHECK(probe.evaluate(std::vector<float>{1, 2, 3, 4}) == 0.0f);
  }
  SUBCASE("a single positive path responds linearly") {
    for (auto* p : probe.parameters()) {
      for (auto& v : p->storage()) v = 0.0f;
    }
    auto params = probe.named_parameters();
    params[0].second->operator()(0, 0, 0) = 1.0f;  // fc0: hidden 0 <- input 0
    params[2].second->operator()(0, 0, 0) = 1.0f;  // fc1: hidden 0 <- hidden 0
    params[4].second->operator()(0, 0, 0) = 2.0f;  // fc2: out <- hidden 0
    CHECK(probe.evaluate(std::vector<float>{1.5f, 9, 9, 9}) == 3.0f);
    CHECK(probe.evaluate(std::vector<float>{3.0f, -9, 0, 1}) == 6.0f);
  }
  SUBCASE("rows and columns agree") {
    Rng data(11);
    const Tensor3f act = gaussian<float>(data, Shape3{2, 4, 5});
    const Tensor3f rows = columns_to_rows(act);
    CHECK(rows.shape() == Shape3{10, 4, 1});
    Tape<float> tape;
    const Var out = probe.forward(tape, tape.constant(rows));
    for (std::size_t n = 0; n < 2; ++n) {
      for (std::size_t j = 0; j < 5; ++j) {
        std::vector<float> col(4);
        for (std::size_t c = 0; c < 4; ++c) col[c] = act(n, c, j);
        CHECK(tape.value(out)[n * 5 + j] == doctest::Approx(probe.evaluate(col)));
      }
    }
  }
}

TEST_CASE("library locality checks") {
  VerifyOptions opts;
  opts.locality_seeds = 3;
  for (const auto& r : verify_locality(opts)) {
    INFO(r.name << " " << r.detail);
    CHECK(r.passed);
  }
}
