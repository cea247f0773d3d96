// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "normprobe/ops.hpp"
#include "normprobe/training.hpp"

using namespace normprobe;

namespace {

ModelConfig tiny(std::optional<NormVariant> norm = std::nullopt) {
  ModelConfig mc;
  mc.length = 24;
  mc.depth = 4;
  mc.kernel = 3;
  mc.hidden = 8;
  mc.norm = norm;
  return mc;
}

std::vector<std::vector<float>> snapshot(LocCnn& model) {
  std::vector<std::vector<float>> out;
  for (auto* p : model.parameters()) out.push_back(p->storage());
  return out;
}

// Gradient of the mean loss over `x` when fed as `chunks` equal micro-batches
// scaled by 1 / chunks, the way the training loop accumulates.
std::vector<float> accumulated_gradient(LocCnn& model, const Tensor3f& x, std::size_t chunks) {
  const auto params = model.parameters();
  for (auto* p : params) p->zero_grad();
  const Shape3 sh = x.shape();
  const std::size_t b = sh.n / chunks;
  const Tensor3f y = target_sequence(sh.s);
  for (std::size_t c = 0; c < chunks; ++c) {
    Tensor3f part(Shape3{b, 1, sh.s});
    Tensor3f target(Shape3{b, 1, sh.s});
    for (std::size_t n = 0; n < b; ++n) {
      for (std::size_t j = 0; j < sh.s; ++j) {
        part(n, 0, j) = x(c * b + n, 0, j);
        target(n, 0, j) = y[j];
      }
    }
    Tape<float> tape;
    const auto out = model.forward(tape, tape.constant(std::move(part)), true);
    const Var loss = mse(tape, out.prediction, tape.constant(std::move(target)));
    tape.backward(scale(tape, loss, 1.0f / static_cast<float>(chunks)));
  }
  std::vector<float> all;
  for (auto* p : params) all.insert(all.end(), p->grad().begin(), p->grad().end());
  return all;
}

}  // namespace

TEST_CASE("mse examples") {
  const Tensor3f a(Shape3{1, 1, 2}, {0, 0});
  CHECK(mse(a, a) == 0.0);
  CHECK(mse(a, Tensor3f(Shape3{1, 1, 2}, {-1, 1})) == 1.0);
  CHECK(mse(Tensor3f(Shape3{1, 1, 3}, 1.0f), Tensor3f(Shape3{1, 1, 3}, 0.0f)) == 1.0);
  CHECK_THROWS_AS(mse(a, Tensor3f(Shape3{1, 1, 3})), ShapeError);

  Tape<float> tape;
  const Var l = mse(tape, tape.constant(a), tape.constant(Tensor3f(Shape3{1, 1, 2}, {-1, 1})));
  CHECK(tape.value(l)[0] == 1.0f);
  CHECK_THROWS(mse(tape, tape.constant(a), tape.constant(Tensor3f(Shape3{2, 1, 1}))));
}

TEST_CASE("train config validation") {
  TrainConfig tc;
  CHECK(tc.learning_rate == 1e-4);
  CHECK(tc.batch_size == 16);
  CHECK_NOTHROW(tc.validate());
  tc.grad_accumulation_steps = 8;
  tc.batch_size = 4;
  CHECK(tc.effective_batch() == 32);
  tc.batch_size = 0;
  CHECK_THROWS(tc.validate());
  tc = {};
  tc.learning_rate = 0.0;
  CHECK_THROWS(tc.validate());
}

TEST_CASE("loss trace iterations strictly increase") {
  LossTrace t;
  t.add(1, 0.5);
  t.add(5, 0.4);
  CHECK_THROWS(t.add(5, 0.3));
  CHECK_THROWS(t.add(2, 0.3));
  CHECK(t.points().size() == 2);
  CHECK(t.last() == 0.4);
}

TEST_CASE("zero iterations leave the model unchanged") {
  TrainConfig tc;
  tc.iterations = 0;
  tc.seed = 3;
  auto run = train_localization(tiny(), tc);
  Rng init = stream_rng(3, Stream::Init);
  LocCnn fresh(tiny(), init);
  CHECK(snapshot(run.model) == snapshot(fresh));
  CHECK(run.trace.empty());
  CHECK(run.optimizer.step == 0);
}

TEST_CASE("training is deterministic for a fixed seed") {
  TrainConfig tc;
  tc.iterations = 15;
  tc.batch_size = 4;
  tc.learning_rate = 1e-3;
  tc.eval_interval = 5;
  tc.seed = 21;
  auto a = train_localization(tiny(NormVariant::Instance), tc);
  auto b = train_localization(tiny(NormVariant::Instance), tc);
  CHECK(snapshot(a.model) == snapshot(b.model));
  CHECK(a.trace.points() == b.trace.points());
  CHECK(a.trace.points().size() == 3);
  tc.seed = 22;
  auto c = train_localization(tiny(NormVariant::Instance), tc);
  CHECK(snapshot(a.model) != snapshot(c.model));
}

TEST_CASE("gradient accumulation matches one large batch without batch statistics") {
  Rng rng(12);
  LocCnn model(tiny(NormVariant::Instance), rng);
  const Tensor3f x = gaussian<float>(rng, Shape3{8, 1, 24});
  const auto whole = accumulated_gradient(model, x, 1);
  const auto parts = accumulated_gradient(model, x, 4);
  REQUIRE(whole.size() == parts.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < whole.size(); ++i) worst = std::max(worst, static_cast<double>(std::abs(whole[i] - parts[i])));
  CHECK(worst < 1e-5);

  Rng rng2(12);
  LocCnn plain(tiny(), rng2);
  const auto w2 = accumulated_gradient(plain, x, 1);
  const auto p2 = accumulated_gradient(plain, x, 2);
  worst = 0.0;
  for (std::size_t i = 0; i < w2.size(); ++i) worst = std::max(worst, static_cast<double>(std::abs(w2[i] - p2[i])));
  CHECK(worst < 1e-5);
}

TEST_CASE("gradient accumulation differs under batch norm") {
  Rng rng(13);
  LocCnn model(tiny(NormVariant::Batch), rng);
  const Tensor3f x = gaussian<float>(rng, Shape3{8, 1, 24});
  const auto whole = accumulated_gradient(model, x, 1);
  const auto parts = accumulated_gradient(model, x, 4);
  double worst = 0.0;
  for (std::size_t i = 0; i < whole.size(); ++i) worst = std::max(worst, static_cast<double>(std::abs(whole[i] - parts[i])));
  CHECK(worst > 1e-4);
}

TEST_CASE("non-finite loss aborts training") {
  TrainConfig tc;
  tc.iterations = 3;
  tc.batch_size = 2;
  Rng init = stream_rng(tc.seed, Stream::Init);
  LocCnn model(tiny(), init);
  model.convs()[0].weight[0] = std::numeric_limits<float>::quiet_NaN();
  LocalizationRun run{std::move(model), AdamState<float>(tc.adam(), {}), {}};
  run.optimizer = AdamState<float>(tc.adam(), run.model.parameters());
  Rng data(1);
  CHECK_THROWS_AS(continue_localization(run, tc, data, 3), NonFiniteError);
}

TEST_CASE("short runs learn the boundaries") {
  TrainConfig tc;
  tc.iterations = 300;
  tc.batch_size = 8;
  tc.learning_rate = 3e-3;
  tc.eval_interval = 50;
  const auto plain = train_localization(tiny(), tc);
  const Tensor3f y = target_sequence(24);
  double var_y = 0.0;
  for (float v : y.storage()) var_y += v * v;
  var_y /= 24.0;
  CHECK(var_y == doctest::Approx((24.0 + 1.0) / (12.0 * 23.0)));
  CHECK(plain.trace.last() < var_y);
}

TEST_CASE("probe training leaves the network untouched") {
  Rng rng(14);
  LocCnn model(tiny(NormVariant::Instance), rng);
  const auto before = snapshot(model);
  ProbeConfig pc;
  pc.iterations = 20;
  pc.batch_size = 4;
  pc.width = 16;
  Rng probe_rng(15);
  std::size_t calls = 0;
  const auto probes = train_probes(model, pc, 2, probe_rng, [&](std::size_t, double loss) {
    ++calls;
    CHECK(std::isfinite(loss));
  });
  CHECK(probes.size() == 3);
  CHECK(calls == 20);
  CHECK(snapshot(model) == before);
  for (std::size_t i = 0; i < probes.size(); ++i) CHECK(probes[i].depth_index() == i + 1);
  CHECK_THROWS(train_probes(model, pc, 3, probe_rng));
}

TEST_CASE("overlap training preconditions") {
  ModelConfig mc;
  mc.depth = 3;
  mc.kernel = 3;
  mc.hidden = 4;
  mc.length = 7;
  mc.norm = NormVariant::Instance;
  TrainConfig tc;
  tc.iterations = 2;
  tc.batch_size = 2;
  CHECK_THROWS(train_overlap(mc, tc, 0));  // padded
  mc.padding = PaddingMode::None;
  CHECK_THROWS(train_overlap(mc, tc, 7));  // overlap must be below the length
  const auto run = train_overlap(mc, tc, 3, 64);
  CHECK(std::isfinite(run.final_eval_mse));
  CHECK(run.trace.points().size() == 1);
}
