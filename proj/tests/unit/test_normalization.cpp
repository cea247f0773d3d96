// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <vector>

#include "normprobe/norm.hpp"
#include "normprobe/ops.hpp"
#include "normprobe/rng.hpp"
#include "normprobe/verify.hpp"

using namespace normprobe;

namespace {

// Straightforward recomputation: for each element, gather its pooling set
// by predicate and normalize.
std::vector<double> naive_norm(const Tensor3d& z, NormVariant v, std::size_t groups, double eps,
                               const Tensor3d& gamma, const Tensor3d& beta) {
  const Shape3 sh = z.shape();
  const std::size_t g = v == NormVariant::Layer ? 1 : v == NormVariant::Instance ? sh.c : groups;
  auto same_set = [&](std::size_t n1, std::size_t c1, std::size_t n2, std::size_t c2) {
    if (v == NormVariant::Batch) return c1 == c2;
    return n1 == n2 && c1 / (sh.c / g) == c2 / (sh.c / g);
  };
  std::vector<double> out(z.size());
  for (std::size_t n = 0; n < sh.n; ++n) {
    for (std::size_t c = 0; c < sh.c; ++c) {
      double m = 0.0, cnt = 0.0;
      for (std::size_t n2 = 0; n2 < sh.n; ++n2)
        for (std::size_t c2 = 0; c2 < sh.c; ++c2)
          if (same_set(n, c, n2, c2))
            for (std::size_t s = 0; s < sh.s; ++s) {
              m += z(n2, c2, s);
              cnt += 1.0;
            }
      m /= cnt;
      double var = 0.0;
      for (std::size_t n2 = 0; n2 < sh.n; ++n2)
        for (std::size_t c2 = 0; c2 < sh.c; ++c2)
          if (same_set(n, c, n2, c2))
            for (std::size_t s = 0; s < sh.s; ++s) var += (z(n2, c2, s) - m) * (z(n2, c2, s) - m);
      var /= cnt;
      for (std::size_t s = 0; s < sh.s; ++s) {
        out[(n * sh.c + c) * sh.s + s] = gamma[c] * (z(n, c, s) - m) / std::sqrt(var + eps) + beta[c];
      }
    }
  }
  return out;
}

template <typename T>
Tensor3<T> apply(const Tensor3<T>& z, NormSpec<T>& spec, bool training) {
  Tape<T> tape;
  return tape.value(norm_forward(tape, tape.constant(z), spec, training)).detached();
}

}  // namespace

TEST_CASE("instance norm hand example") {
  auto spec = NormSpec<double>::make(NormVariant::Instance, 1, 1, 1e-12);
  const Tensor3d y = apply(Tensor3d(Shape3{1, 1, 3}, {1, 2, 3}), spec, true);
  CHECK(y[0] == doctest::Approx(-1.22474).epsilon(1e-5));
  CHECK(y[1] == doctest::Approx(0.0));
  CHECK(y[2] == doctest::Approx(1.22474).epsilon(1e-5));

  auto dflt = NormSpec<double>::make(NormVariant::Instance, 1);
  CHECK(dflt.epsilon == 1e-5);
  const Tensor3d yd = apply(Tensor3d(Shape3{1, 1, 3}, {1, 2, 3}), dflt, true);
  CHECK(std::abs(yd[0] + 1.22474) < 1e-5);
}

TEST_CASE("constant input maps to beta for every variant") {
  for (NormVariant v : {NormVariant::Batch, NormVariant::Layer, NormVariant::Instance, NormVariant::Group}) {
    auto spec = NormSpec<float>::make(v, 1);
    spec.beta[0] = 0.25f;
    const Tensor3f y = apply(Tensor3f(Shape3{1, 1, 3}, 5.0f), spec, true);
    for (float e : y.storage()) CHECK(e == 0.25f);
  }
}

TEST_CASE("every variant matches the naive oracle") {
  Rng rng(17);
  for (NormVariant v : {NormVariant::Batch, NormVariant::Layer, NormVariant::Instance, NormVariant::Group}) {
    const Shape3 sh{3, 6, 7};
    const std::size_t groups = v == NormVariant::Group ? 3 : 1;
    auto spec = NormSpec<double>::make(v, sh.c, groups);
    spec.gamma = uniform<double>(rng, Shape3{sh.c, 1, 1}, 0.5, 1.5);
    spec.beta = gaussian<double>(rng, Shape3{sh.c, 1, 1});
    const Tensor3d z = gaussian<double>(rng, sh);
    const Tensor3d y = apply(z, spec, true);
    const auto expect = naive_norm(z, v, groups, spec.epsilon, spec.gamma, spec.beta);
    INFO(to_string(v));
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(expect[i]).epsilon(1e-10));
  }
}

TEST_CASE("group norm endpoints are layer and instance norm bit for bit") {
  Rng rng(23);
  const Shape3 sh{2, 8, 13};
  const Tensor3f z = gaussian<float>(rng, sh);
  auto layer = NormSpec<float>::make(NormVariant::Layer, sh.c);
  auto inst = NormSpec<float>::make(NormVariant::Instance, sh.c);
  auto g1 = NormSpec<float>::make(NormVariant::Group, sh.c, 1);
  auto gc = NormSpec<float>::make(NormVariant::Group, sh.c, sh.c);
  CHECK(apply(z, g1, true).storage() == apply(z, layer, true).storage());
  CHECK(apply(z, gc, true).storage() == apply(z, inst, true).storage());
}

TEST_CASE("spec validation") {
  CHECK_THROWS_AS(NormSpec<float>::make(NormVariant::Group, 6, 4), ShapeError);
  auto ok = NormSpec<float>::make(NormVariant::Group, 6, 3);
  CHECK_NOTHROW(ok.validate(6));
  CHECK_THROWS_AS(ok.validate(8), ShapeError);
  auto eps = NormSpec<float>::make(NormVariant::Instance, 2);
  eps.epsilon = 0.0;
  CHECK_THROWS(apply(Tensor3f(Shape3{1, 2, 3}), eps, true));
  Tensor3f wrong(Shape3{1, 8, 3});
  CHECK_THROWS(apply(wrong, ok, true));
  CHECK(parse_norm_variant("group") == NormVariant::Group);
  CHECK_FALSE(parse_norm_variant("weight").has_value());
}

TEST_CASE("batch norm running statistics") {
  Rng rng(4);
  const Shape3 sh{4, 2, 5};
  auto spec = NormSpec<float>::make(NormVariant::Batch, sh.c);

  SUBCASE("population mode before any update is rejected") {
    spec.stats_mode = StatsMode::Population;
    CHECK_THROWS_AS(apply(gaussian<float>(rng, sh), spec, false), std::logic_error);
  }
  SUBCASE("one training call applies the EMA exactly") {
    const Tensor3f z = gaussian<float>(rng, sh);
    apply(z, spec, true);
    CHECK(spec.ema_updates == 1);
    for (std::size_t c = 0; c < sh.c; ++c) {
      double m = 0.0;
      for (std::size_t n = 0; n < sh.n; ++n)
        for (std::size_t s = 0; s < sh.s; ++s) m += z(n, c, s);
      m /= 20.0;
      CHECK(spec.running_mean[c] == static_cast<float>(0.9 * 0.0 + 0.1 * m));
    }
  }
  SUBCASE("inference does not touch the running statistics") {
    apply(gaussian<float>(rng, sh), spec, true);
    const auto before = spec.running_mean.storage();
    apply(gaussian<float>(rng, sh), spec, false);
    spec.stats_mode = StatsMode::Population;
    apply(gaussian<float>(rng, sh), spec, false);
    CHECK(spec.running_mean.storage() == before);
    CHECK(spec.ema_updates == 1);
  }
  SUBCASE("population mode is a per-channel affine map") {
    apply(gaussian<float>(rng, sh), spec, true);
    spec.stats_mode = StatsMode::Population;
    const Tensor3f z1 = gaussian<float>(rng, sh);
    const Tensor3f z2 = gaussian<float>(rng, sh);
    const float a = 0.3f, b = 1.9f;
    Tensor3f mix(sh);
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * z1[i] + b * z2[i];
    const Tensor3f y = apply(mix, spec, false);
    const Tensor3f y1 = apply(z1, spec, false);
    const Tensor3f y2 = apply(z2, spec, false);
    const Tensor3f y0 = apply(Tensor3f(sh), spec, false);  // the affine offset
    for (std::size_t i = 0; i < y.size(); ++i) {
      CHECK(y[i] == doctest::Approx(a * y1[i] + b * y2[i] - (a + b - 1) * y0[i]).epsilon(1e-5));
    }
  }
}

TEST_CASE("library normalization checks, including cross-position gradients") {
  for (const auto& r : verify_normalization({})) {
    INFO(r.name << " " << r.detail);
    CHECK(r.passed);
  }
}

TEST_CASE("pre-affine statistics for pooled variants") {
  Rng rng(31);
  for (NormVariant v : {NormVariant::Layer, NormVariant::Instance, NormVariant::Group}) {
    const Shape3 sh{2, 4, 16};
    auto spec = NormSpec<double>::make(v, sh.c, 2);
    spec.gamma = uniform<double>(rng, Shape3{sh.c, 1, 1}, 0.5, 2.0);
    spec.beta = gaussian<double>(rng, Shape3{sh.c, 1, 1});
    Tensor3d z = gaussian<double>(rng, sh);
    for (auto& e : z.storage()) e = 0.01 * e;  // small variance makes eps visible
    const Tensor3d y = apply(z, spec, true);
    const std::size_t g = spec.effective_groups();
    const std::size_t k = sh.c / g;
    for (std::size_t n = 0; n < sh.n; ++n) {
      for (std::size_t gi = 0; gi < g; ++gi) {
        double zm = 0.0, pm = 0.0;
        const double cnt = static_cast<double>(k * sh.s);
        for (std::size_t c = gi * k; c < (gi + 1) * k; ++c)
          for (std::size_t s = 0; s < sh.s; ++s) {
            zm += z(n, c, s);
            pm += (y(n, c, s) - spec.beta[c]) / spec.gamma[c];
          }
        zm /= cnt;
        pm /= cnt;
        double zv = 0.0, pv = 0.0;
        for (std::size_t c = gi * k; c < (gi + 1) * k; ++c)
          for (std::size_t s = 0; s < sh.s; ++s) {
            const double p = (y(n, c, s) - spec.beta[c]) / spec.gamma[c];
            zv += (z(n, c, s) - zm) * (z(n, c, s) - zm);
            pv += (p - pm) * (p - pm);
          }
        zv /= cnt;
        pv /= cnt;
        CHECK(std::abs(pm) < 1e-5);
        CHECK(std::abs(pv - zv / (zv + spec.epsilon)) < 1e-5);
        CHECK(pv < 0.99);  // eps is inside the square root
      }
    }
  }
}

TEST_CASE("packnorm") {
  Rng rng(8);
  const Shape3 sh{2, 3, 5};
  auto spec = NormSpec<float>::make(NormVariant::Instance, sh.c);
  spec.gamma = uniform<float>(rng, Shape3{sh.c, 1, 1}, 0.5, 1.5);
  spec.beta = gaussian<float>(rng, Shape3{sh.c, 1, 1});
  const Tensor3f a = gaussian<float>(rng, sh);
  const Tensor3f b = gaussian<float>(rng, sh);

  SUBCASE("identical inputs reduce to instance norm") {
    Tape<float> tape;
    auto [u, v] = packnorm_forward(tape, tape.constant(a), tape.constant(a), spec);
    const Tensor3f plain = apply(a, spec, true);
    for (std::size_t i = 0; i < plain.size(); ++i) {
      CHECK(tape.value(u)[i] == doctest::Approx(plain[i]).epsilon(1e-6));
      CHECK(tape.value(v)[i] == tape.value(u)[i]);
    }
  }
  SUBCASE("swapping arguments swaps outputs") {
    Tape<float> tape;
    auto [p, q] = packnorm_forward(tape, tape.constant(a), tape.constant(b), spec);
    auto [q2, p2] = packnorm_forward(tape, tape.constant(b), tape.constant(a), spec);
    CHECK(tape.value(p).storage() == tape.value(p2).storage());
    CHECK(tape.value(q).storage() == tape.value(q2).storage());
  }
  SUBCASE("joint statistics over the doubled sequence") {
    auto unit = NormSpec<double>::make(NormVariant::Instance, sh.c);
    const Tensor3d ad = a.cast<double>(), bd = b.cast<double>();
    Tape<double> tape;
    auto [p, q] = packnorm_forward(tape, tape.constant(ad), tape.constant(bd), unit);
    for (std::size_t n = 0; n < sh.n; ++n) {
      for (std::size_t c = 0; c < sh.c; ++c) {
        double m = 0.0, var = 0.0, zm = 0.0, zv = 0.0;
        for (std::size_t s = 0; s < sh.s; ++s) {
          m += tape.value(p)(n, c, s) + tape.value(q)(n, c, s);
          zm += ad(n, c, s) + bd(n, c, s);
        }
        m /= 2.0 * sh.s;
        zm /= 2.0 * sh.s;
        for (std::size_t s = 0; s < sh.s; ++s) {
          var += std::pow(tape.value(p)(n, c, s) - m, 2) + std::pow(tape.value(q)(n, c, s) - m, 2);
          zv += std::pow(ad(n, c, s) - zm, 2) + std::pow(bd(n, c, s) - zm, 2);
        }
        var /= 2.0 * sh.s;
        zv /= 2.0 * sh.s;
        CHECK(std::abs(m) < 1e-12);
        CHECK(var == doctest::Approx(zv / (zv + unit.epsilon)).epsilon(1e-10));
      }
    }
  }
  SUBCASE("stacked form equals the pair form") {
    Tape<float> tape;
    auto [p, q] = packnorm_forward(tape, tape.constant(a), tape.constant(b), spec);
    const Var st = packnorm_stacked(tape, concat_batch(tape, tape.constant(a), tape.constant(b)), spec);
    auto [p2, q2] = split_batch(tape, st);
    CHECK(tape.value(p).storage() == tape.value(p2).storage());
    CHECK(tape.value(q).storage() == tape.value(q2).storage());
  }
  SUBCASE("mismatched shapes are rejected") {
    Tape<float> tape;
    CHECK_THROWS_AS(packnorm_forward(tape, tape.constant(a), tape.constant(Tensor3f(Shape3{2, 3, 6})), spec),
                    ShapeError);
  }
}
