#include <doctest.h>

#include <cmath>

#include "scmse/diff/store.hpp"
#include "scmse/rng.hpp"
#include "scmse/scm.hpp"

using namespace scmse;

TEST_CASE("warp identity branch and knee") {
  CHECK(scm::warp_frequency(2500.0) == 2500.0);
  CHECK(scm::warp_frequency(0.0) == 0.0);
  // both branches agree at the knee: upper branch evaluated directly
  const double upper_at_knee = 2500.0 * (std::log((5000.0 - 2500.0) / 2500.0) + 2.0);
  CHECK(std::abs(upper_at_knee - 5000.0) < 1e-9);
  CHECK(std::abs(scm::warp_frequency(5000.0) - 5000.0) < 1e-9);
}

TEST_CASE("warp at 24 kHz matches the closed form") {
  const double expected = 2500.0 * (std::log(21500.0 / 2500.0) + 2.0);
  CHECK(std::abs(scm::warp_frequency(24000.0) - expected) < 1e-9);
  CHECK(expected == doctest::Approx(10379.4).epsilon(1e-4));
}

TEST_CASE("warp is continuous with matching slopes at the knee") {
  for (double delta : {1.0, 0.1, 0.01}) {
    const double below = scm::warp_frequency(5000.0 - delta);
    const double above = scm::warp_frequency(5000.0 + delta);
    CHECK(std::abs(above - below) <= 2.0 * delta * (1.0 + 1e-9));
  }
  // analytic slope of the upper branch at the knee is a/(f-a) = 1
  const double h = 1e-6;
  const double slope_up = (scm::warp_frequency(5000.0 + h) - scm::warp_frequency(5000.0)) / h;
  CHECK(slope_up == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("warp is strictly increasing") {
  double prev = -1.0;
  for (int f = 0; f <= 24000; f += 1) {
    const double w = scm::warp_frequency(f);
    CHECK(w > prev);
    prev = w;
  }
}

TEST_CASE("warp rejects out-of-range input") {
  CHECK_THROWS_AS(scm::warp_frequency(-1.0), std::invalid_argument);
  CHECK_THROWS_AS(scm::warp_frequency(24001.0), std::invalid_argument);
}

TEST_CASE("inverse warp undoes the upper branch") {
  for (double f : {5000.0, 6000.0, 12000.0, 24000.0})
    CHECK(scm::inverse_warp(scm::warp_frequency(f)) == doctest::Approx(f).epsilon(1e-12));
}

TEST_CASE("knee bin count") {
  CHECK(scm::bin_of_knee(40.0, 5000.0) == 126);   // 48 kHz / 1200-pt transform
  CHECK(scm::bin_of_knee(50.0, 5000.0) == 101);   // hypothetical 960-pt transform
  CHECK(scm::bin_of_knee(40.0, 0.0) == 1);        // only DC
}

TEST_CASE("compression matrix identity block and triangles") {
  const scm::CompressionMatrix cm = scm::build_compression_matrix(601, 256, 126, 40.0);
  // identity submatrix on the low band
  for (int k = 0; k < 126; ++k) {
    CHECK(cm.weights(k, k) == 1.0);
    CHECK(cm.weights(50, 50) == 1.0);
    for (int j = 0; j < 601; j += 13)
      if (j != k) CHECK(cm.weights(k, j) == 0.0);
  }
  // every triangular row is area-normalized
  for (int r = 126; r < 256; ++r) {
    CHECK(std::abs(cm.weights.row(r).sum() - 1.0) < 1e-9);
    CHECK(cm.weights.row(r).maxCoeff() > 0.0);
  }
  // triangles only touch the high band
  for (int r = 126; r < 256; ++r)
    for (int j = 0; j < 126; ++j) CHECK(cm.weights(r, j) == 0.0);
}

TEST_CASE("constant-one spectrum maps to ones everywhere") {
  const scm::CompressionMatrix cm = scm::build_compression_matrix(601, 256, 126, 40.0);
  scm::MatrixRM frames = scm::MatrixRM::Ones(3, 601);
  const scm::MatrixRM out = scm::apply_mapping(cm.weights, frames);
  for (int r = 0; r < 256; ++r) CHECK(std::abs(out(1, r) - 1.0) < 1e-9);
}

TEST_CASE("parameter ordering violations rejected") {
  CHECK_THROWS_AS(scm::build_compression_matrix(601, 700, 126, 40.0), std::invalid_argument);
  CHECK_THROWS_AS(scm::build_compression_matrix(601, 256, 300, 40.0), std::invalid_argument);
}

TEST_CASE("apply_mapping basics") {
  const scm::CompressionMatrix cm = scm::build_compression_matrix(601, 256, 126, 40.0);
  Rng rng(5);
  scm::MatrixRM frame(1, 601);
  for (int j = 0; j < 601; ++j) frame(0, j) = rng.uniform(-1, 1);
  const scm::MatrixRM out = scm::apply_mapping(cm.weights, frame);
  // identity block passes the low bins through
  for (int k = 0; k < 126; ++k) CHECK(out(0, k) == doctest::Approx(frame(0, k)).epsilon(1e-12));
  // zero in, zero out
  CHECK(scm::apply_mapping(cm.weights, scm::MatrixRM::Zero(2, 601)).cwiseAbs().maxCoeff() ==
        0.0);
  // unit vector picks a column
  scm::MatrixRM e130 = scm::MatrixRM::Zero(1, 601);
  e130(0, 130) = 1.0;
  const scm::MatrixRM col = scm::apply_mapping(cm.weights, e130);
  for (int r = 0; r < 256; r += 17) CHECK(col(0, r) == cm.weights(r, 130));
  // shape mismatch
  CHECK_THROWS_AS(scm::apply_mapping(cm.weights, scm::MatrixRM::Zero(1, 600)),
                  std::invalid_argument);
}

TEST_CASE("apply_mapping is linear") {
  const scm::CompressionMatrix cm = scm::build_compression_matrix(601, 256, 126, 40.0);
  Rng rng(6);
  scm::MatrixRM x(2, 601), y(2, 601);
  for (int i = 0; i < x.size(); ++i) {
    x.data()[i] = rng.uniform(-1, 1);
    y.data()[i] = rng.uniform(-1, 1);
  }
  const double a = 1.7, b = -0.4;
  const scm::MatrixRM lhs = scm::apply_mapping(cm.weights, a * x + b * y);
  const scm::MatrixRM rhs =
      a * scm::apply_mapping(cm.weights, x) + b * scm::apply_mapping(cm.weights, y);
  CHECK(((lhs - rhs).cwiseAbs().maxCoeff()) < 1e-9 * lhs.cwiseAbs().maxCoeff());
}

TEST_CASE("inverse map init is deterministic, bounded and seed-sensitive") {
  const scm::MatrixRM a = scm::init_inverse(256, 601, 42);
  const scm::MatrixRM b = scm::init_inverse(256, 601, 42);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
  const double bound = std::sqrt(6.0 / (256 + 601));
  CHECK(bound == doctest::Approx(0.0837).epsilon(1e-3));
  CHECK(a.cwiseAbs().maxCoeff() <= bound);
  const scm::MatrixRM c = scm::init_inverse(256, 601, 43);
  CHECK((a - c).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("high-learn freezing masks exactly the identity rows") {
  scm::CompressionMatrix cm = scm::build_compression_matrix(601, 256, 126, 40.0);
  scm::freeze_low_band(cm, true);
  for (int r = 0; r < 256; ++r)
    for (int j = 0; j < 601; j += 101)
      CHECK(static_cast<int>(cm.learn_mask(r, j)) == (r < 126 ? 0 : 1));
  scm::freeze_low_band(cm, false);
  CHECK(cm.learn_mask.minCoeff() == 1);
}

TEST_CASE("masked optimizer steps leave frozen rows bit-identical") {
  scm::CompressionMatrix cm = scm::build_compression_matrix(601, 256, 126, 40.0);
  scm::freeze_low_band(cm, true);

  diff::ParameterStore<double> store;
  Tensor<double> w({256, 601});
  Tensor<uint8_t> mask({256, 601});
  for (Index i = 0; i < 256; ++i)
    for (Index j = 0; j < 601; ++j) {
      w.at(i, j) = cm.weights(i, j);
      mask.at(i, j) = cm.learn_mask(i, j);
    }
  const Tensor<double> original = w;
  store.add("scm", std::move(w)).mask = mask;

  diff::AdamState adam;
  Rng rng(77);
  for (int step = 0; step < 50; ++step) {
    auto& e = store.entry("scm");
    for (Index i = 0; i < e.grad.numel(); ++i) e.grad[i] = rng.uniform(-1, 1);
    diff::adam_step(store, adam, 1e-3);
  }
  const auto& after = store.entry("scm").value;
  bool low_identical = true, high_changed = false;
  for (Index i = 0; i < 126; ++i)
    for (Index j = 0; j < 601; ++j)
      low_identical = low_identical && after.at(i, j) == original.at(i, j);
  for (Index i = 126; i < 256; ++i)
    for (Index j = 0; j < 601; ++j) high_changed = high_changed || after.at(i, j) != original.at(i, j);
  CHECK(low_identical);
  CHECK(high_changed);
}

TEST_CASE("unmasked gradient changes row zero") {
  diff::ParameterStore<double> store;
  store.add("w", Tensor<double>::full({2, 3}, 1.0));
  auto& e = store.entry("w");
  e.grad.fill(1.0);
  diff::AdamState adam;
  diff::adam_step(store, adam, 0.1);
  CHECK(e.value.at(0, 0) != 1.0);
}
