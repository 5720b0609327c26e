#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "agrimae/anomaly.hpp"
#include "agrimae/rng.hpp"
#include "support/gradcheck.hpp"

using namespace agrimae;
using testsupport::random_tensor;

namespace {

// Independent kneedle reference: long-double arithmetic, explicit chord
// distance, first-max tie rule. Returns the argmax index on the sorted curve,
// or SIZE_MAX when the curve is degenerate.
std::size_t kneedle_oracle_index(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const long double lo = values.front();
  const long double hi = values.back();
  if (!(hi > lo)) return SIZE_MAX;
  long double best = 0.0L;
  std::size_t best_idx = SIZE_MAX;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const long double x = static_cast<long double>(i) / (values.size() - 1);
    const long double y = (static_cast<long double>(values[i]) - lo) / (hi - lo);
    const long double d = fabsl(y - x);
    if (d > best) {
      best = d;
      best_idx = i;
    }
  }
  if (best <= 1e-9L) return SIZE_MAX;
  return best_idx;
}

ErrorMap map_2x2(std::vector<double> v) { return ErrorMap{Tensor::from_data({2, 2}, std::move(v))}; }

}  // namespace

TEST_CASE("asl weight map worked examples", "[anomaly]") {
  SECTION("uniform errors give the zero map, rescale skipped") {
    WeightMap w = asl_weight_map(map_2x2({1, 1, 1, 1}));
    for (double v : w.values.data()) REQUIRE(v == 0.0);
  }
  SECTION("E=[[4,1],[0,3]] raw weights are [[0,3],[4,1]]") {
    WeightMap w = asl_weight_map(map_2x2({4, 1, 0, 3}), /*rescale=*/false);
    REQUIRE(w.values.data() == std::vector<double>{0, 3, 4, 1});
  }
  SECTION("rescaled map has mean 1") {
    WeightMap w = asl_weight_map(map_2x2({4, 1, 0, 3}));
    double total = 0.0;
    for (double v : w.values.data()) total += v;
    REQUIRE_THAT(total / 4.0, Catch::Matchers::WithinAbs(1.0, 1e-12));
    REQUIRE(w.values.data()[0] == 0.0);
  }
  SECTION("weight order exactly reverses error order") {
    Rng rng(50);
    std::vector<double> e = testsupport::random_vec(64, rng, 0.0, 5.0);
    ErrorMap em{Tensor::from_data({8, 8}, e)};
    WeightMap wm = asl_weight_map(em, false);
    const auto& w = wm.values.data();
    const std::size_t amax =
        std::max_element(e.begin(), e.end()) - e.begin();
    const std::size_t amin =
        std::min_element(e.begin(), e.end()) - e.begin();
    REQUIRE(w[amax] == 0.0);
    REQUIRE(w[amin] == *std::max_element(w.begin(), w.end()));
    for (std::size_t i = 0; i < e.size(); ++i) {
      for (std::size_t j = 0; j < e.size(); ++j) {
        if (e[i] > e[j]) REQUIRE(w[i] < w[j]);
        if (e[i] == e[j]) REQUIRE(w[i] == w[j]);
      }
    }
  }
}

TEST_CASE("weighted loss", "[anomaly]") {
  SECTION("zero weights give zero loss") {
    WeightMap w{Tensor::zeros({2, 2}), 0};
    REQUIRE(weighted_loss(map_2x2({4, 1, 0, 3}), w).value() == 0.0);
  }
  SECTION("unit weights reduce to plain MSE") {
    WeightMap w{Tensor::full({2, 2}, 1.0), 0};
    REQUIRE_THAT(weighted_loss(map_2x2({4, 1, 0, 3}), w).value(),
                 Catch::Matchers::WithinAbs(2.0, 1e-15));
  }
  SECTION("worked example: raw sum 6, mean form 1.5") {
    ErrorMap e = map_2x2({4, 1, 0, 3});
    WeightMap w = asl_weight_map(e, false);
    REQUIRE_THAT(weighted_loss_sum(e, w).value(), Catch::Matchers::WithinAbs(6.0, 1e-15));
    REQUIRE_THAT(weighted_loss(e, w).value(), Catch::Matchers::WithinAbs(1.5, 1e-15));
  }
  SECTION("support restricts and renormalizes") {
    ErrorMap e = map_2x2({4, 1, 0, 3});
    WeightMap w{Tensor::full({2, 2}, 1.0), 0};
    const std::vector<std::uint8_t> support = {1, 0, 0, 1};
    REQUIRE_THAT(weighted_loss(e, w, &support).value(),
                 Catch::Matchers::WithinAbs(3.5, 1e-15));
  }
  SECTION("empty support yields zero") {
    ErrorMap e = map_2x2({4, 1, 0, 3});
    WeightMap w{Tensor::full({2, 2}, 1.0), 0};
    const std::vector<std::uint8_t> support = {0, 0, 0, 0};
    REQUIRE(weighted_loss(e, w, &support).value() == 0.0);
  }
  SECTION("gradient is w over support size, zero at the max-error pixel") {
    Tensor e_vals = Tensor::from_data({2, 2}, {4, 1, 0, 3});
    e_vals.set_requires_grad(true);
    ErrorMap e{e_vals};
    WeightMap w = asl_weight_map(ErrorMap{Tensor::from_data({2, 2}, {4, 1, 0, 3})}, false);
    backward(weighted_loss(e, w));
    const auto& g = e_vals.grad();
    REQUIRE(g[0] == 0.0);  // max-error pixel
    REQUIRE_THAT(g[1], Catch::Matchers::WithinAbs(3.0 / 4.0, 1e-15));
    REQUIRE_THAT(g[2], Catch::Matchers::WithinAbs(4.0 / 4.0, 1e-15));
    REQUIRE_THAT(g[3], Catch::Matchers::WithinAbs(1.0 / 4.0, 1e-15));
    for (double v : g) REQUIRE(v >= 0.0);
  }
}

TEST_CASE("reconstruction error map", "[anomaly]") {
  SECTION("identical tensors give the zero map") {
    Rng rng(51);
    Tensor img = random_tensor({4, 4, 3}, rng);
    ErrorMap e = reconstruction_error(img, img);
    REQUIRE(e.values.shape() == Shape{4, 4});
    for (double v : e.values.data()) REQUIRE(v == 0.0);
  }
  SECTION("constant offset gives constant map of value B") {
    Rng rng(52);
    Tensor img = random_tensor({4, 4, 3}, rng);
    Tensor recon = add(img, Tensor::full({4, 4, 3}, 1.0));
    ErrorMap e = reconstruction_error(img, recon);
    for (double v : e.values.data()) REQUIRE_THAT(v, Catch::Matchers::WithinAbs(3.0, 1e-12));
  }
  SECTION("random pair matches the direct summation oracle") {
    Rng rng(53);
    Tensor img = random_tensor({5, 6, 4}, rng);
    Tensor recon = random_tensor({5, 6, 4}, rng);
    ErrorMap e = reconstruction_error(img, recon);
    for (std::size_t r = 0; r < 5; ++r) {
      for (std::size_t c = 0; c < 6; ++c) {
        double expect = 0.0;
        for (std::size_t b = 0; b < 4; ++b) {
          const double d = recon.data()[(r * 6 + c) * 4 + b] - img.data()[(r * 6 + c) * 4 + b];
          expect += d * d;
        }
        REQUIRE_THAT(e.values.at(r, c), Catch::Matchers::WithinAbs(expect, 1e-12));
      }
    }
  }
}

TEST_CASE("knee threshold", "[anomaly]") {
  SECTION("all-equal values fall back to an empty map") {
    const double theta = knee_threshold({0.4, 0.4, 0.4, 0.4});
    REQUIRE(theta > 0.4);
    AnomalyMap a = binarize(map_2x2({0.4, 0.4, 0.4, 0.4}), theta);
    for (auto v : a.values) REQUIRE(v == 0);
  }
  SECTION("exact linear ramp has no knee") {
    std::vector<double> ramp(101);
    for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = i / 100.0;
    REQUIRE(knee_threshold(ramp) > 1.0);
  }
  SECTION("two clusters are separated") {
    Rng rng(54);
    std::vector<double> v;
    for (int i = 0; i < 990; ++i) v.push_back(std::max(0.0, 0.1 + 0.1 * rng.normal()));
    for (int i = 0; i < 10; ++i) v.push_back(0.9 + 0.1 * rng.normal());
    const double theta = knee_threshold(v);
    REQUIRE(theta > 0.2);
    REQUIRE(theta < 0.8);
    // all 10 high-cluster values sit above the knee, plus at most the thin
    // upper tail of the low cluster
    std::size_t flagged = 0;
    for (double x : v) flagged += (x >= theta);
    REQUIRE(flagged >= 10);
    REQUIRE(flagged <= 120);
  }
  SECTION("matches the brute-force kneedle oracle on 100 random curves") {
    Rng rng(55);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t n = 20 + rng.below(200);
      std::vector<double> v(n);
      const double scale_v = rng.uniform(0.5, 10.0);
      const double power = rng.uniform(0.4, 3.0);
      for (auto& x : v) x = scale_v * std::pow(rng.uniform(), power);
      std::size_t oracle = kneedle_oracle_index(v);
      double theta = knee_threshold(v);
      std::sort(v.begin(), v.end());
      if (oracle == SIZE_MAX) {
        REQUIRE(theta > v.back());
      } else {
        REQUIRE(theta == v[oracle]);
      }
    }
  }
  SECTION("scale equivariance") {
    Rng rng(56);
    std::vector<double> v = testsupport::random_vec(200, rng, 0.0, 3.0);
    const double theta = knee_threshold(v);
    for (double a : {2.0, 0.5, 4.0}) {
      std::vector<double> scaled = v;
      for (auto& x : scaled) x *= a;
      REQUIRE(knee_threshold(scaled) == a * theta);
    }
  }
  SECTION("too few values rejected") {
    REQUIRE_THROWS_AS(knee_threshold({1.0}), ValidationError);
  }
}

TEST_CASE("binarize", "[anomaly]") {
  ErrorMap e = map_2x2({0.1, 0.9, 0.0, 0.5});
  SECTION("threshold zero fires everywhere on non-negative maps") {
    AnomalyMap a = binarize(e, 0.0);
    for (auto v : a.values) REQUIRE(v == 1);
  }
  SECTION("threshold above max fires nowhere") {
    AnomalyMap a = binarize(e, 1.0);
    for (auto v : a.values) REQUIRE(v == 0);
  }
  SECTION("strict-ge comparison") {
    AnomalyMap a = binarize(ErrorMap{Tensor::from_data({1, 2}, {0.1, 0.9})}, 0.5);
    REQUIRE(a.values == std::vector<std::uint8_t>{0, 1});
    REQUIRE(a.threshold_used == 0.5);
  }
  SECTION("map pixel count is non-increasing in theta") {
    Rng rng(57);
    ErrorMap m{random_tensor({8, 8}, rng, 0.0, 1.0)};
    std::size_t prev = 65;
    for (double theta : {0.0, 0.2, 0.4, 0.6, 0.8, 1.01}) {
      AnomalyMap a = binarize(m, theta);
      const std::size_t count = std::count(a.values.begin(), a.values.end(), std::uint8_t{1});
      REQUIRE(count <= prev);
      prev = count;
    }
  }
}

TEST_CASE("error map averaging", "[anomaly]") {
  SECTION("constant maps average to the constant") {
    std::vector<ErrorMap> maps(5, map_2x2({3, 3, 3, 3}));
    ErrorMap avg = average_error_maps(maps);
    for (double v : avg.values.data()) REQUIRE(v == 3.0);
  }
  SECTION("single map passes through") {
    ErrorMap avg = average_error_maps({map_2x2({1, 2, 3, 4})});
    REQUIRE(avg.values.data() == std::vector<double>{1, 2, 3, 4});
  }
  SECTION("bit-identical under run permutation") {
    Rng rng(58);
    std::vector<ErrorMap> maps;
    for (int k = 0; k < 7; ++k) maps.push_back(ErrorMap{random_tensor({6, 6}, rng, 0.0, 2.0)});
    ErrorMap base = average_error_maps(maps);
    std::vector<std::size_t> order = {6, 2, 4, 0, 5, 1, 3};
    std::vector<ErrorMap> permuted;
    for (std::size_t i : order) permuted.push_back(maps[i]);
    ErrorMap again = average_error_maps(permuted);
    REQUIRE(base.values.data() == again.values.data());
  }
}
