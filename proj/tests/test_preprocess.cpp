#include <random>

#include "doctest.h"
#include "test_util.hpp"

#include "stemfactor/preprocess.hpp"
#include "stemfactor/synthetic.hpp"

using namespace stemfactor;
using testutil::error_code_of;

TEST_CASE("mean filter examples") {
  SUBCASE("constant stack is unchanged") {
    const ScanStack4D s({4, 5, 3, 3}, std::vector<float>(4 * 5 * 9, 2.5f));
    const auto f = mean_filter(s);
    for (float v : f.data()) CHECK(v == 2.5f);
    CHECK(f.provenance() == "mean-filtered");
  }
  SUBCASE("1x1 scan is unchanged") {
    const ScanStack4D s({1, 1, 2, 2}, {1, 2, 3, 4});
    const auto f = mean_filter(s);
    CHECK(std::vector<float>(f.data().begin(), f.data().end()) == std::vector<float>{1, 2, 3, 4});
  }
  SUBCASE("2x2 grid of scalars averages to 2.5 everywhere") {
    const ScanStack4D s({2, 2, 1, 1}, {1, 2, 3, 4});
    const auto f = mean_filter(s);
    for (float v : f.data()) CHECK(v == 2.5f);
  }
}

TEST_CASE("interior positions get the exact nine-neighbour mean; edges average valid neighbours") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  const StackShape shape{6, 7, 2, 3};
  std::vector<float> data(shape.total());
  for (auto& v : data) v = u(rng);
  const ScanStack4D s(shape, data);
  const auto f = mean_filter(s);

  auto expected = [&](int r, int c, std::size_t i) {
    double sum = 0.0;
    int count = 0;
    for (int dr = -1; dr <= 1; ++dr)
      for (int dc = -1; dc <= 1; ++dc) {
        const int rr = r + dr;
        const int cc = c + dc;
        if (rr < 0 || cc < 0 || rr >= 6 || cc >= 7) continue;
        sum += s.pattern(static_cast<std::size_t>(rr), static_cast<std::size_t>(cc))[i];
        ++count;
      }
    return sum / count;
  };
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 7; ++c)
      for (std::size_t i = 0; i < shape.pattern_size(); ++i)
        CHECK(f.pattern(static_cast<std::size_t>(r), static_cast<std::size_t>(c))[i] ==
              doctest::Approx(expected(r, c, i)).epsilon(1e-6));
}

TEST_CASE("mean filter preserves non-negativity and lowers mean NSD on noisy synthetic data") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SyntheticSpec spec;
    spec.m = 16;
    spec.n = 16;
    spec.px = 32;
    spec.py = 32;
    spec.k_true = 4;
    spec.noise_sigma = 0.05;
    spec.seed = seed;
    const auto raw = generate_synthetic(spec).stack;
    const auto filtered = mean_filter(raw);
    for (float v : filtered.data()) REQUIRE(v >= 0.0f);
    double nsd_raw = 0.0;
    double nsd_filtered = 0.0;
    for (std::size_t j = 0; j < raw.shape().scan_count(); ++j) {
      nsd_raw += nsd(raw.pattern_image(j));
      nsd_filtered += nsd(filtered.pattern_image(j));
    }
    CHECK(nsd_filtered <= nsd_raw);
  }
}

TEST_CASE("nsd examples and properties") {
  CHECK(nsd(Image::Constant(3, 3, 7.0)) == 0.0);
  Image two(1, 2);
  two << 0, 2;
  CHECK(nsd(two) == 1.0);
  CHECK(error_code_of([] { nsd(Image(0, 0)); }) == ErrorCode::EmptyInput);

  std::mt19937_64 rng(8);
  for (int t = 0; t < 10; ++t) {
    const Image img = testutil::random_image(rng, 9, 11);
    const double base = nsd(img);
    CHECK(nsd(img + 3.5) == doctest::Approx(base).epsilon(1e-12));
    CHECK(nsd(img * 2.5) == doctest::Approx(2.5 * base).epsilon(1e-12));
  }
}

TEST_CASE("nsd table") {
  SUBCASE("one constant representative") {
    const auto t = nsd_matrix({{Image::Constant(2, 2, 1.0)}}, {"raw"});
    REQUIRE(t.values.size() == 1);
    CHECK(t.values[0] == std::vector<double>{0.0});
  }
  SUBCASE("two-pixel representatives") {
    Image a(1, 2), b(1, 2);
    a << 0, 2;
    b << 0, 4;
    const auto t = nsd_matrix({{a, b}}, {"raw"});
    CHECK(t.values[0] == std::vector<double>{1.0, 2.0});
    CHECK(t.to_csv() == "dataset,cluster_0,cluster_1\nraw,1,2\n");
  }
  SUBCASE("ragged rows and six significant digits") {
    Image a(1, 2);
    a << 0, 1.0 / 3.0;
    const auto t = nsd_matrix({{a, a}, {a}}, {"raw", "filtered"});
    CHECK(t.to_csv() == "dataset,cluster_0,cluster_1\nraw,0.166667,0.166667\nfiltered,0.166667,\n");
  }
  SUBCASE("errors") {
    CHECK(error_code_of([] { nsd_matrix({}, {}); }) == ErrorCode::EmptyInput);
    CHECK(error_code_of([] { nsd_matrix({{Image::Zero(1, 1)}}, {}); }) == ErrorCode::LengthMismatch);
  }
}

TEST_CASE("filtered representatives are no noisier than raw ones") {
  SyntheticSpec spec;
  spec.m = 16;
  spec.n = 16;
  spec.px = 32;
  spec.py = 32;
  spec.k_true = 4;
  spec.noise_sigma = 0.05;
  spec.seed = 21;
  const auto ds = generate_synthetic(spec);
  const auto filtered = mean_filter(ds.stack);
  // Representative = pattern at the first interior member of each cluster.
  std::vector<Image> raw_reps, filtered_reps;
  for (int c = 0; c < 4; ++c) {
    for (std::size_t r = 1; r + 1 < spec.m; ++r) {
      bool found = false;
      for (std::size_t col = 1; col + 1 < spec.n && !found; ++col) {
        bool interior = true;
        for (int dr = -1; dr <= 1; ++dr)
          for (int dc = -1; dc <= 1; ++dc)
            interior = interior && ds.truth.labels[(r + dr) * spec.n + (col + dc)] == c;
        if (interior) {
          raw_reps.push_back(ds.stack.pattern_image(r * spec.n + col));
          filtered_reps.push_back(filtered.pattern_image(r * spec.n + col));
          found = true;
        }
      }
      if (found) break;
    }
  }
  REQUIRE(raw_reps.size() == 4);
  const auto t = nsd_matrix({raw_reps, filtered_reps}, {"raw", "filtered"});
  for (std::size_t c = 0; c < 4; ++c) CHECK(t.values[1][c] <= t.values[0][c]);
}
