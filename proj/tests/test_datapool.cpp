#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "s4al/datapool.hpp"
#include "s4al/rng.hpp"

using namespace s4al;

namespace {

std::vector<std::string> make_ids(int n) {
  std::vector<std::string> ids;
  for (int i = 0; i < n; ++i) ids.push_back("img" + std::to_string(i));
  return ids;
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::kIo;
}

}  // namespace

TEST_CASE("region grid counts") {
  const RegionGrid camvid = build_region_grid(360, 480, 30, 30);
  CHECK(camvid.rows() == 360 / 30);
  CHECK(camvid.cols() == 480 / 30);
  CHECK(camvid.count() == 192);
  const RegionGrid city = build_region_grid(688, 688, 43, 43);
  CHECK(city.rows() == 16);
  CHECK(city.count() == 256);

  // ragged last row/column
  const RegionGrid g = build_region_grid(10, 7, 4, 4);
  CHECK(g.rows() == 3);
  CHECK(g.cols() == 2);
  CHECK(g.extent({2, 1}).h == 2);
  CHECK(g.extent({2, 1}).w == 3);
  std::size_t total = 0;
  for (int r = 0; r < g.rows(); ++r)
    for (int c = 0; c < g.cols(); ++c) total += g.extent({r, c}).pixels();
  CHECK(total == 70);

  CHECK(kind_of([] { build_region_grid(0, 10, 2, 2); }) == ErrorKind::kInvalidArgument);
  CHECK(kind_of([] { build_region_grid(10, 10, -1, 2); }) == ErrorKind::kInvalidArgument);
}

TEST_CASE("init_split counts round half up") {
  const RegionGrid g = build_region_grid(360, 480, 30, 30);
  const PoolState camvid = init_split(make_ids(367), g, 0.1, 0);
  // round(36.7)
  CHECK(camvid.count(ImageStatus::kLabeled) == static_cast<std::size_t>(std::floor(367 * 0.1 + 0.5)));
  CHECK(camvid.count(ImageStatus::kLabeled) == 37);
  CHECK(camvid.count(ImageStatus::kUnlabeled) == 330);
  const PoolState city = init_split(make_ids(2675), build_region_grid(688, 688, 43, 43), 0.1, 0);
  CHECK(city.count(ImageStatus::kLabeled) == 268);

  CHECK(kind_of([&] { init_split(make_ids(10), g, 0.0, 0); }) == ErrorKind::kInvalidArgument);
  CHECK(kind_of([&] { init_split(make_ids(10), g, 1.0, 0); }) == ErrorKind::kInvalidArgument);
}

TEST_CASE("init_split is a pure function of its inputs") {
  const RegionGrid g = build_region_grid(64, 64, 8, 8);
  CHECK(init_split(make_ids(50), g, 0.3, 7) == init_split(make_ids(50), g, 0.3, 7));
  CHECK_FALSE(init_split(make_ids(50), g, 0.3, 7) == init_split(make_ids(50), g, 0.3, 8));
}

TEST_CASE("labeled fraction of whole images") {
  const PoolState pool = init_split(make_ids(367), build_region_grid(360, 480, 30, 30), 0.1, 0);
  CHECK(labeled_fraction(pool) == doctest::Approx(37.0 / 367.0).epsilon(1e-12));
  CHECK(std::abs(labeled_fraction(pool) - 0.1008) < 5e-5);
}

TEST_CASE("reveal one region makes the image partial") {
  const RegionGrid g = build_region_grid(360, 480, 30, 30);
  PoolState pool = init_split(make_ids(20), g, 0.1, 3);
  const std::size_t img = pool.unlabeled_stream().front();
  REQUIRE(pool.status(img) == ImageStatus::kUnlabeled);
  const Selection sel{img, {3, 5}};
  pool.reveal(std::span(&sel, 1), 0);
  CHECK(pool.status(img) == ImageStatus::kPartial);
  CHECK(pool.known_pixels(img) == 30 * 30);
  const Mask m = pool.known_mask(img);
  std::size_t ones = 0;
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x)
      if (m.at(y, x)) {
        ++ones;
        CHECK(y / 30 == 3);
        CHECK(x / 30 == 5);
      }
  CHECK(ones == 900);
  CHECK(pool.acquisition_log().size() == 1);

  // partial images sit in both streams
  const auto ls = pool.labeled_stream(), us = pool.unlabeled_stream();
  CHECK(std::count(ls.begin(), ls.end(), img) == 1);
  CHECK(std::count(us.begin(), us.end(), img) == 1);
}

TEST_CASE("reveal rejects duplicates atomically") {
  const RegionGrid g = build_region_grid(16, 16, 8, 8);
  PoolState pool = init_split(make_ids(10), g, 0.1, 1);
  const std::size_t img = pool.unlabeled_stream().front();
  const std::size_t labeled = pool.labeled_stream().front();
  const PoolState before = pool;

  const std::vector<Selection> dup{{img, {0, 0}}, {img, {0, 0}}};
  CHECK(kind_of([&] { pool.reveal(dup, 0); }) == ErrorKind::kDuplicateAcquisition);
  CHECK(pool == before);

  const std::vector<Selection> known{{img, {0, 1}}, {labeled, {1, 1}}};
  CHECK(kind_of([&] { pool.reveal(known, 0); }) == ErrorKind::kDuplicateAcquisition);
  CHECK(pool == before);

  const std::vector<Selection> outside{{img, {2, 0}}};
  CHECK(kind_of([&] { pool.reveal(outside, 0); }) == ErrorKind::kInvalidArgument);
}

TEST_CASE("revealing every region labels the image") {
  const RegionGrid g = build_region_grid(16, 16, 8, 8);
  PoolState pool = init_split(make_ids(4), g, 0.25, 0);
  const std::size_t img = pool.unlabeled_stream().front();
  std::vector<Selection> all;
  for (int i = 0; i < g.count(); ++i) all.push_back({img, g.unflat(i)});
  pool.reveal(all, 0);
  CHECK(pool.status(img) == ImageStatus::kLabeled);
}

TEST_CASE("property: reveals are monotone and conserve pixel counts") {
  const RegionGrid g = build_region_grid(40, 56, 8, 8);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    PoolState pool = init_split(make_ids(12), g, 0.2, seed);
    Rng rng(seed);
    const double total = static_cast<double>(pool.size()) * pool.image_pixels();
    for (int cycle = 0; cycle < 4; ++cycle) {
      std::set<Selection> picks;
      for (std::size_t i : pool.unlabeled_stream())
        for (int n = 0; n < 3; ++n) {
          const RegionId r = g.unflat(static_cast<int>(rng.index(g.count())));
          if (!pool.region_known(i, r)) picks.insert({i, r});
        }
      std::size_t new_pixels = 0;
      for (const Selection& s : picks) new_pixels += g.extent(s.region).pixels();
      std::vector<Mask> before;
      for (std::size_t i = 0; i < pool.size(); ++i) before.push_back(pool.known_mask(i));
      const double f0 = labeled_fraction(pool);
      const std::vector<Selection> sel(picks.begin(), picks.end());
      pool = reveal_regions(std::move(pool), sel, cycle);
      CHECK(labeled_fraction(pool) - f0 == doctest::Approx(new_pixels / total).epsilon(1e-12));
      for (std::size_t i = 0; i < pool.size(); ++i) {
        const Mask after = pool.known_mask(i);
        for (std::size_t p = 0; p < after.data.size(); ++p) CHECK(after.data[p] >= before[i].data[p]);
        CHECK(pool.known_rle(i) == rle_encode(after));
      }
    }
  }
}

TEST_CASE("head/tail split") {
  // shares 0.55 0.30 0.10 0.05 with K=4: below 0.25 is tail
  const ClassDistribution d = distribution_from_counts({55, 30, 10, 5});
  CHECK(d.head == std::vector<int>{0, 1});
  CHECK(d.tail == std::vector<int>{2, 3});
  CHECK(d.share(3) == doctest::Approx(0.05));

  const ClassDistribution even = distribution_from_counts({50, 50});
  CHECK(even.head == std::vector<int>{0, 1});
  CHECK(even.tail.empty());

  CHECK(kind_of([] { distribution_from_counts({0, 0, 0}); }) == ErrorKind::kEmptyPool);
}

TEST_CASE("property: head and tail partition the classes") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = rng.integer(2, 12);
    std::vector<std::uint64_t> counts(k);
    for (auto& c : counts) c = rng.index(100);
    counts[rng.index(k)] += 1;
    const ClassDistribution d = distribution_from_counts(counts);
    std::set<int> all(d.head.begin(), d.head.end());
    for (int t : d.tail) CHECK(all.insert(t).second);
    CHECK(static_cast<int>(all.size()) == k);
    for (int t : d.tail) CHECK(d.share(t) < 1.0 / k);
  }
}

TEST_CASE("class pixel distribution counts known pixels only") {
  Dataset ds;
  ds.num_classes = 3;
  ds.height = 4;
  ds.width = 4;
  for (int i = 0; i < 2; ++i) {
    Sample s;
    s.id = "s" + std::to_string(i);
    s.image = Image(3, 4, 4);
    s.label = LabelMap(1, 4, 4, static_cast<std::uint8_t>(i));
    ds.train.push_back(s);
  }
  ds.train[0].label.at(0, 0) = 2;
  ds.train[1].label.at(3, 3) = 255;
  PoolState pool(ds.train_ids(), build_region_grid(4, 4, 2, 2), 0);
  pool.mark_labeled(0);
  ClassDistribution d = class_pixel_distribution(pool, ds);
  CHECK(d.pixel_count == std::vector<std::uint64_t>{15, 0, 1});

  const Selection sel{1, {1, 1}};
  pool.reveal(std::span(&sel, 1), 0);
  d = class_pixel_distribution(pool, ds);
  CHECK(d.pixel_count == std::vector<std::uint64_t>{15, 3, 1});
}

TEST_CASE("rle round trip") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Mask m(1, rng.integer(1, 9), rng.integer(1, 9));
    for (auto& v : m.data) v = rng.bernoulli(0.4);
    const auto runs = rle_encode(m);
    CHECK(rle_decode(runs, m.h, m.w) == m);
    std::uint64_t sum = 0;
    for (auto r : runs) sum += r;
    CHECK(sum == m.pixels());
  }
  Mask ones(1, 2, 2, 1);
  CHECK(rle_encode(ones) == std::vector<std::uint32_t>{0, 4});
}

TEST_CASE("pool json round trip is exact") {
  const RegionGrid g = build_region_grid(20, 30, 8, 8);
  PoolState pool = init_split(make_ids(9), g, 0.2, 42);
  const std::vector<Selection> sel{{pool.unlabeled_stream()[0], {0, 1}}, {pool.unlabeled_stream()[1], {2, 3}}};
  pool.reveal(sel, 0);
  CHECK(pool_from_json(pool_to_json(pool)) == pool);

  const auto path = std::filesystem::temp_directory_path() / "s4al_pool_test.json";
  save_pool(pool, path.string());
  CHECK(load_pool(path.string()) == pool);
  std::filesystem::remove(path);

  CHECK(kind_of([] { pool_from_json("{not json"); }) == ErrorKind::kFormat);
  CHECK(kind_of([] { load_pool("/nonexistent/pool.json"); }) == ErrorKind::kIo);
}
