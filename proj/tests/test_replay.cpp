#include <doctest.h>

#include <cmath>
#include <deque>

#include "s4al/error.hpp"
#include "s4al/replay.hpp"

using namespace s4al;

TEST_CASE("fifo eviction") {
  ReplayBuffer buf(2);
  const std::size_t a = 10, b = 11, c = 12;
  buf.push(a);
  buf.push(b);
  buf.push(c);
  CHECK(buf.items() == std::vector<std::size_t>{b, c});
  CHECK(buf.insertions() == 3);
  CHECK_THROWS_AS(ReplayBuffer(0), Error);
}

TEST_CASE("sampling an empty buffer fails") {
  ReplayBuffer buf(3);
  Rng rng(0);
  try {
    (void)buf.sample(1, rng);
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kEmptyBuffer);
  }
}

TEST_CASE("uniform sampling with replacement") {
  ReplayBuffer buf(2);
  buf.push(0);
  buf.push(1);
  Rng rng(1);
  const int n = 10000;
  const auto draws = buf.sample(n, rng);
  const auto ones = std::count(draws.begin(), draws.end(), std::size_t{1});
  const double sigma = std::sqrt(n * 0.25);
  CHECK(std::abs(ones - n / 2.0) <= 3 * sigma);
  CHECK(std::abs((n - ones) - n / 2.0) <= 3 * sigma);
}

TEST_CASE("seeded sampling is reproducible") {
  ReplayBuffer buf(5);
  for (std::size_t i = 0; i < 5; ++i) buf.push(i);
  Rng a(9), b(9);
  CHECK(buf.sample(50, a) == buf.sample(50, b));
}

TEST_CASE("property: capacity and order under random interleavings") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t cap = 1 + rng.index(6);
    ReplayBuffer buf(cap);
    std::deque<std::size_t> model;
    for (int op = 0; op < 60; ++op) {
      if (rng.bernoulli(0.6) || buf.empty()) {
        const std::size_t id = rng.index(1000);
        buf.push(id);
        model.push_back(id);
        if (model.size() > cap) model.pop_front();
      } else {
        const auto before = buf.items();
        const auto s = buf.sample(1 + rng.index(4), rng);
        CHECK(buf.items() == before);
        for (std::size_t v : s) CHECK(std::count(before.begin(), before.end(), v) > 0);
      }
      CHECK(buf.size() <= cap);
      CHECK(buf.items() == std::vector<std::size_t>(model.begin(), model.end()));
    }
  }
}

TEST_CASE("restore") {
  ReplayBuffer buf(2);
  buf.restore({4, 5}, 9);
  CHECK(buf.items() == std::vector<std::size_t>{4, 5});
  CHECK(buf.insertions() == 9);
  CHECK_THROWS_AS(buf.restore({1, 2, 3}, 3), Error);
}
