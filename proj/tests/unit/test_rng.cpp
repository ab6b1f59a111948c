#include <cmath>
#include <set>

#include "doctest.h"
#include "pcbackdoor/rng.hpp"

using namespace pcbackdoor;

TEST_CASE("rng: equal seeds give equal streams") {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    differs |= x != c.next_u64();
  }
  CHECK(differs);
}

TEST_CASE("rng: derived streams depend on every key") {
  CHECK(Rng::derive(7, {1, 2}).next_u64() == Rng::derive(7, {1, 2}).next_u64());
  CHECK(Rng::derive(7, {1, 2}).next_u64() != Rng::derive(7, {2, 1}).next_u64());
  CHECK(Rng::derive(7, {1}).next_u64() != Rng::derive(7, {1, 0}).next_u64());
  CHECK(Rng::derive(7, {1}).next_u64() != Rng::derive(8, {1}).next_u64());
}

TEST_CASE("rng: uniform stays in range and has the right mean") {
  Rng r(1);
  double sum = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.01));
}

TEST_CASE("rng: index covers [0, n) uniformly") {
  Rng r(2);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) {
    const auto k = r.index(7);
    REQUIRE(k < 7);
    ++counts[k];
  }
  // 4 sigma of a binomial(70000, 1/7).
  const double sigma = std::sqrt(n * (1.0 / 7) * (6.0 / 7));
  for (int c : counts) CHECK(std::abs(c - n / 7.0) < 4 * sigma);
  CHECK_THROWS(r.index(0));
}

TEST_CASE("rng: integer is inclusive") {
  Rng r(3);
  std::set<std::int64_t> seen;
  for (int i = 0; i < 1000; ++i) seen.insert(r.integer(-2, 2));
  CHECK(seen == std::set<std::int64_t>{-2, -1, 0, 1, 2});
}

TEST_CASE("rng: normal moments") {
  Rng r(4);
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(s2 / n == doctest::Approx(1.0).epsilon(0.02));
}
