#include <doctest.h>

#include <algorithm>
#include <set>

#include "dhhqa/rng.hpp"
#include "dhhqa/stats.hpp"

using namespace dhhqa;

namespace {

// O(n^2) pair-enumeration tau-b, independent of the library's merge-count path
double krcc_bruteforce(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  long long concordant = 0, discordant = 0, tx = 0, ty = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = x[i] - x[j], dy = y[i] - y[j];
      if (dx == 0 && dy == 0) continue;
      if (dx == 0) ++tx;
      else if (dy == 0) ++ty;
      else if (dx * dy > 0) ++concordant;
      else ++discordant;
    }
  const double denom = std::sqrt(double(concordant + discordant + tx)) *
                       std::sqrt(double(concordant + discordant + ty));
  return (concordant - discordant) / denom;
}

double srcc_bruteforce(const std::vector<double>& x, const std::vector<double>& y) {
  return plcc(average_ranks(x), average_ranks(y));
}

std::vector<double> random_vector(Rng& rng, std::size_t n, bool with_ties) {
  std::vector<double> v(n);
  for (double& e : v) e = with_ties ? double(rng.below(6)) : rng.uniform(-10, 10);
  return v;
}

}  // namespace

TEST_CASE("average_ranks: distinct, ties, constant") {
  CHECK(average_ranks({10, 30, 20}) == std::vector<double>{1, 3, 2});
  CHECK(average_ranks({5, 5, 1, 9}) == std::vector<double>{2.5, 2.5, 1, 4});
  CHECK(average_ranks({7, 7, 7}) == std::vector<double>{2, 2, 2});
}

TEST_CASE("srcc hand case: one adjacent swap on n=4 gives 0.8") {
  CHECK(srcc({1, 2, 3, 4}, {1, 3, 2, 4}) == doctest::Approx(0.8));
}

TEST_CASE("krcc hand case: one adjacent swap on n=3 gives 1/3") {
  CHECK(krcc({1, 2, 3}, {1, 3, 2}) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("correlations hit +1 / -1 on monotone data") {
  const std::vector<double> x{1, 2, 5, 9}, up{2, 3, 10, 11}, down{4, 3, 2, 1};
  CHECK(srcc(x, up) == doctest::Approx(1.0));
  CHECK(srcc(x, down) == doctest::Approx(-1.0));
  CHECK(krcc(x, up) == doctest::Approx(1.0));
  CHECK(krcc(x, down) == doctest::Approx(-1.0));
  CHECK(plcc(x, {2 * 1 + 3, 2 * 2 + 3, 2 * 5 + 3, 2 * 9 + 3}) == doctest::Approx(1.0));
}

TEST_CASE("plcc is invariant to affine maps of either argument") {
  Rng rng(11);
  const std::vector<double> x = random_vector(rng, 40, false);
  const std::vector<double> y = random_vector(rng, 40, false);
  const double base = plcc(x, y);
  std::vector<double> ax(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) ax[i] = 3.5 * x[i] - 7.0;
  CHECK(plcc(ax, y) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("srcc and krcc agree with brute-force oracles, with and without ties") {
  Rng rng(123);
  for (int trial = 0; trial < 30; ++trial) {
    const bool ties = trial % 2 == 0;
    const std::size_t n = 5 + rng.below(60);
    std::vector<double> x = random_vector(rng, n, ties);
    std::vector<double> y = random_vector(rng, n, ties);
    // guard against accidentally-constant tie vectors
    if (std::set<double>(x.begin(), x.end()).size() < 2) x[0] += 1.0;
    if (std::set<double>(y.begin(), y.end()).size() < 2) y[0] += 1.0;
    CAPTURE(trial);
    CHECK(srcc(x, y) == doctest::Approx(srcc_bruteforce(x, y)).epsilon(1e-10));
    CHECK(krcc(x, y) == doctest::Approx(krcc_bruteforce(x, y)).epsilon(1e-10));
  }
}

TEST_CASE("degenerate inputs throw instead of returning NaN") {
  const std::vector<double> c{2, 2, 2, 2}, v{1, 2, 3, 4};
  CHECK_THROWS_AS(srcc(c, v), std::invalid_argument);
  CHECK_THROWS_AS(plcc(v, c), std::invalid_argument);
  CHECK_THROWS_AS(krcc(c, v), std::invalid_argument);
  CHECK_THROWS_AS(srcc({1, 2}, {1, 2, 3}), std::invalid_argument);
  CHECK_THROWS_AS(srcc({1}, {1}), std::invalid_argument);
}

TEST_CASE("rmse and accuracy hand cases") {
  CHECK(rmse({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(rmse({0, 0}, {3, 4}) == doctest::Approx(std::sqrt(12.5)));
  CHECK(accuracy({0, 1, 2, 1}, {0, 1, 1, 1}) == doctest::Approx(0.75));
  CHECK_THROWS_AS(accuracy({}, {}), std::invalid_argument);
}

TEST_CASE("make_folds partitions contents disjointly and near-evenly") {
  std::vector<std::string> contents;
  for (int i = 0; i < 55; ++i) contents.push_back("head" + std::to_string(i));
  const auto folds = make_folds(contents, 5, 42);
  REQUIRE(folds.size() == 5);

  std::set<std::string> all_test;
  for (const FoldSplit& f : folds) {
    CHECK(f.test_contents.size() == 11);
    CHECK(f.train_contents.size() == 44);
    for (const std::string& c : f.test_contents) {
      CHECK(all_test.insert(c).second);  // content-disjoint across folds
      CHECK(std::find(f.train_contents.begin(), f.train_contents.end(), c) ==
            f.train_contents.end());
    }
  }
  CHECK(all_test.size() == 55);
}

TEST_CASE("make_folds handles non-divisible sizes and is seed-deterministic") {
  std::vector<std::string> contents;
  for (int i = 0; i < 7; ++i) contents.push_back("c" + std::to_string(i));
  const auto folds = make_folds(contents, 3, 9);
  std::vector<std::size_t> sizes;
  for (const FoldSplit& f : folds) sizes.push_back(f.test_contents.size());
  std::sort(sizes.begin(), sizes.end());
  CHECK(sizes == std::vector<std::size_t>{2, 2, 3});

  const auto again = make_folds(contents, 3, 9);
  for (std::size_t i = 0; i < folds.size(); ++i)
    CHECK(folds[i].test_contents == again[i].test_contents);
  const auto other = make_folds(contents, 3, 10);
  bool any_diff = false;
  for (std::size_t i = 0; i < folds.size(); ++i)
    any_diff |= folds[i].test_contents != other[i].test_contents;
  CHECK(any_diff);
}

TEST_CASE("make_folds rejects k larger than the content count") {
  CHECK_THROWS_AS(make_folds({"a", "b"}, 3, 0), std::invalid_argument);
}

TEST_CASE("evaluate bundles the regression criteria and optional accuracy") {
  const std::vector<double> truth{10, 20, 30, 40, 50};
  const std::vector<double> pred{12, 18, 33, 41, 48};
  const MetricsReport r = evaluate(pred, truth);
  CHECK(r.srcc == doctest::Approx(srcc(pred, truth)));
  CHECK(r.plcc == doctest::Approx(plcc(pred, truth)));
  CHECK(r.krcc == doctest::Approx(krcc(pred, truth)));
  CHECK(r.rmse == doctest::Approx(rmse(pred, truth)));
  CHECK(!r.acc.has_value());

  const std::vector<int> pl{0, 1, 2, 2, 1}, tl{0, 1, 2, 1, 1};
  const MetricsReport r2 = evaluate(pred, truth, &pl, &tl);
  REQUIRE(r2.acc.has_value());
  CHECK(*r2.acc == doctest::Approx(0.8));
}

TEST_CASE("MetricsReport JSON round-trips, including the mean sentinel") {
  MetricsReport r;
  r.srcc = 0.912345678901234;
  r.plcc = -0.25;
  r.krcc = 0.5;
  r.rmse = 7.25;
  r.acc = 0.6;
  r.fold_index = 2;
  r.label = "fold2";
  const MetricsReport back = MetricsReport::from_json(r.to_json());
  CHECK(back.srcc == r.srcc);
  CHECK(back.plcc == r.plcc);
  CHECK(back.krcc == r.krcc);
  CHECK(back.rmse == r.rmse);
  CHECK(back.acc == r.acc);
  CHECK(back.fold_index == 2);

  MetricsReport mean;
  mean.fold_index = -1;
  const std::string j = mean.to_json();
  CHECK(j.find("\"mean\"") != std::string::npos);
  CHECK(MetricsReport::from_json(j).fold_index == -1);
}

TEST_CASE("aggregate averages fields and tolerates missing accuracy") {
  MetricsReport a, b;
  a.srcc = 0.8;
  a.plcc = 0.6;
  a.krcc = 0.4;
  a.rmse = 10;
  a.acc = 0.5;
  a.fold_index = 0;
  b.srcc = 0.6;
  b.plcc = 0.8;
  b.krcc = 0.6;
  b.rmse = 20;
  b.fold_index = 1;
  const MetricsReport m = aggregate({a, b});
  CHECK(m.fold_index == -1);
  CHECK(m.srcc == doctest::Approx(0.7));
  CHECK(m.plcc == doctest::Approx(0.7));
  CHECK(m.krcc == doctest::Approx(0.5));
  CHECK(m.rmse == doctest::Approx(15));
  REQUIRE(m.acc.has_value());
  CHECK(*m.acc == doctest::Approx(0.5));
}
