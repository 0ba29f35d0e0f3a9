#include "dhhqa/stats.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "dhhqa/rng.hpp"

namespace dhhqa {

namespace {

void check_lengths(const std::vector<double>& x, const std::vector<double>& y, std::size_t min_n) {
  if (x.size() != y.size()) throw std::invalid_argument("correlation: length mismatch");
  if (x.size() < min_n) throw std::invalid_argument("correlation: too few samples");
}

bool is_constant(const std::vector<double>& x) {
  return std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); });
}

// number of exchanges a merge sort performs on y, i.e. discordant pairs
// among x-distinct pairs once the input is sorted by (x, y)
std::uint64_t merge_count(std::vector<double>& y, std::vector<double>& tmp, std::size_t lo,
                          std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::uint64_t swaps = merge_count(y, tmp, lo, mid) + merge_count(y, tmp, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (y[j] < y[i]) {
      swaps += mid - i;
      tmp[k++] = y[j++];
    } else {
      tmp[k++] = y[i++];
    }
  }
  while (i < mid) tmp[k++] = y[i++];
  while (j < hi) tmp[k++] = y[j++];
  std::copy(tmp.begin() + lo, tmp.begin() + hi, y.begin() + lo);
  return swaps;
}

}  // namespace

std::vector<double> average_ranks(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;  // average of 1-based ranks i+1..j+1
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double plcc(const std::vector<double>& x, const std::vector<double>& y) {
  check_lengths(x, y, 2);
  if (is_constant(x) || is_constant(y))
    throw std::invalid_argument("plcc: zero-variance input");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  return sxy / std::sqrt(sxx * syy);
}

double srcc(const std::vector<double>& x, const std::vector<double>& y) {
  check_lengths(x, y, 2);
  if (is_constant(x) || is_constant(y))
    throw std::invalid_argument("srcc: constant input vector");
  return plcc(average_ranks(x), average_ranks(y));
}

double krcc(const std::vector<double>& x, const std::vector<double>& y) {
  check_lengths(x, y, 2);
  if (is_constant(x) || is_constant(y))
    throw std::invalid_argument("krcc: all-tied input vector");
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return x[a] != x[b] ? x[a] < x[b] : y[a] < y[b];
  });

  const auto pairs = [](std::uint64_t t) { return t * (t - 1) / 2; };
  std::uint64_t xtie = 0, ntie = 0;
  {
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
      xtie += pairs(j - i + 1);
      // joint ties within the x group
      std::size_t a = i;
      while (a <= j) {
        std::size_t b = a;
        while (b + 1 <= j && y[order[b + 1]] == y[order[a]]) ++b;
        ntie += pairs(b - a + 1);
        a = b + 1;
      }
      i = j + 1;
    }
  }
  std::vector<double> ys(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = y[order[i]];
  std::vector<double> tmp(n);
  const std::uint64_t dis = merge_count(ys, tmp, 0, n);
  std::uint64_t ytie = 0;
  {
    std::size_t i = 0;  // ys is now sorted
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && ys[j + 1] == ys[i]) ++j;
      ytie += pairs(j - i + 1);
      i = j + 1;
    }
  }
  const double tot = static_cast<double>(pairs(n));
  const double numer = tot - static_cast<double>(xtie) - static_cast<double>(ytie) +
                       static_cast<double>(ntie) - 2.0 * static_cast<double>(dis);
  return numer / std::sqrt((tot - static_cast<double>(xtie)) * (tot - static_cast<double>(ytie)));
}

double rmse(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.size() != truth.size() || pred.empty())
    throw std::invalid_argument("rmse: length mismatch or empty");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return std::sqrt(s / static_cast<double>(pred.size()));
}

double accuracy(const std::vector<int>& pred_labels, const std::vector<int>& true_labels) {
  if (pred_labels.size() != true_labels.size() || pred_labels.empty())
    throw std::invalid_argument("accuracy: length mismatch or empty");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred_labels.size(); ++i)
    if (pred_labels[i] == true_labels[i]) ++hit;
  return static_cast<double>(hit) / static_cast<double>(pred_labels.size());
}

std::vector<FoldSplit> make_folds(const std::vector<std::string>& contents, int k,
                                  std::uint64_t seed) {
  if (k < 1 || contents.size() < static_cast<std::size_t>(k))
    throw std::invalid_argument("make_folds: fewer contents than folds");
  std::vector<std::string> shuffled = contents;
  Rng rng(seed);
  for (std::size_t i = shuffled.size(); i > 1; --i)
    std::swap(shuffled[i - 1], shuffled[rng.below(i)]);

  // first (n mod k) groups take one extra element
  const std::size_t n = shuffled.size();
  const std::size_t base = n / k, extra = n % k;
  std::vector<FoldSplit> folds(k);
  std::size_t pos = 0;
  std::vector<std::pair<std::size_t, std::size_t>> ranges(k);
  for (int i = 0; i < k; ++i) {
    const std::size_t len = base + (static_cast<std::size_t>(i) < extra ? 1 : 0);
    ranges[i] = {pos, pos + len};
    pos += len;
  }
  for (int i = 0; i < k; ++i) {
    folds[i].fold_index = i;
    for (int g = 0; g < k; ++g) {
      auto& dst = (g == i) ? folds[i].test_contents : folds[i].train_contents;
      for (std::size_t p = ranges[g].first; p < ranges[g].second; ++p) dst.push_back(shuffled[p]);
    }
  }
  return folds;
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["srcc"] = srcc;
  j["plcc"] = plcc;
  j["krcc"] = krcc;
  j["rmse"] = rmse;
  if (acc) j["acc"] = *acc;
  j["fold"] = fold_index < 0 ? nlohmann::json("mean") : nlohmann::json(fold_index);
  if (!label.empty()) j["label"] = label;
  return j.dump(2);
}

MetricsReport MetricsReport::from_json(const std::string& json_text) {
  const auto j = nlohmann::json::parse(json_text);
  MetricsReport r;
  r.srcc = j.at("srcc").get<double>();
  r.plcc = j.at("plcc").get<double>();
  r.krcc = j.at("krcc").get<double>();
  r.rmse = j.at("rmse").get<double>();
  if (j.contains("acc") && !j["acc"].is_null()) r.acc = j["acc"].get<double>();
  if (j.contains("fold") && j["fold"].is_number_integer()) r.fold_index = j["fold"].get<int>();
  if (j.contains("label")) r.label = j["label"].get<std::string>();
  return r;
}

MetricsReport aggregate(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("aggregate: no reports");
  MetricsReport mean;
  mean.fold_index = -1;
  double acc_sum = 0.0;
  int acc_n = 0;
  for (const MetricsReport& r : reports) {
    mean.srcc += r.srcc;
    mean.plcc += r.plcc;
    mean.krcc += r.krcc;
    mean.rmse += r.rmse;
    if (r.acc) {
      acc_sum += *r.acc;
      ++acc_n;
    }
  }
  const double n = static_cast<double>(reports.size());
  mean.srcc /= n;
  mean.plcc /= n;
  mean.krcc /= n;
  mean.rmse /= n;
  if (acc_n > 0) {
    if (acc_n != static_cast<int>(reports.size()))
      std::cerr << "aggregate: accuracy present in only " << acc_n << "/" << reports.size()
                << " folds, averaging over those\n";
    mean.acc = acc_sum / acc_n;
  }
  mean.label = reports.front().label;
  return mean;
}

MetricsReport evaluate(const std::vector<double>& pred, const std::vector<double>& truth,
                       const std::vector<int>* pred_labels, const std::vector<int>* true_labels) {
  MetricsReport r;
  r.srcc = srcc(pred, truth);
  r.plcc = plcc(pred, truth);
  r.krcc = krcc(pred, truth);
  r.rmse = rmse(pred, truth);
  if (pred_labels && true_labels) r.acc = accuracy(*pred_labels, *true_labels);
  return r;
}

}  // namespace dhhqa
