#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dhhqa {

// Spearman rank correlation with average ranks for ties.
double srcc(const std::vector<double>& x, const std::vector<double>& y);

// Pearson linear correlation on raw values.
double plcc(const std::vector<double>& x, const std::vector<double>& y);

// Kendall tau-b, O(n log n) merge-sort counting with tie corrections.
double krcc(const std::vector<double>& x, const std::vector<double>& y);

double rmse(const std::vector<double>& pred, const std::vector<double>& truth);

double accuracy(const std::vector<int>& pred_labels, const std::vector<int>& true_labels);

// fractional (average) ranks, 1-based
std::vector<double> average_ranks(const std::vector<double>& x);

struct FoldSplit {
  int fold_index = 0;
  std::vector<std::string> train_contents;
  std::vector<std::string> test_contents;
};

// Shuffle contents by seed, partition into k near-equal groups; fold i tests
// group i and trains on the rest. Content-disjoint by construction.
std::vector<FoldSplit> make_folds(const std::vector<std::string>& contents, int k,
                                  std::uint64_t seed);

struct MetricsReport {
  double srcc = 0.0;
  double plcc = 0.0;
  double krcc = 0.0;
  double rmse = 0.0;
  std::optional<double> acc;
  int fold_index = -1;  // -1 encodes "mean"
  std::string label;

  std::string to_json() const;
  static MetricsReport from_json(const std::string& json_text);
};

// Arithmetic mean per field; acc averaged over the folds that report it.
MetricsReport aggregate(const std::vector<MetricsReport>& reports);

// All four regression criteria plus optional accuracy in one go.
MetricsReport evaluate(const std::vector<double>& pred, const std::vector<double>& truth,
                       const std::vector<int>* pred_labels = nullptr,
                       const std::vector<int>* true_labels = nullptr);

}  // namespace dhhqa
