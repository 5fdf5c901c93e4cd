#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "decg/text.hpp"

namespace decg {

/// K x K counts; rows are the reference class, columns the predicted class.
struct ConfusionTable {
  std::size_t k = 0;
  std::vector<std::string> names;
  std::vector<std::int64_t> counts;

  ConfusionTable() = default;
  explicit ConfusionTable(std::size_t classes, std::vector<std::string> class_names = {})
      : k(classes), names(std::move(class_names)), counts(classes * classes, 0) {
    if (names.empty())
      for (std::size_t c = 0; c < k; ++c) names.push_back(std::to_string(c));
    if (names.size() != k) throw std::invalid_argument("ConfusionTable: names/classes mismatch");
  }

  std::int64_t& at(std::size_t ref, std::size_t pred) { return counts.at(ref * k + pred); }
  std::int64_t at(std::size_t ref, std::size_t pred) const { return counts.at(ref * k + pred); }

  std::int64_t row_sum(std::size_t r) const {
    std::int64_t s = 0;
    for (std::size_t p = 0; p < k; ++p) s += at(r, p);
    return s;
  }
  std::int64_t col_sum(std::size_t p) const {
    std::int64_t s = 0;
    for (std::size_t r = 0; r < k; ++r) s += at(r, p);
    return s;
  }
  std::int64_t total() const { return std::accumulate(counts.begin(), counts.end(), std::int64_t{0}); }

  ConfusionTable& operator+=(const ConfusionTable& o) {
    if (o.k != k) throw std::invalid_argument("ConfusionTable: size mismatch");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
    return *this;
  }
  friend bool operator==(const ConfusionTable&, const ConfusionTable&) = default;
};

inline ConfusionTable build_confusion(std::span<const int> reference, std::span<const int> predicted,
                                      std::size_t k, std::vector<std::string> names = {}) {
  if (reference.size() != predicted.size()) {
    throw std::invalid_argument("build_confusion: " + std::to_string(reference.size()) +
                                " reference labels vs " + std::to_string(predicted.size()) +
                                " predictions");
  }
  ConfusionTable t(k, std::move(names));
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const int r = reference[i], p = predicted[i];
    if (r < 0 || p < 0 || static_cast<std::size_t>(r) >= k || static_cast<std::size_t>(p) >= k)
      throw std::invalid_argument("build_confusion: label out of range at index " + std::to_string(i));
    ++t.at(static_cast<std::size_t>(r), static_cast<std::size_t>(p));
  }
  return t;
}

/// Classes entering the headline scores: the CinC label set drops Noisy, anything else keeps all.
inline std::vector<std::size_t> default_scored_classes(const std::vector<std::string>& names) {
  if (names == std::vector<std::string>{"N", "A", "O", "P"}) return {0, 1, 2};
  std::vector<std::size_t> all(names.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return all;
}

struct F1Result {
  std::vector<double> per_class;        // every class, scored or not
  std::vector<std::size_t> scored;      // classes averaged into final
  std::vector<bool> degenerate;         // no reference and no prediction: F1 taken as 0
  double final_score = 0.0;

  bool any_degenerate() const { return std::find(degenerate.begin(), degenerate.end(), true) != degenerate.end(); }
};

inline double mean_of(std::span<const double> v, std::span<const std::size_t> idx) {
  if (idx.empty()) throw std::invalid_argument("mean over an empty class set");
  double s = 0.0;
  for (std::size_t i : idx) s += v[i];
  return s / static_cast<double>(idx.size());
}

/// F1_x = 2 Xx / (sum X + sum x); final = mean over scored classes.
inline F1Result f1_scores(const ConfusionTable& t, std::vector<std::size_t> scored) {
  F1Result r;
  r.scored = std::move(scored);
  for (std::size_t c = 0; c < t.k; ++c) {
    const auto denom = t.row_sum(c) + t.col_sum(c);
    r.degenerate.push_back(denom == 0);
    r.per_class.push_back(denom == 0 ? 0.0 : 2.0 * static_cast<double>(t.at(c, c)) / static_cast<double>(denom));
  }
  for (std::size_t c : r.scored)
    if (c >= t.k) throw std::invalid_argument("f1_scores: scored class out of range");
  r.final_score = mean_of(r.per_class, r.scored);
  return r;
}

inline F1Result f1_scores(const ConfusionTable& t) { return f1_scores(t, default_scored_classes(t.names)); }

/// Mean per-class recall over `classes`.
inline double average_accuracy(const ConfusionTable& t, std::span<const std::size_t> classes) {
  if (classes.empty()) throw std::invalid_argument("average_accuracy: no classes");
  double s = 0.0;
  for (std::size_t c : classes) {
    const auto row = t.row_sum(c);
    if (row == 0) throw std::invalid_argument("average_accuracy: class " + t.names.at(c) + " has no reference samples");
    s += static_cast<double>(t.at(c, c)) / static_cast<double>(row);
  }
  return s / static_cast<double>(classes.size());
}

inline double average_accuracy(const ConfusionTable& t) {
  const auto classes = default_scored_classes(t.names);
  return average_accuracy(t, classes);
}

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  friend bool operator==(const RocPoint&, const RocPoint&) = default;
};

/// Threshold sweep over distinct scores, highest first. Tied scores move together.
inline std::vector<RocPoint> roc_points(std::span<const double> scores, std::span<const bool> positives) {
  if (scores.size() != positives.size()) throw std::invalid_argument("roc_points: length mismatch");
  const auto pos = static_cast<std::size_t>(std::count(positives.begin(), positives.end(), true));
  const std::size_t neg = positives.size() - pos;
  if (pos == 0 || neg == 0) throw std::invalid_argument("roc_points: need at least one positive and one negative");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<RocPoint> pts{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) (positives[order[i]] ? tp : fp)++;
    pts.push_back({static_cast<double>(fp) / static_cast<double>(neg), static_cast<double>(tp) / static_cast<double>(pos)});
  }
  return pts;
}

/// Trapezoidal area; points must be sorted by FPR.
inline double auc(std::span<const RocPoint> pts) {
  double a = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    if (pts[i].fpr < pts[i - 1].fpr) throw std::invalid_argument("auc: points not sorted by FPR");
    a += (pts[i].fpr - pts[i - 1].fpr) * (pts[i].tpr + pts[i - 1].tpr) / 2.0;
  }
  return a;
}

/// TPR at `x`, interpolating linearly; at a vertical segment the highest TPR wins.
inline double tpr_at(std::span<const RocPoint> pts, double x) {
  double best = 0.0;
  bool found = false;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (pts[i].fpr == x) {
      best = found ? std::max(best, pts[i].tpr) : pts[i].tpr;
      found = true;
    }
  }
  if (found) return best;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    if (pts[i - 1].fpr < x && x < pts[i].fpr) {
      const double f = (x - pts[i - 1].fpr) / (pts[i].fpr - pts[i - 1].fpr);
      return pts[i - 1].tpr + f * (pts[i].tpr - pts[i - 1].tpr);
    }
  }
  throw std::invalid_argument("tpr_at: FPR outside the curve");
}

struct RocSet {
  std::vector<std::vector<RocPoint>> per_class;
  std::vector<double> per_class_auc;
  std::vector<RocPoint> macro;  // mean TPR on a 101-point FPR grid
  double macro_auc = 0.0;
  std::vector<RocPoint> micro;  // pooled one-vs-rest decisions
  double micro_auc = 0.0;
};

/// One-vs-rest curves from row-major (N, K) probabilities. Classes without both
/// positives and negatives are skipped (their curve is empty, AUC NaN).
inline RocSet roc_one_vs_rest(std::span<const double> probs, std::span<const int> labels, std::size_t k) {
  if (probs.size() != labels.size() * k) throw std::invalid_argument("roc_one_vs_rest: probs/labels size mismatch");
  const std::size_t n = labels.size();
  RocSet out;
  std::vector<double> scores(n), all_scores;
  // vector<bool> has no contiguous storage for std::span.
  const auto pos = std::make_unique<bool[]>(n);
  const auto all_pos = std::make_unique<bool[]>(n * k);
  std::vector<std::size_t> usable;
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t np = 0;
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = probs[i * k + c];
      pos[i] = labels[i] == static_cast<int>(c);
      np += pos[i];
      all_pos[all_scores.size()] = pos[i];
      all_scores.push_back(scores[i]);
    }
    if (np == 0 || np == n) {
      out.per_class.emplace_back();
      out.per_class_auc.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    out.per_class.push_back(roc_points(scores, std::span<const bool>(pos.get(), n)));
    out.per_class_auc.push_back(auc(out.per_class.back()));
    usable.push_back(c);
  }
  if (usable.empty()) throw std::invalid_argument("roc_one_vs_rest: no class has both positives and negatives");
  for (int g = 0; g <= 100; ++g) {
    const double x = g / 100.0;
    double s = 0.0;
    for (std::size_t c : usable) s += tpr_at(out.per_class[c], x);
    out.macro.push_back({x, s / static_cast<double>(usable.size())});
  }
  out.macro_auc = auc(out.macro);
  out.micro = roc_points(all_scores, std::span<const bool>(all_pos.get(), n * k));
  out.micro_auc = auc(out.micro);
  return out;
}

/// "class,name,value" rows.
inline std::string format_metrics(const ConfusionTable& t, const F1Result& f1, double avg_acc) {
  std::string out = "class,name,value\n";
  auto row = [&](const std::string& cls, const std::string& name, const std::string& value) {
    out += cls + "," + name + "," + value + "\n";
  };
  for (std::size_t c = 0; c < t.k; ++c) {
    row(t.names[c], "f1", text::format_fixed(f1.per_class[c], 6));
    row(t.names[c], "reference_count", std::to_string(t.row_sum(c)));
    row(t.names[c], "predicted_count", std::to_string(t.col_sum(c)));
    if (f1.degenerate[c]) row(t.names[c], "warning", "degenerate_f1");
  }
  row("all", "final_f1", text::format_fixed(f1.final_score, 6));
  row("all", "average_accuracy", text::format_fixed(avg_acc, 6));
  row("all", "total", std::to_string(t.total()));
  return out;
}

inline std::string format_confusion(const ConfusionTable& t) {
  std::string out = "reference\\predicted";
  for (const auto& n : t.names) out += "," + n;
  out += "\n";
  for (std::size_t r = 0; r < t.k; ++r) {
    out += t.names[r];
    for (std::size_t p = 0; p < t.k; ++p) out += "," + std::to_string(t.at(r, p));
    out += "\n";
  }
  return out;
}

}  // namespace decg
