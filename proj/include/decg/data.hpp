#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "decg/text.hpp"

namespace decg {

struct Recording {
  std::string id;
  int label = 0;
  std::vector<double> samples;
  double sampling_rate = 0.0;
};

struct Dataset {
  std::vector<Recording> recordings;
  std::vector<std::string> class_names;
  std::size_t fixed_length = 0;  // 0 while lengths still vary

  std::size_t size() const { return recordings.size(); }
  std::size_t num_classes() const { return class_names.size(); }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(class_names.size(), 0);
    for (const auto& r : recordings) ++counts.at(static_cast<std::size_t>(r.label));
    return counts;
  }

  std::vector<int> labels() const {
    std::vector<int> out;
    out.reserve(recordings.size());
    for (const auto& r : recordings) out.push_back(r.label);
    return out;
  }

  /// Index of the recording with this id; throws std::out_of_range naming it.
  std::size_t find(std::string_view id) const {
    for (std::size_t i = 0; i < recordings.size(); ++i)
      if (recordings[i].id == id) return i;
    throw std::out_of_range("unknown recording id '" + std::string(id) + "'");
  }
};

enum class Schema { kCinc, kBeats };

inline const std::vector<std::string>& cinc_classes() {
  static const std::vector<std::string> names{"N", "A", "O", "P"};
  return names;
}
inline const std::vector<std::string>& beat_classes() {
  static const std::vector<std::string> names{"N", "S", "V", "F", "Q"};
  return names;
}

inline constexpr double kCincRate = 300.0;
inline constexpr double kBeatRate = 125.0;
inline constexpr std::size_t kBeatLength = 187;
inline constexpr std::size_t kCincLength = 18000;

inline Schema parse_schema(const std::string& s) {
  if (s == "cinc") return Schema::kCinc;
  if (s == "beats") return Schema::kBeats;
  throw std::invalid_argument("unknown schema '" + s + "' (expected cinc or beats)");
}

class DataError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Parses file contents. `source` prefixes error messages ("source:line: ...").
inline Dataset parse_recordings(std::string_view body, Schema schema, std::string_view source) {
  Dataset ds;
  ds.class_names = schema == Schema::kCinc ? cinc_classes() : beat_classes();
  auto fail = [&](std::size_t line, const std::string& msg) -> void {
    throw DataError(std::string(source) + ":" + std::to_string(line) + ": " + msg);
  };
  std::size_t line_no = 0;
  for (std::string_view line : text::split(body, '\n')) {
    ++line_no;
    line = text::trim(line);
    if (line.empty()) continue;
    const auto fields = text::split(line, ',');
    Recording r;
    std::size_t first_value = 0, end_value = fields.size();
    if (schema == Schema::kCinc) {
      if (fields.size() < 3) fail(line_no, "expected id,label,v0,...");
      r.id = std::string(text::trim(fields[0]));
      if (r.id.empty()) fail(line_no, "empty recording id");
      const auto label = text::trim(fields[1]);
      const auto& names = ds.class_names;
      const auto it = std::find(names.begin(), names.end(), label);
      if (it == names.end()) fail(line_no, "unknown label '" + std::string(label) + "'");
      r.label = static_cast<int>(it - names.begin());
      r.sampling_rate = kCincRate;
      first_value = 2;
    } else {
      if (fields.size() != kBeatLength + 1) {
        fail(line_no, "expected " + std::to_string(kBeatLength) + " values and a label, got " +
                          std::to_string(fields.size()) + " fields");
      }
      // The public beat files store the class as a float ("1.0e+00").
      double label = 0.0;
      if (!text::parse_number(fields.back(), label) || label != std::floor(label) ||
          label < 0.0 || label >= static_cast<double>(ds.class_names.size())) {
        fail(line_no, "unknown label '" + std::string(text::trim(fields.back())) + "'");
      }
      r.label = static_cast<int>(label);
      r.id = std::to_string(line_no);
      r.sampling_rate = kBeatRate;
      end_value = fields.size() - 1;
    }
    r.samples.reserve(end_value - first_value);
    for (std::size_t i = first_value; i < end_value; ++i) {
      double v = 0.0;
      if (!text::parse_number(fields[i], v) || !std::isfinite(v)) {
        fail(line_no, "bad value '" + std::string(text::trim(fields[i])) + "' in column " +
                          std::to_string(i + 1));
      }
      r.samples.push_back(v);
    }
    ds.recordings.push_back(std::move(r));
  }
  if (ds.recordings.empty()) throw DataError(std::string(source) + ": no recordings");
  if (schema == Schema::kBeats) ds.fixed_length = kBeatLength;
  return ds;
}

inline Dataset load_recordings(const std::string& path, Schema schema) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open data file " + path);
  const std::string body{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  return parse_recordings(body, schema, path);
}

/// Per-recording z-score with the population standard deviation. Flat input maps to zeros.
inline Recording normalize_recording(Recording r) {
  if (r.samples.empty()) throw std::invalid_argument("normalize_recording: empty recording " + r.id);
  const double n = static_cast<double>(r.samples.size());
  const double mean = std::accumulate(r.samples.begin(), r.samples.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : r.samples) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / n);
  for (double& v : r.samples) v = sd > 0.0 ? (v - mean) / sd : 0.0;
  return r;
}

/// Appends zeros up to `target`, or drops the tail beyond it.
inline Recording pad_to_length(Recording r, std::size_t target) {
  if (target < 1) throw std::invalid_argument("pad_to_length: target must be >= 1");
  r.samples.resize(target, 0.0);
  return r;
}

/// normalize then pad, in that order; padding first would pull zeros into the statistics.
inline Dataset preprocess(Dataset ds, std::size_t target) {
  for (auto& r : ds.recordings) {
    const std::size_t original = r.samples.size();
    r = pad_to_length(normalize_recording(std::move(r)), target);
    for (std::size_t i = original; i < target; ++i) {
      if (r.samples[i] != 0.0) throw std::logic_error("preprocess: padded tail is not zero");
    }
  }
  ds.fixed_length = target;
  return ds;
}

inline Dataset subset(const Dataset& ds, const std::vector<std::size_t>& indices) {
  Dataset out;
  out.class_names = ds.class_names;
  out.fixed_length = ds.fixed_length;
  out.recordings.reserve(indices.size());
  for (std::size_t i : indices) out.recordings.push_back(ds.recordings.at(i));
  return out;
}

struct FoldPlan {
  int k = 0;
  std::vector<int> assignments;  // fold of each recording
  std::uint64_t seed = 0;
  std::vector<std::string> shortfalls;  // classes with fewer than k members

  std::vector<std::size_t> test_indices(int fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignments.size(); ++i)
      if (assignments[i] == fold) out.push_back(i);
    return out;
  }
  std::vector<std::size_t> train_indices(int fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignments.size(); ++i)
      if (assignments[i] != fold) out.push_back(i);
    return out;
  }
};

namespace detail {

inline std::vector<std::vector<std::size_t>> members_by_class(const Dataset& ds) {
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes());
  for (std::size_t i = 0; i < ds.size(); ++i)
    by_class.at(static_cast<std::size_t>(ds.recordings[i].label)).push_back(i);
  return by_class;
}

}  // namespace detail

/// Each class is shuffled and dealt round-robin; the dealing position carries over between
/// classes so fold totals stay balanced too.
inline FoldPlan stratified_kfold(const Dataset& ds, int k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("stratified_kfold: k must be >= 2, got " + std::to_string(k));
  if (static_cast<std::size_t>(k) > ds.size()) {
    throw std::invalid_argument("stratified_kfold: k=" + std::to_string(k) + " exceeds dataset size " +
                                std::to_string(ds.size()));
  }
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.assignments.assign(ds.size(), -1);
  std::mt19937_64 rng(seed);
  const auto by_class = detail::members_by_class(ds);
  std::size_t next = 0;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto members = by_class[c];
    if (!members.empty() && members.size() < static_cast<std::size_t>(k)) {
      plan.shortfalls.push_back(ds.class_names[c] + ": " + std::to_string(members.size()) +
                                " members for " + std::to_string(k) + " folds");
    }
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t i : members) plan.assignments[i] = static_cast<int>(next++ % k);
  }
  return plan;
}

/// Indices of a stratified random sample keeping ~`fraction` of every class (at least one each).
inline std::vector<std::size_t> stratified_subsample(const Dataset& ds, double fraction,
                                                     std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw std::invalid_argument("stratified_subsample: fraction must be in (0, 1]");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> out;
  for (auto members : detail::members_by_class(ds)) {
    if (members.empty()) continue;
    std::shuffle(members.begin(), members.end(), rng);
    const auto take = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(members.size()))));
    out.insert(out.end(), members.begin(), members.begin() + static_cast<long>(take));
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// weight_k = N / (K * n_k); the weights average to one.
inline std::vector<double> compute_class_weights(const std::vector<std::size_t>& counts,
                                                 const std::vector<std::string>& names = {}) {
  if (counts.empty()) throw std::invalid_argument("compute_class_weights: no classes");
  double total = 0.0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) {
      const std::string name = c < names.size() ? names[c] : std::to_string(c);
      throw std::invalid_argument("compute_class_weights: class " + name + " has no samples");
    }
    total += static_cast<double>(counts[c]);
  }
  const double k = static_cast<double>(counts.size());
  std::vector<double> w;
  for (std::size_t n : counts) w.push_back(total / (k * static_cast<double>(n)));
  return w;
}

}  // namespace decg
