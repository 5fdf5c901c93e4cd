// Synthetic stand-ins for the two ECG datasets, for demos and tests that must run offline.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "decg/data.hpp"
#include "decg/text.hpp"

namespace decg::synth {

namespace detail {

inline double bump(double t, double centre, double width) {
  const double z = (t - centre) / width;
  return std::exp(-0.5 * z * z);
}

// One heartbeat-like template per class, t in [0, 1).
inline double beat_shape(int label, double t, double shift) {
  const double u = t - shift;
  switch (label) {
    case 0: return bump(u, 0.25, 0.02) - 0.15 * bump(u, 0.30, 0.02) + 0.3 * bump(u, 0.55, 0.06);
    case 1: return bump(u, 0.15, 0.02) + 0.3 * bump(u, 0.40, 0.05);
    case 2: return -0.8 * bump(u, 0.30, 0.07) + 0.2 * bump(u, 0.60, 0.08);
    case 3: return 0.7 * bump(u, 0.22, 0.03) + 0.7 * bump(u, 0.34, 0.05);
    default: return 0.5 * std::sin(18.0 * u) * bump(u, 0.4, 0.2);
  }
}

}  // namespace detail

/// 187-sample beats at 125 Hz; `counts[c]` beats of class c, shuffled together.
inline Dataset beats(const std::vector<std::size_t>& counts, std::uint64_t seed, double noise = 0.05) {
  Dataset ds;
  ds.class_names = beat_classes();
  ds.fixed_length = kBeatLength;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> shift(-0.04, 0.04), gain(0.8, 1.2);
  std::size_t id = 0;
  for (std::size_t c = 0; c < counts.size() && c < ds.class_names.size(); ++c) {
    for (std::size_t i = 0; i < counts[c]; ++i) {
      Recording r;
      r.id = std::to_string(++id);
      r.label = static_cast<int>(c);
      r.sampling_rate = kBeatRate;
      const double s = shift(rng), g = gain(rng);
      for (std::size_t t = 0; t < kBeatLength; ++t) {
        const double x = static_cast<double>(t) / static_cast<double>(kBeatLength);
        r.samples.push_back(g * detail::beat_shape(static_cast<int>(c), x, s) + noise * n01(rng));
      }
      ds.recordings.push_back(std::move(r));
    }
  }
  std::shuffle(ds.recordings.begin(), ds.recordings.end(), rng);
  return ds;
}

/// Variable-length rhythm strips at 300 Hz with N/A/O/P character: regular beats,
/// irregular beats without a P wave, beats with ectopics, and noise.
inline Dataset rhythms(const std::vector<std::size_t>& counts, std::size_t min_len, std::size_t max_len,
                       std::uint64_t seed) {
  Dataset ds;
  ds.class_names = cinc_classes();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> length(min_len, max_len);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::size_t id = 0;
  for (std::size_t c = 0; c < counts.size() && c < 4; ++c) {
    for (std::size_t i = 0; i < counts[c]; ++i) {
      Recording r;
      r.id = "S" + std::to_string(++id);
      r.label = static_cast<int>(c);
      r.sampling_rate = kCincRate;
      const std::size_t len = length(rng);
      r.samples.assign(len, 0.0);
      if (c == 3) {
        for (double& v : r.samples) v = n01(rng);
      } else {
        const double period = 0.6 + 0.3 * unit(rng);  // seconds
        double beat_at = 0.2 * unit(rng);
        const double duration = static_cast<double>(len) / kCincRate;
        while (beat_at < duration) {
          const bool ectopic = c == 2 && unit(rng) < 0.3;
          for (std::size_t t = 0; t < len; ++t) {
            const double sec = static_cast<double>(t) / kCincRate;
            const double d = sec - beat_at;
            if (d < -0.3 || d > 0.5) continue;
            if (c != 1) r.samples[t] += 0.15 * detail::bump(d, -0.15, 0.025);  // P wave
            r.samples[t] += ectopic ? -0.9 * detail::bump(d, 0.0, 0.04) : detail::bump(d, 0.0, 0.012);
            r.samples[t] += 0.3 * detail::bump(d, 0.25, 0.05);
          }
          double gap = period;
          if (c == 1) gap *= 0.6 + 0.8 * unit(rng);  // irregularly irregular
          if (ectopic) gap *= 1.3;
          beat_at += gap;
        }
        if (c == 1) {  // fibrillatory baseline
          const double phase = 6.28 * unit(rng);
          for (std::size_t t = 0; t < len; ++t)
            r.samples[t] += 0.05 * std::sin(2.0 * M_PI * 6.0 * static_cast<double>(t) / kCincRate + phase);
        }
        for (double& v : r.samples) v += 0.03 * n01(rng);
      }
      ds.recordings.push_back(std::move(r));
    }
  }
  std::shuffle(ds.recordings.begin(), ds.recordings.end(), rng);
  return ds;
}

/// Renders a dataset in the interchange format of `schema`.
inline std::string to_text(const Dataset& ds, Schema schema) {
  std::string out;
  for (const auto& r : ds.recordings) {
    std::string line;
    if (schema == Schema::kCinc) line = r.id + "," + ds.class_names.at(static_cast<std::size_t>(r.label));
    for (double v : r.samples) {
      if (!line.empty()) line += ",";
      line += text::format_fixed(v, 6);
    }
    if (schema == Schema::kBeats) line += "," + std::to_string(r.label);
    out += line + "\n";
  }
  return out;
}

}  // namespace decg::synth
