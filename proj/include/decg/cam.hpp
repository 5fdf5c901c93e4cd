#pragma once

#include <cstddef>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "decg/data.hpp"
#include "decg/model.hpp"
#include "decg/serialize.hpp"
#include "decg/text.hpp"

namespace decg {

/// Linear classifier after global average pooling: logits = mean_t(f) * w + b.
struct ClassifierHead {
  std::size_t channels = 0;
  std::size_t classes = 0;
  std::vector<double> w;  // (C, K) row-major
  std::vector<double> b;  // (K)

  double weight(std::size_t c, std::size_t k) const { return w[c * classes + k]; }
};

template <class T>
ClassifierHead head_of(const Network<T>& net) {
  ClassifierHead h;
  h.channels = net.head_weight.dim(0);
  h.classes = net.head_weight.dim(1);
  for (T v : net.head_weight.data()) h.w.push_back(static_cast<double>(v));
  for (T v : net.head_bias.data()) h.b.push_back(static_cast<double>(v));
  return h;
}

struct CamMap {
  std::size_t k = 0;
  std::vector<double> values;        // M_k(t) at feature resolution
  std::vector<double> interpolated;  // at input resolution, filled by the caller
  double score = 0.0;                // S_k, from pooling first and then the head
  double bias = 0.0;
};

/// M_k(t) = sum_c w[c,k] f[t,c] over a (1, L, C) or (L, C) feature map.
template <class T>
CamMap compute_cam(const Tensor<T>& features, const ClassifierHead& head, std::size_t k) {
  const Shape& s = features.shape();
  std::size_t len = 0, ch = 0;
  if (s.rank() == 3 && s[0] == 1) {
    len = s[1];
    ch = s[2];
  } else if (s.rank() == 2) {
    len = s[0];
    ch = s[1];
  } else {
    throw ShapeError("compute_cam: expected a single-sample feature map, got " + s.str());
  }
  if (ch != head.channels)
    throw ShapeError("compute_cam: " + std::to_string(ch) + " feature channels vs head with " +
                     std::to_string(head.channels));
  if (k >= head.classes)
    throw std::out_of_range("compute_cam: class " + std::to_string(k) + " out of range for " +
                            std::to_string(head.classes) + " classes");
  const auto f = features.data();
  CamMap m;
  m.k = k;
  m.bias = head.b[k];
  m.values.assign(len, 0.0);
  for (std::size_t t = 0; t < len; ++t)
    for (std::size_t c = 0; c < ch; ++c) m.values[t] += head.weight(c, k) * static_cast<double>(f[t * ch + c]);
  // Independent route: pool each channel, then apply the head.
  m.score = m.bias;
  for (std::size_t c = 0; c < ch; ++c) {
    double mean = 0.0;
    for (std::size_t t = 0; t < len; ++t) mean += static_cast<double>(f[t * ch + c]);
    m.score += head.weight(c, k) * mean / static_cast<double>(len);
  }
  return m;
}

/// Endpoint-preserving linear resampling: out[i] = values at i * (L - 1) / (target - 1).
inline std::vector<double> interpolate_to_length(const std::vector<double>& values, std::size_t target) {
  if (values.empty()) throw std::invalid_argument("interpolate_to_length: empty input");
  if (target < 1) throw std::invalid_argument("interpolate_to_length: target must be >= 1");
  const std::size_t len = values.size();
  if (len == 1) return std::vector<double>(target, values[0]);
  if (target == 1) return {values[0]};
  std::vector<double> out(target);
  const double step = static_cast<double>(len - 1) / static_cast<double>(target - 1);
  for (std::size_t i = 0; i < target; ++i) {
    if (i == target - 1) {
      out[i] = values.back();
      continue;
    }
    const double pos = static_cast<double>(i) * step;
    const auto lo = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    out[i] = frac == 0.0 ? values[lo] : values[lo] + frac * (values[lo + 1] - values[lo]);
  }
  return out;
}

struct CamResult {
  std::vector<CamMap> maps;  // one per class, interpolated to the recording length
  std::vector<double> probs;
  std::size_t predicted = 0;
};

/// Eval-mode maps for every class of one preprocessed recording.
template <class T>
CamResult cam_for_recording(const Network<T>& net, const Recording& r) {
  const std::size_t len = r.samples.size();
  Tensor<T> x(Shape{1, len, 1});
  for (std::size_t i = 0; i < len; ++i) x[i] = static_cast<T>(r.samples[i]);
  const auto pred = predict(net, std::move(x));
  const auto head = head_of(net);
  CamResult out;
  for (T p : pred.probs.data()) out.probs.push_back(static_cast<double>(p));
  for (std::size_t k = 1; k < out.probs.size(); ++k)
    if (out.probs[k] > out.probs[out.predicted]) out.predicted = k;
  for (std::size_t k = 0; k < head.classes; ++k) {
    auto m = compute_cam(pred.features, head, k);
    m.interpolated = interpolate_to_length(m.values, len);
    out.maps.push_back(std::move(m));
  }
  return out;
}

/// "t_seconds,signal,cam_<class>..." rows.
inline std::string format_cam(const Recording& r, const std::vector<CamMap>& maps,
                              const std::vector<std::string>& class_names) {
  if (maps.size() != class_names.size())
    throw std::invalid_argument("format_cam: " + std::to_string(maps.size()) + " maps for " +
                                std::to_string(class_names.size()) + " classes");
  std::string out = "t_seconds,signal";
  for (const auto& m : maps) {
    if (m.interpolated.size() != r.samples.size()) {
      throw std::invalid_argument("format_cam: map for class " + class_names.at(m.k) + " has length " +
                                  std::to_string(m.interpolated.size()) + ", recording has " +
                                  std::to_string(r.samples.size()));
    }
    out += ",cam_" + class_names.at(m.k);
  }
  out += "\n";
  for (std::size_t i = 0; i < r.samples.size(); ++i) {
    out += text::format_real(static_cast<double>(i) / r.sampling_rate);
    out += "," + text::format_real(r.samples[i]);
    for (const auto& m : maps) out += "," + text::format_real(m.interpolated[i]);
    out += "\n";
  }
  return out;
}

struct CamMeta {
  std::string model_hash;
  std::vector<std::string> class_names;
  std::size_t predicted = 0;
};

inline std::string format_cam_meta(const CamMeta& meta, const std::string& recording_id) {
  std::string classes;
  for (const auto& n : meta.class_names) classes += (classes.empty() ? "" : ",") + n;
  return "recording=" + recording_id + "\nmodel_hash=" + meta.model_hash + "\nclasses=" + classes +
         "\npredicted=" + meta.class_names.at(meta.predicted) + "\n";
}

/// Writes the map table to `path` and the metadata to `path`.meta.
inline void export_cam(const Recording& r, const std::vector<CamMap>& maps, const CamMeta& meta,
                       const std::string& path) {
  const std::string body = format_cam(r, maps, meta.class_names);
  auto write = [](const std::string& p, const std::string& bytes) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + p + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("failed writing " + p);
  };
  write(path, body);
  write(path + ".meta", format_cam_meta(meta, r.id));
}

}  // namespace decg
