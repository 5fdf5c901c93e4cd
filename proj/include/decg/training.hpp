#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "decg/data.hpp"
#include "decg/losses.hpp"
#include "decg/metrics.hpp"
#include "decg/model.hpp"
#include "decg/ops.hpp"
#include "decg/optim.hpp"
#include "decg/tape.hpp"
#include "decg/text.hpp"

namespace decg {

/// splitmix64 of (seed, stream): independent generator seeds from one user seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::string train_config_text(const TrainConfig& c) {
  std::string points;
  for (double p : c.decay_points) points += (points.empty() ? "" : ",") + text::format_real(p);
  std::string out;
  out += "learning_rate=" + text::format_real(c.learning_rate) + "\n";
  out += "l2_lambda=" + text::format_real(c.l2_lambda) + "\n";
  out += "epochs=" + std::to_string(c.epochs) + "\n";
  out += "decay_factor=" + text::format_real(c.decay_factor) + "\n";
  out += "decay_points=" + points + "\n";
  out += "batch_size=" + std::to_string(c.batch_size) + "\n";
  out += std::string("loss=") + to_string(c.loss_kind) + "\n";
  out += "focal_gamma=" + text::format_real(c.focal_gamma) + "\n";
  out += "seed=" + std::to_string(c.seed) + "\n";
  out += std::string("keep_best=") + (c.keep_best ? "true" : "false") + "\n";
  return out;
}

inline bool is_train_key(const std::string& key) {
  static const char* keys[] = {"learning_rate", "l2_lambda", "epochs", "decay_factor", "decay_points",
                               "batch_size",    "loss",      "focal_gamma", "seed",     "keep_best"};
  return std::find(std::begin(keys), std::end(keys), key) != std::end(keys);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument(key + ": expected true/false, got '" + v + "'");
}

/// Applies the recognised keys of `kv` on top of `base`; other keys are ignored here.
inline TrainConfig train_config_from_map(const std::map<std::string, std::string>& kv, TrainConfig c) {
  for (const auto& [k, v] : kv) {
    if (k == "learning_rate") c.learning_rate = text::to_number<double>(v, k);
    else if (k == "l2_lambda") c.l2_lambda = text::to_number<double>(v, k);
    else if (k == "epochs") c.epochs = text::to_number<int>(v, k);
    else if (k == "decay_factor") c.decay_factor = text::to_number<double>(v, k);
    else if (k == "decay_points") {
      c.decay_points.clear();
      for (auto part : text::split(v, ','))
        if (!text::trim(part).empty()) c.decay_points.push_back(text::to_number<double>(part, k));
    } else if (k == "batch_size") c.batch_size = text::to_number<int>(v, k);
    else if (k == "loss") c.loss_kind = parse_loss_kind(v);
    else if (k == "focal_gamma") c.focal_gamma = text::to_number<double>(v, k);
    else if (k == "seed") c.seed = text::to_number<std::uint64_t>(v, k);
    else if (k == "keep_best") c.keep_best = parse_bool(v, k);
  }
  return c;
}

/// Stacks fixed-length recordings into a (B, L, 1) batch.
template <class T>
Tensor<T> make_batch(const Dataset& ds, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("make_batch: empty batch");
  const std::size_t len = ds.recordings.at(indices[0]).samples.size();
  Tensor<T> x(Shape{indices.size(), len, 1});
  auto out = x.data();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& s = ds.recordings.at(indices[b]).samples;
    if (s.size() != len) throw ShapeError("make_batch: recordings differ in length; preprocess first");
    for (std::size_t t = 0; t < len; ++t) out[b * len + t] = static_cast<T>(s[t]);
  }
  return x;
}

struct Evaluation {
  ConfusionTable table;
  F1Result f1;
  double average_accuracy = 0.0;
  std::vector<std::size_t> accuracy_classes;  // scored classes present in the reference
  std::vector<double> probs;                  // (N, K) row-major
  std::vector<int> predicted;
};

/// Eval-mode predictions over the whole dataset and the metrics derived from them.
template <class T>
Evaluation evaluate_model(const Network<T>& net, const Dataset& ds, std::size_t batch = 64) {
  const auto k = static_cast<std::size_t>(net.config.num_classes);
  if (ds.num_classes() != k) {
    throw std::invalid_argument("evaluate_model: dataset has " + std::to_string(ds.num_classes()) +
                                " classes, model predicts " + std::to_string(k));
  }
  Evaluation ev;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.size(); start += batch) {
    idx.resize(std::min(batch, ds.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const auto pred = predict(net, make_batch<T>(ds, idx));
    const auto p = pred.probs.data();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      std::size_t best = 0;
      for (std::size_t c = 0; c < k; ++c) {
        ev.probs.push_back(static_cast<double>(p[b * k + c]));
        if (p[b * k + c] > p[b * k + best]) best = c;
      }
      ev.predicted.push_back(static_cast<int>(best));
    }
  }
  const auto labels = ds.labels();
  ev.table = build_confusion(labels, ev.predicted, k, ds.class_names);
  ev.f1 = f1_scores(ev.table);
  for (std::size_t c : default_scored_classes(ds.class_names))
    if (ev.table.row_sum(c) > 0) ev.accuracy_classes.push_back(c);
  ev.average_accuracy = ev.accuracy_classes.empty() ? 0.0 : average_accuracy(ev.table, ev.accuracy_classes);
  return ev;
}

struct EpochRecord {
  int epoch = 0;
  double learning_rate = 0.0;
  double train_loss = 0.0;      // data loss + L2, averaged over samples
  double train_accuracy = 0.0;  // train-mode predictions during the epoch
  std::optional<double> val_average_accuracy;
  std::optional<double> val_final_f1;
};

struct TrainReport {
  std::uint64_t seed = 0;
  std::string model_config;
  std::string train_config;
  std::size_t train_size = 0;
  std::vector<double> class_weights;
  std::vector<EpochRecord> epochs;
  int selected_epoch = -1;    // epoch whose weights were kept
  double wall_seconds = 0.0;  // informational; not serialized
};

template <class T>
struct TrainResult {
  TrainReport report;
  Network<T> net;
};

/// Loss weights for one training set.
inline ClassWeights loss_weights(const Dataset& train, LossKind kind) {
  if (kind == LossKind::kClassWeighted) return compute_class_weights(train.class_counts(), train.class_names);
  return ClassWeights(train.num_classes(), 1.0);
}

template <class T>
TrainResult<T> train_model(const Dataset& train, const Dataset* val, const ModelConfig& model_cfg,
                           const TrainConfig& cfg) {
  model_cfg.validate();
  cfg.validate();
  if (train.size() == 0) throw std::invalid_argument("train_model: empty training set");
  if (train.num_classes() != static_cast<std::size_t>(model_cfg.num_classes)) {
    throw std::invalid_argument("train_model: dataset has " + std::to_string(train.num_classes()) +
                                " classes, model expects " + std::to_string(model_cfg.num_classes));
  }
  if (train.fixed_length != static_cast<std::size_t>(model_cfg.input_length)) {
    throw std::invalid_argument("train_model: recordings have length " + std::to_string(train.fixed_length) +
                                ", model expects " + std::to_string(model_cfg.input_length));
  }
  const auto started = std::chrono::steady_clock::now();
  Rng init_rng(derive_seed(cfg.seed, 0)), order_rng(derive_seed(cfg.seed, 1)), drop_rng(derive_seed(cfg.seed, 2));
  TrainResult<T> out{{}, build_model<T>(model_cfg, init_rng)};
  auto& net = out.net;
  auto& rep = out.report;
  rep.seed = cfg.seed;
  rep.model_config = model_cfg.to_text();
  rep.train_config = train_config_text(cfg);
  rep.train_size = train.size();
  rep.class_weights = loss_weights(train, cfg.loss_kind);
  const double gamma = cfg.loss_kind == LossKind::kFocal ? cfg.focal_gamma : 0.0;

  Adam<T> adam;
  const auto params = net.parameters();
  const auto labels = train.labels();
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::optional<Network<T>> best;
  double best_score = -1.0;
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.learning_rate = learning_rate_at_epoch(cfg, epoch);
    std::shuffle(order.begin(), order.end(), order_rng);
    double loss_sum = 0.0;
    std::size_t correct = 0, step = 0;
    for (std::size_t start = 0; start < order.size(); start += batch, ++step) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(batch, order.size() - start));
      std::vector<int> y;
      for (std::size_t i : idx) y.push_back(labels[i]);
      try {
        Tape<T> tape;
        auto fr = forward(tape, net, tape.constant(make_batch<T>(train, idx)), Mode::kTrain, drop_rng);
        Var loss = focal_loss(tape, fr.probs, y, rep.class_weights, gamma);
        if (cfg.l2_lambda > 0.0) loss = add(tape, loss, l2_penalty(tape, fr.conv_kernels, cfg.l2_lambda));
        const double value = static_cast<double>(tape.value(loss)[0]);
        if (!std::isfinite(value)) throw NumericError("non-finite loss");
        const auto& p = tape.value(fr.probs);
        const std::size_t k = p.dim(1);
        for (std::size_t b = 0; b < idx.size(); ++b) {
          std::size_t arg = 0;
          for (std::size_t c = 1; c < k; ++c)
            if (p[b * k + c] > p[b * k + arg]) arg = c;
          correct += static_cast<int>(arg) == y[b];
        }
        loss_sum += value * static_cast<double>(idx.size());
        net.zero_grad();
        tape.backward(loss);
        adam.step(params, rec.learning_rate);
      } catch (const NumericError& e) {
        throw NumericError("training aborted at epoch " + std::to_string(epoch) + " step " +
                           std::to_string(step) + ": " + e.what());
      }
    }
    rec.train_loss = loss_sum / static_cast<double>(train.size());
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
    if (val != nullptr && val->size() > 0) {
      const auto ev = evaluate_model(std::as_const(net), *val);
      rec.val_average_accuracy = ev.average_accuracy;
      rec.val_final_f1 = ev.f1.final_score;
      if (cfg.keep_best && ev.average_accuracy > best_score) {
        best_score = ev.average_accuracy;
        best = net;
        rep.selected_epoch = epoch;
      }
    }
    rep.epochs.push_back(rec);
  }
  if (best) {
    net = std::move(*best);
  } else {
    rep.selected_epoch = cfg.epochs - 1;
  }
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return out;
}

namespace detail {

inline std::string join_reals(std::span<const double> v, int digits = -1) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : ",") + (digits < 0 ? text::format_real(x) : text::format_fixed(x, digits));
  return s;
}

inline std::string section(const std::string& name, const std::string& body) { return "[" + name + "]\n" + body; }

}  // namespace detail

/// key=value header, config snapshots, then the per-epoch table. No timing, so reruns match byte for byte.
inline std::string format_train_report(const TrainReport& r) {
  std::string out = "report=train\n";
  out += "seed=" + std::to_string(r.seed) + "\n";
  out += "train_size=" + std::to_string(r.train_size) + "\n";
  out += "epochs=" + std::to_string(r.epochs.size()) + "\n";
  out += "selected_epoch=" + std::to_string(r.selected_epoch) + "\n";
  out += "class_weights=" + detail::join_reals(r.class_weights) + "\n";
  out += detail::section("model", r.model_config);
  out += detail::section("train", r.train_config);
  out += "[epochs]\nepoch,learning_rate,train_loss,train_accuracy,val_average_accuracy,val_final_f1\n";
  for (const auto& e : r.epochs) {
    out += std::to_string(e.epoch) + "," + text::format_real(e.learning_rate) + "," + text::format_real(e.train_loss) +
           "," + text::format_real(e.train_accuracy) + "," +
           (e.val_average_accuracy ? text::format_real(*e.val_average_accuracy) : "") + "," +
           (e.val_final_f1 ? text::format_real(*e.val_final_f1) : "") + "\n";
  }
  return out;
}

struct FoldReport {
  int fold = 0;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  std::vector<double> class_weights;  // from this fold's training part only
  ConfusionTable table;
  F1Result f1;
  double average_accuracy = 0.0;
  double final_train_loss = 0.0;
  std::vector<std::size_t> test_indices;
};

struct CVReport {
  int k = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> class_names;
  std::vector<std::string> shortfalls;
  std::string model_config;
  std::string train_config;
  std::vector<FoldReport> folds;
  std::vector<double> mean_f1;  // per class
  double mean_final_f1 = 0.0;
  double mean_average_accuracy = 0.0;
  ConfusionTable pooled;  // sum of fold tables
};

/// Worker count from DECG_THREADS (default 1).
inline unsigned threads_from_env() {
  if (const char* v = std::getenv("DECG_THREADS")) {
    unsigned n = 0;
    if (text::parse_number(std::string_view(v), n) && n > 0) return n;
    throw std::invalid_argument(std::string("DECG_THREADS: expected a positive integer, got '") + v + "'");
  }
  return 1;
}

/// Fold f trains with seed derive_seed(seed, 100 + f); results do not depend on `threads`.
template <class T>
CVReport cross_validate(const Dataset& ds, int k, const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                        std::uint64_t seed, unsigned threads = 1) {
  const FoldPlan plan = stratified_kfold(ds, k, seed);
  CVReport rep;
  rep.k = k;
  rep.seed = seed;
  rep.class_names = ds.class_names;
  rep.shortfalls = plan.shortfalls;
  rep.model_config = model_cfg.to_text();
  rep.train_config = train_config_text(train_cfg);
  rep.folds.resize(static_cast<std::size_t>(k));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(k));

  auto run_fold = [&](int f) {
    try {
      const auto train_idx = plan.train_indices(f);
      const auto test_idx = plan.test_indices(f);
      const Dataset train = subset(ds, train_idx);
      const Dataset test = subset(ds, test_idx);
      TrainConfig cfg = train_cfg;
      cfg.seed = derive_seed(seed, 100 + static_cast<std::uint64_t>(f));
      auto result = train_model<T>(train, nullptr, model_cfg, cfg);
      const auto ev = evaluate_model(std::as_const(result.net), test);
      auto& fr = rep.folds[static_cast<std::size_t>(f)];
      fr.fold = f;
      fr.train_size = train.size();
      fr.test_size = test.size();
      fr.class_weights = result.report.class_weights;
      fr.table = ev.table;
      fr.f1 = ev.f1;
      fr.average_accuracy = ev.average_accuracy;
      fr.final_train_loss = result.report.epochs.back().train_loss;
      fr.test_indices = test_idx;
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(f)] =
          std::make_exception_ptr(std::runtime_error("fold " + std::to_string(f) + ": " + e.what()));
    }
  };

  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(k)));
  if (workers == 1) {
    for (int f = 0; f < k; ++f) run_fold(f);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (int f = static_cast<int>(w); f < k; f += static_cast<int>(workers)) run_fold(f);
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  rep.pooled = ConfusionTable(ds.num_classes(), ds.class_names);
  rep.mean_f1.assign(ds.num_classes(), 0.0);
  for (const auto& fr : rep.folds) {
    rep.pooled += fr.table;
    for (std::size_t c = 0; c < rep.mean_f1.size(); ++c) rep.mean_f1[c] += fr.f1.per_class[c] / k;
    rep.mean_final_f1 += fr.f1.final_score / k;
    rep.mean_average_accuracy += fr.average_accuracy / k;
  }
  return rep;
}

/// Per-fold rows and the aggregate, F1 per class then final F1 and average accuracy.
inline std::string format_cv_report(const CVReport& r) {
  std::string out = "report=crossval\n";
  out += "k=" + std::to_string(r.k) + "\n";
  out += "seed=" + std::to_string(r.seed) + "\n";
  for (const auto& s : r.shortfalls) out += "shortfall=" + s + "\n";
  out += detail::section("model", r.model_config);
  out += detail::section("train", r.train_config);
  for (const auto& f : r.folds) {
    out += "[fold " + std::to_string(f.fold) + "]\n";
    out += "train_size=" + std::to_string(f.train_size) + "\n";
    out += "test_size=" + std::to_string(f.test_size) + "\n";
    out += "class_weights=" + detail::join_reals(f.class_weights) + "\n";
    out += "final_train_loss=" + text::format_real(f.final_train_loss) + "\n";
    out += format_confusion(f.table);
  }
  std::string header = "fold";
  for (const auto& n : r.class_names) header += ",F1_" + n;
  header += ",final_f1,average_accuracy\n";
  out += "[summary]\n" + header;
  for (const auto& f : r.folds) {
    out += std::to_string(f.fold) + "," + detail::join_reals(f.f1.per_class, 4) + "," +
           text::format_fixed(f.f1.final_score, 4) + "," + text::format_fixed(f.average_accuracy, 4) + "\n";
  }
  out += "mean," + detail::join_reals(r.mean_f1, 4) + "," + text::format_fixed(r.mean_final_f1, 4) + "," +
         text::format_fixed(r.mean_average_accuracy, 4) + "\n";
  out += "[pooled confusion]\n" + format_confusion(r.pooled);
  return out;
}

}  // namespace decg
