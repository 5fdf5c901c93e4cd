// decg: train, cross-validate, score and explain DenseNet ECG classifiers.
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "decg/cam.hpp"
#include "decg/data.hpp"
#include "decg/metrics.hpp"
#include "decg/run_config.hpp"
#include "decg/serialize.hpp"
#include "decg/training.hpp"
#include "runtime.hpp"
#include "synthetic.hpp"

namespace {

using namespace decg;
using Real = float;

// Thrown for anything the user can fix by changing arguments, config or inputs.
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot open " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << body;
  if (!f) throw std::runtime_error("failed writing " + path);
}

/// Options shared by train and crossval. Only flags actually given become overrides.
struct RunOptions {
  std::string config;
  std::map<std::string, std::string> values;
  std::vector<std::string> sets;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config, "key=value config file");
    auto flag = [&](const std::string& name, const std::string& key, const std::string& help) {
      cmd->add_option_function<std::string>(name, [this, key](const std::string& v) { values[key] = v; }, help);
    };
    flag("--data", "data", "training data file");
    flag("--schema", "schema", "cinc or beats");
    flag("--preset", "preset", "cinc or mitbih");
    flag("--test-data", "test_data", "held-out data file");
    flag("--loss", "loss", "plain, class-weighted or focal");
    flag("--seed", "seed", "random seed");
    flag("--epochs", "epochs", "training epochs");
    flag("--lr", "learning_rate", "initial learning rate");
    flag("--batch-size", "batch_size", "mini-batch size");
    flag("--l2", "l2_lambda", "L2 weight on conv kernels");
    flag("--focal-gamma", "focal_gamma", "focal loss exponent");
    flag("--subsample", "subsample", "stratified fraction of the data to use");
    cmd->add_option("--set", sets, "extra key=value override (repeatable)");
  }

  RunConfig resolve() const {
    auto flags = values;
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
      flags[std::string(text::trim(s.substr(0, eq)))] = std::string(text::trim(s.substr(eq + 1)));
    }
    const auto file = config.empty() ? std::map<std::string, std::string>{} : read_config_file(config);
    RunConfig rc = resolve_run_config(file, flags);
    if (rc.data.empty()) throw UsageError("no training data: pass --data or set data= in the config");
    return rc;
  }
};

Dataset load_prepared(const std::string& path, const RunConfig& rc, bool sample) {
  Dataset ds = load_recordings(path, parse_schema(rc.schema));
  if (sample && rc.subsample < 1.0) ds = subset(ds, stratified_subsample(ds, rc.subsample, rc.train.seed));
  if (ds.num_classes() != static_cast<std::size_t>(rc.model.num_classes)) {
    throw UsageError(path + ": " + std::to_string(ds.num_classes()) + " classes but the model has " +
                     std::to_string(rc.model.num_classes));
  }
  return preprocess(std::move(ds), static_cast<std::size_t>(rc.model.input_length));
}

int cmd_train(const RunOptions& opts, const std::string& out, std::string report_path) {
  const RunConfig rc = opts.resolve();
  const Dataset train = load_prepared(rc.data, rc, true);
  std::optional<Dataset> test;
  if (!rc.test_data.empty()) test = load_prepared(rc.test_data, rc, false);
  auto result = train_model<Real>(train, test ? &*test : nullptr, rc.model, rc.train);
  save_weights(result.net, out);

  std::string report = "[run]\n" + rc.to_text() + format_train_report(result.report);
  report += "[weights]\npath=" + out + "\nmodel_hash=" + model_hash(result.net) + "\n";
  if (test) {
    const auto ev = evaluate_model(std::as_const(result.net), *test);
    report += "[test metrics]\n" + format_metrics(ev.table, ev.f1, ev.average_accuracy) + format_confusion(ev.table);
  }
  if (report_path.empty()) report_path = out + ".report.txt";
  write_file(report_path, report);
  const auto& last = result.report.epochs.back();
  std::cout << "trained " << result.report.epochs.size() << " epochs on " << train.size() << " recordings; "
            << "final loss " << text::format_fixed(last.train_loss, 4) << ", train accuracy "
            << text::format_fixed(last.train_accuracy, 4) << " (" << text::format_fixed(result.report.wall_seconds, 1)
            << " s)\nweights: " << out << "\nreport: " << report_path << "\n";
  return 0;
}

int cmd_crossval(const RunOptions& opts, std::optional<int> k_flag, unsigned threads, const std::string& out) {
  RunOptions o = opts;
  if (k_flag) o.values["k"] = std::to_string(*k_flag);
  const RunConfig rc = o.resolve();
  const Dataset ds = load_prepared(rc.data, rc, true);
  const auto rep = cross_validate<Real>(ds, rc.k, rc.model, rc.train, rc.train.seed, threads);
  const std::string body = "[run]\n" + rc.to_text() + format_cv_report(rep);
  if (out.empty()) {
    std::cout << body;
  } else {
    write_file(out, body);
    std::cout << "mean final F1 " << text::format_fixed(rep.mean_final_f1, 4) << ", mean average accuracy "
              << text::format_fixed(rep.mean_average_accuracy, 4) << "\nreport: " << out << "\n";
  }
  return 0;
}

std::vector<std::string> split_names(const std::string& s) {
  std::vector<std::string> out;
  for (auto part : text::split(s, ','))
    if (!text::trim(part).empty()) out.emplace_back(text::trim(part));
  return out;
}

int label_index(std::string_view token, const std::vector<std::string>& names, const std::string& where) {
  token = text::trim(token);
  for (std::size_t c = 0; c < names.size(); ++c)
    if (names[c] == token) return static_cast<int>(c);
  int idx = -1;
  if (text::parse_number(token, idx) && idx >= 0 && static_cast<std::size_t>(idx) < names.size()) return idx;
  throw UsageError(where + ": unknown label '" + std::string(token) + "'");
}

/// "id,label" rows, keyed by id.
std::map<std::string, int> read_labels(const std::string& path, const std::vector<std::string>& names) {
  std::map<std::string, int> out;
  std::size_t line_no = 0;
  const std::string body = slurp(path);
  for (auto line : text::split(body, '\n')) {
    ++line_no;
    line = text::trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto f = text::split(line, ',');
    const std::string where = path + ":" + std::to_string(line_no);
    if (f.size() != 2) throw UsageError(where + ": expected id,label");
    if (!out.emplace(std::string(text::trim(f[0])), label_index(f[1], names, where)).second)
      throw UsageError(where + ": duplicate id '" + std::string(text::trim(f[0])) + "'");
  }
  return out;
}

/// Confusion counts: header "reference\predicted,<names>", then one row per reference class.
ConfusionTable read_confusion(const std::string& path) {
  const std::string body = slurp(path);
  const auto lines = text::split(body, '\n');
  std::vector<std::vector<std::string_view>> rows;
  for (auto l : lines)
    if (!text::trim(l).empty()) rows.push_back(text::split(text::trim(l), ','));
  if (rows.empty()) throw UsageError(path + ": empty confusion table");
  std::vector<std::string> names;
  for (std::size_t i = 1; i < rows[0].size(); ++i) names.emplace_back(text::trim(rows[0][i]));
  if (rows.size() != names.size() + 1) throw UsageError(path + ": expected " + std::to_string(names.size()) + " rows");
  ConfusionTable t(names.size(), names);
  for (std::size_t r = 0; r < names.size(); ++r) {
    const auto& row = rows[r + 1];
    if (row.size() != names.size() + 1 || text::trim(row[0]) != names[r])
      throw UsageError(path + ": row " + std::to_string(r + 2) + " must be " + names[r] + " followed by counts");
    for (std::size_t p = 0; p < names.size(); ++p) {
      const auto v = text::to_number<std::int64_t>(row[p + 1], path);
      if (v < 0) throw UsageError(path + ": negative count");
      t.at(r, p) = v;
    }
  }
  return t;
}

int cmd_score(const std::string& reference, const std::string& predictions, const std::string& probs_path,
              const std::string& confusion, const std::string& classes, const std::string& out) {
  ConfusionTable table;
  std::string extra;
  if (!confusion.empty()) {
    table = read_confusion(confusion);
  } else {
    if (reference.empty() || predictions.empty())
      throw UsageError("score needs --reference and --predictions, or --confusion");
    const auto names = split_names(classes);
    const auto ref = read_labels(reference, names);
    const auto pred = read_labels(predictions, names);
    std::vector<int> r, p;
    for (const auto& [id, label] : ref) {
      const auto it = pred.find(id);
      if (it == pred.end()) throw UsageError("id '" + id + "' has a reference label but no prediction");
      r.push_back(label);
      p.push_back(it->second);
    }
    for (const auto& [id, label] : pred)
      if (!ref.count(id)) throw UsageError("id '" + id + "' has a prediction but no reference label");
    table = build_confusion(r, p, names.size(), names);
    if (!probs_path.empty()) {
      std::vector<double> probs;
      std::vector<int> labels;
      std::set<std::string> seen;
      std::size_t line_no = 0;
      const std::string body = slurp(probs_path);
      for (auto line : text::split(body, '\n')) {
        ++line_no;
        line = text::trim(line);
        if (line.empty() || line.front() == '#') continue;
        const auto f = text::split(line, ',');
        const std::string where = probs_path + ":" + std::to_string(line_no);
        if (f.size() != names.size() + 1) throw UsageError(where + ": expected id and " + std::to_string(names.size()) + " probabilities");
        const std::string id(text::trim(f[0]));
        const auto it = ref.find(id);
        if (it == ref.end()) throw UsageError(where + ": id '" + id + "' has no reference label");
        seen.insert(id);
        labels.push_back(it->second);
        for (std::size_t c = 1; c < f.size(); ++c) probs.push_back(text::to_number<double>(f[c], where));
      }
      if (seen.size() != ref.size()) throw UsageError(probs_path + ": probabilities missing for some ids");
      const auto roc = roc_one_vs_rest(probs, labels, names.size());
      for (std::size_t c = 0; c < names.size(); ++c)
        if (!roc.per_class[c].empty()) extra += names[c] + ",auc," + text::format_fixed(roc.per_class_auc[c], 6) + "\n";
      extra += "all,macro_auc," + text::format_fixed(roc.macro_auc, 6) + "\n";
      extra += "all,micro_auc," + text::format_fixed(roc.micro_auc, 6) + "\n";
    }
  }
  const auto f1 = f1_scores(table);
  std::vector<std::size_t> acc_classes;
  for (std::size_t c : default_scored_classes(table.names))
    if (table.row_sum(c) > 0) acc_classes.push_back(c);
  const double acc = acc_classes.empty() ? 0.0 : average_accuracy(table, acc_classes);
  const std::string body = format_metrics(table, f1, acc) + extra;
  if (out.empty()) std::cout << body;
  else write_file(out, body);
  if (f1.any_degenerate()) std::cerr << "warning: some classes have no reference or predicted samples; their F1 is 0\n";
  return 0;
}

int cmd_cam(const std::string& weights, const std::string& data, const std::string& schema,
            const std::string& ids, const std::string& out_dir) {
  Network<Real> net = load_weights<Real>(weights);
  const Dataset ds = load_recordings(data, parse_schema(schema));
  if (ds.num_classes() != static_cast<std::size_t>(net.config.num_classes))
    throw UsageError(data + ": class count does not match the model");
  const auto wanted = split_names(ids);
  if (wanted.empty()) throw UsageError("--ids is empty");
  std::vector<Recording> chosen;
  for (const auto& id : wanted) {
    std::size_t i = 0;
    try {
      i = ds.find(id);
    } catch (const std::out_of_range&) {
      throw UsageError("unknown recording id '" + id + "' in " + data);
    }
    chosen.push_back(pad_to_length(normalize_recording(ds.recordings[i]),
                                   static_cast<std::size_t>(net.config.input_length)));
  }
  std::filesystem::create_directories(out_dir);
  const std::string hash = model_hash(net);
  for (const auto& r : chosen) {
    const auto res = cam_for_recording(std::as_const(net), r);
    const std::string path = (std::filesystem::path(out_dir) / (r.id + ".cam.csv")).string();
    export_cam(r, res.maps, CamMeta{hash, ds.class_names, res.predicted}, path);
    std::cout << r.id << "," << ds.class_names[res.predicted] << "," << path << "\n";
  }
  return 0;
}

int cmd_synth(const std::string& schema, const std::string& counts, std::uint64_t seed, std::size_t min_len,
              std::size_t max_len, const std::string& out) {
  std::vector<std::size_t> n;
  for (const auto& c : split_names(counts)) n.push_back(text::to_number<std::size_t>(c, "--counts"));
  const Schema s = parse_schema(schema);
  if (min_len < 1 || max_len < min_len) throw UsageError("--min-len/--max-len out of order");
  const Dataset ds = s == Schema::kBeats ? synth::beats(n, seed) : synth::rhythms(n, min_len, max_len, seed);
  write_file(out, synth::to_text(ds, s));
  std::cout << "wrote " << ds.size() << " recordings to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  decg::tune_allocator();
  CLI::App app{"DenseNet ECG classification: training, cross-validation, scoring and class activation maps"};
  app.require_subcommand(1);
  int code = 0;

  RunOptions train_opts;
  std::string train_out = "model.decg", train_report;
  auto* train = app.add_subcommand("train", "train a model and write weights plus a report");
  train_opts.attach(train);
  train->add_option("--out", train_out, "weights file")->capture_default_str();
  train->add_option("--report", train_report, "report file (default <out>.report.txt)");

  RunOptions cv_opts;
  std::optional<int> cv_k;
  unsigned cv_threads = 0;
  std::string cv_out;
  auto* cv = app.add_subcommand("crossval", "stratified k-fold cross-validation");
  cv_opts.attach(cv);
  cv->add_option("--k", cv_k, "number of folds (5 or 10 in the reference protocol)");
  cv->add_option("--threads", cv_threads, "folds trained in parallel (default: DECG_THREADS or 1)");
  cv->add_option("--out", cv_out, "report file (default: standard output)");

  std::string ref, pred, probs, confusion, classes = "N,A,O,P", score_out;
  auto* score = app.add_subcommand("score", "challenge F1, average accuracy and ROC/AUC from label files");
  score->add_option("--reference", ref, "id,label reference file");
  score->add_option("--predictions", pred, "id,label prediction file");
  score->add_option("--probs", probs, "id,p0,...,pK-1 probabilities for ROC/AUC");
  score->add_option("--confusion", confusion, "confusion table instead of label files");
  score->add_option("--classes", classes, "class names in index order")->capture_default_str();
  score->add_option("--out", score_out, "metrics file (default: standard output)");

  std::string cam_weights, cam_data, cam_schema = "beats", cam_ids, cam_dir = ".";
  auto* cam = app.add_subcommand("cam", "class activation maps for selected recordings");
  cam->add_option("--weights", cam_weights, "weights file")->required();
  cam->add_option("--data", cam_data, "data file holding the recordings")->required();
  cam->add_option("--schema", cam_schema, "cinc or beats")->capture_default_str();
  cam->add_option("--ids", cam_ids, "comma-separated recording ids")->required();
  cam->add_option("--out-dir", cam_dir, "directory for <id>.cam.csv files")->capture_default_str();

  std::string syn_schema = "beats", syn_counts, syn_out;
  std::uint64_t syn_seed = 1;
  std::size_t syn_min = 2700, syn_max = 18300;
  auto* syn = app.add_subcommand("synth", "write a synthetic data file for demos and tests");
  syn->add_option("--schema", syn_schema, "cinc or beats")->capture_default_str();
  syn->add_option("--counts", syn_counts, "recordings per class, comma-separated")->required();
  syn->add_option("--seed", syn_seed, "random seed")->capture_default_str();
  syn->add_option("--min-len", syn_min, "shortest cinc recording (samples)")->capture_default_str();
  syn->add_option("--max-len", syn_max, "longest cinc recording (samples)")->capture_default_str();
  syn->add_option("--out", syn_out, "output file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  try {
    if (*train) code = cmd_train(train_opts, train_out, train_report);
    else if (*cv) code = cmd_crossval(cv_opts, cv_k, cv_threads ? cv_threads : decg::threads_from_env(), cv_out);
    else if (*score) code = cmd_score(ref, pred, probs, confusion, classes, score_out);
    else if (*cam) code = cmd_cam(cam_weights, cam_data, cam_schema, cam_ids, cam_dir);
    else if (*syn) code = cmd_synth(syn_schema, syn_counts, syn_seed, syn_min, syn_max, syn_out);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const decg::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "failed: " << e.what() << "\n";
    return 1;
  }
  return code;
}
