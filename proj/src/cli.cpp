#include "fernet/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "fernet/checkpoint.hpp"
#include "fernet/dataset.hpp"
#include "fernet/eval.hpp"
#include "fernet/gradcheck.hpp"
#include "fernet/network.hpp"
#include "fernet/optim.hpp"
#include "fernet/parallel.hpp"
#include "fernet/registration.hpp"
#include "fernet/split.hpp"

namespace fernet {

namespace fs = std::filesystem;

namespace {

std::string grouped(std::uint64_t v) {
  std::string digits = std::to_string(v);
  std::string out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i > 0 && (digits.size() - i) % 3 == 0) out += ',';
    out += digits[i];
  }
  return out;
}

std::string fixed(double v, int precision) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

void apply_threads(int threads) {
  set_parallelism(threads > 0 ? threads : parallelism_from_env(1));
}

// ---------------------------------------------------------------- prepare

void write_counts_row(std::ostream& out, const std::string& name, const LabelCounts& counts) {
  std::size_t total = 0;
  out << std::left << std::setw(12) << name << std::right;
  for (std::size_t c : counts) {
    out << std::setw(7) << c;
    total += c;
  }
  out << std::setw(8) << total << '\n';
}

void write_counts_header(std::ostream& out, const std::string& first) {
  out << std::left << std::setw(12) << first << std::right;
  for (std::string_view code : kExpressionCodes) out << std::setw(7) << code;
  out << std::setw(8) << "total" << '\n';
}

void print_counts(std::ostream& out, const DatasetManifest& manifest) {
  write_counts_header(out, "database");
  for (const auto& [db, counts] : manifest.label_counts()) write_counts_row(out, db, counts);
  const auto by_usage = manifest.usage_counts();
  const bool any_usage = std::any_of(by_usage.begin(), by_usage.end(), [](const auto& kv) {
    return kv.first != Usage::unspecified;
  });
  if (any_usage) {
    out << '\n';
    write_counts_header(out, "usage");
    for (const auto& [usage, counts] : by_usage) {
      const std::string name = usage == Usage::unspecified ? "(none)" : std::string(usage_name(usage));
      write_counts_row(out, name, counts);
    }
  }
}

struct PrepareArgs {
  std::string fer2013;
  std::string manifest;
  std::string out;
};

int cmd_prepare(const PrepareArgs& args, std::ostream& out) {
  DatasetManifest manifest =
      args.fer2013.empty() ? load_manifest(args.manifest) : load_fer2013_csv(args.fer2013);
  write_prepared(manifest, args.out);
  print_counts(out, manifest);
  out << "wrote " << manifest.samples.size() << " samples to " << args.out << '\n';
  return 0;
}

// --------------------------------------------------------------- register

struct RegisterArgs {
  std::string images;
  std::string landmarks;
  std::string out;
  int size = kFaceSize;
  double margin = 0.25;
  bool pass_through = false;
};

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  static const std::set<std::string> kExts = {".png", ".jpg", ".jpeg", ".pgm", ".ppm", ".bmp", ".tif", ".tiff"};
  return kExts.contains(ext);
}

int cmd_register(const RegisterArgs& args, std::ostream& out, std::ostream& err) {
  if (!fs::is_directory(args.images)) throw DataError("image directory not found: " + args.images);
  if (!fs::is_directory(args.landmarks)) {
    throw DataError("landmark directory not found: " + args.landmarks);
  }
  std::vector<fs::path> images;
  for (const auto& entry : fs::directory_iterator(args.images)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) images.push_back(entry.path());
  }
  std::sort(images.begin(), images.end());
  if (images.empty()) throw DataError("no images in " + args.images);
  fs::create_directories(args.out);

  std::vector<std::string> warnings;
  std::vector<std::optional<LandmarkSet>> landmarks(images.size());
  std::vector<LandmarkSet> valid;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const fs::path lm = fs::path(args.landmarks) / (images[i].stem().string() + ".txt");
    if (!fs::exists(lm)) {
      warnings.push_back(images[i].filename().string() + ": no landmark file " + lm.string());
      continue;
    }
    try {
      landmarks[i] = read_landmarks(lm);
      valid.push_back(*landmarks[i]);
    } catch (const Error& e) {
      warnings.push_back(images[i].filename().string() + ": " + e.what());
    }
  }

  std::size_t written = 0;
  std::size_t passed_through = 0;
  double residual_sum = 0;
  std::optional<LandmarkSet> mean;
  std::optional<FaceRegion> region;
  if (!valid.empty()) {
    mean = mean_shape(valid);
    region = face_region(*mean, args.margin);
  }
  for (std::size_t i = 0; i < images.size(); ++i) {
    const fs::path dst = fs::path(args.out) / (images[i].stem().string() + ".png");
    try {
      if (!landmarks[i]) {
        if (!args.pass_through) continue;
        write_gray_image(dst, center_square_resize(read_gray_image(images[i]), args.size));
        ++passed_through;
        continue;
      }
      const Registration reg =
          register_face(read_gray_image(images[i]), *landmarks[i], *mean, *region, args.size);
      write_gray_image(dst, reg.face);
      residual_sum += reg.residual_px;
      ++written;
    } catch (const Error& e) {
      warnings.push_back(images[i].filename().string() + ": " + e.what());
    }
  }
  if (mean) {
    std::ostringstream s;
    s << std::setprecision(17);
    for (const Point2& p : mean->points()) s << p.x << ' ' << p.y << '\n';
    write_file_atomic(fs::path(args.out) / "mean_shape.txt", s.str());
  }

  for (const std::string& w : warnings) err << "warning: " << w << '\n';
  const std::size_t skipped = images.size() - written - passed_through;
  out << "registered " << written << " of " << images.size() << " images";
  if (passed_through > 0) out << ", " << passed_through << " passed through without landmarks";
  out << ", " << skipped << " skipped";
  if (written > 0) {
    out << "; mean landmark residual " << fixed(residual_sum / static_cast<double>(written), 3)
        << " px";
  }
  out << '\n';
  if (!warnings.empty()) out << warnings.size() << " warning(s), see above\n";
  return 0;
}

// ------------------------------------------------------------------ train

struct TrainArgs {
  std::string data;
  std::string protocol = "kfold";
  int k = 5;
  int fold = -1;
  std::string eval_db;
  int epochs = 0;  // 0: 200, or 100 for crossdb
  int batch_size = 250;
  double base_lr = 0.01;
  std::string lr_policy = "poly";
  double power = 0.5;
  double gamma = 0.1;
  std::int64_t step_size = 1000;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double bias_lr_mult = 2.0;
  std::uint64_t seed = 1;
  std::string out;
  int threads = 0;
  int width_divisor = 1;
  int fc7 = 4096;
  int fc8 = 1024;
  int views = 1;
  std::string precision = "fp32";
  bool fold_all = false;
  bool no_augment = false;
  bool quiet = false;
};

struct Job {
  std::string name;  // subdirectory; empty writes into the output directory itself
  Fold fold;
};

std::string index_file(const std::vector<std::size_t>& indices) {
  std::string s;
  for (std::size_t i : indices) s += std::to_string(i) + '\n';
  return s;
}

std::vector<std::size_t> read_index_file(const fs::path& path, std::size_t limit) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open subset file " + path.string());
  std::vector<std::size_t> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(line, &pos);
    } catch (const std::exception&) {
      throw ParseError("bad sample index '" + line + "' in " + path.string(), row);
    }
    if (pos != line.size() || v >= limit) {
      throw ParseError("bad sample index '" + line + "' in " + path.string(), row);
    }
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

std::vector<const Sample*> pick(const DatasetManifest& manifest, const std::vector<std::size_t>& idx) {
  std::vector<const Sample*> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(&manifest.samples[i]);
  return out;
}

ViewMode view_mode(int views) {
  if (views == 1) return ViewMode::single;
  if (views == 11) return ViewMode::eleven;
  throw ConfigError("--views must be 1 or 11");
}

LrPolicy lr_policy(const std::string& name) {
  if (name == "poly") return LrPolicy::poly;
  if (name == "fixed") return LrPolicy::fixed;
  if (name == "step") return LrPolicy::step;
  if (name == "exp") return LrPolicy::exp;
  throw ConfigError("unknown learning-rate policy '" + name + "'");
}

struct JobResult {
  std::optional<Metrics> test;
};

template <typename T>
JobResult run_job(const TrainArgs& args, const DatasetManifest& manifest, const Job& job,
                  const NetworkConfig& netcfg, const TrainConfig& cfg, const LrSchedule& sched,
                  std::ostream& out) {
  const fs::path dir = job.name.empty() ? fs::path(args.out) : fs::path(args.out) / job.name;
  fs::create_directories(dir);
  const std::vector<const Sample*> train_set = pick(manifest, job.fold.train);
  const std::vector<const Sample*> val_set = pick(manifest, job.fold.val);
  const std::vector<const Sample*> test_set = pick(manifest, job.fold.test);
  const std::string label = job.name.empty() ? args.protocol : job.name;

  std::ostringstream log;
  log << "protocol " << args.protocol << (job.name.empty() ? "" : " " + job.name) << '\n';
  log << "samples train " << train_set.size() << " val " << val_set.size() << " test "
      << test_set.size() << '\n';
  log << "iterations " << iterations_for(train_set.size(), cfg) << " (epochs " << cfg.epochs
      << ", batch " << cfg.batch_size << ")\n";
  log << std::setprecision(9);

  TrainCallbacks callbacks;
  callbacks.on_iteration = [&](std::int64_t iter, double loss, double lr) {
    log << "iter " << iter << " loss " << loss << " lr " << lr << '\n';
  };
  callbacks.on_epoch = [&](const EpochRecord& r) {
    std::ostringstream line;
    line << "epoch " << r.epoch << " iter " << r.last_iter;
    if (std::isfinite(r.val_top1)) {
      line << " val_top1 " << fixed(r.val_top1, 2) << " val_top2 " << fixed(r.val_top2, 2);
    }
    log << line.str() << '\n';
    if (!args.quiet) out << label << ": " << line.str() << '\n';
  };

  Network<T> net = Network<T>::build(netcfg, cfg.seed);
  const TrainHistory history = train(net, train_set, val_set, cfg, sched, callbacks);

  log << "training samples drawn per database:\n";
  for (const std::string& db : manifest.databases()) {
    const auto it = history.samples_seen.find(db);
    log << "  " << db << ' ' << (it == history.samples_seen.end() ? 0 : it->second) << '\n';
  }
  if (args.protocol == "crossdb") {
    const auto it = history.samples_seen.find(args.eval_db);
    log << "evaluation database " << args.eval_db << " samples drawn in training: "
        << (it == history.samples_seen.end() ? 0 : it->second) << '\n';
  }

  const std::string bytes = checkpoint_bytes(net);
  write_file_atomic(dir / "checkpoint.fern", bytes);
  write_file_atomic(dir / "history.csv", history_csv(history));
  write_file_atomic(dir / "train.idx", index_file(job.fold.train));
  write_file_atomic(dir / "val.idx", index_file(job.fold.val));
  write_file_atomic(dir / "test.idx", index_file(job.fold.test));

  JobResult result;
  if (!test_set.empty()) {
    // Scored from the stored checkpoint so `eval` reproduces these numbers.
    const Network<float> stored = parse_checkpoint(bytes);
    result.test = evaluate(stored, test_set, view_mode(args.views), cfg.eval_batch_size);
    std::ostringstream report;
    report << "views: " << args.views << '\n';
    write_report_text(report, *result.test);
    write_file_atomic(dir / "report.txt", report.str());
    write_file_atomic(dir / "metrics.csv", report_csv(*result.test));
    log << "test top1 " << fixed(result.test->top1, 2) << " top2 " << fixed(result.test->top2, 2)
        << '\n';
    out << label << ": test top-1 " << fixed(result.test->top1, 1) << "%, top-2 "
        << fixed(result.test->top2, 1) << "% on " << test_set.size() << " samples\n";
  }
  write_file_atomic(dir / "train.log", log.str());
  return result;
}

int cmd_train(const TrainArgs& args, std::ostream& out) {
  apply_threads(args.threads);
  const DatasetManifest manifest = read_prepared(args.data);

  TrainConfig cfg;
  cfg.batch_size = args.batch_size;
  cfg.epochs = args.epochs > 0 ? args.epochs : (args.protocol == "crossdb" ? 100 : 200);
  cfg.bias_lr_mult = args.bias_lr_mult;
  cfg.momentum = args.momentum;
  cfg.weight_decay = args.weight_decay;
  cfg.seed = args.seed;
  cfg.augment = !args.no_augment;
  cfg.precision = args.precision == "fp64" ? Precision::fp64 : Precision::fp32;
  cfg.validate();
  LrSchedule sched;
  sched.policy = lr_policy(args.lr_policy);
  sched.base_lr = args.base_lr;
  sched.power = args.power;
  sched.gamma = args.gamma;
  sched.step_size = args.step_size;
  view_mode(args.views);

  FerNetOptions opts;
  opts.width_divisor = args.width_divisor;
  opts.fc7_units = args.fc7;
  opts.fc8_units = args.fc8;
  const NetworkConfig netcfg = fer_network_config(opts);
  shape_trace(netcfg);

  std::vector<Job> jobs;
  if (args.protocol == "kfold") {
    SplitOptions options;
    options.honor_usage = !args.fold_all;
    FoldSplit split;
    try {
      split = kfold_subject_split(manifest, args.k, args.seed, options);
    } catch (const DataError& e) {
      throw DataError(std::string(e.what()) +
                      " (databases with a usage column are not folded; see --fold-all)");
    }
    if (args.fold >= args.k) throw ConfigError("--fold must be < --k");
    for (int f = 0; f < args.k; ++f) {
      if (args.fold >= 0 && f != args.fold) continue;
      jobs.push_back({"fold" + std::to_string(f), split.folds[static_cast<std::size_t>(f)]});
    }
  } else if (args.protocol == "crossdb") {
    if (args.eval_db.empty()) throw ConfigError("crossdb protocol requires --eval-db");
    const CrossDbSplit split = cross_db_split(manifest, args.eval_db);
    jobs.push_back({"", Fold{split.train, {}, split.test}});
  } else if (args.protocol == "predefined") {
    jobs.push_back({"", usage_split(manifest)});
  } else {
    throw ConfigError("unknown protocol '" + args.protocol + "'");
  }

  std::vector<Metrics> fold_metrics;
  for (const Job& job : jobs) {
    const JobResult r = cfg.precision == Precision::fp64
                            ? run_job<double>(args, manifest, job, netcfg, cfg, sched, out)
                            : run_job<float>(args, manifest, job, netcfg, cfg, sched, out);
    if (r.test) fold_metrics.push_back(*r.test);
  }

  if (args.protocol == "kfold" && !fold_metrics.empty()) {
    const AggregateMetrics agg = aggregate_folds(fold_metrics);
    std::ostringstream report;
    report << "views: " << args.views << '\n';
    write_report_text(report, agg);
    write_file_atomic(fs::path(args.out) / "report.txt", report.str());
    write_file_atomic(fs::path(args.out) / "metrics.csv", report_csv(agg));
    out << report.str();
  } else if (fold_metrics.size() == 1) {
    std::ostringstream report;
    report << "views: " << args.views << '\n';
    write_report_text(report, fold_metrics.front());
    out << report.str();
  }
  return 0;
}

// ------------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string subset;
  std::string db;
  std::string usage;
  int views = 1;
  int batch_size = 250;
  int threads = 0;
  std::string out;
};

int cmd_eval(const EvalArgs& args, std::ostream& out) {
  apply_threads(args.threads);
  const ViewMode mode = view_mode(args.views);
  const Network<float> net = load_checkpoint(args.checkpoint);
  const DatasetManifest manifest = read_prepared(args.data);

  std::vector<std::size_t> idx;
  if (!args.subset.empty()) {
    idx = read_index_file(args.subset, manifest.samples.size());
  } else {
    for (std::size_t i = 0; i < manifest.samples.size(); ++i) idx.push_back(i);
  }
  std::optional<Usage> usage;
  if (!args.usage.empty()) {
    usage = usage_from_name(args.usage);
    if (!usage) throw ConfigError("unknown usage '" + args.usage + "'");
  }
  std::vector<std::size_t> chosen;
  for (std::size_t i : idx) {
    const Sample& s = manifest.samples[i];
    if (!args.db.empty() && s.database_id != args.db) continue;
    if (usage && s.usage != *usage) continue;
    chosen.push_back(i);
  }
  if (chosen.empty()) throw DataError("no samples selected for evaluation");

  const Metrics m = evaluate(net, pick(manifest, chosen), mode, args.batch_size);
  std::ostringstream report;
  report << "views: " << args.views << '\n';
  write_report_text(report, m);
  out << report.str();
  if (!args.out.empty()) {
    fs::create_directories(args.out);
    write_file_atomic(fs::path(args.out) / "report.txt", report.str());
    write_file_atomic(fs::path(args.out) / "metrics.csv", report_csv(m));
  }
  return 0;
}

// ---------------------------------------------------------------- opcount

struct OpcountArgs {
  int channels = 1;
  int width_divisor = 1;
};

// Reference operation figures, keyed by layer.
const std::map<std::string, double>& published_ops() {
  static const std::map<std::string, double> kOps = {
      {"conv1", 5.7e6},        {"pool1", 5.7e6},        {"conv2", 1.4e6},
      {"pool2", 1.4e6},        {"inception_3a", 2.6e6}, {"inception_3b", 4.5e6},
      {"pool4", 0.6e6},        {"inception_4a", 1.3e6}, {"pool6", 25.6e3},
      {"fc7", 0.2e6},          {"fc8", 51e3},
  };
  return kOps;
}

std::string short_count(double v) {
  if (v >= 1e6) return fixed(v / 1e6, 1) + "M";
  return fixed(v / 1e3, 1) + "K";
}

int cmd_opcount(const OpcountArgs& args, std::ostream& out) {
  if (args.channels != 1 && args.channels != 3) throw ConfigError("--channels must be 1 or 3");
  FerNetOptions opts;
  opts.input_channels = args.channels;
  opts.width_divisor = args.width_divisor;
  const OpCount ops = count_operations(fer_network_config(opts));
  const auto& published = published_ops();

  out << "input channels " << args.channels << '\n';
  out << std::left << std::setw(14) << "layer" << std::setw(17) << "kind" << std::right
      << std::setw(14) << "MACs" << std::setw(11) << "published" << std::setw(11) << "deviation"
      << '\n';
  double published_total = 0;
  std::uint64_t sum = 0;
  for (const LayerOps& l : ops.layers) {
    sum += l.macs;
    out << std::left << std::setw(14) << l.name << std::setw(17) << layer_kind_name(l.kind)
        << std::right << std::setw(14) << grouped(l.macs);
    const auto it = published.find(l.name);
    if (it != published.end() && args.width_divisor == 1) {
      published_total += it->second;
      const double dev = 100.0 * (static_cast<double>(l.macs) - it->second) / it->second;
      out << std::setw(11) << short_count(it->second) << std::setw(10) << fixed(dev, 1) << '%';
    } else {
      out << std::setw(11) << "-" << std::setw(11) << "-";
    }
    out << '\n';
  }
  out << std::left << std::setw(31) << "total" << std::right << std::setw(14) << grouped(sum);
  if (args.width_divisor == 1) {
    out << std::setw(11) << short_count(published_total) << std::setw(10)
        << fixed(100.0 * (static_cast<double>(sum) - published_total) / published_total, 1) << '%';
  }
  out << '\n';
  if (args.width_divisor == 1) {
    out << "published whole-network claim: about 25M operations; computed total is "
        << fixed(static_cast<double>(sum) / 1e6, 1) << "M ("
        << fixed(static_cast<double>(sum) / 25e6, 2) << "x)\n";
  }
  return 0;
}

// -------------------------------------------------------------- gradcheck

int cmd_gradcheck(const GradCheckOptions& options, std::ostream& out, std::ostream& err) {
  const GradCheckReport report = run_gradcheck(options);
  write_gradcheck_report(out, report);
  if (report.passed()) return 0;
  for (const GradCheckEntry& e : report.entries) {
    if (e.passed) continue;
    err << "gradient check failed: layer " << e.check << ", parameter " << e.parameter
        << ", max relative error " << e.max_rel_error << '\n';
  }
  return 1;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Facial expression recognition network: data preparation, training and evaluation",
               "fernet"};
  app.require_subcommand(1);

  PrepareArgs prep;
  auto* prepare = app.add_subcommand("prepare", "Ingest a FER2013 CSV or a manifest into a prepared dataset");
  auto* fer_opt = prepare->add_option("--fer2013", prep.fer2013, "FER2013 CSV file");
  auto* man_opt = prepare->add_option("--manifest", prep.manifest, "Manifest CSV (path,label,subject_id,database_id,usage)");
  fer_opt->excludes(man_opt);
  prepare->add_option("--out", prep.out, "Output directory")->required();

  RegisterArgs reg;
  auto* registr = app.add_subcommand("register", "Align faces to the mean landmark shape");
  registr->add_option("--images", reg.images, "Directory of face images")->required();
  registr->add_option("--landmarks", reg.landmarks, "Directory of <stem>.txt landmark files (49 lines of x y)")->required();
  registr->add_option("--out", reg.out, "Output directory")->required();
  registr->add_option("--size", reg.size, "Output side in pixels")->check(CLI::Range(8, 4096));
  registr->add_option("--margin", reg.margin, "Face window margin as a fraction of the landmark extent")->check(CLI::Range(0.0, 4.0));
  registr->add_flag("--pass-through", reg.pass_through, "Center-resize images that have no landmark file instead of skipping them");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train under a protocol and write checkpoints, history and metrics");
  train_cmd->add_option("--data,--dataset", tr.data, "Prepared dataset directory")->required();
  train_cmd->add_option("--protocol", tr.protocol, "kfold | crossdb | predefined")->check(CLI::IsMember({"kfold", "crossdb", "predefined"}));
  train_cmd->add_option("--k", tr.k, "Number of folds")->check(CLI::Range(3, 1000));
  train_cmd->add_option("--fold", tr.fold, "Run only this fold (0-based)");
  train_cmd->add_option("--eval-db", tr.eval_db, "Held-out database for crossdb");
  train_cmd->add_option("--epochs", tr.epochs, "Epochs (default 200, 100 for crossdb)")->check(CLI::Range(1, 1000000));
  train_cmd->add_option("--batch-size", tr.batch_size, "Mini-batch size")->check(CLI::Range(1, 1000000));
  train_cmd->add_option("--base-lr", tr.base_lr, "Base learning rate");
  train_cmd->add_option("--lr-policy", tr.lr_policy, "poly | fixed | step | exp")->check(CLI::IsMember({"poly", "fixed", "step", "exp"}));
  train_cmd->add_option("--power", tr.power, "Exponent of the poly policy");
  train_cmd->add_option("--gamma", tr.gamma, "Decay factor of the step and exp policies");
  train_cmd->add_option("--step-size", tr.step_size, "Iterations per step of the step policy");
  train_cmd->add_option("--momentum", tr.momentum, "SGD momentum");
  train_cmd->add_option("--weight-decay", tr.weight_decay, "L2 weight decay");
  train_cmd->add_option("--bias-lr-mult", tr.bias_lr_mult, "Learning-rate multiplier for biases");
  train_cmd->add_option("--seed", tr.seed, "Seed for initialisation, splits, shuffling and augmentation");
  train_cmd->add_option("--out", tr.out, "Output directory")->required();
  train_cmd->add_option("--threads", tr.threads, "Worker threads (default FERNET_THREADS or 1)")->check(CLI::Range(1, 1024));
  train_cmd->add_option("--width-divisor", tr.width_divisor, "Divide every channel count by this")->check(CLI::Range(1, 64));
  train_cmd->add_option("--fc7", tr.fc7, "Units of fc7")->check(CLI::Range(1, 1 << 20));
  train_cmd->add_option("--fc8", tr.fc8, "Units of fc8")->check(CLI::Range(1, 1 << 20));
  train_cmd->add_option("--views", tr.views, "Test-time views: 1 or 11")->check(CLI::IsMember({1, 11}));
  train_cmd->add_option("--precision", tr.precision, "fp32 | fp64")->check(CLI::IsMember({"fp32", "fp64"}));
  train_cmd->add_flag("--fold-all", tr.fold_all, "Fold every database, ignoring usage columns");
  train_cmd->add_flag("--no-augment", tr.no_augment, "Train on the stored images only");
  train_cmd->add_flag("--quiet", tr.quiet, "Do not print per-epoch progress");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a prepared dataset");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--data,--dataset", ev.data, "Prepared dataset directory")->required();
  eval_cmd->add_option("--views", ev.views, "1 or 11")->check(CLI::IsMember({1, 11}));
  eval_cmd->add_option("--subset", ev.subset, "File of sample indices (e.g. a fold's test.idx)");
  eval_cmd->add_option("--db", ev.db, "Only samples of this database");
  eval_cmd->add_option("--usage", ev.usage, "Only samples with this usage (train, val, test)");
  eval_cmd->add_option("--batch-size", ev.batch_size, "Inference batch size")->check(CLI::Range(1, 1000000));
  eval_cmd->add_option("--threads", ev.threads, "Worker threads (default FERNET_THREADS or 1)")->check(CLI::Range(1, 1024));
  eval_cmd->add_option("--out", ev.out, "Directory for report.txt and metrics.csv");

  OpcountArgs oc;
  auto* opcount = app.add_subcommand("opcount", "Per-layer multiply-accumulate counts");
  opcount->add_option("--channels", oc.channels, "Input channels (1 or 3)")->check(CLI::IsMember({1, 3}));
  opcount->add_option("--width-divisor", oc.width_divisor, "Divide every channel count by this")->check(CLI::Range(1, 64));

  GradCheckOptions gc;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every backward pass");
  gradcheck->add_option("--seed", gc.seed, "Seed for the random inputs");
  gradcheck->add_option("--sabotage", gc.sabotage, "Corrupt the analytic gradient of one check")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*prepare) {
      if (prep.fer2013.empty() && prep.manifest.empty()) {
        err << "prepare: one of --fer2013 or --manifest is required\n";
        return 2;
      }
      return cmd_prepare(prep, out);
    }
    if (*registr) return cmd_register(reg, out, err);
    if (*train_cmd) return cmd_train(tr, out);
    if (*eval_cmd) return cmd_eval(ev, out);
    if (*opcount) return cmd_opcount(oc, out);
    if (*gradcheck) return cmd_gradcheck(gc, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv = {"fernet"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace fernet
