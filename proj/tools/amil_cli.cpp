// amil: dataset generation, training, evaluation and gradient audits.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "amil/errors.hpp"
#include "amil/evalmetrics.hpp"
#include "amil/gradaudit.hpp"
#include "amil/pooling.hpp"
#include "amil/posedomain.hpp"
#include "amil/runconfig.hpp"
#include "amil/trainer.hpp"

namespace fs = std::filesystem;
using namespace amil;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::string default_out_dir() {
  const char* env = std::getenv("AMIL_OUT");
  return env && *env ? env : "amil_out";
}

// Shared plumbing for commands that take a RunConfig.
struct ConfigOptions {
  std::string config_file;
  std::string out_dir;
  std::map<std::string, std::string> flags;
  unsigned groups = 0;

  void attach(CLI::App& cmd, unsigned setting_groups) {
    groups = setting_groups;
    out_dir = default_out_dir();
    cmd.add_option("--config", config_file, "flat key = value config file")->check(CLI::ExistingFile);
    cmd.add_option("--out", out_dir, "output directory (default: $AMIL_OUT or amil_out)");
    for (const auto& s : setting_catalog()) {
      if ((s.groups & setting_groups) == 0) continue;
      cmd.add_option("--" + s.key, flags[s.key], s.help);
    }
  }

  RunConfig resolve(const CLI::App& cmd) const {
    RunConfig cfg;
    cfg.out_dir = out_dir;
    if (!config_file.empty()) {
      for (const auto& [key, value] : read_config_file(config_file)) {
        const auto& catalog = setting_catalog();
        const auto it = std::find_if(catalog.begin(), catalog.end(),
                                     [&](const SettingInfo& s) { return s.key == key; });
        if (it != catalog.end() && (it->groups & groups) == 0) {
          throw ConfigError("setting '" + key + "' does not apply to " + cmd.get_name());
        }
        apply_setting(cfg, key, value);
      }
    }
    for (const auto& [key, value] : flags) {
      if (cmd.count("--" + key) > 0) apply_setting(cfg, key, value);
    }
    return cfg;
  }
};

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory '" + dir + "'");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::uint64_t split_seed(std::uint64_t seed, std::uint64_t split) {
  std::uint64_t x = seed + 0x9E3779B97F4A7C15ULL * (split + 1);
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// --- gen-data ----------------------------------------------------------------

int cmd_gen_data(const RunConfig& cfg) {
  cfg.validate();
  ensure_dir(cfg.out_dir);
  write_text(fs::path(cfg.out_dir) / "gen-data.conf", render_config(cfg, kDataSettings));
  const std::pair<const char*, std::size_t> splits[] = {
      {"train", cfg.count}, {"val", cfg.val_count}, {"test", cfg.test_count}};
  std::uint64_t split = 0;
  for (const auto& [name, count] : splits) {
    const auto samples = generate_dataset(split_seed(cfg.train.seed, split++), count, cfg.pose);
    const fs::path path = fs::path(cfg.out_dir) / (std::string(name) + ".amil");
    save_dataset(path.string(), samples, cfg.pose);
    std::printf("%-5s %6zu samples -> %s\n", name, count, path.string().c_str());
  }
  std::printf("seed %llu, image %zux%zu, %zu joints, patch %zu\n",
              static_cast<unsigned long long>(cfg.train.seed), cfg.pose.image_size,
              cfg.pose.image_size, cfg.pose.joint_count, cfg.pose.patch_size);
  return 0;
}

// --- train -------------------------------------------------------------------

std::string checkpoint_name(std::size_t iteration) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "checkpoint-%06zu.ckpt", iteration);
  return buf;
}

// Metrics rows of an earlier run up to (excluding) `iteration`, so a resumed
// run reproduces the uninterrupted file.
std::string metrics_prefix(const fs::path& path, std::size_t iteration) {
  std::string out = metrics_csv_header();
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::size_t iter = std::stoull(line.substr(0, line.find(',')));
    if (iter < iteration) out += line + "\n";
  }
  return out;
}

int cmd_train(RunConfig cfg, const std::string& data_path, const std::string& resume,
              bool no_adversarial) {
  if (no_adversarial) cfg.train.adversarial = false;
  const std::string data = data_path.empty() ? (fs::path(cfg.out_dir) / "train.amil").string()
                                             : data_path;
  PoseConfig pose = cfg.pose;
  const std::vector<PoseSample> dataset = load_dataset(data, pose);
  cfg.pose = pose;
  cfg.validate();
  if (dataset.empty()) throw ConfigError("training set '" + data + "' is empty");

  TrainingState state;
  if (resume.empty()) {
    state = init_training(cfg.train, pose);
  } else {
    state = load_checkpoint(resume);
    if (!(state.generator.dims.input == generator_dims(cfg.train, pose).input &&
          state.generator.dims.output == generator_dims(cfg.train, pose).output &&
          state.generator.dims.hidden == cfg.train.hidden &&
          state.generator.dims.levels == cfg.train.levels &&
          state.generator.dims.pooling == cfg.train.pooling)) {
      throw ConfigError("checkpoint '" + resume + "' does not match the configured network");
    }
    if (state.seed != cfg.train.seed) {
      throw ConfigError("checkpoint '" + resume + "' was trained with seed " +
                        std::to_string(state.seed));
    }
  }

  ensure_dir(cfg.out_dir);
  const fs::path out(cfg.out_dir);
  write_text(out / "train.conf", render_config(cfg, kTrainSettings) + "data = " + data + "\n");
  const fs::path metrics_path = out / "metrics.csv";
  const std::string prefix = resume.empty() ? metrics_csv_header()
                                            : metrics_prefix(metrics_path, state.iteration);
  std::ofstream metrics(metrics_path, std::ios::binary | std::ios::trunc);
  if (!metrics) throw IoError("cannot open '" + metrics_path.string() + "' for writing");
  metrics << prefix;

  std::printf("training %zu -> %zu iterations on %zu samples (%s, pooling %s)\n", state.iteration,
              cfg.train.total_iterations, dataset.size(),
              cfg.train.adversarial ? "adversarial" : "generator only",
              to_string(cfg.train.pooling).c_str());
  try {
    train(state, dataset, cfg.train, pose, [&](const StepMetrics& m, const TrainingState& s) {
      metrics << metrics_csv_row(m);
      metrics.flush();
      if (s.iteration % cfg.checkpoint_every == 0) {
        save_checkpoint((out / checkpoint_name(s.iteration)).string(), s);
        std::printf("iter %6zu  l_real %.6g  l_fake %.6g  gen_loss %.6g  k %.6g  lr %.3g\n",
                    s.iteration, m.l_real, m.l_fake, m.gen_loss, m.k, m.lr);
      }
    });
  } catch (const DivergenceError& e) {
    metrics.flush();
    std::fprintf(stderr,
                 "error: training diverged at iteration %zu (l_real=%.17g l_fake=%.17g "
                 "gen_loss=%.17g)\n",
                 e.iteration(), e.l_real(), e.l_fake(), e.gen_loss());
    return kExitRuntime;
  }
  save_checkpoint((out / "final.ckpt").string(), state);
  std::printf("wrote %s and %s\n", metrics_path.string().c_str(),
              (out / "final.ckpt").string().c_str());
  return 0;
}

// --- eval --------------------------------------------------------------------

std::vector<double> curve_tolerances() {
  std::vector<double> r;
  for (int i = 1; i <= 20; ++i) r.push_back(0.05 * i);
  return r;
}

int cmd_eval(RunConfig cfg, const std::string& checkpoint, const std::string& data_path,
             const std::string& source, double confusion_radius) {
  const std::string data = data_path.empty() ? (fs::path(cfg.out_dir) / "test.amil").string()
                                             : data_path;
  PoseConfig pose = cfg.pose;
  const std::vector<PoseSample> dataset = load_dataset(data, pose);
  cfg.pose = pose;
  cfg.validate();
  const SkeletonLayout layout = skeleton_layout(pose.joint_count);

  MilNetwork generator;
  if (source == "model") {
    if (checkpoint.empty()) throw ConfigError("eval --source model needs --checkpoint");
    generator = load_checkpoint(checkpoint).generator;
    const std::size_t g = pose.grid();
    if (generator.dims.input != pose.patch_size * pose.patch_size + 2 ||
        generator.dims.output != pose.joint_count * g * g) {
      throw ConfigError("checkpoint '" + checkpoint + "' does not match the dataset geometry");
    }
  }

  // Each worker fills its own slots; results do not depend on the worker count.
  std::vector<KeypointSet> pred(dataset.size());
  std::vector<KeypointSet> gt(dataset.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const PoseSample& s = dataset[i];
      gt[i] = s.keypoints;
      if (source == "ground-truth") {
        const Heatmap hm = render_heatmap(s.keypoints, pose.image_size, pose.image_size, 1.0);
        pred[i] = decode_pose(hm, pose.image_size);
        continue;
      }
      const HeatmapPredictor predict = [&](const Matrix& image) {
        return predict_heatmap(generator, image, pose);
      };
      const Heatmap hm = cfg.flip ? flip_averaged_heatmaps(predict, s.image, layout.mirror_pairs)
                                  : predict(s.image);
      pred[i] = decode_pose(hm, pose.image_size);
    }
  };
  const std::size_t workers = std::min(cfg.workers, std::max<std::size_t>(1, dataset.size()));
  std::vector<std::thread> threads;
  const std::size_t chunk = (dataset.size() + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = std::min(dataset.size(), w * chunk);
    const std::size_t end = std::min(dataset.size(), begin + chunk);
    threads.emplace_back(work, begin, end);
  }
  for (auto& t : threads) t.join();

  ensure_dir(cfg.out_dir);
  const fs::path out(cfg.out_dir);
  write_text(out / "eval.conf", render_config(cfg, kEvalSettings) + "data = " + data +
                                    "\ncheckpoint = " + checkpoint + "\nsource = " + source + "\n");
  const std::vector<double> sweep = curve_tolerances();
  for (Normalizer n : {Normalizer::torso, Normalizer::head_segment}) {
    const std::string stem = n == Normalizer::torso ? "pck" : "pckh";
    const PckResult res = pck(pred, gt, cfg.r, n, layout);
    write_text(out / (stem + ".csv"), pck_to_csv(res));
    write_text(out / (stem + ".json"), pck_to_json(res));
    write_text(out / (stem + "_curve.csv"), pck_curve_to_csv(pck_curve(pred, gt, sweep, n, layout)));
    std::printf("%s@%g (%s normalizer, %zu samples, %zu skipped)\n", stem == "pck" ? "PCK" : "PCKh",
                cfg.r, to_string(n).c_str(), dataset.size(), res.degenerate_samples);
    for (std::size_t j = 0; j < res.joints.size(); ++j) {
      std::printf("  %-12s %.4f\n", res.joints[j].c_str(), res.per_joint_rate[j]);
    }
    std::printf("  %-12s %.4f\n", "mean", res.mean_rate);
  }
  const double radius = confusion_radius > 0.0 ? confusion_radius
                                               : static_cast<double>(pose.patch_size);
  write_text(out / "confusion.csv", confusion_to_csv(confusion(pred, gt, radius), layout.names));
  std::printf("reports written to %s\n", out.string().c_str());
  return 0;
}

// --- gradcheck ---------------------------------------------------------------

int cmd_gradcheck(const AuditOptions& options) {
  const auto results = run_gradient_audit(options);
  std::printf("%s", audit_table(results).c_str());
  int status = 0;
  for (const auto& r : results) {
    if (!r.passed) {
      std::fprintf(stderr,
                   "error: gradient audit failed for %s (max relative error %.3e at index %zu, "
                   "seed %llu)\n",
                   r.component.c_str(), r.max_relative_error, r.worst_index,
                   static_cast<unsigned long long>(r.worst_seed));
      status = kExitRuntime;
    }
  }
  if (status == 0) {
    std::printf("all components within %.0e over %zu seeds\n", options.tolerance, options.seeds);
  }
  return status;
}

// --- pool-demo ---------------------------------------------------------------

Matrix parse_bag(const std::string& text) {
  std::vector<Vector> rows;
  std::stringstream instances(text);
  std::string instance;
  while (std::getline(instances, instance, ';')) {
    Vector row;
    std::stringstream values(instance);
    std::string v;
    while (std::getline(values, v, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(v, &used));
        if (v.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(v);
      } catch (const std::exception&) {
        throw ConfigError("bad number '" + v + "' in --bag");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ConfigError("--bag instances differ in length");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty() || rows.front().empty()) throw ConfigError("--bag is empty");
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
  return m;
}

std::string format_vector(std::span<const double> v) {
  std::string out = "(";
  char buf[32];
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%s%.6f", i ? ", " : "", v[i]);
    out += buf;
  }
  return out + ")";
}

int cmd_pool_demo(const std::string& bag_text, int iterations) {
  const Matrix bag = parse_bag(bag_text);
  const auto [embedding, state] = adjust_pool(bag, iterations);
  std::printf("%zu instances of dimension %zu, T = %d\n", bag.rows(), bag.cols(), iterations);
  for (std::size_t t = 0; t < state.history.size(); ++t) {
    const PoolIteration& it = state.history[t];
    std::printf("t=%zu  b=%s  w=%s  |s|=%.6f\n", t + 1, format_vector(it.logits).c_str(),
                format_vector(it.weights).c_str(), l2_norm(it.embedding));
  }
  std::printf("s=%s\n", format_vector(embedding).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adjust-pooling multiple-instance networks for keypoint heatmaps"};
  app.require_subcommand(1);

  ConfigOptions gen_opts;
  auto* gen = app.add_subcommand("gen-data", "write train/val/test splits");
  gen_opts.attach(*gen, kDataSettings);

  ConfigOptions train_opts;
  std::string train_data;
  std::string resume;
  bool no_adversarial = false;
  auto* tr = app.add_subcommand("train", "train generator and discriminator");
  train_opts.attach(*tr, kTrainSettings);
  tr->add_option("--data", train_data, "training split (default: <out>/train.amil)");
  tr->add_option("--resume", resume, "checkpoint to continue from")->check(CLI::ExistingFile);
  tr->add_flag("--no-adversarial", no_adversarial, "generator only; k stays 0");

  ConfigOptions eval_opts;
  std::string checkpoint;
  std::string eval_data;
  std::string source = "model";
  double confusion_radius = 0.0;
  auto* ev = app.add_subcommand("eval", "PCK/PCKh tables, curves and confusion matrix");
  eval_opts.attach(*ev, kEvalSettings);
  ev->add_option("--checkpoint", checkpoint, "trained checkpoint")->check(CLI::ExistingFile);
  ev->add_option("--data", eval_data, "evaluation split (default: <out>/test.amil)");
  ev->add_option("--source", source, "model | ground-truth (pixel heatmaps of the labels)")
      ->check(CLI::IsMember({"model", "ground-truth"}));
  ev->add_option("--confusion-radius", confusion_radius,
                 "assignment radius in pixels (default: patch size)");

  AuditOptions audit;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference audit of every gradient");
  gc->add_option("--seed", audit.seed, "base seed");
  gc->add_option("--seeds", audit.seeds, "random problems per component")
      ->check(CLI::PositiveNumber);
  gc->add_option("--component", audit.components, "pooling|milnet|margin|coupled|discriminator|generator")
      ->check(CLI::IsMember(audit_components()));
  gc->add_option("--tolerance", audit.tolerance, "maximum relative error");
  gc->add_option("--step", audit.step, "central-difference step (default: per component)");
  gc->add_flag("--corrupt-analytic", audit.corrupt_analytic, "test hook: perturb one analytic entry");

  std::string bag = "1,0;0,1";
  int pool_iterations = kDefaultPoolIterations;
  auto* pd = app.add_subcommand("pool-demo", "print adjust pooling iterations for a toy bag");
  pd->add_option("--bag", bag, "instances separated by ';', values by ','");
  pd->add_option("--iterations", pool_iterations, "pooling iterations")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_data(gen_opts.resolve(*gen));
    if (*tr) return cmd_train(train_opts.resolve(*tr), train_data, resume, no_adversarial);
    if (*ev) return cmd_eval(eval_opts.resolve(*ev), checkpoint, eval_data, source, confusion_radius);
    if (*gc) return cmd_gradcheck(audit);
    if (*pd) return cmd_pool_demo(bag, pool_iterations);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
