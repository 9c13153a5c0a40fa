#include "hrmedseg/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>

#include "hrmedseg/bench.hpp"
#include "hrmedseg/cost_model.hpp"
#include "hrmedseg/gradcheck_suite.hpp"
#include "hrmedseg/trainer.hpp"

namespace hrmedseg {

namespace {

struct Options {
  std::string config_path;
  std::string profile;
  std::map<std::string, std::string> settings;  // --key value for every config key
  CLI::App* app = nullptr;

  // infer / eval
  std::string image, out, weights;
  bool all = false;
  // analyze
  Index height = 0, width = 0, batch = 0;
  bool csv = false, inference = false;
  std::vector<Index> scaling;
  // bench-attn
  std::vector<Index> n_list{256, 512, 1024, 2048};
  Index dim = 32, value_dim = 32;
  double min_seconds = 0.2;
};

TrainConfig resolve(const Options& o) {
  std::vector<std::pair<std::string, std::string>> overrides;
  if (!o.profile.empty()) overrides.emplace_back("profile", o.profile);
  for (const auto& [key, help] : config_keys()) {
    auto it = o.settings.find(key);
    if (key != "profile" && it != o.settings.end() && o.app->get_option("--" + key)->count() > 0) overrides.emplace_back(key, it->second);
  }
  return build_config(o.config_path, overrides);
}

template <typename Scalar>
Model<Scalar> initial_model(const TrainConfig& c) {
  if (c.init.empty()) return Model<Scalar>(c.model);
  return Model<Scalar>(c.model, load_checkpoint<Scalar>(c.init));
}

template <typename Scalar>
Model<Scalar> trained_model(const TrainConfig& c, const std::string& weights) {
  const std::string path = weights.empty() ? c.checkpoint : weights;
  if (path.empty()) throw std::invalid_argument("no weights: pass --weights or set checkpoint");
  return Model<Scalar>(c.model, load_checkpoint<Scalar>(path));
}

template <typename Scalar>
int run_train(const TrainConfig& c, std::ostream& out) {
  const auto data = load_training_data(c);
  const auto split = split_indices(data.size(), c.val_fraction, c.seed);
  auto model = initial_model<Scalar>(c);
  out << "training on " << split.train.size() << " samples, validating on " << split.val.size() << "\n";
  const auto history = train_segmentation(c, model, data, split, &out);
  if (!c.metrics.empty()) history.write_csv(c.metrics);
  out << "best val dice " << history.best_dice << " at epoch " << history.best_epoch << "\n";
  return 0;
}

template <typename Scalar>
int run_distill(const TrainConfig& c, std::ostream& out) {
  const auto data = load_training_data(c);
  auto model = initial_model<Scalar>(c);
  std::vector<Tensor<Scalar>> features;
  if (c.teacher_features.empty()) {
    features = teacher_features(Teacher<Scalar>(teacher_spec(c)), data);
  } else {
    const auto& m = c.model;
    const Shape expected{m.decoder_dim, data.at(0).height / m.patch_size, data.at(0).width / m.patch_size};
    features = features_for(load_teacher_features<Scalar>(c.teacher_features, expected), data);
  }
  const auto history = train_distill(c, model, data, features, &out);
  if (!c.metrics.empty()) history.write_csv(c.metrics);
  const double last = history.epochs.empty() ? history.initial_loss : history.epochs.back().loss;
  out << "mse " << history.initial_loss << " -> " << last << "\n";
  return 0;
}

template <typename Scalar>
int run_infer(const TrainConfig& c, const Options& o, std::ostream& out) {
  Index h = 0, w = 0;
  const auto pixels = read_image(o.image, h, w);
  c.model.validate_input(h, w);
  const auto model = trained_model<Scalar>(c, o.weights);
  NoGradGuard guard;
  const auto probs =
      model.forward(Tensor<Scalar>({1, 3, h, w}, std::vector<Scalar>(pixels.begin(), pixels.end())));
  write_mask_pgm(hard_labels(probs), c.model.num_classes, o.out);
  out << "wrote " << o.out << " (" << w << "x" << h << ")\n";
  return 0;
}

template <typename Scalar>
int run_eval(const TrainConfig& c, const Options& o, std::ostream& out) {
  const auto data = load_training_data(c);
  check_dataset(data, c.model);
  std::vector<std::size_t> indices;
  if (o.all) {
    indices.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) indices[i] = i;
  } else {
    indices = split_indices(data.size(), c.val_fraction, c.seed).val;
  }
  const auto model = trained_model<Scalar>(c, o.weights);
  const auto r = evaluate(model, data, indices, c.batch_size);
  out << "dice " << r.dice << "  miou " << r.miou << "  samples " << r.count << "\n";
  return 0;
}

int run_analyze(const TrainConfig& c, const Options& o, std::ostream& out) {
  const Index h = o.height > 0 ? o.height : c.image_size;
  const Index w = o.width > 0 ? o.width : h;
  const Index batch = o.batch > 0 ? o.batch : c.batch_size;
  const CostMode mode = o.inference ? CostMode::inference : CostMode::training;
  const Count bytes = c.precision == Precision::f64 ? 8 : 4;
  const auto report = estimate(c.model, h, w, batch, mode, bytes);
  if (o.csv) {
    write_report_csv(out, report);
    return 0;
  }
  write_report_text(out, report, c.model, h, w, batch, mode);
  const auto ushape = ushape_schedule(c.model, h, w, batch, bytes).peak_bytes(mode);
  out << "\nu-shape baseline peak: " << format_bytes(static_cast<double>(ushape)) << " ("
      << static_cast<double>(ushape) / static_cast<double>(report.peak_activation_bytes) << "x this model)\n";
  if (!o.scaling.empty()) {
    out << "\n";
    write_scaling_text(out, scaling_report(c.model, o.scaling, batch, mode));
  }
  return 0;
}

int run_gradcheck(const TrainConfig& c, std::ostream& out) {
  const auto report = gradcheck_all(c.seed);
  write_gradcheck_report(out, report);
  return report.passed() ? 0 : 1;
}

int run_selftest(const TrainConfig& c, std::ostream& out) {
  int failures = 0;
  auto check = [&](const std::string& name, bool ok, const std::string& detail) {
    out << (ok ? "PASS " : "FAIL ") << name << "  " << detail << "\n";
    if (!ok) ++failures;
  };
  std::mt19937_64 rng(c.seed);
  NoGradGuard guard;

  double worst = 0, row_err = 0;
  for (Index n : {1, 16, 64})
    for (Index d : {2, 8})
      for (Index ch : {3, 16}) {
        const auto q = Tensor<float>::randn({n, d}, rng), k = Tensor<float>::randn({n, d}, rng);
        const auto v = Tensor<float>::randn({n, ch}, rng);
        const auto a = dgla_factored(q, k, v), b = dgla_naive(q, k, v);
        for (Index i = 0; i < a.size(); ++i) worst = std::max<double>(worst, std::abs(a.data()[i] - b.data()[i]));
        const auto wts = dgla_weights(q, k);
        for (Index i = 0; i < n; ++i) {
          double s = 0;
          for (Index j = 0; j < n; ++j) s += wts.data()[i * n + j];
          row_err = std::max(row_err, std::abs(s - 1));
        }
      }
  check("dgla factored == naive", worst < 1e-5, "max |diff| " + std::to_string(worst));
  check("dgla weight rows sum to 1", row_err < 1e-6, "max error " + std::to_string(row_err));

  const auto sm = softmax_rows(Tensor<float>::randn({32, 48}, rng, 4.0f));
  double sm_err = 0;
  for (Index i = 0; i < 32; ++i) {
    double s = 0;
    for (Index j = 0; j < 48; ++j) s += sm.data()[i * 48 + j];
    sm_err = std::max(sm_err, std::abs(s - 1));
  }
  check("softmax rows sum to 1", sm_err < 1e-6, "max error " + std::to_string(sm_err));

  const Model<float> model(c.model);
  const Count counted = count_params(c.model);
  check("count_params == parameter store", counted == model.params().element_count(),
        std::to_string(counted) + " vs " + std::to_string(model.params().element_count()));

  const auto sample = gen_shapes_dataset(1, c.model.patch_size * 8, c.model.num_classes, c.seed);
  const auto probs = model.forward(stack_images<float>(sample, {0}));
  const bool open_unit = std::all_of(probs.data().begin(), probs.data().end(), [](float p) { return p > 0 && p < 1; });
  check("mask probabilities in (0,1)", open_unit, to_string(probs.shape()));

  const auto dir = std::filesystem::temp_directory_path() / ("hrmedseg_selftest_" + std::to_string(rng()));
  std::filesystem::create_directories(dir);
  save_checkpoint(model.params(), dir / "a.hrms");
  save_checkpoint(load_checkpoint<float>(dir / "a.hrms"), dir / "b.hrms");
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  check("checkpoint round trip", slurp(dir / "a.hrms") == slurp(dir / "b.hrms"), "save-load-save byte comparison");
  const auto labels = sample[0].labels();
  write_mask_pgm(labels, c.model.num_classes, dir / "m.pgm");
  check("pgm round trip", read_mask_pgm(dir / "m.pgm", c.model.num_classes).labels == labels.labels,
        "label map comparison");
  std::filesystem::remove_all(dir);

  out << (failures ? std::to_string(failures) + " check(s) failed" : std::string("all checks passed")) << "\n";
  return failures ? 1 : 0;
}

int run_bench(const Options& o, std::ostream& out) {
  const auto rows = bench_attention(o.n_list, o.dim, o.value_dim, 0, o.min_seconds);
  write_bench_text(out, rows);
  return 0;
}

template <typename F>
int with_precision(const TrainConfig& c, F&& f) {
  return c.precision == Precision::f64 ? f(double{}) : f(float{});
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"HRMedSeg reference implementation: training, distillation, inference and cost analysis", "hrmedseg"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  Options o;
  o.app = &app;
  app.add_option("--config", o.config_path, "flat key = value config file")->check(CLI::ExistingFile);
  app.add_option("--profile", o.profile, "toy (default) or paper");
  for (const auto& [key, help] : config_keys())
    if (key != "profile") app.add_option("--" + key, o.settings[key], help);

  auto* train = app.add_subcommand("train", "segmentation training with Dice + focal loss");
  auto* distill = app.add_subcommand("distill", "encoder feature distillation against the teacher");
  auto* infer = app.add_subcommand("infer", "predict a mask for one image");
  infer->add_option("--image", o.image, "input PPM/PGM image")->required()->check(CLI::ExistingFile);
  infer->add_option("--out", o.out, "output PGM mask")->required();
  infer->add_option("--weights", o.weights, "checkpoint to load (default: checkpoint key)");
  auto* eval = app.add_subcommand("eval", "Dice and mIoU of a checkpoint on the held-out split");
  eval->add_option("--weights", o.weights, "checkpoint to load (default: checkpoint key)");
  eval->add_flag("--all", o.all, "evaluate every sample instead of the held-out split");
  auto* analyze = app.add_subcommand("analyze", "analytic parameter, FLOP and memory report");
  analyze->add_option("--height", o.height, "input height (default: image_size)")->check(CLI::PositiveNumber);
  analyze->add_option("--width", o.width, "input width (default: height)")->check(CLI::PositiveNumber);
  analyze->add_option("--batch", o.batch, "batch size (default: batch_size)")->check(CLI::PositiveNumber);
  analyze->add_flag("--csv", o.csv, "per-layer CSV instead of the text report");
  analyze->add_flag("--inference", o.inference, "inference-mode memory (default: training)");
  analyze->add_option("--scaling", o.scaling, "comma-separated square resolutions for a scaling table")
      ->delimiter(',');
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every differentiable family");
  auto* selftest = app.add_subcommand("selftest", "fast structural invariant checks");
  auto* bench = app.add_subcommand("bench-attn", "time linear vs softmax attention");
  bench->add_option("--n-list", o.n_list, "comma-separated token counts")->delimiter(',');
  bench->add_option("--dim", o.dim, "query/key width")->check(CLI::PositiveNumber);
  bench->add_option("--value-dim", o.value_dim, "value width")->check(CLI::PositiveNumber);
  bench->add_option("--min-seconds", o.min_seconds, "minimum timing budget per measurement");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  TrainConfig config;
  try {
    config = resolve(o);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*train) return with_precision(config, [&](auto s) { return run_train<decltype(s)>(config, out); });
    if (*distill) return with_precision(config, [&](auto s) { return run_distill<decltype(s)>(config, out); });
    if (*infer) return with_precision(config, [&](auto s) { return run_infer<decltype(s)>(config, o, out); });
    if (*eval) return with_precision(config, [&](auto s) { return run_eval<decltype(s)>(config, o, out); });
    if (*analyze) return run_analyze(config, o, out);
    if (*gradcheck) return run_gradcheck(config, out);
    if (*selftest) return run_selftest(config, out);
    if (*bench) return run_bench(o, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  err << app.help();
  return 2;
}

int cli_dispatch(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return cli_dispatch(args, std::cout, std::cerr);
}

}  // namespace hrmedseg
