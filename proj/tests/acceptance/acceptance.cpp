// One PASS/FAIL line per acceptance criterion; nonzero exit on any failure.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <cstring>
#include <span>
#include <sstream>

#include "hrmedseg/bench.hpp"
#include "hrmedseg/cost_model.hpp"
#include "hrmedseg/gradcheck_suite.hpp"
#include "hrmedseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace hrmedseg;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS" : "FAIL") << " criterion " << id << ": " << detail << std::endl;
  if (!ok) ++failures;
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

bool bit_equal(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

template <typename S>
bool bit_equal(const Tensor<S>& a, const Tensor<S>& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.data().size() * sizeof(S)) == 0;
}

template <typename S>
Tensor<S> permute_rows(const Tensor<S>& x, const std::vector<Index>& perm) {
  const Index c = x.dim(1);
  std::vector<S> out(x.data().size());
  for (std::size_t i = 0; i < perm.size(); ++i)
    std::copy_n(x.data().begin() + perm[i] * c, c, out.begin() + static_cast<Index>(i) * c);
  return Tensor<S>(x.shape(), std::move(out));
}

// ---------------------------------------------------------------- 1

void factored_matches_naive() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1);
  double worst = 0;
  int cases = 0;
  NoGradGuard guard;
  for (Index n : {1, 4, 16, 64, 256})
    for (Index d : {2, 8, 32})
      for (Index c : {3, 16, 64}) {
        const auto q = Tensor<float>::randn({n, d}, rng), k = Tensor<float>::randn({n, d}, rng);
        const auto v = Tensor<float>::randn({n, c}, rng);
        const auto a = dgla_factored(q, k, v);
        const auto b = dgla_naive(q, k, v);
        for (Index i = 0; i < a.size(); ++i) worst = std::max<double>(worst, std::abs(a.data()[i] - b.data()[i]));
        ++cases;
      }
  const double secs = since(t0);
  report(1, worst < 1e-5 && secs < 10,
         std::to_string(cases) + " shapes, max |factored - naive| " + fmt(worst, 3) + " (f32), " + fmt(secs, 3) + " s");
}

// ---------------------------------------------------------------- 2

void gradient_suite() {
  const auto r = gradcheck_all(0);
  double w32 = 0, w64 = 0;
  for (const auto& e : r.entries) {
    w32 = std::max(w32, e.error_f32);
    w64 = std::max(w64, e.error_f64);
  }
  const auto fams = r.families();
  std::string names;
  for (const auto& f : fams) names += (names.empty() ? "" : ",") + f;
  report(2, r.passed() && r.seconds < 60,
         std::to_string(r.entries.size()) + " checks over " + names + "; worst rel err f32 " + fmt(w32, 3) + ", f64 " +
             fmt(w64, 3) + ", " + fmt(r.seconds, 3) + " s");
}

// ---------------------------------------------------------------- 3

void scaling_ratios() {
  bool flops_ok = true;
  double soft_lo = 10, soft_hi = 0;
  for (Index n : {1024, 2048, 4096}) {
    flops_ok &= dgla_attention_flops(2 * n, 32, 32) == 2 * dgla_attention_flops(n, 32, 32);
    const double r = double(softmax_attention_flops(2 * n, 2 * n, 32, 32)) / double(softmax_attention_flops(n, n, 32, 32));
    soft_lo = std::min(soft_lo, r);
    soft_hi = std::max(soft_hi, r);
  }
  flops_ok &= soft_lo >= 3.96 && soft_hi <= 4.00;
  const auto rows = bench_attention({1024, 2048}, 32, 32, 0, 0.5);
  const double dt = dgla_time_ratio(rows[0], rows[1]);
  const double st = softmax_time_ratio(rows[0], rows[1]);
  report(3, flops_ok && dt < 2.5 && st > 3.2,
         "model dgla flop ratio 2 (exact), softmax " + fmt(soft_lo, 7) + ".." + fmt(soft_hi, 7) +
             "; measured 1024->2048 dgla " + fmt(dt, 3) + "x, softmax " + fmt(st, 3) + "x");
}

// ---------------------------------------------------------------- 4

void parameter_counts() {
  std::vector<ModelConfig> cfgs{ModelConfig::toy(), ModelConfig::paper()};
  auto c = ModelConfig::toy();
  c.c1 = 16, c.depth = 4, c.n_mbconv = 1, c.attn_dim = 8;
  cfgs.push_back(c);
  c = ModelConfig::toy();
  c.num_classes = 3, c.mask_mlp_depth = 2, c.decoder_dim = 64;
  cfgs.push_back(c);
  c = ModelConfig::toy();
  c.heads = 2, c.expansion_ratio = 3;
  cfgs.push_back(c);
  c = ModelConfig::paper();
  c.attention = AttentionKind::softmax, c.decoder_layers = 3;
  cfgs.push_back(c);
  bool match = true;
  for (const auto& cfg : cfgs) match &= count_params(cfg) == build_params<float>(cfg).element_count();

  auto nopool = ModelConfig::paper();
  nopool.pool_kernels.clear();
  const bool pool_free = count_params(nopool) == count_params(ModelConfig::paper()) &&
                         build_params<float>(nopool).element_count() == build_params<float>(ModelConfig::paper()).element_count();
  const auto paper = ModelConfig::paper();
  const Count p64 = model_schedule(paper, 64, 64, 1, 64, 64).total_params();
  const Count p1024 = model_schedule(paper, 64, 64, 1, 1024, 1024).total_params();
  report(4, match && pool_free && p64 == p1024,
         std::to_string(cfgs.size()) + " configs count == store; pooling adds " +
             std::to_string(count_params(ModelConfig::paper()) - count_params(nopool)) + " params; decoder at 64^2 " +
             std::to_string(p64) + " == at 1024^2 " + std::to_string(p1024));
}

// ---------------------------------------------------------------- 5

void full_size_defaults() {
  const auto cfg = ModelConfig::paper();
  const Index batch = 16;
  const auto r = estimate(cfg, 1024, 1024, batch, CostMode::training);
  const double pr = double(r.params) / PublishedAnchors::params;
  const double fr = double(r.flops) / double(batch) / PublishedAnchors::flops;
  const double mr = double(r.peak_activation_bytes) / PublishedAnchors::memory_bytes;
  auto within = [](double x) { return x >= 0.1 && x <= 10; };
  std::ostringstream text;
  write_report_text(text, r, cfg, 1024, 1024, batch, CostMode::training);
  const bool caveat = text.str().find("not\n  published") != std::string::npos;
  const Count ushape = ushape_schedule(cfg, 1024, 1024, batch).peak_bytes(CostMode::training);
  report(5, within(pr) && within(fr) && within(mr) && caveat && ushape > r.peak_activation_bytes,
         "params " + fmt(pr, 3) + "x, flops/image " + fmt(fr, 3) + "x, peak " + fmt(mr, 3) +
             "x of the published figures; caveat " + (caveat ? "present" : "missing") + "; u-shape peak " +
             fmt(double(ushape) / double(r.peak_activation_bytes), 3) + "x this model");
}

// ---------------------------------------------------------------- 6 and 8

struct ToyRun {
  MetricsHistory history;
  std::string weights;
  double seconds = 0;
};

ToyRun toy_run(const TrainConfig& c, const std::vector<Sample>& data, const fs::path& weights, Model<float>* keep) {
  const auto t0 = Clock::now();
  Model<float> model(c.model);
  const auto split = split_indices(data.size(), c.val_fraction, c.seed);
  ToyRun r;
  r.history = train_segmentation(c, model, data, split);
  r.seconds = since(t0);
  save_checkpoint(model.params(), weights);
  r.weights = slurp(weights);
  if (keep) *keep = std::move(model);
  return r;
}

void toy_training(const fs::path& dir, Model<float>& trained, std::vector<Sample>& data_out) {
  auto c = TrainConfig::for_profile("toy");
  c.samples = 200;
  c.checkpoint.clear();
  c.metrics.clear();
  const auto data = gen_shapes_dataset(c.samples, c.image_size, c.model.num_classes, c.seed);
  const auto a = toy_run(c, data, dir / "a.hrms", &trained);
  const auto b = toy_run(c, data, dir / "b.hrms", nullptr);
  const double dice = a.history.epochs.back().dice;
  const bool same = a.history.same_results(b.history) && a.weights == b.weights;
  report(6, c.epochs <= 50 && dice >= 0.85 && same && std::max(a.seconds, b.seconds) <= 900,
         std::to_string(c.samples) + " samples, " + std::to_string(c.epochs) + " epochs, held-out dice " + fmt(dice) +
             " (last epoch); second run " + (same ? "bitwise identical" : "DIFFERS") + "; " + fmt(a.seconds, 4) + " s / " +
             fmt(b.seconds, 4) + " s");
  data_out = data;
}

void structural(const fs::path& dir, const Model<float>& trained, const std::vector<Sample>& data) {
  std::mt19937_64 rng(8);
  NoGradGuard guard;
  std::vector<std::string> bad;

  // residual: zero block output projection passes tokens through unchanged
  auto w = DglaWeights<float>::from(trained.params(), encoder_block_prefix(trained.config().n_mbconv));
  w.fc2_w = Tensor<float>(w.fc2_w.shape());
  w.fc2_b = Tensor<float>(w.fc2_b.shape());
  const auto x = Tensor<float>::randn({64, trained.config().c1}, rng);
  if (!bit_equal(dgla_block(x, w, trained.config().heads), x)) bad.push_back("residual");

  double sm = 0;
  const auto s = softmax_rows(Tensor<float>::randn({64, 100}, rng, 5.0f));
  for (Index i = 0; i < 64; ++i)
    sm = std::max(sm, std::abs(std::accumulate(s.data().begin() + i * 100, s.data().begin() + (i + 1) * 100, 0.0) - 1));
  if (!(sm < 1e-6)) bad.push_back("softmax rows");

  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  bool open = true;
  for (std::size_t i = 0; i < data.size(); i += 8) {
    std::vector<std::size_t> idx(all.begin() + i, all.begin() + std::min(i + 8, all.size()));
    const auto p = trained.forward(stack_images<float>(data, idx));
    open &= std::all_of(p.data().begin(), p.data().end(), [](float v) { return v > 0 && v < 1; });
  }
  if (!open) bad.push_back("mask range");

  save_checkpoint(trained.params(), dir / "c1.hrms");
  save_checkpoint(load_checkpoint<float>(dir / "c1.hrms"), dir / "c2.hrms");
  bool ckpt = slurp(dir / "c1.hrms") == slurp(dir / "c2.hrms");
  const auto loaded = load_checkpoint<float>(dir / "c1.hrms");
  for (const auto& name : trained.params().names())
    ckpt &= bit_equal(trained.params().get(name).data(), loaded.get(name).data());
  if (!ckpt) bad.push_back("checkpoint");

  bool pgm = true;
  for (std::size_t i = 0; i < data.size(); i += 10) {
    write_mask_pgm(data[i].labels(), 1, dir / "m.pgm");
    pgm &= read_mask_pgm(dir / "m.pgm", 1) == data[i].labels();
  }
  if (!pgm) bad.push_back("pgm");

  double rows = 0;
  for (Index n : {1, 7, 64, 200}) {
    const auto wts = dgla_weights(Tensor<double>::randn({n, 8}, rng), Tensor<double>::randn({n, 8}, rng));
    for (Index i = 0; i < n; ++i) {
      double acc = 0;
      for (Index j = 0; j < n; ++j) acc += wts.data()[i * n + j];
      rows = std::max(rows, std::abs(acc - 1));
    }
  }
  if (!(rows < 1e-12)) bad.push_back("dgla rows");

  // dyadic nonnegative inputs: every sum exact, so reordering is bitwise neutral
  std::uniform_int_distribution<int> eighths(0, 16);
  auto dyadic = [&](Index r, Index c) {
    std::vector<double> v(static_cast<std::size_t>(r * c));
    for (double& e : v) e = eighths(rng) / 8.0;
    return Tensor<double>({r, c}, std::move(v));
  };
  bool perm_ok = true;
  for (Index n : {8, 32, 96}) {
    const auto q = dyadic(n, 4), k = dyadic(n, 4), v = dyadic(n, 6);
    std::vector<Index> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    perm_ok &= bit_equal(permute_rows(dgla_factored(q, k, v), perm),
                         dgla_factored(permute_rows(q, perm), permute_rows(k, perm), permute_rows(v, perm)));
  }
  if (!perm_ok) bad.push_back("permutation");

  std::string detail = "residual identity, softmax rows (max err " + fmt(sm, 2) + "), masks in (0,1), checkpoint and pgm round trips, dgla rows (max err " +
                       fmt(rows, 2) + "), permutation equivariance";
  if (!bad.empty()) {
    detail += "; failed:";
    for (const auto& b : bad) detail += " " + b;
  }
  report(8, bad.empty(), detail);
}

// ---------------------------------------------------------------- 7

void distillation() {
  auto c = TrainConfig::for_profile("toy");
  c.samples = 200;
  c.distill_epochs = 20;
  const auto data = gen_shapes_dataset(c.samples, c.image_size, c.model.num_classes, c.seed);
  Model<float> model(c.model);
  const Model<float> start(c.model);
  const auto feats = teacher_features(Teacher<float>(teacher_spec(c)), data);
  const auto h = train_distill(c, model, data, feats);
  const double last = h.epochs.back().loss;
  Index hit = -1;
  for (const auto& e : h.epochs)
    if (e.loss <= 0.5 * h.initial_loss) {
      hit = e.epoch + 1;
      break;
    }
  bool frozen = true;
  for (const auto& name : model.params().names())
    if (!is_distilled_param(name)) frozen &= bit_equal(model.params().get(name).data(), start.params().get(name).data());
  report(7, hit > 0 && hit <= 20 && frozen,
         "mse " + fmt(h.initial_loss) + " -> " + fmt(last) + " over " + std::to_string(h.epochs.size()) +
             " epochs, halved after epoch " + std::to_string(hit) + "; decoder params " +
             (frozen ? "bitwise unchanged" : "CHANGED"));
}

}  // namespace

int main() {
  const fs::path dir = fs::temp_directory_path() / ("hrmedseg_acceptance_" + std::to_string(std::random_device{}()));
  fs::create_directories(dir);
  try {
    factored_matches_naive();
    gradient_suite();
    scaling_ratios();
    parameter_counts();
    full_size_defaults();
    Model<float> trained(ModelConfig::toy());
    std::vector<Sample> data;
    toy_training(dir, trained, data);
    distillation();
    structural(dir, trained, data);
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance aborted: " << e.what() << std::endl;
    ++failures;
  }
  fs::remove_all(dir);
  std::cout << (failures ? std::to_string(failures) + " criterion(s) failed" : std::string("all criteria passed")) << std::endl;
  return failures ? 1 : 0;
}
