#include "hrmedseg/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <ostream>
#include <random>

#include "hrmedseg/optim.hpp"

namespace hrmedseg {

namespace {

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }

std::string round_trip(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::vector<std::vector<std::size_t>> batches_of(const std::vector<std::size_t>& order, Index batch_size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size))
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + static_cast<std::size_t>(batch_size))));
  return out;
}

void shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
}

template <typename Scalar>
Tensor<Scalar> stack_features(const std::vector<Tensor<Scalar>>& features, const std::vector<std::size_t>& idx) {
  const Shape one = features.at(idx[0]).shape();
  std::vector<Scalar> data;
  for (std::size_t i : idx) {
    const auto& t = features.at(i);
    if (t.shape() != one) throw ShapeError("teacher features differ in shape within a batch");
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  Shape shape{static_cast<Index>(idx.size())};
  shape.insert(shape.end(), one.begin(), one.end());
  return Tensor<Scalar>(std::move(shape), std::move(data));
}

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

void log_epoch(std::ostream* log, const char* what, const EpochRecord& r) {
  if (!log) return;
  *log << what << " epoch " << r.epoch << "  loss " << r.loss;
  if (!std::isnan(r.dice)) *log << "  dice " << r.dice << "  miou " << r.miou;
  *log << "  lr " << r.lr << "  " << r.seconds << "s" << std::endl;
}

}  // namespace

bool MetricsHistory::same_results(const MetricsHistory& other) const {
  if (epochs.size() != other.epochs.size() || best_epoch != other.best_epoch) return false;
  if (!same_bits(initial_loss, other.initial_loss) || !same_bits(best_dice, other.best_dice)) return false;
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    const auto &a = epochs[i], &b = other.epochs[i];
    if (a.epoch != b.epoch || !same_bits(a.loss, b.loss) || !same_bits(a.dice, b.dice) ||
        !same_bits(a.miou, b.miou) || !same_bits(a.lr, b.lr))
      return false;
  }
  return true;
}

void MetricsHistory::write_csv(std::ostream& os) const {
  os << "epoch,loss,dice,miou,lr,seconds\n";
  for (const auto& r : epochs)
    os << r.epoch << ',' << round_trip(r.loss) << ',' << round_trip(r.dice) << ',' << round_trip(r.miou) << ','
       << round_trip(r.lr) << ',' << round_trip(r.seconds) << '\n';
}

void MetricsHistory::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_csv(out);
}

TeacherSpec teacher_spec(const TrainConfig& config) {
  return {config.teacher_seed, config.model.decoder_dim, config.model.patch_size};
}

bool is_distilled_param(const std::string& name) { return has_prefix(name, "encoder.") || has_prefix(name, "neck."); }

void check_dataset(const std::vector<Sample>& data, const ModelConfig& cfg) {
  if (data.empty()) throw std::invalid_argument("dataset is empty");
  for (const auto& s : data) {
    if (s.height != data[0].height || s.width != data[0].width)
      throw ShapeError("sample " + s.id + " is " + std::to_string(s.height) + "x" + std::to_string(s.width) +
                       " but " + data[0].id + " is " + std::to_string(data[0].height) + "x" +
                       std::to_string(data[0].width));
    if (s.classes != cfg.num_classes)
      throw ShapeError("sample " + s.id + " has " + std::to_string(s.classes) + " mask channels, model expects " +
                       std::to_string(cfg.num_classes));
  }
  cfg.validate_input(data[0].height, data[0].width);
}

template <typename Scalar>
EvalResult evaluate(const Model<Scalar>& model, const std::vector<Sample>& data,
                    const std::vector<std::size_t>& indices, Index batch_size) {
  NoGradGuard guard;
  EvalResult r;
  const Index classes = model.config().num_classes;
  for (const auto& batch : batches_of(indices, batch_size)) {
    const auto probs = model.forward(stack_images<Scalar>(data, batch));
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto pred = hard_labels(probs, static_cast<Index>(b));
      const auto target = data[batch[b]].labels();
      r.dice += dice_score(pred, target, classes);
      r.miou += miou(pred, target, classes);
      ++r.count;
    }
  }
  if (r.count) {
    r.dice /= static_cast<double>(r.count);
    r.miou /= static_cast<double>(r.count);
  }
  return r;
}

template <typename Scalar>
MetricsHistory train_segmentation(const TrainConfig& config, Model<Scalar>& model, const std::vector<Sample>& data,
                                  const Split& split, std::ostream* log) {
  config.validate();
  check_dataset(data, model.config());
  if (split.train.empty() || split.val.empty()) throw std::invalid_argument("train_segmentation: empty split");

  auto& store = model.params();
  AdamState<Scalar> state;
  MetricsHistory history;
  std::mt19937_64 rng(config.seed ^ 0x5eedf00dull);
  std::vector<std::size_t> order = split.train;

  for (Index epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = Clock::now();
    const double lr = config.lr_at(epoch);
    shuffle(order, rng);
    double total = 0;
    for (const auto& batch : batches_of(order, config.batch_size)) {
      const auto images = stack_images<Scalar>(data, batch);
      const auto masks = stack_masks<Scalar>(data, batch);
      store.zero_grad();
      const auto loss = seg_loss(model.forward(images), masks, config.loss);
      total += static_cast<double>(loss.item()) * static_cast<double>(batch.size());
      backward(loss);
      adam_step(store, state, config.adam, lr);
    }
    store.zero_grad();
    const auto val = evaluate(model, data, split.val, config.batch_size);
    EpochRecord rec{epoch, total / static_cast<double>(order.size()), val.dice, val.miou, lr, 0.0};
    if (val.dice > history.best_dice) {
      history.best_dice = val.dice;
      history.best_epoch = epoch;
      if (!config.checkpoint.empty()) save_checkpoint(store, config.checkpoint,
                                                      std::is_same_v<Scalar, float> ? DType::f32 : DType::f64);
    }
    rec.seconds = since(start);
    history.epochs.push_back(rec);
    log_epoch(log, "train", rec);
  }
  return history;
}

template <typename Scalar>
MetricsHistory train_distill(const TrainConfig& config, Model<Scalar>& model, const std::vector<Sample>& data,
                             const std::vector<Tensor<Scalar>>& features, std::ostream* log) {
  config.validate();
  check_dataset(data, model.config());
  if (features.size() != data.size())
    throw std::invalid_argument("train_distill: " + std::to_string(features.size()) + " feature tensors for " +
                                std::to_string(data.size()) + " samples");
  const auto& cfg = model.config();
  const Shape expected{cfg.decoder_dim, data[0].height / cfg.patch_size, data[0].width / cfg.patch_size};
  for (std::size_t i = 0; i < features.size(); ++i)
    if (features[i].shape() != expected)
      throw ShapeError("teacher features for " + data[i].id + " have shape " + to_string(features[i].shape()) +
                       " but the neck produces " + to_string(expected));

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto all = order;
  auto dataset_mse = [&]() {
    NoGradGuard guard;
    double total = 0;
    for (const auto& batch : batches_of(all, config.batch_size)) {
      const auto mse = distill_mse(model.aligned_features(stack_images<Scalar>(data, batch)),
                                   stack_features(features, batch));
      total += static_cast<double>(mse.item()) * static_cast<double>(batch.size());
    }
    return total / static_cast<double>(all.size());
  };

  auto& store = model.params();
  AdamState<Scalar> state;
  MetricsHistory history;
  history.initial_loss = dataset_mse();
  std::mt19937_64 rng(config.seed ^ 0xd157111ull);
  const double nan = std::numeric_limits<double>::quiet_NaN();

  for (Index epoch = 0; epoch < config.distill_epochs; ++epoch) {
    const auto start = Clock::now();
    const double lr = config.lr_at(epoch);
    shuffle(order, rng);
    for (const auto& batch : batches_of(order, config.batch_size)) {
      store.zero_grad();
      const auto loss = distill_mse(model.aligned_features(stack_images<Scalar>(data, batch)),
                                    stack_features(features, batch));
      backward(loss);
      adam_step(store, state, config.adam, lr, is_distilled_param);
    }
    store.zero_grad();
    EpochRecord rec{epoch, dataset_mse(), nan, nan, lr, 0.0};
    rec.seconds = since(start);
    history.epochs.push_back(rec);
    log_epoch(log, "distill", rec);
  }
  if (!config.checkpoint.empty())
    save_checkpoint(store, config.checkpoint, std::is_same_v<Scalar, float> ? DType::f32 : DType::f64);
  return history;
}

template <typename Scalar>
std::vector<Tensor<Scalar>> teacher_features(const Teacher<Scalar>& teacher, const std::vector<Sample>& data) {
  std::vector<Tensor<Scalar>> out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto f = teacher.features(stack_images<Scalar>(data, {i}));
    out.emplace_back(Shape(f.shape().begin() + 1, f.shape().end()), std::vector<Scalar>(f.data().begin(), f.data().end()));
  }
  return out;
}

template <typename Scalar>
std::vector<Tensor<Scalar>> features_for(const NamedTensors<Scalar>& loaded, const std::vector<Sample>& data) {
  std::vector<Tensor<Scalar>> out;
  for (const auto& s : data) {
    auto it = std::find_if(loaded.begin(), loaded.end(), [&](const auto& e) { return e.first == s.id; });
    if (it == loaded.end()) throw std::invalid_argument("no teacher features for sample " + s.id);
    out.push_back(it->second);
  }
  return out;
}

std::vector<Sample> load_training_data(const TrainConfig& config) {
  if (!config.data.empty()) return load_dataset(config.data, config.model.num_classes);
  return gen_shapes_dataset(config.samples, config.image_size, config.model.num_classes, config.seed);
}

#define HRMEDSEG_INSTANTIATE_TRAINER(S)                                                                            \
  template EvalResult evaluate(const Model<S>&, const std::vector<Sample>&, const std::vector<std::size_t>&, Index); \
  template MetricsHistory train_segmentation(const TrainConfig&, Model<S>&, const std::vector<Sample>&,            \
                                             const Split&, std::ostream*);                                         \
  template MetricsHistory train_distill(const TrainConfig&, Model<S>&, const std::vector<Sample>&,                 \
                                        const std::vector<Tensor<S>>&, std::ostream*);                             \
  template std::vector<Tensor<S>> teacher_features(const Teacher<S>&, const std::vector<Sample>&);                 \
  template std::vector<Tensor<S>> features_for(const NamedTensors<S>&, const std::vector<Sample>&);

HRMEDSEG_INSTANTIATE_TRAINER(float)
HRMEDSEG_INSTANTIATE_TRAINER(double)

#undef HRMEDSEG_INSTANTIATE_TRAINER

}  // namespace hrmedseg
