#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "hrmedseg/data.hpp"
#include "hrmedseg/io.hpp"
#include "hrmedseg/model.hpp"
#include "hrmedseg/run_config.hpp"
#include "hrmedseg/teacher.hpp"

namespace hrmedseg {

struct EpochRecord {
  Index epoch = 0;
  double loss = 0;  // mean training loss of the epoch (MSE when distilling)
  double dice = 0;  // held-out metrics; NaN when distilling
  double miou = 0;
  double lr = 0;
  double seconds = 0;  // wall time, excluded from reproducibility comparisons
};

struct MetricsHistory {
  std::vector<EpochRecord> epochs;
  double initial_loss = 0;  // loss before the first update (distillation)
  double best_dice = -1;
  Index best_epoch = -1;

  // Equality of every field except wall time, compared bitwise.
  bool same_results(const MetricsHistory& other) const;
  // epoch,loss,dice,miou,lr,seconds with round-trip precision.
  void write_csv(std::ostream& os) const;
  void write_csv(const std::string& path) const;
};

struct EvalResult {
  double dice = 0;
  double miou = 0;
  Index count = 0;
};

// Dataset-mean Dice and mIoU of hard-label predictions on the selected samples.
template <typename Scalar>
EvalResult evaluate(const Model<Scalar>& model, const std::vector<Sample>& data,
                    const std::vector<std::size_t>& indices, Index batch_size);

// Rejects data whose size, class count or grid does not fit the model.
void check_dataset(const std::vector<Sample>& data, const ModelConfig& cfg);

// Seeded segmentation training on data[split.train], validating on
// data[split.val] after every epoch. The best validation Dice is written to
// config.checkpoint when non-empty. `log` receives one line per epoch.
template <typename Scalar>
MetricsHistory train_segmentation(const TrainConfig& config, Model<Scalar>& model, const std::vector<Sample>& data,
                                  const Split& split, std::ostream* log = nullptr);

// Feature distillation: neck(encoder(x)) regresses the per-image teacher
// features (one D x H/S x W/S tensor per sample, same order as `data`). Only
// "encoder." and "neck." parameters are updated.
template <typename Scalar>
MetricsHistory train_distill(const TrainConfig& config, Model<Scalar>& model, const std::vector<Sample>& data,
                             const std::vector<Tensor<Scalar>>& teacher_features, std::ostream* log = nullptr);

// Stand-in teacher sized to the student's neck: D channels at stride S.
TeacherSpec teacher_spec(const TrainConfig& config);

// Stand-in teacher features for every sample, D x H/stride x W/stride each.
template <typename Scalar>
std::vector<Tensor<Scalar>> teacher_features(const Teacher<Scalar>& teacher, const std::vector<Sample>& data);

// Matches loaded features to samples by id.
template <typename Scalar>
std::vector<Tensor<Scalar>> features_for(const NamedTensors<Scalar>& loaded, const std::vector<Sample>& data);

bool is_distilled_param(const std::string& name);

// Dataset named by the config: the manifest if set, otherwise synthetic shapes.
std::vector<Sample> load_training_data(const TrainConfig& config);

}  // namespace hrmedseg
