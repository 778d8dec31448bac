#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "pvtformer/data.hpp"
#include "pvtformer/metrics.hpp"
#include "pvtformer/model.hpp"
#include "pvtformer/optim.hpp"

namespace pvt {

struct TrainConfig {
  Index batch_size = 16;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int max_epochs = 500;
  int patience = 50;
  std::uint64_t seed = 0;
  bool tiny_mode = false;

  void validate() const {
    require(batch_size > 0, "train config: batch_size must be positive");
    require(lr > 0.0 && eps > 0.0, "train config: lr and eps must be positive");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0,
            "train config: betas must lie in [0, 1)");
    require(max_epochs > 0, "train config: max_epochs must be positive");
    require(patience > 0, "train config: patience must be positive");
    require(patience <= max_epochs,
            "train config: patience must not exceed max_epochs");
  }

  AdamConfig adam() const { return AdamConfig{lr, beta1, beta2, eps}; }
};

// Stops once `patience` consecutive epochs fail to improve the best value
// (strict-less comparison).
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {
    require(patience > 0, "early stopping: patience must be positive");
  }

  // Returns true when this epoch improved the best value.
  bool observe(int epoch, double value) {
    if (value < best_value_) {
      best_value_ = value;
      best_epoch_ = epoch;
      stale_ = 0;
      return true;
    }
    ++stale_;
    return false;
  }

  bool should_stop() const { return stale_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best_value() const { return best_value_; }

 private:
  int patience_;
  int stale_ = 0;
  int best_epoch_ = 0;
  double best_value_ = std::numeric_limits<double>::infinity();
};

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  int stopped_epoch = 0;  // last epoch that ran
  std::int64_t steps = 0;
};

// Seeded shuffled mini-batches, combined loss, Adam updates, per-epoch
// validation, early stopping on validation total loss. The best-validation
// checkpoint is written to ckpt_path (when non-empty) as it improves, and the
// model is left holding the best weights. Empty splits are contract
// violations; a non-finite loss aborts with a diagnostic.
TrainResult train(PVTFormer<float>& model, const TrainConfig& cfg,
                  const std::vector<Slice>& train_slices,
                  const std::vector<Slice>& val_slices,
                  const std::string& ckpt_path = std::string(),
                  const std::string& history_csv = std::string(),
                  const std::function<void(const EpochStats&)>& on_epoch = {});

void write_history_csv(const std::string& path,
                       const std::vector<EpochStats>& history);

// Thresholded prediction per slice in eval mode, aggregated by the metrics
// module. Slice ids follow the dataset blob stems (<patient>_<index>).
MetricsReport evaluate(PVTFormer<float>& model,
                       const std::vector<Slice>& slices,
                       double threshold = 0.5, Index batch_size = 8,
                       bool with_hd = true);

}  // namespace pvt
