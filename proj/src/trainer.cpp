#include "pvtformer/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "pvtformer/checkpoint.hpp"
#include "pvtformer/losses.hpp"
#include "pvtformer/rng.hpp"

namespace pvt {
namespace {

std::vector<int> take(const std::vector<int>& order, std::size_t start,
                      std::size_t count) {
  return {order.begin() + static_cast<std::ptrdiff_t>(start),
          order.begin() + static_cast<std::ptrdiff_t>(start + count)};
}

double validation_loss(PVTFormer<float>& model,
                       const std::vector<Slice>& slices, Index batch_size) {
  std::vector<int> order(slices.size());
  std::iota(order.begin(), order.end(), 0);
  double acc = 0.0;
  for (std::size_t start = 0; start < order.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t count =
        std::min<std::size_t>(static_cast<std::size_t>(batch_size),
                              order.size() - start);
    const std::vector<int> idx = take(order, start, count);
    Tensor4D<float> x = slices_to_input(slices, idx);
    Tensor4D<float> y = slices_to_target(slices, idx);
    Tensor4D<float> logits = model.forward_logits(x, Phase::eval);
    acc += combined_loss(logits, y).total * static_cast<double>(count);
  }
  return acc / static_cast<double>(slices.size());
}

}  // namespace

TrainResult train(PVTFormer<float>& model, const TrainConfig& cfg,
                  const std::vector<Slice>& train_slices,
                  const std::vector<Slice>& val_slices,
                  const std::string& ckpt_path, const std::string& history_csv,
                  const std::function<void(const EpochStats&)>& on_epoch) {
  cfg.validate();
  require(!train_slices.empty(), "train: training split is empty");
  require(!val_slices.empty(), "train: validation split is empty");

  ParamRegistry<float> reg;
  model.collect(reg);
  Adam<float> adam(cfg.adam());
  Rng rng(cfg.seed);
  EarlyStopping stopper(cfg.patience);
  TrainResult res;

  // Snapshot of every registry entry (weights plus running stats) at the best
  // validation epoch; the model is restored to it before returning.
  std::vector<std::vector<float>> best;
  auto snapshot = [&] {
    best.clear();
    for (const auto& e : reg.entries())
      best.emplace_back(e.value, e.value + e.count());
  };

  std::vector<int> order(train_slices.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng.shuffle(order);
    double acc = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t count =
          std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size),
                                order.size() - start);
      const std::vector<int> idx = take(order, start, count);
      Tensor4D<float> x = slices_to_input(train_slices, idx);
      Tensor4D<float> y = slices_to_target(train_slices, idx);

      Tensor4D<float> logits = model.forward_logits(x, Phase::train);
      Tensor4D<float> dlogits;
      const LossValue lv = combined_loss_grad(logits, y, dlogits);
      if (!std::isfinite(lv.total)) {
        std::ostringstream msg;
        msg << "train: non-finite loss at epoch " << epoch << " step "
            << res.steps + 1 << " (total=" << lv.total << ", bce=" << lv.bce
            << ", dice=" << lv.dice << ")";
        throw std::runtime_error(msg.str());
      }
      reg.zero_grad();
      model.backward(dlogits);
      adam.step(reg);
      ++res.steps;
      acc += lv.total * static_cast<double>(count);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = acc / static_cast<double>(train_slices.size());
    stats.val_loss = validation_loss(model, val_slices, cfg.batch_size);
    if (!std::isfinite(stats.val_loss)) {
      std::ostringstream msg;
      msg << "train: non-finite validation loss at epoch " << epoch << " ("
          << stats.val_loss << ")";
      throw std::runtime_error(msg.str());
    }
    res.history.push_back(stats);
    res.stopped_epoch = epoch;

    if (stopper.observe(epoch, stats.val_loss)) {
      snapshot();
      if (!ckpt_path.empty())
        save_checkpoint(ckpt_path, model.cfg, reg, epoch, stats.val_loss,
                        &adam);
    }
    if (on_epoch) on_epoch(stats);
    if (stopper.should_stop()) break;
  }

  res.best_epoch = stopper.best_epoch();
  res.best_val_loss = stopper.best_value();
  for (std::size_t i = 0; i < best.size(); ++i)
    std::copy(best[i].begin(), best[i].end(), reg.entries()[i].value);

  if (!history_csv.empty()) write_history_csv(history_csv, res.history);
  return res;
}

void write_history_csv(const std::string& path,
                       const std::vector<EpochStats>& history) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write history csv: " + path);
  f << "epoch,train_loss,val_loss\n";
  f << std::setprecision(9);
  for (const auto& h : history)
    f << h.epoch << ',' << h.train_loss << ',' << h.val_loss << '\n';
  if (!f) throw std::runtime_error("short write on history csv: " + path);
}

MetricsReport evaluate(PVTFormer<float>& model,
                       const std::vector<Slice>& slices, double threshold,
                       Index batch_size, bool with_hd) {
  require(!slices.empty(), "evaluate: split is empty");
  require(batch_size > 0, "evaluate: batch_size must be positive");
  std::vector<SliceMetrics> rows;
  rows.reserve(slices.size());
  std::vector<int> order(slices.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t start = 0; start < order.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t count =
        std::min<std::size_t>(static_cast<std::size_t>(batch_size),
                              order.size() - start);
    const std::vector<int> idx = take(order, start, count);
    Tensor4D<float> x = slices_to_input(slices, idx);
    MaskTensor pred = model.predict_mask(x, threshold);
    for (std::size_t k = 0; k < count; ++k) {
      const Slice& s = slices[static_cast<std::size_t>(idx[k])];
      const MaskView pv = slice_view(pred, static_cast<Index>(k));
      const MaskView gv{s.mask.data(), s.h, s.w};
      if (with_hd) {
        rows.push_back(evaluate_pair(slice_stem(s), pv, gv));
      } else {
        SliceMetrics sm;
        sm.slice_id = slice_stem(s);
        sm.overlap = overlap_metrics(confusion(pv, gv));
        rows.push_back(std::move(sm));
      }
    }
  }
  return aggregate(std::move(rows));
}

}  // namespace pvt
