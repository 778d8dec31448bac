#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pvtformer/analysis.hpp"
#include "pvtformer/blockcheck.hpp"
#include "pvtformer/checkpoint.hpp"
#include "pvtformer/data.hpp"
#include "pvtformer/trainer.hpp"

namespace {

using nlohmann::json;
using namespace pvt;

void echo_config(const json& j) {
  std::cout << "resolved config: " << j.dump() << '\n';
}

// Validation and test take the 30/130 share each (rounded, at least one
// patient); training keeps the rest.
SplitCounts proportional_counts(int patients) {
  SplitCounts c;
  c.val = std::max(1, static_cast<int>(std::llround(patients * 30.0 / 130.0)));
  c.test = c.val;
  c.train = patients - c.val - c.test;
  require(c.train >= 1, "synth: need at least 3 patients to fill all splits");
  return c;
}

struct SynthArgs {
  std::string out;
  int patients = 10;
  int slices = 12;
  std::uint64_t seed = 0;
  Index size = kSliceTarget;
  bool exclude_tumor = false;
};

int run_synth(const SynthArgs& a) {
  require(a.patients > 0, "synth: --patients must be positive");
  require(a.slices > 0, "synth: --slices must be positive");
  const SplitCounts counts = proportional_counts(a.patients);
  echo_config(json{{"command", "synth"},
                   {"out", a.out},
                   {"patients", a.patients},
                   {"slices_per_patient", a.slices},
                   {"seed", a.seed},
                   {"size", a.size},
                   {"exclude_tumor", a.exclude_tumor},
                   {"window", {kWindowLo, kWindowHi}},
                   {"split_counts",
                    {{"train", counts.train},
                     {"val", counts.val},
                     {"test", counts.test}}}});

  const std::vector<Volume> volumes =
      synth_phantom(a.seed, a.patients, a.slices, a.size);
  std::vector<Slice> slices;
  std::vector<std::string> ids;
  for (const auto& v : volumes) {
    ids.push_back(v.patient_id);
    for (auto& s :
         volume_to_slices(v, a.size, kWindowLo, kWindowHi, a.exclude_tumor))
      slices.push_back(std::move(s));
  }
  const auto split_ids = split_by_patient(ids, counts, a.seed);
  const DatasetManifest manifest =
      build_manifest(slices, split_ids, a.seed, a.size, kWindowLo, kWindowHi,
                     a.exclude_tumor);
  save_dataset(a.out, manifest, slices);

  std::size_t total = 0;
  for (const auto& [name, records] : manifest.splits) {
    std::cout << "split " << name << ": " << split_ids.at(name).size()
              << " patients, " << records.size() << " slices\n";
    total += records.size();
  }
  std::cout << "wrote " << total << " slice records to " << a.out << '\n';
  return 0;
}

struct TrainArgs {
  std::string data;
  std::string out;
  std::string history;
  bool tiny = false;
  bool linear_sra = false;
  int epochs = 500;
  Index batch = 16;
  double lr = 1e-4;
  int patience = 0;  // 0: default 50 clamped to epochs
  std::uint64_t seed = 0;
};

int run_train(const TrainArgs& a) {
  TrainConfig tc;
  tc.batch_size = a.batch;
  tc.lr = a.lr;
  tc.max_epochs = a.epochs;
  tc.patience = a.patience > 0 ? a.patience : std::min(50, a.epochs);
  tc.seed = a.seed;
  tc.tiny_mode = a.tiny;
  tc.validate();

  PVTFormerConfig cfg =
      a.tiny ? PVTFormerConfig::tiny() : PVTFormerConfig::base();
  cfg.encoder.linear_sra = a.linear_sra;
  const std::string history =
      a.history.empty() ? a.out + ".history.csv" : a.history;
  echo_config(json{{"command", "train"},
                   {"data", a.data},
                   {"out", a.out},
                   {"history", history},
                   {"preset", a.tiny ? "tiny" : "default"},
                   {"batch_size", tc.batch_size},
                   {"lr", tc.lr},
                   {"max_epochs", tc.max_epochs},
                   {"patience", tc.patience},
                   {"seed", tc.seed},
                   {"model", config_to_json(cfg)}});

  const DatasetManifest manifest = load_manifest(a.data);
  std::vector<Slice> train_slices = load_split(a.data, manifest, "train");
  std::vector<Slice> val_slices = load_split(a.data, manifest, "val");
  if (manifest.target != cfg.out_h) {
    std::cout << "resizing slices " << manifest.target << " -> " << cfg.out_h
              << " to match the model\n";
    for (auto& s : train_slices) s = resize_slice(s, cfg.out_h);
    for (auto& s : val_slices) s = resize_slice(s, cfg.out_h);
  }

  PVTFormer<float> model(cfg);
  model.init(tc.seed);
  const TrainResult res =
      train(model, tc, train_slices, val_slices, a.out, history,
            [](const EpochStats& e) {
              std::cout << "epoch " << e.epoch << " train " << std::setprecision(6)
                        << e.train_loss << " val " << e.val_loss << '\n';
            });
  std::cout << "best epoch " << res.best_epoch << " val loss "
            << res.best_val_loss << "; checkpoint " << a.out << ", history "
            << history << '\n';
  return 0;
}

struct EvalArgs {
  std::string data;
  std::string ckpt;
  std::string split = "test";
  std::string report;
  double threshold = 0.5;
};

int run_eval(const EvalArgs& a) {
  echo_config(json{{"command", "eval"},
                   {"data", a.data},
                   {"ckpt", a.ckpt},
                   {"split", a.split},
                   {"report", a.report},
                   {"threshold", a.threshold}});
  const DatasetManifest manifest = load_manifest(a.data);
  const PVTFormerConfig cfg = checkpoint_config(a.ckpt);
  if (cfg.out_h != manifest.target || cfg.out_w != manifest.target) {
    std::ostringstream msg;
    msg << "eval: checkpoint expects " << cfg.out_h << "x" << cfg.out_w
        << " slices but the dataset stores " << manifest.target << "x"
        << manifest.target;
    throw std::runtime_error(msg.str());
  }
  std::vector<Slice> slices = load_split(a.data, manifest, a.split);

  PVTFormer<float> model(cfg);
  ParamRegistry<float> reg;
  model.collect(reg);
  load_checkpoint(a.ckpt, reg);

  const MetricsReport report = evaluate(model, slices, a.threshold);
  std::cout << std::left << std::setw(10) << "Dice" << std::setw(10) << "mIoU"
            << std::setw(10) << "Recall" << std::setw(11) << "Precision"
            << std::setw(10) << "F2" << std::setw(10) << "HD" << '\n';
  std::cout << std::fixed << std::setprecision(4);
  std::cout << std::setw(10) << report.mean_dice << std::setw(10)
            << report.mean_miou << std::setw(10) << report.mean_recall
            << std::setw(11) << report.mean_precision << std::setw(10)
            << report.mean_f2;
  if (report.mean_hd)
    std::cout << std::setw(10) << *report.mean_hd;
  else
    std::cout << std::setw(10) << "n/a";
  std::cout << "\nslices " << report.slices.size() << ", hd undefined on "
            << report.hd_skipped << '\n';
  if (!a.report.empty()) {
    auto dump = [](const std::string& path, const std::string& text) {
      std::ofstream f(path);
      if (!f) throw std::runtime_error("cannot write report: " + path);
      f << text;
    };
    dump(a.report + ".json", report_to_json(report));
    dump(a.report + ".csv", report_to_csv(report));
    std::cout << "wrote " << a.report << ".json and " << a.report << ".csv\n";
  }
  return 0;
}

struct PredictArgs {
  std::string ckpt;
  std::string in;
  std::string out;
  std::string pgm;
  double threshold = 0.5;
};

int run_predict(const PredictArgs& a) {
  echo_config(json{{"command", "predict"},
                   {"ckpt", a.ckpt},
                   {"in", a.in},
                   {"out", a.out},
                   {"pgm", a.pgm},
                   {"threshold", a.threshold}});
  std::ifstream f(a.in, std::ios::binary | std::ios::ate);
  if (!f) throw std::runtime_error("cannot open slice: " + a.in);
  const std::streamsize bytes = f.tellg();
  f.seekg(0);
  if (bytes <= 0 || bytes % sizeof(float) != 0)
    throw std::runtime_error("malformed slice file: " + a.in);
  const auto count = static_cast<Index>(bytes / sizeof(float));
  const auto side = static_cast<Index>(std::llround(std::sqrt(
      static_cast<double>(count))));
  if (side * side != count)
    throw std::runtime_error("malformed slice file (not square): " + a.in);
  std::vector<float> image(static_cast<std::size_t>(count));
  f.read(reinterpret_cast<char*>(image.data()), bytes);
  if (!f) throw std::runtime_error("short read on slice: " + a.in);

  const PVTFormerConfig cfg = checkpoint_config(a.ckpt);
  if (side != cfg.out_h || side != cfg.out_w) {
    std::ostringstream msg;
    msg << "predict: slice is " << side << "x" << side
        << " but the checkpoint expects " << cfg.out_h << "x" << cfg.out_w;
    throw std::runtime_error(msg.str());
  }
  PVTFormer<float> model(cfg);
  ParamRegistry<float> reg;
  model.collect(reg);
  load_checkpoint(a.ckpt, reg);

  Tensor4D<float> x(1, 3, side, side);
  for (Index c = 0; c < 3; ++c)
    std::copy(image.begin(), image.end(),
              x.data() + c * side * side);
  const MaskTensor mask = model.predict_mask(x, a.threshold);

  std::ofstream mf(a.out, std::ios::binary | std::ios::trunc);
  if (!mf) throw std::runtime_error("cannot write mask: " + a.out);
  mf.write(reinterpret_cast<const char*>(mask.data()),
           static_cast<std::streamsize>(mask.size()));
  if (!mf) throw std::runtime_error("short write on mask: " + a.out);
  std::cout << "wrote mask " << a.out << " (" << side << "x" << side << ")\n";

  if (!a.pgm.empty()) {
    std::ofstream pf(a.pgm, std::ios::binary | std::ios::trunc);
    if (!pf) throw std::runtime_error("cannot write pgm: " + a.pgm);
    pf << "P5\n" << side << ' ' << side << "\n255\n";
    for (Index i = 0; i < mask.size(); ++i)
      pf.put(static_cast<char>(mask.data()[i] ? 255 : 0));
    if (!pf) throw std::runtime_error("short write on pgm: " + a.pgm);
    std::cout << "wrote preview " << a.pgm << '\n';
  }
  return 0;
}

struct CountArgs {
  std::string preset = "default";
  Index input = 256;
  Index batch = 1;
  bool linear_sra = false;
  bool as_json = false;
};

int run_count(const CountArgs& a) {
  PVTFormerConfig cfg;
  if (a.preset == "default") {
    cfg = PVTFormerConfig::base();
  } else if (a.preset == "tiny") {
    cfg = PVTFormerConfig::tiny();
  } else {
    throw std::invalid_argument("count: unknown preset " + a.preset +
                                " (expected default | tiny)");
  }
  cfg.encoder.linear_sra = a.linear_sra;
  cfg.out_h = a.input;
  cfg.out_w = a.input;
  echo_config(json{{"command", "count"},
                   {"preset", a.preset},
                   {"input", a.input},
                   {"batch", a.batch},
                   {"linear_sra", a.linear_sra}});

  const ComplexityReport r = complexity_report(cfg, a.batch, a.input, a.input);
  PVTFormer<float> model(cfg);
  ParamRegistry<float> reg;
  model.collect(reg);
  const std::int64_t runtime = reg.trainable_count();
  require(runtime == r.total_params,
          "count: runtime parameter enumeration disagrees with the closed "
          "form");
  if (a.as_json) {
    std::cout << complexity_json(r) << '\n';
  } else {
    std::cout << complexity_table(r);
    std::cout << "runtime enumeration " << runtime << " params (exact match)\n";
  }
  return 0;
}

struct GradcheckArgs {
  std::uint64_t seed = 42;
  int coords = 20;
};

int run_gradcheck(const GradcheckArgs& a) {
  require(a.coords > 0, "gradcheck: --coords must be positive");
  echo_config(json{{"command", "gradcheck"},
                   {"seed", a.seed},
                   {"coords", a.coords},
                   {"tolerance", 1e-3}});
  std::vector<std::string> failed;
  for (const auto& bc : block_gradchecks()) {
    const GradCheckSummary s = bc.run(a.seed, a.coords);
    std::cout << std::left << std::setw(22) << bc.name << " max rel err "
              << std::scientific << std::setprecision(3) << s.max_rel_err
              << " over " << s.coords.size() << " coords";
    if (s.skipped_kinks > 0) std::cout << " (" << s.skipped_kinks << " kinks)";
    std::cout << (s.pass(1e-3) ? "  ok" : "  FAIL") << '\n';
    if (!s.pass(1e-3)) failed.push_back(bc.name);
  }
  if (!failed.empty()) {
    std::string msg = "gradcheck failed:";
    for (const auto& n : failed) msg += ' ' + n;
    throw std::runtime_error(msg);
  }
  std::cout << "all blocks pass\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PVTFormer liver segmentation pipeline"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic phantom dataset");
  s->add_option("--out", synth.out, "Dataset output directory")->required();
  s->add_option("--patients", synth.patients, "Number of phantom patients");
  s->add_option("--slices", synth.slices, "Slices per patient");
  s->add_option("--seed", synth.seed, "RNG seed");
  s->add_option("--size", synth.size, "Slice side length");
  s->add_flag("--exclude-tumor", synth.exclude_tumor,
              "Mask = liver label only, tumor pixels excluded");

  TrainArgs traina;
  auto* t = app.add_subcommand("train", "Train on a prepared dataset");
  t->add_option("--data", traina.data, "Dataset directory")->required();
  t->add_option("--out", traina.out, "Checkpoint output path")->required();
  t->add_option("--history", traina.history,
                "History CSV path (default: <out>.history.csv)");
  t->add_flag("--tiny", traina.tiny, "Tiny preset (fast, for smoke tests)");
  t->add_flag("--linear-sra", traina.linear_sra,
              "Pooled linear spatial reduction attention");
  t->add_option("--epochs", traina.epochs, "Max epochs");
  t->add_option("--batch", traina.batch, "Batch size");
  t->add_option("--lr", traina.lr, "Learning rate");
  t->add_option("--patience", traina.patience, "Early-stop patience");
  t->add_option("--seed", traina.seed, "RNG seed");

  EvalArgs evala;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  e->add_option("--data", evala.data, "Dataset directory")->required();
  e->add_option("--ckpt", evala.ckpt, "Checkpoint path")->required();
  e->add_option("--split", evala.split, "Split name");
  e->add_option("--report", evala.report,
                "Report path base (writes <base>.json and <base>.csv)");
  e->add_option("--threshold", evala.threshold, "Mask threshold");

  PredictArgs preda;
  auto* p = app.add_subcommand("predict", "Predict a mask for one slice blob");
  p->add_option("--ckpt", preda.ckpt, "Checkpoint path")->required();
  p->add_option("--in", preda.in, "Input slice blob (.img)")->required();
  p->add_option("--out", preda.out, "Output mask blob (.msk)")->required();
  p->add_option("--pgm", preda.pgm, "Optional PGM preview path");
  p->add_option("--threshold", preda.threshold, "Mask threshold");

  CountArgs counta;
  auto* c = app.add_subcommand("count", "Report parameter and MAC counts");
  c->add_option("--config", counta.preset, "Preset: default | tiny");
  c->add_option("--input", counta.input, "Input side length");
  c->add_option("--batch", counta.batch, "Batch size");
  c->add_flag("--linear-sra", counta.linear_sra,
              "Pooled linear spatial reduction attention");
  c->add_flag("--json", counta.as_json, "Emit JSON instead of a table");

  GradcheckArgs grada;
  auto* g = app.add_subcommand("gradcheck",
                               "Finite-difference check of every block");
  g->add_option("--seed", grada.seed, "RNG seed");
  g->add_option("--coords", grada.coords, "Coordinates per block");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& h) {
    return app.exit(h);
  } catch (const CLI::ParseError& pe) {
    app.exit(pe);
    return 1;
  }

  try {
    if (s->parsed()) return run_synth(synth);
    if (t->parsed()) return run_train(traina);
    if (e->parsed()) return run_eval(evala);
    if (p->parsed()) return run_predict(preda);
    if (c->parsed()) return run_count(counta);
    if (g->parsed()) return run_gradcheck(grada);
  } catch (const std::invalid_argument& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 2;
  }
  return 0;
}
