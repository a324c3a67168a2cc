#include "siamlite/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <memory>
#include <optional>

#include "siamlite/bench.hpp"
#include "siamlite/compression.hpp"
#include "siamlite/flops.hpp"
#include "siamlite/metrics.hpp"
#include "siamlite/model_io.hpp"
#include "siamlite/sequence.hpp"
#include "siamlite/training.hpp"

namespace siamlite {

namespace {

namespace fs = std::filesystem;

struct TrackerFlags {
  TrackerConfig config;
  bool require_quantized = false;

  void add(CLI::App* app, bool with_quantized = true) {
    app->add_option("--gamma", config.window_weight, "cosine window weight")
        ->capture_default_str();
    app->add_option("--beta", config.size_smoothing, "fraction of the previous size kept")
        ->capture_default_str();
    app->add_option("--context", config.context_factor, "search side / target side")
        ->capture_default_str();
    if (with_quantized) {
      app->add_flag("--quantized", require_quantized, "reject float model files");
    }
  }
};

struct TrainFlags {
  TrainConfig config;
  double mu = 0.5;

  void add(CLI::App* app) {
    app->add_option("--lambda", config.lambda_reg, "regression loss weight")->capture_default_str();
    app->add_option("--lr", config.lr, "SGD learning rate")->capture_default_str();
    app->add_option("--batch", config.batch_size, "pairs per step")->capture_default_str();
    app->add_option("--clip", config.clip_norm, "gradient norm cap, 0 to disable")
        ->capture_default_str();
    app->add_option("--radius", config.pos_radius, "positive label radius in cells")
        ->capture_default_str();
    app->add_option("--seed", config.rng_seed, "sampling and initialization seed")
        ->capture_default_str();
  }
};

struct Runner {
  std::ostream& out;
  std::ostream& err;
};

/// Float or quantized model loaded from disk, wrapped for the tracker.
struct ModelHandle {
  LoadedModel file;
  std::unique_ptr<SiameseModel> model;
};

ModelHandle open_model(const fs::path& path, bool require_quantized) {
  ModelHandle h;
  h.file = load_model(path);
  if (require_quantized && !h.file.quantized) {
    throw ValueError(path.string() + ": --quantized given but the file holds a float model");
  }
  if (h.file.quantized) {
    h.model = std::make_unique<QuantizedModel>(h.file.qnet);
  } else {
    h.model = std::make_unique<FloatModel>(h.file.model);
  }
  return h;
}

Model open_float_model(const fs::path& path) {
  LoadedModel file = load_model(path);
  if (file.quantized) throw ValueError(path.string() + ": expected a float model");
  return std::move(file.model);
}

/// A single-sequence directory maps to one results file; a directory of
/// sequences maps to `<out>/<name>.txt`.
std::vector<fs::path> results_paths(const std::vector<Sequence>& seqs, const fs::path& out) {
  if (seqs.size() == 1) return {out};
  std::vector<fs::path> paths;
  for (const auto& s : seqs) paths.push_back(out / (s.name + ".txt"));
  return paths;
}

ModelScale scale_from_string(const std::string& name) {
  if (name == "desk") return ModelScale::kDesk;
  if (name == "paper") return ModelScale::kPaper;
  throw ValueError("unknown scale '" + name + "' (expected desk or paper)");
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

double mean_total(const std::vector<LossRecord>& h, std::size_t begin, std::size_t end) {
  double s = 0;
  for (std::size_t i = begin; i < end; ++i) s += h[i].terms.total;
  return end > begin ? s / static_cast<double>(end - begin) : 0.0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Siamese tracker training, compression and evaluation", "siamlite"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");
  Runner io{out, err};

  // synth
  auto* synth = app.add_subcommand("synth", "generate synthetic sequences");
  fs::path synth_out;
  std::size_t synth_count = 1, synth_len = 50;
  std::uint64_t synth_seed = 42;
  std::string synth_motion = "linear";
  SynthParams synth_params;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--count", synth_count, "number of sequences")->capture_default_str();
  synth->add_option("--len", synth_len, "frames per sequence")->capture_default_str();
  synth->add_option("--seed", synth_seed, "generator seed")->capture_default_str();
  synth->add_option("--motion", synth_motion, "static, linear or random-walk")
      ->capture_default_str();
  synth->add_option("--speed", synth_params.speed, "px per frame")->capture_default_str();
  synth->add_option("--width", synth_params.width, "frame width")->capture_default_str();
  synth->add_option("--height", synth_params.height, "frame height")->capture_default_str();
  synth->add_option("--min-target", synth_params.min_target, "smallest target side")
      ->capture_default_str();
  synth->add_option("--max-target", synth_params.max_target, "largest target side")
      ->capture_default_str();
  synth->add_option("--noise", synth_params.noise, "background noise amplitude")
      ->capture_default_str();
  synth->add_flag("--occluder", synth_params.occluder, "sweep an occluding bar across the target");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model on sequences");
  fs::path train_seq, train_out, train_teacher, train_init, train_history;
  std::string train_scale = "desk";
  std::size_t train_width = 1;
  TrainFlags train_flags;
  train_cmd->add_option("--seq", train_seq, "sequence directory")->required();
  train_cmd->add_option("--out", train_out, "output model file")->required();
  train_cmd->add_option("--teacher", train_teacher, "frozen teacher model for distillation");
  train_cmd->add_option("--init", train_init, "start from this model instead of a fresh one");
  train_cmd->add_option("--history", train_history, "write the loss history CSV here");
  train_cmd->add_option("--scale", train_scale, "desk or paper topology")->capture_default_str();
  train_cmd->add_option("--width", train_width, "channel width multiplier")->capture_default_str();
  train_cmd->add_option("--steps", train_flags.config.steps, "SGD steps")->capture_default_str();
  train_cmd->add_option("--mu", train_flags.mu, "distillation weight, used with --teacher")
      ->capture_default_str();
  train_flags.add(train_cmd);

  // track
  auto* track = app.add_subcommand("track", "run a model over sequences and save boxes");
  fs::path track_model, track_seq, track_out;
  TrackerFlags track_flags;
  track->add_option("--model", track_model, "model file")->required();
  track->add_option("--seq", track_seq, "sequence directory")->required();
  track->add_option("--out", track_out, "results file, or directory for several sequences")
      ->required();
  track_flags.add(track);

  // eval
  auto* eval = app.add_subcommand("eval", "compute tracking metrics");
  fs::path eval_seq, eval_results, eval_model;
  TrackerFlags eval_flags;
  eval->add_option("--seq", eval_seq, "sequence directory")->required();
  auto* eval_results_opt = eval->add_option("--results", eval_results, "saved results");
  auto* eval_model_opt = eval->add_option("--model", eval_model, "model to run live");
  eval_results_opt->excludes(eval_model_opt);
  eval_flags.add(eval);

  // prune
  auto* prune = app.add_subcommand("prune", "structured filter pruning with optional fine-tuning");
  fs::path prune_model, prune_out, prune_seq;
  double prune_fraction = 0.25;
  TrainFlags prune_flags;
  prune_flags.config.steps = 0;
  prune->add_option("--model", prune_model, "float model file")->required();
  prune->add_option("--out", prune_out, "output model file")->required();
  prune->add_option("--fraction", prune_fraction, "fraction of filters removed per unit")
      ->capture_default_str();
  prune->add_option("--steps", prune_flags.config.steps, "fine-tuning steps")
      ->capture_default_str();
  prune->add_option("--seq", prune_seq, "fine-tuning sequences");
  prune_flags.add(prune);

  // quantize
  auto* quant = app.add_subcommand("quantize", "post-training quantization");
  fs::path quant_model, quant_out, quant_seq;
  int quant_bits = 8;
  std::size_t quant_calib = 64;
  std::uint64_t quant_seed = 42;
  quant->add_option("--model", quant_model, "float model file")->required();
  quant->add_option("--out", quant_out, "output model file")->required();
  quant->add_option("--seq", quant_seq, "calibration sequences")->required();
  quant->add_option("--bits", quant_bits, "8 or 16")->capture_default_str();
  quant->add_option("--calib", quant_calib, "calibration pairs")->capture_default_str();
  quant->add_option("--seed", quant_seed, "calibration sampling seed")->capture_default_str();

  // flops
  auto* flops = app.add_subcommand("flops", "per-layer FLOPs and parameter counts");
  fs::path flops_model;
  std::string flops_scale = "desk";
  std::size_t flops_width = 1;
  std::optional<std::size_t> flops_template, flops_search;
  auto* flops_model_opt = flops->add_option("--model", flops_model, "model file");
  flops->add_option("--scale", flops_scale, "default topology when no model is given")
      ->capture_default_str()
      ->excludes(flops_model_opt);
  flops->add_option("--width", flops_width, "channel width multiplier")->capture_default_str();
  flops->add_option("--template", flops_template, "template size override");
  flops->add_option("--search", flops_search, "search size override");

  // bench
  auto* bench = app.add_subcommand("bench", "wall-clock tracking throughput");
  fs::path bench_model;
  std::string bench_scale = "desk";
  std::size_t bench_frames = 100;
  std::uint64_t bench_seed = 42;
  TrackerFlags bench_flags;
  auto* bench_model_opt = bench->add_option("--model", bench_model, "model file");
  bench->add_option("--scale", bench_scale, "random-weight topology when no model is given")
      ->capture_default_str()
      ->excludes(bench_model_opt);
  bench->add_option("--frames", bench_frames, "frames per timed run")->capture_default_str();
  bench->add_option("--seed", bench_seed, "weight seed for --scale")->capture_default_str();
  bench_flags.add(bench);

  std::vector<const char*> argv;
  argv.push_back("siamlite");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  auto print_config = [&](CLI::App* sub) {
    err << "# " << sub->get_name() << "\n" << sub->config_to_str(true, false);
  };

  try {
    if (*synth) {
      print_config(synth);
      synth_params.motion = motion_from_string(synth_motion);
      Rng rng(synth_seed);
      for (std::size_t i = 0; i < synth_count; ++i) {
        synth_params.texture_seed = rng.next();
        Sequence seq = synth_sequence(synth_params, synth_len, rng);
        char name[32];
        std::snprintf(name, sizeof name, "seq_%03zu", i);
        seq.name = name;
        save_sequence(seq, synth_count == 1 ? synth_out : synth_out / name);
      }
      io.out << "sequences: " << synth_count << "\nframes: " << synth_len << "\n";
    } else if (*train_cmd) {
      print_config(train_cmd);
      const auto seqs = load_sequences(train_seq);
      Model model;
      if (!train_init.empty()) {
        model = open_float_model(train_init);
      } else {
        model.spec = build_default_spec(scale_from_string(train_scale), train_width);
        model.weights = init_weights(model.spec, train_flags.config.rng_seed);
      }
      std::optional<Model> teacher;
      TrainConfig config = train_flags.config;
      if (!train_teacher.empty()) {
        teacher = open_float_model(train_teacher);
        config.kd_weight = train_flags.mu;
      }
      err << "kd_weight=" << format_double(config.kd_weight) << "\n";
      TrainResult result = train(std::move(model), seqs, config, teacher ? &*teacher : nullptr);
      save_model(result.model, train_out);
      if (!train_history.empty()) {
        std::FILE* f = std::fopen(train_history.string().c_str(), "wb");
        if (!f) throw Error("cannot write " + train_history.string());
        const std::string text = format_history(result.history);
        std::fwrite(text.data(), 1, text.size(), f);
        std::fclose(f);
      }
      const auto& h = result.history;
      const std::size_t w = std::min<std::size_t>(100, h.size());
      io.out << "steps: " << h.size() << "\n"
             << "first_total: " << format_double(mean_total(h, 0, w)) << "\n"
             << "last_total: " << format_double(mean_total(h, h.size() - w, h.size())) << "\n"
             << "parameters: " << parameter_count(result.model.spec) << "\n";
    } else if (*track) {
      print_config(track);
      track_flags.config.validate();
      const ModelHandle h = open_model(track_model, track_flags.require_quantized);
      const auto seqs = load_sequences(track_seq);
      const auto paths = results_paths(seqs, track_out);
      if (seqs.size() > 1) fs::create_directories(track_out);
      for (std::size_t i = 0; i < seqs.size(); ++i) {
        SiameseTracker tracker(*h.model, track_flags.config);
        save_results(run_tracker(tracker, seqs[i]), paths[i]);
      }
      io.out << "sequences: " << seqs.size() << "\n";
    } else if (*eval) {
      print_config(eval);
      if (eval_results.empty() == eval_model.empty()) {
        throw ValueError("eval needs exactly one of --results or --model");
      }
      const auto seqs = load_sequences(eval_seq);
      MetricsReport report;
      if (!eval_results.empty()) {
        std::vector<std::vector<BBox>> preds;
        for (const auto& p : results_paths(seqs, eval_results)) preds.push_back(load_boxes(p));
        report = evaluate_trajectories(preds, seqs);
      } else {
        eval_flags.config.validate();
        const ModelHandle h = open_model(eval_model, eval_flags.require_quantized);
        report = evaluate_model(*h.model, seqs, eval_flags.config);
      }
      io.out << report.format();
    } else if (*prune) {
      print_config(prune);
      const Model model = open_float_model(prune_model);
      PruneResult result;
      if (prune_flags.config.steps > 0) {
        if (prune_seq.empty()) throw ValueError("prune: --steps > 0 needs --seq");
        result = prune_network(model, prune_fraction, prune_flags.config.steps,
                               load_sequences(prune_seq), prune_flags.config);
      } else {
        result = prune_filters(model, prune_fraction);
      }
      save_model(result.model, prune_out);
      const std::uint64_t before = count_flops(model.spec).total;
      const std::uint64_t after = count_flops(result.model.spec).total;
      io.out << "layer,kind,original,kept\n";
      for (const auto& l : result.report.layers) {
        io.out << l.layer << ","
               << (l.kind == PrunableUnit::Kind::kHidden ? "hidden" : "output") << ","
               << l.original << "," << l.kept.size() << "\n";
      }
      io.out << "flops_before: " << before << "\nflops_after: " << after << "\n"
             << "flops_reduction: "
             << format_double(1.0 - static_cast<double>(after) / static_cast<double>(before))
             << "\n";
    } else if (*quant) {
      print_config(quant);
      const Model model = open_float_model(quant_model);
      const auto seqs = load_sequences(quant_seq);
      const auto calib = patch_pairs(sample_pairs(seqs, model.spec, quant_calib, quant_seed));
      const QuantizedNetwork qnet = quantize_network(model, calibrate(model, calib, quant_bits));
      save_model(qnet, quant_out);
      const std::size_t float_bytes = serialize_model(model).size();
      const std::size_t quant_bytes = serialize_model(qnet).size();
      io.out << "bits: " << quant_bits << "\nfloat_file_bytes: " << float_bytes
             << "\nquantized_file_bytes: " << quant_bytes << "\n";
    } else if (*flops) {
      print_config(flops);
      NetworkSpec spec = flops_model.empty()
                             ? build_default_spec(scale_from_string(flops_scale), flops_width)
                             : load_model(flops_model).spec();
      const FlopsReport report =
          count_flops(spec, flops_template.value_or(spec.template_size),
                      flops_search.value_or(spec.search_size));
      io.out << report.csv();
    } else if (*bench) {
      print_config(bench);
      ModelHandle h;
      if (bench_model.empty()) {
        Model m;
        m.spec = build_default_spec(scale_from_string(bench_scale));
        m.weights = init_weights(m.spec, bench_seed);
        h.model = std::make_unique<FloatModel>(std::move(m));
      } else {
        h = open_model(bench_model, bench_flags.require_quantized);
      }
      const BenchResult r = bench_fps(*h.model, bench_frames, bench_flags.config);
      io.out << "fps: " << format_double(r.fps) << "\nframes: " << r.frames << "\nruns:";
      for (double v : r.runs) io.out << " " << format_double(v);
      io.out << "\n";
    }
  } catch (const TrainingDiverged& e) {
    err << "siamlite: " << e.what() << " after " << e.partial().history.size() << " steps\n";
    return 1;
  } catch (const std::exception& e) {
    err << "siamlite: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace siamlite
