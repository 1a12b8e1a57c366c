#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tpose/config.hpp"
#include "tpose/gradcheck.hpp"
#include "tpose/io.hpp"
#include "tpose/pipeline.hpp"

namespace fs = std::filesystem;
using namespace tpose;

namespace {

enum Exit { kOk = 0, kUsage = 1, kIo = 2, kCheck = 3 };

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  bool dump_intermediate = false;
  std::string dump_dir;
  bool print_config = false;
  std::vector<std::string> overrides;
};

HarnessConfig resolve_config(const Globals& g) {
  HarnessConfig c;
  if (!g.config_path.empty()) c = HarnessConfig::load(g.config_path);
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::InvalidArgument, "--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (g.seed) c.seed = *g.seed;
  c.validate();
  return c;
}

LinearDecoderModel resolve_model(HarnessConfig& c) {
  if (c.checkpoint.empty()) return LinearDecoderModel(concat_width(c.pipeline.embedding));
  CheckpointInfo info;
  LinearDecoderModel m = load_checkpoint(c.checkpoint, &info);
  c.pipeline.embedding = info.embedding;
  return m;
}

int cmd_generate(const Globals& g, const std::string& out, std::size_t count) {
  const HarnessConfig c = resolve_config(g);
  std::vector<ManifestEntry> entries(count);
  std::vector<std::vector<InstanceAnnotation>> annos(count);
  parallel_for(count, g.jobs, [&](std::size_t i) {
    const SceneFrame f = generate_scene(c.scene, frame_seed(c.seed, i));
    entries[i] = write_frame(f, out, i);
    annos[i] = f.instances;
  });
  std::vector<InstanceAnnotation> all;
  for (const auto& a : annos) all.insert(all.end(), a.begin(), a.end());
  const std::string manifest =
      write_manifest(out, c.scene.K, c.seed, entries, priors_from_annotations(all, c.scene.templates));
  std::cout << manifest << '\n';
  return kOk;
}

int cmd_predict(const Globals& g, const std::string& dataset_dir, const std::string& out, const std::string& from_dump) {
  HarnessConfig c = resolve_config(g);
  const Dataset ds = open_dataset(dataset_dir);
  const LinearDecoderModel model = resolve_model(c);
  std::vector<PredictionRecord> records;
  if (!from_dump.empty()) {
    records = predict_from_dump(from_dump, ds.K, model, ds.priors, c.pipeline);
  } else {
    PredictOptions opt;
    opt.record_timing = c.record_timing;
    if (g.dump_intermediate) opt.dump_directory = g.dump_dir.empty() ? out + ".intermediate" : g.dump_dir;
    records = predict_dataset(ds, model, c.pipeline, opt, g.jobs);
  }
  std::size_t failed = 0;
  for (const auto& r : records)
    if (!r.estimate) {
      ++failed;
      std::cerr << "warning: frame " << r.frame << " instance " << r.instance << " failed: " << r.error << '\n';
    }
  io::write_text(out, records_to_jsonl(records));
  std::cerr << records.size() << " records, " << failed << " failed\n";
  return kOk;
}

void write_report(const std::string& prefix, const std::string& csv, const std::string& md) {
  io::write_text(prefix + ".csv", csv);
  io::write_text(prefix + ".md", md);
}

int cmd_evaluate(const Globals& g, const std::string& dataset_dir, const std::string& predictions,
                 const std::string& out, bool stages, bool grid) {
  HarnessConfig c = resolve_config(g);
  const Dataset ds = open_dataset(dataset_dir);
  PoseMetricOptions mopt;
  mopt.symmetry_aware = c.symmetry_aware;
  if (!predictions.empty()) {
    const auto records = records_from_jsonl(io::read_text(predictions));
    if (records.empty()) std::cerr << "warning: no predictions; every instance scores 0\n";
    const PoseEvaluation ev = evaluate_predictions(ds, records, mopt);
    if (ev.missing > 0) std::cerr << "warning: " << ev.missing << " of " << ev.instances << " instances have no estimate\n";
    write_report(out, ev.report.to_csv(), ev.report.to_markdown());
    std::cout << ev.report.to_markdown();
  }
  if (stages) {
    const StageEvaluation st = evaluate_stages(ds, c.pipeline, g.jobs);
    write_report(out + "_depth", st.depth.to_csv(), st.depth.to_markdown());
    write_report(out + "_normals", st.normals.to_csv(), st.normals.to_markdown());
    std::cout << st.depth.to_markdown() << st.normals.to_markdown();
  }
  if (grid) {
    const LinearDecoderModel model = resolve_model(c);
    const auto cells = evaluate_grid(ds, model, c.pipeline, mopt, g.jobs);
    write_report(out + "_grid", grid_to_csv(cells), grid_to_markdown(cells));
    std::cout << grid_to_markdown(cells);
  }
  return kOk;
}

int cmd_gradcheck(const Globals& g, int trials, const std::string& fault) {
  const HarnessConfig c = resolve_config(g);
  GradcheckOptions opt;
  opt.trials = trials;
  opt.seed = c.seed;
  if (fault == "axis-sign") {
    opt.fault = InjectedFault::AxisSign;
  } else if (!fault.empty() && fault != "none") {
    throw Error(ErrorCode::InvalidArgument, "unknown fault '" + fault + "' (axis-sign)");
  }
  const auto results = run_gradcheck(opt);
  std::cout << gradcheck_summary(results);
  for (const auto& r : results)
    if (!r.passed()) return kCheck;
  return kOk;
}

int cmd_train(const Globals& g, const std::string& dataset_dir, const std::string& out, std::string curve_path) {
  const HarnessConfig c = resolve_config(g);
  const Dataset ds = open_dataset(dataset_dir);
  const auto samples = build_training_samples(ds, c.pipeline, g.jobs);
  if (samples.empty()) throw Error(ErrorCode::InvalidArgument, "dataset has no usable instances");
  LinearDecoderModel model(concat_width(c.pipeline.embedding));
  std::vector<VecX> inputs;
  for (const auto& s : samples) inputs.push_back(s.pooled);
  model.set_standardization(inputs);
  const TrainResult res = train_reference(model, samples, c.train);
  save_checkpoint(out, model, {c.pipeline.embedding, c.train.seed, c.hash()});

  std::ostringstream csv;
  csv << "epoch,total,translation,axis_x,axis_z,angular,conf_x,conf_z,scale\n";
  char buf[512];
  for (std::size_t e = 0; e < res.curve.size(); ++e) {
    const LossReport& r = res.curve[e];
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", e, r.total, r.translation,
                  r.axis_x, r.axis_z, r.angular, r.conf_x, r.conf_z, r.scale);
    csv << buf;
  }
  if (curve_path.empty()) curve_path = out + ".curve.csv";
  io::write_text(curve_path, csv.str());
  if (!res.curve.empty())
    std::cerr << samples.size() << " samples, loss " << res.curve.front().total << " -> " << res.curve.back().total
              << '\n';
  std::cout << out << '\n';
  return kOk;
}

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::WidthMismatch:
      return kUsage;
    case ErrorCode::DivergedLoss:
      return kCheck;
    default:
      return kIo;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Category-level pose estimation harness"};
  app.require_subcommand(0, 1);
  Globals g;
  app.add_option("--config", g.config_path, "key = value config file");
  app.add_option("--seed", g.seed, "overrides the config seed");
  app.add_option("--jobs", g.jobs, "worker threads for per-frame work")->check(CLI::PositiveNumber);
  app.add_flag("--dump-intermediate", g.dump_intermediate, "write completed depth, normals and sampled clouds");
  app.add_option("--dump-dir", g.dump_dir, "where --dump-intermediate writes (default <out>.intermediate)");
  app.add_option("--set", g.overrides, "config override key=value, repeatable");
  app.add_flag("--print-config", g.print_config, "print every config key with its value and exit");

  std::string out, dataset, predictions, curve, from_dump, fault, checkpoint;
  std::size_t count = 10;
  int trials = 100;
  bool stages = false, grid = false;

  auto* gen = app.add_subcommand("generate", "write a synthetic dataset");
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--count", count, "number of frames");

  auto* pred = app.add_subcommand("predict", "run the pipeline on every annotated instance");
  pred->add_option("--dataset", dataset, "dataset directory")->required();
  pred->add_option("--out", out, "predictions (JSON lines)")->required();
  pred->add_option("--checkpoint", checkpoint, "decoder checkpoint (overrides estimator.checkpoint)");
  pred->add_option("--from-dump", from_dump, "re-run the decoder from a --dump-intermediate directory");

  auto* eval = app.add_subcommand("evaluate", "score predictions against the annotations");
  eval->add_option("--dataset", dataset, "dataset directory")->required();
  eval->add_option("--predictions", predictions, "predictions (JSON lines)");
  eval->add_option("--out", out, "report path prefix; .csv and .md are appended")->required();
  eval->add_option("--checkpoint", checkpoint, "decoder checkpoint for --grid");
  eval->add_flag("--stages", stages, "also report depth and normal accuracy of the configured estimators");
  eval->add_flag("--grid", grid, "four-condition depth x normal table");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every loss gradient");
  gc->add_option("--trials", trials, "configurations per check")->check(CLI::PositiveNumber);
  gc->add_option("--inject-fault", fault, "axis-sign: flip the axis loss gradient");

  auto* train = app.add_subcommand("train-ref", "fit the linear decoder by gradient descent");
  train->add_option("--dataset", dataset, "dataset directory")->required();
  train->add_option("--out", out, "checkpoint path")->required();
  train->add_option("--curve", curve, "per-epoch loss CSV (default <out>.curve.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (!checkpoint.empty()) g.overrides.push_back("estimator.checkpoint=" + checkpoint);
    if (g.print_config) {
      std::cout << resolve_config(g).print();
      return kOk;
    }
    if (gen->parsed()) return cmd_generate(g, out, count);
    if (pred->parsed()) return cmd_predict(g, dataset, out, from_dump);
    if (eval->parsed()) {
      if (predictions.empty() && !stages && !grid) {
        std::cerr << "evaluate: nothing to do (give --predictions, --stages or --grid)\n";
        return kUsage;
      }
      return cmd_evaluate(g, dataset, predictions, out, stages, grid);
    }
    if (gc->parsed()) return cmd_gradcheck(g, trials, fault);
    if (train->parsed()) return cmd_train(g, dataset, out, curve);
    std::cerr << app.help();
    return kUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  }
}
