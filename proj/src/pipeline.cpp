#include "tpose/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "tpose/io.hpp"

namespace tpose {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string padded(std::size_t v, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%0*zu", width, v);
  return buf;
}

std::string frame_dir_name(std::size_t frame) { return "frame_" + padded(frame, 6); }
std::string inst_stem(int instance) { return "inst_" + padded(static_cast<std::size_t>(instance), 2); }

json pose_json(const Pose& p) {
  const Mat4 m = p.homogeneous();
  json rows = json::array();
  for (int r = 0; r < 4; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2), m(r, 3)});
  return rows;
}

Pose pose_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw Error(ErrorCode::SchemaMismatch, "pose must be a 4x4 array");
  Mat4 m;
  for (int r = 0; r < 4; ++r) {
    if (!j[r].is_array() || j[r].size() != 4) throw Error(ErrorCode::SchemaMismatch, "pose must be a 4x4 array");
    for (int c = 0; c < 4; ++c) m(r, c) = j[r][c].get<double>();
  }
  try {
    return Pose::from_homogeneous(m);
  } catch (const Error& e) {
    throw Error(ErrorCode::SchemaMismatch, std::string("bad pose: ") + e.what());
  }
}

InstanceEstimate decode_instance(const LinearDecoderModel& model, const VecX& pooled, const Vec3& t_prior,
                                 const CategoryPriors& priors, const CategoryLabel& category) {
  const DecoderOutput out = model.decode(pooled);
  return recover_estimate(out, t_prior, priors.get(category), default_symmetry(category));
}

}  // namespace

const char* estimator_kind_name(EstimatorKind kind) { return kind == EstimatorKind::Oracle ? "oracle" : "noisy"; }

EstimatorKind parse_estimator_kind(std::string_view name) {
  if (name == "oracle") return EstimatorKind::Oracle;
  if (name == "noisy") return EstimatorKind::Noisy;
  throw Error(ErrorCode::InvalidArgument, "unknown estimator '" + std::string(name) + "' (oracle|noisy)");
}

std::unique_ptr<DepthCompleter> make_depth_completer(EstimatorKind kind, const SceneFrame& frame,
                                                     const NoisyDepthConfig& noisy) {
  if (kind == EstimatorKind::Oracle) return oracle_depth_completer(frame);
  return noisy_depth_completer(frame, noisy, derive_seed(frame.seed, 3));
}

std::unique_ptr<NormalEstimator> make_normal_estimator(EstimatorKind kind, const SceneFrame& frame, double kappa) {
  if (kind == EstimatorKind::Oracle) return oracle_normal_estimator(frame);
  return noisy_normal_estimator(frame, kappa, derive_seed(frame.seed, 4));
}

std::uint64_t sampler_seed(const SceneFrame& frame, int instance) {
  return derive_seed(frame.seed, 1000 + static_cast<std::uint64_t>(instance));
}

InstanceStages run_front_end(const SceneFrame& frame, const InstanceAnnotation& instance,
                             const DepthCompleter& depth, const NormalEstimator& normals,
                             const PipelineConfig& config) {
  if (instance.bbox.empty()) throw Error(ErrorCode::EmptyMask, "instance " + std::to_string(instance.id) + " has no pixels");
  PatchSource src;
  src.K = &frame.K;
  src.rgb = &frame.rgb;
  src.raw_depth = &frame.depth_raw;
  src.instances = &frame.instance_map;
  src.transparency = &frame.transparency;
  InstanceStages st;
  st.instance = instance.id;
  st.category = instance.category;
  st.bundle = extract_patch(src, instance.id, instance.bbox, instance.category, config.patch_size, config.ray_exponent);
  st.bundle.completed_depth = depth.complete(st.bundle);
  st.bundle.normals = normals.estimate(st.bundle);
  const FeaturePatch patch = assemble_features(st.bundle);
  st.cloud = sample_points(patch, st.bundle.sample_mask(), config.points, sampler_seed(frame, instance.id));
  st.translation_prior = translation_prior(st.cloud, frame.K);
  st.pooled = reference_embedding(st.cloud, instance.category, frame.K, config.embedding).pooled();
  return st;
}

InstanceEstimate recover_estimate(const DecoderOutput& out, const Vec3& translation_prior, const Vec3& scale_prior,
                                  const SymmetryClass& symmetry) {
  Vec3 ax = out.axes.a_x;
  const Vec3 az = out.axes.a_z;
  double cx = out.axes.c_x, cz = out.axes.c_z;
  if (symmetry.kind() == SymmetryKind::Axial) {
    cx = 0.0;
    cz = 1.0;
  }
  if (std::abs(ax.dot(az)) >= 1.0 - 1e-9) {
    ax = az.unitOrthogonal();
    cx = 0.0;
    cz = 1.0;
  }
  const OrthogonalAxes orth = orthogonalize_axes(AxisPrediction(ax, cx, az, cz));
  InstanceEstimate est;
  est.pose.rotation = rotation_from_axes(orth.a_x, orth.a_z);
  est.pose.translation = apply_translation_residual(translation_prior, out.translation_residual);
  est.scale = Scale((scale_prior + out.scale_residual).cwiseMax(1e-3));
  return est;
}

std::string PredictionRecord::to_json() const {
  json j;
  j["frame"] = frame;
  j["instance"] = instance;
  j["category"] = std::string(category.name());
  if (estimate) {
    j["status"] = "ok";
    j["pose"] = pose_json(estimate->pose);
    const Vec3& s = estimate->scale.extents();
    j["scale"] = {s.x(), s.y(), s.z()};
  } else {
    j["status"] = "failed";
    j["error"] = error;
  }
  if (time_ms) j["time_ms"] = *time_ms;
  return j.dump();
}

PredictionRecord PredictionRecord::from_json(std::string_view line) {
  try {
    const json j = json::parse(line);
    PredictionRecord r;
    r.frame = j.at("frame").get<std::size_t>();
    r.instance = j.at("instance").get<int>();
    r.category = CategoryLabel::from_name(j.at("category").get<std::string>());
    const std::string status = j.at("status").get<std::string>();
    if (status == "ok") {
      InstanceEstimate e;
      e.pose = pose_from_json(j.at("pose"));
      const auto& s = j.at("scale");
      if (!s.is_array() || s.size() != 3) throw Error(ErrorCode::SchemaMismatch, "scale must have 3 entries");
      e.scale = Scale(s[0].get<double>(), s[1].get<double>(), s[2].get<double>());
      r.estimate = e;
    } else if (status == "failed") {
      r.error = j.value("error", "");
    } else {
      throw Error(ErrorCode::SchemaMismatch, "unknown status '" + status + "'");
    }
    if (j.contains("time_ms")) r.time_ms = j["time_ms"].get<double>();
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, std::string("prediction record: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::SchemaMismatch) throw;
    throw Error(ErrorCode::SchemaMismatch, std::string("prediction record: ") + e.what());
  }
}

std::string records_to_jsonl(const std::vector<PredictionRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += r.to_json();
    out += '\n';
  }
  return out;
}

std::vector<PredictionRecord> records_from_jsonl(const std::string& text) {
  std::vector<PredictionRecord> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(PredictionRecord::from_json(line));
  }
  return out;
}

std::vector<PredictionRecord> predict_frame(const SceneFrame& frame, std::size_t index,
                                            const LinearDecoderModel& model, const CategoryPriors& priors,
                                            const PipelineConfig& config, const PredictOptions& options) {
  const auto depth = make_depth_completer(config.depth, frame, config.noisy_depth);
  const auto normals = make_normal_estimator(config.normals, frame, config.normal_kappa);
  std::vector<PredictionRecord> out;
  for (const auto& inst : frame.instances) {
    PredictionRecord r;
    r.frame = index;
    r.instance = inst.id;
    r.category = inst.category;
    const auto start = std::chrono::steady_clock::now();
    try {
      const InstanceStages st = run_front_end(frame, inst, *depth, *normals, config);
      if (!options.dump_directory.empty()) write_instance_dump(options.dump_directory, index, st);
      r.estimate = decode_instance(model, st.pooled, st.translation_prior, priors, inst.category);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::IoFailure) throw;
      r.error = e.what();
    }
    if (options.record_timing)
      r.time_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    out.push_back(std::move(r));
  }
  return out;
}

void write_instance_dump(const std::string& directory, std::size_t frame, const InstanceStages& st) {
  const fs::path dir = fs::path(directory) / frame_dir_name(frame);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
  const std::string stem = inst_stem(st.instance);
  json meta;
  meta["frame"] = frame;
  meta["instance"] = st.instance;
  meta["category"] = std::string(st.category.name());
  meta["points"] = st.cloud.size();
  io::write_text((dir / (stem + ".json")).string(), meta.dump(2) + "\n");
  std::ostringstream csv;
  write_cloud_csv(csv, st.cloud);
  io::write_text((dir / (stem + "_cloud.csv")).string(), csv.str());
  io::write_depth_png((dir / (stem + "_depth.png")).string(), st.bundle.completed_depth);
  io::write_normals((dir / (stem + "_normals.f32")).string(), st.bundle.normals);
}

std::vector<PredictionRecord> predict_from_dump(const std::string& directory, const Intrinsics& K,
                                                const LinearDecoderModel& model, const CategoryPriors& priors,
                                                const PipelineConfig& config) {
  if (!fs::is_directory(directory)) throw Error(ErrorCode::IoFailure, "no dump directory " + directory);
  std::vector<fs::path> metas;
  for (const auto& fd : fs::directory_iterator(directory)) {
    if (!fd.is_directory() || fd.path().filename().string().rfind("frame_", 0) != 0) continue;
    for (const auto& f : fs::directory_iterator(fd.path())) {
      const std::string name = f.path().filename().string();
      if (name.rfind("inst_", 0) == 0 && f.path().extension() == ".json" && name.find('_', 5) == std::string::npos)
        metas.push_back(f.path());
    }
  }
  std::vector<PredictionRecord> out;
  for (const auto& m : metas) {
    json meta;
    try {
      meta = json::parse(io::read_text(m.string()));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::SchemaMismatch, m.string() + ": " + e.what());
    }
    PredictionRecord r;
    r.frame = meta.at("frame").get<std::size_t>();
    r.instance = meta.at("instance").get<int>();
    r.category = CategoryLabel::from_name(meta.at("category").get<std::string>());
    std::istringstream csv(io::read_text((m.parent_path() / (m.stem().string() + "_cloud.csv")).string()));
    const GeneralizedPointCloud cloud = read_cloud_csv(csv);
    const Vec3 t_prior = translation_prior(cloud, K);
    const VecX pooled = reference_embedding(cloud, r.category, K, config.embedding).pooled();
    r.estimate = decode_instance(model, pooled, t_prior, priors, r.category);
    out.push_back(std::move(r));
  }
  std::sort(out.begin(), out.end(), [](const PredictionRecord& a, const PredictionRecord& b) {
    return a.frame != b.frame ? a.frame < b.frame : a.instance < b.instance;
  });
  return out;
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(jobs, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::size_t failed_index = n;
  std::exception_ptr failure;
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (i < failed_index) {
          failed_index = i;
          failure = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

FrameSource FrameSource::from_dataset(const Dataset& dataset) {
  FrameSource s;
  s.count = dataset.frames.size();
  s.K = dataset.K;
  s.priors = dataset.priors;
  s.load = [dataset](std::size_t i) { return load_frame(dataset, i); };
  return s;
}

FrameSource FrameSource::generated(const SceneConfig& config, std::uint64_t master_seed, std::size_t count,
                                   int jobs) {
  std::vector<std::vector<InstanceAnnotation>> annos(count);
  parallel_for(count, jobs, [&](std::size_t i) { annos[i] = generate_scene(config, frame_seed(master_seed, i)).instances; });
  std::vector<InstanceAnnotation> all;
  for (const auto& a : annos) all.insert(all.end(), a.begin(), a.end());
  FrameSource s;
  s.count = count;
  s.K = config.K;
  s.priors = priors_from_annotations(all, config.templates);
  s.load = [config, master_seed](std::size_t i) { return generate_scene(config, frame_seed(master_seed, i)); };
  return s;
}

std::vector<PredictionRecord> predict_dataset(const Dataset& dataset, const LinearDecoderModel& model,
                                              const PipelineConfig& config, const PredictOptions& options,
                                              int jobs) {
  std::vector<std::vector<PredictionRecord>> per_frame(dataset.frames.size());
  parallel_for(dataset.frames.size(), jobs, [&](std::size_t i) {
    const SceneFrame frame = load_frame(dataset, i);
    per_frame[i] = predict_frame(frame, i, model, dataset.priors, config, options);
  });
  std::vector<PredictionRecord> out;
  for (auto& f : per_frame)
    for (auto& r : f) out.push_back(std::move(r));
  return out;
}

std::vector<TrainingSample> build_training_samples(const Dataset& dataset, const PipelineConfig& config, int jobs) {
  return build_training_samples(FrameSource::from_dataset(dataset), config, jobs);
}

std::vector<TrainingSample> build_training_samples(const FrameSource& source, const PipelineConfig& config, int jobs) {
  std::vector<std::vector<TrainingSample>> per_frame(source.count);
  parallel_for(source.count, jobs, [&](std::size_t i) {
    const SceneFrame frame = source.load(i);
    const auto depth = make_depth_completer(config.depth, frame, config.noisy_depth);
    const auto normals = make_normal_estimator(config.normals, frame, config.normal_kappa);
    for (const auto& inst : frame.instances) {
      InstanceStages st;
      try {
        st = run_front_end(frame, inst, *depth, *normals, config);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::IoFailure) throw;
        continue;
      }
      TrainingSample s;
      s.pooled = std::move(st.pooled);
      s.translation_prior = st.translation_prior;
      s.scale_prior = source.priors.get(inst.category);
      s.target.pose = inst.pose;
      s.target.scale = inst.scale.extents();
      s.target.symmetry = inst.symmetry;
      per_frame[i].push_back(std::move(s));
    }
  });
  std::vector<TrainingSample> out;
  for (auto& f : per_frame)
    for (auto& s : f) out.push_back(std::move(s));
  return out;
}

namespace {

InstanceTruth truth_of(const InstanceAnnotation& a) { return {a.category, a.pose, a.scale, a.symmetry}; }

std::vector<std::vector<InstanceAnnotation>> load_annotations(const Dataset& dataset, int jobs) {
  std::vector<std::vector<InstanceAnnotation>> out(dataset.frames.size());
  parallel_for(dataset.frames.size(), jobs, [&](std::size_t i) {
    const std::string path = (fs::path(dataset.directory) / frame_file("anno_#.json", i)).string();
    out[i] = annotations_from_json(io::read_text(path));
  });
  return out;
}

}  // namespace

PoseEvaluation evaluate_predictions(const Dataset& dataset, const std::vector<PredictionRecord>& records,
                                    const PoseMetricOptions& options) {
  const auto annotations = load_annotations(dataset, 1);
  std::map<std::pair<std::size_t, int>, const PredictionRecord*> by_key;
  for (const auto& r : records) {
    if (r.frame >= annotations.size())
      throw Error(ErrorCode::SchemaMismatch, "prediction for unknown frame " + std::to_string(r.frame));
    const auto& annos = annotations[r.frame];
    if (std::none_of(annos.begin(), annos.end(), [&](const InstanceAnnotation& a) { return a.id == r.instance; }))
      throw Error(ErrorCode::SchemaMismatch, "prediction for unknown instance " + std::to_string(r.instance) +
                                                 " of frame " + std::to_string(r.frame));
    by_key[{r.frame, r.instance}] = &r;
  }
  std::vector<std::optional<InstanceEstimate>> estimates;
  std::vector<InstanceTruth> truths;
  PoseEvaluation ev;
  for (std::size_t f = 0; f < annotations.size(); ++f) {
    for (const auto& a : annotations[f]) {
      truths.push_back(truth_of(a));
      const auto it = by_key.find({f, a.id});
      if (it != by_key.end() && it->second->estimate) {
        estimates.push_back(it->second->estimate);
      } else {
        estimates.emplace_back();
        ++ev.missing;
      }
    }
  }
  ev.instances = truths.size();
  ev.report = pose_metrics(estimates, truths, options);
  return ev;
}

StageEvaluation evaluate_stages(const Dataset& dataset, const PipelineConfig& config, int jobs) {
  return evaluate_stages(FrameSource::from_dataset(dataset), config, jobs);
}

StageEvaluation evaluate_stages(const FrameSource& source, const PipelineConfig& config, int jobs) {
  std::vector<DepthMetricsAccumulator> depth(source.count);
  std::vector<NormalMetricsAccumulator> normals(source.count);
  parallel_for(source.count, jobs, [&](std::size_t i) {
    const SceneFrame frame = source.load(i);
    const auto dc = make_depth_completer(config.depth, frame, config.noisy_depth);
    const auto ne = make_normal_estimator(config.normals, frame, config.normal_kappa);
    depth[i].add(dc->frame_depth(), frame.depth_gt, frame.transparency);
    normals[i].add(ne->frame_normals(), frame.normals_gt, frame.transparency);
  });
  DepthMetricsAccumulator d;
  NormalMetricsAccumulator n;
  for (const auto& a : depth) d.merge(a);
  for (const auto& a : normals) n.merge(a);
  return {d.report(), n.report()};
}

std::string GridCell::label() const {
  auto tag = [](EstimatorKind k) { return k == EstimatorKind::Oracle ? "GT" : "EST"; };
  return std::string(tag(depth)) + "/" + tag(normals);
}

std::vector<GridCell> evaluate_grid(const Dataset& dataset, const LinearDecoderModel& model,
                                    const PipelineConfig& config, const PoseMetricOptions& options, int jobs) {
  return evaluate_grid(FrameSource::from_dataset(dataset), model, config, options, jobs);
}

std::vector<GridCell> evaluate_grid(const FrameSource& source, const LinearDecoderModel& model,
                                    const PipelineConfig& config, const PoseMetricOptions& options, int jobs) {
  constexpr EstimatorKind O = EstimatorKind::Oracle, N = EstimatorKind::Noisy;
  const std::array<std::pair<EstimatorKind, EstimatorKind>, 4> conditions = {{{O, O}, {O, N}, {N, O}, {N, N}}};
  const std::size_t frames = source.count;
  // [frame][condition] -> estimates in annotation order
  std::vector<std::array<std::vector<std::optional<InstanceEstimate>>, 4>> est(frames);
  std::vector<std::vector<InstanceTruth>> truths(frames);
  parallel_for(frames, jobs, [&](std::size_t i) {
    const SceneFrame frame = source.load(i);
    std::unique_ptr<DepthCompleter> dc[2] = {make_depth_completer(O, frame, config.noisy_depth),
                                             make_depth_completer(N, frame, config.noisy_depth)};
    std::unique_ptr<NormalEstimator> ne[2] = {make_normal_estimator(O, frame, config.normal_kappa),
                                              make_normal_estimator(N, frame, config.normal_kappa)};
    for (const auto& inst : frame.instances) {
      truths[i].push_back(truth_of(inst));
      for (std::size_t c = 0; c < conditions.size(); ++c) {
        const auto& d = *dc[conditions[c].first == O ? 0 : 1];
        const auto& n = *ne[conditions[c].second == O ? 0 : 1];
        try {
          const InstanceStages st = run_front_end(frame, inst, d, n, config);
          est[i][c].push_back(decode_instance(model, st.pooled, st.translation_prior, source.priors, inst.category));
        } catch (const Error& e) {
          if (e.code() == ErrorCode::IoFailure) throw;
          est[i][c].emplace_back();
        }
      }
    }
  });
  std::vector<InstanceTruth> all_truths;
  for (const auto& t : truths) all_truths.insert(all_truths.end(), t.begin(), t.end());
  std::vector<GridCell> grid;
  for (std::size_t c = 0; c < conditions.size(); ++c) {
    std::vector<std::optional<InstanceEstimate>> all;
    for (const auto& f : est) all.insert(all.end(), f[c].begin(), f[c].end());
    GridCell cell;
    cell.depth = conditions[c].first;
    cell.normals = conditions[c].second;
    cell.report = pose_metrics(all, all_truths, options);
    grid.push_back(std::move(cell));
  }
  return grid;
}

std::string grid_to_csv(const std::vector<GridCell>& grid) {
  std::ostringstream os;
  os << "depth,normals";
  for (auto n : pose_metric_names()) os << ',' << n;
  os << '\n';
  for (const auto& c : grid) {
    os << (c.depth == EstimatorKind::Oracle ? "GT" : "EST") << ',' << (c.normals == EstimatorKind::Oracle ? "GT" : "EST");
    for (double v : c.report.mean.percent) os << ',' << fmt(v, 4);
    os << '\n';
  }
  return os.str();
}

std::string grid_to_markdown(const std::vector<GridCell>& grid) {
  static const std::array<const char*, kNumPoseMetrics> heads = {
      "3D<sub>25</sub>", "3D<sub>50</sub>", "3D<sub>75</sub>", "5°2cm", "5°5cm", "10°5cm",
      "10°10cm",         "5°",              "10°",             "2cm",   "5cm",   "10cm"};
  std::ostringstream os;
  os << "| Depth | Normal |";
  for (auto h : heads) os << ' ' << h << " |";
  os << "\n|---|---|";
  for (std::size_t i = 0; i < heads.size(); ++i) os << "---|";
  os << '\n';
  for (const auto& c : grid) {
    os << "| " << (c.depth == EstimatorKind::Oracle ? "GT" : "EST") << " | "
       << (c.normals == EstimatorKind::Oracle ? "GT" : "EST") << " |";
    for (double v : c.report.mean.percent) os << ' ' << fmt(v, 1) << " |";
    os << '\n';
  }
  return os.str();
}

}  // namespace tpose
