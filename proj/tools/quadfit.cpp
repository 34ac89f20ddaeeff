#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "quadfit/audio.hpp"
#include "quadfit/camera.hpp"
#include "quadfit/error.hpp"
#include "quadfit/fit.hpp"
#include "quadfit/fusion.hpp"
#include "quadfit/gradsuite.hpp"
#include "quadfit/metrics.hpp"
#include "quadfit/render.hpp"
#include "quadfit/synth.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace quadfit;

namespace {

std::uint64_t fnv1a(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Records artifacts under the output directory and writes manifest.json.
class Run {
 public:
  Run(std::string command, fs::path out, json config)
      : command_(std::move(command)), out_(std::move(out)), config_(std::move(config)) {
    fs::create_directories(out_);
  }

  const fs::path& out() const { return out_; }
  fs::path path(const fs::path& rel) {
    const fs::path p = out_ / rel;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    artifacts_.push_back(rel);
    return p;
  }
  void add_tree(const fs::path& rel) {
    for (const auto& e : fs::recursive_directory_iterator(out_ / rel))
      if (e.is_regular_file()) artifacts_.push_back(fs::relative(e.path(), out_));
  }

  void finish() const {
    json arts = json::array();
    std::vector<fs::path> sorted(artifacts_);
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    for (const auto& rel : sorted) {
      const std::string bytes = file_bytes(out_ / rel);
      arts.push_back({{"path", rel.generic_string()}, {"bytes", bytes.size()}, {"fnv1a", hex(fnv1a(bytes))}});
    }
    const json doc{{"command", command_},
                   {"config", config_},
                   {"config_hash", hex(fnv1a(config_.dump()))},
                   {"artifacts", arts}};
    std::ofstream(out_ / "manifest.json") << doc.dump(2) << '\n';
  }

 private:
  std::string command_;
  fs::path out_;
  json config_;
  std::vector<fs::path> artifacts_;
};

int thread_count(size_t jobs) {
  int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("QUADFIT_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) n = std::min(n, cap);
  }
  return std::max(1, std::min(n, static_cast<int>(jobs)));
}

// Runs job(i) for i in [0, n) on up to QUADFIT_THREADS threads; the first
// error is rethrown on the caller.
template <class F>
void parallel_for(size_t n, F job) {
  const int threads = thread_count(n);
  if (threads <= 1) {
    for (size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (size_t i = next++; i < n; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

MeshModel resolve_model(const std::string& name) {
  if (name == "toy") return bundled_toy_model();
  return load_model(name);
}

// [patch:|human:]anchor[:size[:seed]], e.g. "legs:0.05" or "human:whole:0.3".
OccluderSpec parse_occluder(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
  OccluderSpec spec;
  size_t i = 0;
  if (!parts.empty() && (parts[0] == "patch" || parts[0] == "human")) {
    spec.kind = parts[0] == "human" ? OccluderKind::human_box : OccluderKind::patch;
    ++i;
  }
  if (i >= parts.size() || parts[i].empty()) throw Error(Errc::config_error, "occluder spec needs an anchor: " + text);
  spec.anchor = parts[i++];
  try {
    if (i < parts.size()) spec.size = std::stod(parts[i++]);
    if (i < parts.size()) spec.seed = std::stoull(parts[i++]);
  } catch (const std::exception&) {
    throw Error(Errc::config_error, "bad occluder spec: " + text);
  }
  if (i < parts.size()) throw Error(Errc::config_error, "bad occluder spec: " + text);
  validate_occluder(spec);
  return spec;
}

struct Augment {
  std::string occlude;
  double jitter = 0.0;
  std::uint64_t seed = 0;

  ClipRecord apply(const ClipRecord& clip, const MeshModel& model, size_t index) const {
    ClipRecord out = clip;
    if (!occlude.empty()) {
      OccluderSpec spec = parse_occluder(occlude);
      spec.seed += seed * 1000003ULL + index;
      out = apply_occluder(out, model, spec);
    }
    if (jitter > 0.0) out = color_jitter(out, jitter, seed * 1000003ULL + index);
    return out;
  }
  void describe(json& config) const {
    config["occlude"] = occlude;
    config["jitter"] = jitter;
  }
};

std::string clip_id(const ClipRecord& c) { return c.sequence + "_" + std::to_string(c.start); }

std::vector<ClipRecord> load_clips(const std::string& dataset, int frames) {
  if (dataset.empty()) throw Error(Errc::config_error, "a dataset is required");
  return load_sequence(dataset, frames);
}

// Weight overrides of the form name=value.
LossWeights parse_weights(const std::vector<std::string>& items, LossWeights w) {
  const std::map<std::string, double*> slots{{"kp", &w.kp},
                                             {"sil", &w.sil},
                                             {"beta_prior", &w.beta_prior},
                                             {"theta_prior", &w.theta_prior},
                                             {"smooth_gamma", &w.smooth_gamma},
                                             {"smooth_global", &w.smooth_global},
                                             {"smooth_joints", &w.smooth_joints}};
  for (const auto& item : items) {
    const auto eq = item.find('=');
    const auto it = eq == std::string::npos ? slots.end() : slots.find(item.substr(0, eq));
    if (it == slots.end()) throw Error(Errc::config_error, "bad weight override: " + item);
    try {
      *it->second = std::stod(item.substr(eq + 1));
    } catch (const std::exception&) {
      throw Error(Errc::config_error, "bad weight override: " + item);
    }
  }
  validate_weights(w);
  return w;
}

json weights_json(const LossWeights& w) {
  return {{"kp", w.kp},
          {"sil", w.sil},
          {"beta_prior", w.beta_prior},
          {"theta_prior", w.theta_prior},
          {"smooth_gamma", w.smooth_gamma},
          {"smooth_global", w.smooth_global},
          {"smooth_joints", w.smooth_joints}};
}

// ---- synth ----

struct SynthArgs {
  std::string gait = "trot";
  int frames = 9;
  int sequences = 1;
  double fps = 25.0;
  std::uint64_t seed = 0;
  bool no_crops = false;
  bool no_audio = false;
  std::string out;
};

int run_synth(const SynthArgs& a, const std::string& model_name) {
  const MeshModel model = resolve_model(model_name);
  const json config{{"gait", a.gait}, {"frames", a.frames}, {"sequences", a.sequences}, {"fps", a.fps},
                    {"seed", a.seed}, {"crops", !a.no_crops}, {"audio", !a.no_audio}, {"model", model_name}};
  Run run("synth", a.out, config);
  for (int i = 0; i < a.sequences; ++i) {
    SynthConfig c;
    c.gait = a.gait == "mixed" ? static_cast<Gait>(i % 3) : parse_gait(a.gait);
    c.frames = a.frames;
    c.fps = a.fps;
    c.seed = a.seed + static_cast<std::uint64_t>(i);
    c.crops = !a.no_crops;
    c.audio = !a.no_audio;
    char name[32];
    std::snprintf(name, sizeof name, "seq_%03d", i);
    write_sequence(synth_sequence(model, c), run.out() / name);
    run.add_tree(name);
  }
  run.finish();
  std::printf("wrote %d sequence(s) to %s\n", a.sequences, a.out.c_str());
  return 0;
}

// ---- fit ----

struct FitArgs {
  std::string dataset;
  int frames = 5;
  int iters = 100;
  std::uint64_t seed = 0;
  std::vector<std::string> weights;
  Augment aug;
  std::string out;
};

int run_fit(const FitArgs& a, const std::string& model_name) {
  const MeshModel model = resolve_model(model_name);
  const LossWeights w = parse_weights(a.weights, {});
  json config{{"dataset", a.dataset}, {"frames", a.frames}, {"iters", a.iters}, {"seed", a.seed},
              {"model", model_name}, {"weights", weights_json(w)}};
  a.aug.describe(config);
  const auto clips = load_clips(a.dataset, a.frames);
  Run run("fit", a.out, config);
  std::vector<FitResult> results(clips.size());
  std::vector<ClipRecord> inputs(clips.size());
  parallel_for(clips.size(), [&](size_t i) {
    inputs[i] = Augment{a.aug.occlude, a.aug.jitter, a.seed}.apply(clips[i], model, i);
    results[i] = fit_sequence(inputs[i], model, initial_pose(inputs[i], model), w, a.iters);
  });
  std::vector<MetricRow> rows;
  for (size_t i = 0; i < clips.size(); ++i) {
    const std::string id = clip_id(clips[i]);
    save_pose(results[i].pose, run.path("poses/" + id + ".json"));
    write_loss_csv(results[i].trace, run.path("loss/" + id + ".csv"));
    const LossReport& last = results[i].trace.back();
    rows.push_back({id, -1, "loss", last.total});
    if (!clips[i].gt_keypoints3d.empty()) {
      const auto r = p_mpjpe(pose_keypoints3d(model, results[i].pose), clips[i].gt_keypoints3d, clips[i].frames());
      for (size_t t = 0; t < r.per_frame.size(); ++t) rows.push_back({id, static_cast<int>(t), "p_mpjpe", r.per_frame[t]});
      std::printf("%s  loss %.6g  p_mpjpe %.5f\n", id.c_str(), last.total, r.summary.mean);
    } else {
      std::printf("%s  loss %.6g\n", id.c_str(), last.total);
    }
  }
  write_metrics_csv(rows, run.path("fit_metrics.csv"));
  run.finish();
  return 0;
}

// ---- train ----

struct TrainArgs {
  std::string dataset;
  std::string variant = "image";
  int frames = 5;
  int epochs = 30;
  int batch = 8;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  bool no_audio_loss = false;
  std::vector<std::string> weights = {"sil=0"};
  Augment aug;
  std::string out;
};

int run_train(const TrainArgs& a, const std::string& model_name) {
  const MeshModel model = resolve_model(model_name);
  const LossWeights w = parse_weights(a.weights, {});
  const Variant v = parse_variant(a.variant);
  json config{{"dataset", a.dataset}, {"variant", variant_name(v)}, {"frames", a.frames}, {"epochs", a.epochs},
              {"batch", a.batch}, {"lr", a.lr}, {"seed", a.seed}, {"audio_loss", !a.no_audio_loss},
              {"model", model_name}, {"weights", weights_json(w)}};
  a.aug.describe(config);
  auto clips = load_clips(a.dataset, a.frames);
  for (size_t i = 0; i < clips.size(); ++i) clips[i] = Augment{a.aug.occlude, a.aug.jitter, a.seed}.apply(clips[i], model, i);
  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.batch = a.batch;
  tc.lr = a.lr;
  tc.seed = a.seed;
  tc.audio_loss = !a.no_audio_loss;
  tc.encoder.frames = a.frames;
  Run run("train", a.out, config);
  const TrainResult r = train(clips, v, model, w, tc);
  save_params(r.params, run.path("net.json"));
  {
    std::ofstream csv(run.path("train_loss.csv"));
    csv.precision(10);
    csv << "epoch,l_kp,l_sil,l_smooth,l_prior,total\n";
    for (const auto& e : r.trace)
      csv << e.epoch << ',' << e.mean.l_kp << ',' << e.mean.l_sil << ',' << e.mean.l_smooth << ',' << e.mean.l_prior
          << ',' << e.total << '\n';
  }
  run.finish();
  std::printf("%s: %zu clips, loss %.6g -> %.6g\n", std::string(variant_name(v)).c_str(), clips.size(),
              r.trace.front().total, r.trace.back().total);
  return 0;
}

// ---- infer ----

struct InferArgs {
  std::string dataset;
  std::string net;
  Augment aug;
  std::string out;
};

int run_infer(const InferArgs& a, const std::string& model_name) {
  const MeshModel model = resolve_model(model_name);
  const RegressorParams params = load_params(a.net);
  json config{{"dataset", a.dataset}, {"net", a.net}, {"model", model_name}, {"net_hash", hex(fnv1a(file_bytes(a.net)))}};
  a.aug.describe(config);
  const auto clips = load_clips(a.dataset, params.config.frames);
  Run run("infer", a.out, config);
  std::map<std::string, std::pair<std::vector<int>, std::vector<PoseState>>> by_sequence;
  std::map<std::string, int> lengths;
  std::vector<MetricRow> rows;
  for (size_t i = 0; i < clips.size(); ++i) {
    const ClipRecord clip = a.aug.apply(clips[i], model, i);
    const Prediction p = forward(clip, params, i);
    const std::string id = clip_id(clip);
    save_pose(p.pose, run.path("poses/" + id + ".json"));
    auto& entry = by_sequence[clip.sequence];
    entry.first.push_back(clip.start);
    entry.second.push_back(p.pose);
    lengths[clip.sequence] = std::max(lengths[clip.sequence], clip.start + clip.frames());
    if (!clip.gt_keypoints3d.empty()) {
      const auto r = p_mpjpe(pose_keypoints3d(model, p.pose), clip.gt_keypoints3d, clip.frames());
      for (size_t t = 0; t < r.per_frame.size(); ++t) rows.push_back({id, static_cast<int>(t), "p_mpjpe", r.per_frame[t]});
    }
  }
  std::ofstream csv(run.path("stitched.csv"));
  csv.precision(10);
  csv << "sequence,frame,field,index,value\n";
  int missing = 0;
  for (const auto& [seq, entry] : by_sequence) {
    const Stitched s = stitch_middle(entry.first, entry.second, lengths[seq]);
    missing += s.missing;
    for (size_t f = 0; f < s.frames.size(); ++f) {
      if (!s.frames[f]) continue;
      const FramePose& fp = *s.frames[f];
      auto emit = [&](const char* field, auto const& values) {
        for (size_t k = 0; k < values.size(); ++k) csv << seq << ',' << f << ',' << field << ',' << k << ',' << values[k] << '\n';
      };
      emit("beta", fp.beta);
      emit("theta_global", fp.theta_global);
      emit("theta_joints", fp.theta_joints);
      emit("cam", fp.cam);
    }
  }
  csv.close();
  if (!rows.empty()) write_metrics_csv(rows, run.path("infer_metrics.csv"));
  run.finish();
  std::printf("%zu clips, %zu sequences, %d boundary frames without a prediction\n", clips.size(), by_sequence.size(),
              missing);
  return 0;
}

// ---- eval ----

struct EvalArgs {
  std::string dataset;
  std::string pred = "gt";
  int frames = 5;
  double pck_alpha = 0.1;
  double conf_threshold = 0.5;
  Augment aug;
  std::string out;
};

int run_eval(const EvalArgs& a, const std::string& model_name) {
  const MeshModel model = resolve_model(model_name);
  json config{{"dataset", a.dataset}, {"pred", a.pred}, {"frames", a.frames}, {"pck_alpha", a.pck_alpha},
              {"conf_threshold", a.conf_threshold}, {"model", model_name}};
  a.aug.describe(config);
  const auto clips = load_clips(a.dataset, a.frames);
  Run run("eval", a.out, config);
  std::vector<MetricRow> rows;
  std::map<std::string, std::vector<double>> per_metric;
  for (size_t i = 0; i < clips.size(); ++i) {
    const ClipRecord clip = a.aug.apply(clips[i], model, i);
    const std::string id = clip_id(clip);
    PoseState pose;
    if (a.pred == "gt") {
      if (!clip.gt_pose) throw Error(Errc::corrupt_dataset, "clip " + id + " has no ground-truth pose");
      pose = *clip.gt_pose;
    } else {
      pose = load_pose(fs::path(a.pred) / "poses" / (id + ".json"));
    }
    validate_pose(pose, model);
    const int t_count = clip.frames(), k = clip.keypoints();
    if (pose.frames() != t_count) throw Error(Errc::shape_error, "prediction for " + id + " has the wrong length");
    const CameraPair cam = make_camera_pair(pose.cam_weak, clip.boxes);
    std::vector<double> pred2d, k3;
    for (int t = 0; t < t_count; ++t) {
      const auto verts = pose_mesh(model, pose.beta, pose.global(t), pose.joints(t, model.pose_dim()));
      const auto kp = regress_keypoints3d(verts, model);
      k3.insert(k3.end(), kp.begin(), kp.end());
      const std::span<const double> g(cam.gamma_full.data() + 3 * t, 3);
      const auto uv = project_points(kp, cam.f_full, g, full_principal(clip.boxes[static_cast<size_t>(t)]));
      pred2d.insert(pred2d.end(), uv.begin(), uv.end());
      const std::span<const double> p2(pred2d.data() + 2 * k * t, static_cast<size_t>(2 * k));
      const std::span<const double> g2(clip.keypoints2d.data() + 2 * k * t, static_cast<size_t>(2 * k));
      const std::span<const double> cf(clip.confidence.data() + k * t, static_cast<size_t>(k));
      const double norm = clip.boxes[static_cast<size_t>(t)].b;
      const double v = pck(p2, g2, cf, std::span<const double>(&norm, 1), a.pck_alpha, a.conf_threshold);
      rows.push_back({id, t, "pck", v});
      per_metric["pck"].push_back(v);
      if (clip.mask_valid[static_cast<size_t>(t)]) {
        const Mask& gt = clip.masks[static_cast<size_t>(t)];
        const double iou = iou_masks(rasterize_hard(verts, model.faces, cam, t, gt.width), gt);
        rows.push_back({id, t, "iou", iou});
        per_metric["iou"].push_back(iou);
      }
    }
    if (!clip.gt_keypoints3d.empty()) {
      const auto r = p_mpjpe(k3, clip.gt_keypoints3d, t_count);
      for (int t = 0; t < t_count; ++t) rows.push_back({id, t, "p_mpjpe", r.per_frame[static_cast<size_t>(t)]});
      per_metric["p_mpjpe"].insert(per_metric["p_mpjpe"].end(), r.per_frame.begin(), r.per_frame.end());
    }
  }
  write_metrics_csv(rows, run.path("metrics.csv"));
  std::ofstream summary(run.path("summary.csv"));
  summary << "metric,mean,std,n\n";
  summary.precision(10);
  for (const auto& [name, values] : per_metric) {
    const Summary s = summarize(values);
    summary << name << ',' << s.mean << ',' << s.std << ',' << values.size() << '\n';
    std::printf("%-8s %s  (n=%zu)\n", name.c_str(), format_mean_std(s, 4).c_str(), values.size());
  }
  summary.close();
  run.finish();
  return 0;
}

// ---- spectrogram ----

struct SpecArgs {
  std::string wav;
  audio::MelConfig mel;
  std::string out;
};

int run_spectrogram(const SpecArgs& a) {
  const json config{{"wav", a.wav},          {"n_fft", a.mel.n_fft}, {"hop", a.mel.hop},
                    {"n_mels", a.mel.n_mels}, {"fmin", a.mel.fmin},   {"fmax", a.mel.fmax},
                    {"highpass_hz", a.mel.highpass_hz}};
  const audio::AudioTrack track = audio::read_wav(a.wav);
  const audio::Spectrogram spec = audio::log_mel(track, a.mel);
  Run run("spectrogram", a.out, config);
  audio::write_spectrogram_csv(spec, run.path("spectrogram.csv"));
  run.finish();
  std::printf("%d mel bands x %d frames\n", spec.n_mels, spec.frames);
  return 0;
}

// ---- occlude ----

struct OccludeArgs {
  std::string dataset;
  Augment aug;
  std::uint64_t seed = 0;
  std::string out;
};

int run_occlude(const OccludeArgs& a, const std::string& model_name) {
  const MeshModel model = resolve_model(model_name);
  if (a.aug.occlude.empty() && a.aug.jitter <= 0.0) throw Error(Errc::config_error, "nothing to do: give --occlude or --jitter");
  json config{{"dataset", a.dataset}, {"seed", a.seed}, {"model", model_name}};
  a.aug.describe(config);
  std::vector<fs::path> dirs;
  const fs::path root(a.dataset);
  if (fs::exists(root / "meta.json")) {
    dirs.push_back(root);
  } else if (fs::is_directory(root)) {
    for (const auto& e : fs::directory_iterator(root))
      if (e.is_directory() && fs::exists(e.path() / "meta.json")) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
  }
  if (dirs.empty()) throw Error(Errc::corrupt_dataset, "no sequences under " + a.dataset);
  Run run("occlude", a.out, config);
  const Augment aug{a.aug.occlude, a.aug.jitter, a.seed};
  for (size_t i = 0; i < dirs.size(); ++i) {
    Sequence seq = read_sequence(dirs[i]);
    seq.all = aug.apply(seq.all, model, i);
    const std::string name = dirs[i].filename().string();
    write_sequence(seq, run.out() / name);
    run.add_tree(name);
  }
  run.finish();
  std::printf("wrote %zu sequence(s) to %s\n", dirs.size(), a.out.c_str());
  return 0;
}

// ---- gradcheck ----

int run_gradcheck(int configs, std::uint64_t seed, const std::string& model_name, const std::string& out) {
  const MeshModel model = resolve_model(model_name);
  const auto cases = run_gradient_suite(model, configs, seed);
  std::map<std::string, std::pair<double, double>> worst;  // op -> (max rel err, tol)
  std::map<std::string, int> failed, count, kinks;
  double max_err = 0.0;
  bool ok = true;
  for (const auto& c : cases) {
    auto& w = worst[c.op];
    w.first = std::max(w.first, c.report.max_rel_error);
    w.second = c.tol;
    ++count[c.op];
    kinks[c.op] += c.report.kinks;
    if (!c.report.passed) ++failed[c.op], ok = false;
    if (c.tol <= 1e-4) max_err = std::max(max_err, c.report.max_rel_error);
  }
  for (const auto& [op, w] : worst)
    std::printf("%-22s %3d configs  max rel err %.3e  (tol %.0e)  %d kink samples  %s\n", op.c_str(), count[op], w.first,
                w.second, kinks[op], failed[op] ? "FAIL" : "ok");
  std::printf("max rel err %.3e over %zu checks (rasterizer excluded; its tolerance is 1e-3)\n", max_err, cases.size());
  if (!out.empty()) {
    Run run("gradcheck", out, {{"configs", configs}, {"seed", seed}, {"model", model_name}});
    std::ofstream csv(run.path("gradcheck.csv"));
    csv << "op,config,tol,max_rel_error,max_abs_error,checked,kinks,passed\n";
    for (const auto& c : cases)
      csv << c.op << ',' << c.config << ',' << c.tol << ',' << c.report.max_rel_error << ',' << c.report.max_abs_error
          << ',' << c.report.checked << ',' << c.report.kinks << ',' << (c.report.passed ? 1 : 0) << '\n';
    csv.close();
    run.finish();
  }
  return ok ? 0 : 1;
}

// ---- report ----

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

Table read_csv(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(Errc::io_error, "cannot open " + p.string());
  Table t;
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string f; std::getline(ss, f, ',');) out.push_back(f);
    return out;
  };
  if (!std::getline(in, line)) throw Error(Errc::io_error, "empty csv " + p.string());
  t.header = split(line);
  while (std::getline(in, line))
    if (!line.empty()) t.rows.push_back(split(line));
  return t;
}

std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

const char* kPalette[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"};

// Grouped bars (one group per metric, one bar per input) with std whiskers.
void write_bar_svg(const fs::path& path, const std::string& metric, const std::vector<std::string>& labels,
                   const std::vector<Summary>& stats) {
  const double w = 120.0 + 90.0 * static_cast<double>(labels.size()), h = 300.0, top = 40.0, bottom = 250.0;
  double ymax = 0.0;
  for (const auto& s : stats) ymax = std::max(ymax, s.mean + s.std);
  if (!(ymax > 0.0)) ymax = 1.0;
  std::ofstream out(path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  out << "<text x=\"10\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" << svg_escape(metric) << "</text>\n";
  out << "<line x1=\"60\" y1=\"" << bottom << "\" x2=\"" << w - 20 << "\" y2=\"" << bottom << "\" stroke=\"black\"/>\n";
  out << "<text x=\"5\" y=\"" << top + 4 << "\" font-family=\"sans-serif\" font-size=\"10\">" << ymax << "</text>\n";
  for (size_t i = 0; i < labels.size(); ++i) {
    const double x = 70.0 + 90.0 * static_cast<double>(i);
    const double y = bottom - (bottom - top) * stats[i].mean / ymax;
    const double e0 = bottom - (bottom - top) * std::max(0.0, stats[i].mean - stats[i].std) / ymax;
    const double e1 = bottom - (bottom - top) * (stats[i].mean + stats[i].std) / ymax;
    out << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"60\" height=\"" << bottom - y << "\" fill=\""
        << kPalette[i % 6] << "\"/>\n";
    out << "<line x1=\"" << x + 30 << "\" y1=\"" << e0 << "\" x2=\"" << x + 30 << "\" y2=\"" << e1
        << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << x << "\" y=\"" << bottom + 15 << "\" font-family=\"sans-serif\" font-size=\"10\">"
        << svg_escape(labels[i]) << "</text>\n";
  }
  out << "</svg>\n";
}

// One polyline per input, column `col` against the first column.
void write_line_svg(const fs::path& path, const std::string& title, const std::vector<std::string>& labels,
                    const std::vector<std::vector<std::pair<double, double>>>& series) {
  const double w = 520.0, h = 320.0, left = 60.0, right = 500.0, top = 40.0, bottom = 280.0;
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series)
    for (const auto& [x, y] : s) x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
  if (!(x1 > x0)) x1 = x0 + 1.0;
  if (!(y1 > y0)) y1 = y0 + 1.0;
  std::ofstream out(path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  out << "<text x=\"10\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" << svg_escape(title) << "</text>\n";
  out << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << right - left << "\" height=\"" << bottom - top
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  out << "<text x=\"5\" y=\"" << top + 4 << "\" font-family=\"sans-serif\" font-size=\"10\">" << y1 << "</text>\n";
  out << "<text x=\"5\" y=\"" << bottom << "\" font-family=\"sans-serif\" font-size=\"10\">" << y0 << "</text>\n";
  for (size_t i = 0; i < series.size(); ++i) {
    out << "<polyline fill=\"none\" stroke=\"" << kPalette[i % 6] << "\" points=\"";
    for (const auto& [x, y] : series[i])
      out << left + (right - left) * (x - x0) / (x1 - x0) << ',' << bottom - (bottom - top) * (y - y0) / (y1 - y0) << ' ';
    out << "\"/>\n";
    out << "<text x=\"" << right - 120 << "\" y=\"" << top + 15 + 14 * static_cast<double>(i)
        << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"" << kPalette[i % 6] << "\">" << svg_escape(labels[i])
        << "</text>\n";
  }
  out << "</svg>\n";
}

// Inputs are label=path (or bare paths). Metric CSVs (clip,frame,metric,value)
// become a mean ± std table with an "A / B" column for the first two inputs;
// loss traces (step or epoch first) become line plots of the total.
int run_report(const std::vector<std::string>& inputs, const std::string& out) {
  if (inputs.empty()) throw Error(Errc::config_error, "report needs at least one input csv");
  Run run("report", out, {{"inputs", inputs}});
  std::vector<std::string> metric_labels, trace_labels;
  std::vector<std::map<std::string, std::vector<double>>> metrics;
  std::vector<std::vector<std::pair<double, double>>> traces;
  for (const auto& item : inputs) {
    const auto eq = item.find('=');
    const std::string label = eq == std::string::npos ? fs::path(item).parent_path().filename().string() : item.substr(0, eq);
    const fs::path path = eq == std::string::npos ? item : item.substr(eq + 1);
    const Table t = read_csv(path);
    if (t.header == std::vector<std::string>{"clip", "frame", "metric", "value"}) {
      std::map<std::string, std::vector<double>> m;
      for (const auto& r : t.rows)
        if (r.size() == 4 && r[1] != "-1") m[r[2]].push_back(std::stod(r[3]));
      metric_labels.push_back(label);
      metrics.push_back(std::move(m));
    } else if (!t.header.empty() && (t.header[0] == "step" || t.header[0] == "epoch") && t.header.back() == "total") {
      std::vector<std::pair<double, double>> s;
      for (const auto& r : t.rows) s.emplace_back(std::stod(r.front()), std::stod(r.back()));
      trace_labels.push_back(label);
      traces.push_back(std::move(s));
    } else {
      throw Error(Errc::config_error, "unrecognized csv: " + path.string());
    }
  }
  if (!metrics.empty()) {
    std::vector<std::string> names;
    for (const auto& m : metrics)
      for (const auto& [k, v] : m)
        if (std::find(names.begin(), names.end(), k) == names.end()) names.push_back(k);
    std::ofstream csv(run.path("summary.csv"));
    csv << "metric";
    for (const auto& l : metric_labels) csv << ',' << l;
    if (metrics.size() >= 2) csv << ',' << metric_labels[0] << " / " << metric_labels[1];
    csv << '\n';
    for (const auto& name : names) {
      // Inputs without this metric get an empty cell and no bar.
      std::vector<std::optional<Summary>> stats;
      std::vector<std::string> bar_labels;
      std::vector<Summary> bars;
      csv << name;
      for (size_t i = 0; i < metrics.size(); ++i) {
        const auto it = metrics[i].find(name);
        stats.push_back(it == metrics[i].end() ? std::nullopt : std::optional<Summary>(summarize(it->second)));
        csv << ',';
        if (!stats.back()) continue;
        csv << format_mean_std(*stats.back(), 4);
        bar_labels.push_back(metric_labels[i]);
        bars.push_back(*stats.back());
      }
      if (metrics.size() >= 2) {
        csv << ',';
        if (stats[0] && stats[1]) {
          char buf[64];
          std::snprintf(buf, sizeof buf, "%.4f / %.4f", stats[0]->mean, stats[1]->mean);
          csv << buf;
        }
      }
      csv << '\n';
      write_bar_svg(run.path("bar_" + name + ".svg"), name, bar_labels, bars);
    }
  }
  if (!traces.empty()) write_line_svg(run.path("loss.svg"), "total loss", trace_labels, traces);
  run.finish();
  std::printf("report written to %s\n", out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"quadfit: audio-visual quadruped mesh fitting and regression toolkit"};
  app.require_subcommand(1);
  std::string model_name = "toy";
  app.add_option("--model", model_name, "mesh model: \"toy\" or a model JSON file")->capture_default_str();

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate labelled synthetic gait sequences");
  s->add_option("--gait", synth.gait, "walk, trot, canter or mixed")->capture_default_str();
  s->add_option("--frames", synth.frames, "frames per sequence")->capture_default_str();
  s->add_option("--sequences", synth.sequences, "number of sequences")->capture_default_str();
  s->add_option("--fps", synth.fps)->capture_default_str();
  s->add_option("--seed", synth.seed)->capture_default_str();
  s->add_flag("--no-crops", synth.no_crops, "skip rendering the RGB crops");
  s->add_flag("--no-audio", synth.no_audio, "skip the soundtrack");
  s->add_option("--out", synth.out)->required();
  s->add_option("--model", model_name);

  FitArgs fit;
  auto* f = app.add_subcommand("fit", "optimization-based fitting of every clip");
  f->add_option("dataset,--dataset", fit.dataset, "sequence directory or root")->required();
  f->add_option("--frames", fit.frames, "clip length")->capture_default_str();
  f->add_option("--iters", fit.iters)->capture_default_str();
  f->add_option("--seed", fit.seed, "augmentation seed")->capture_default_str();
  f->add_option("--weight", fit.weights, "loss weight override name=value (repeatable)");
  f->add_option("--occlude", fit.aug.occlude, "occluder [patch:|human:]anchor[:size[:seed]]");
  f->add_option("--jitter", fit.aug.jitter, "color jitter strength");
  f->add_option("--out", fit.out)->required();
  f->add_option("--model", model_name);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a regression network");
  t->add_option("dataset,--dataset", tr.dataset)->required();
  t->add_option("--variant", tr.variant, "image, early or model")->capture_default_str();
  t->add_option("--frames", tr.frames)->capture_default_str();
  t->add_option("--epochs", tr.epochs)->capture_default_str();
  t->add_option("--batch", tr.batch)->capture_default_str();
  t->add_option("--lr", tr.lr)->capture_default_str();
  t->add_option("--seed", tr.seed)->capture_default_str();
  t->add_flag("--no-audio-loss", tr.no_audio_loss, "drop the audio-branch loss of model fusion");
  t->add_option("--weight", tr.weights, "loss weight override name=value (repeatable)")->capture_default_str();
  t->add_option("--occlude", tr.aug.occlude);
  t->add_option("--jitter", tr.aug.jitter);
  t->add_option("--out", tr.out)->required();
  t->add_option("--model", model_name);

  InferArgs inf;
  std::uint64_t infer_seed = 0;
  auto* in = app.add_subcommand("infer", "run a trained network over a dataset");
  in->add_option("dataset,--dataset", inf.dataset)->required();
  in->add_option("--net", inf.net, "network file written by train")->required();
  in->add_option("--seed", infer_seed)->capture_default_str();
  in->add_option("--occlude", inf.aug.occlude);
  in->add_option("--jitter", inf.aug.jitter);
  in->add_option("--out", inf.out)->required();
  in->add_option("--model", model_name);

  EvalArgs ev;
  std::uint64_t eval_seed = 0;
  auto* e = app.add_subcommand("eval", "P-MPJPE, PCK and IoU of predictions against labels");
  e->add_option("dataset,--dataset", ev.dataset)->required();
  e->add_option("--pred", ev.pred, "output directory of fit or infer, or \"gt\"")->capture_default_str();
  e->add_option("--frames", ev.frames)->capture_default_str();
  e->add_option("--pck-alpha", ev.pck_alpha)->capture_default_str();
  e->add_option("--conf-threshold", ev.conf_threshold)->capture_default_str();
  e->add_option("--seed", eval_seed)->capture_default_str();
  e->add_option("--occlude", ev.aug.occlude);
  e->add_option("--jitter", ev.aug.jitter);
  e->add_option("--out", ev.out)->required();
  e->add_option("--model", model_name);

  SpecArgs sp;
  auto* g = app.add_subcommand("spectrogram", "log-mel spectrogram of a WAVE file");
  g->add_option("wav,--wav", sp.wav)->required();
  g->add_option("--n-fft", sp.mel.n_fft)->capture_default_str();
  g->add_option("--hop", sp.mel.hop)->capture_default_str();
  g->add_option("--mels", sp.mel.n_mels)->capture_default_str();
  g->add_option("--fmin", sp.mel.fmin)->capture_default_str();
  g->add_option("--fmax", sp.mel.fmax)->capture_default_str();
  g->add_option("--highpass", sp.mel.highpass_hz)->capture_default_str();
  g->add_option("--out", sp.out)->required();

  OccludeArgs oc;
  auto* o = app.add_subcommand("occlude", "write an occluded or color-jittered copy of a dataset");
  o->add_option("dataset,--dataset", oc.dataset)->required();
  o->add_option("--occlude", oc.aug.occlude);
  o->add_option("--jitter", oc.aug.jitter);
  o->add_option("--seed", oc.seed)->capture_default_str();
  o->add_option("--out", oc.out)->required();
  o->add_option("--model", model_name);

  int gc_configs = 20;
  std::uint64_t gc_seed = 0;
  std::string gc_out;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every differentiable stage");
  gc->add_option("--configs", gc_configs, "random configurations per operation")->capture_default_str();
  gc->add_option("--seed", gc_seed)->capture_default_str();
  gc->add_option("--out", gc_out);
  gc->add_option("--model", model_name);

  std::vector<std::string> report_inputs;
  std::string report_out;
  auto* r = app.add_subcommand("report", "tables and SVG plots from metric and loss CSVs");
  r->add_option("inputs", report_inputs, "csv files, optionally label=path")->required();
  r->add_option("--out", report_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    std::cerr << "error: " << ex.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*s) return run_synth(synth, model_name);
    if (*f) return run_fit(fit, model_name);
    if (*t) return run_train(tr, model_name);
    if (*in) {
      inf.aug.seed = infer_seed;
      return run_infer(inf, model_name);
    }
    if (*e) {
      ev.aug.seed = eval_seed;
      return run_eval(ev, model_name);
    }
    if (*g) return run_spectrogram(sp);
    if (*o) return run_occlude(oc, model_name);
    if (*gc) return run_gradcheck(gc_configs, gc_seed, model_name, gc_out);
    if (*r) return run_report(report_inputs, report_out);
  } catch (const Error& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  }
  return 2;
}
