#include "quadfit/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "quadfit/camera.hpp"
#include "quadfit/error.hpp"
#include "quadfit/fit.hpp"
#include "quadfit/optim.hpp"

namespace quadfit {

using nlohmann::json;

namespace {

constexpr const char* kNetFormat = "quadfit-net/1";

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

bool uses_audio(Variant v) { return v != Variant::image_only; }

class LayoutBuilder {
 public:
  explicit LayoutBuilder(RegressorParams& p) : p_(p) {}
  void add(const std::string& name, int rows, int cols) {
    p_.layout.push_back({name, rows, cols, size_});
    size_ += static_cast<size_t>(rows) * static_cast<size_t>(cols);
  }
  void dense(const std::string& prefix, int in, int out) {
    add(prefix + ".w", in, out);
    add(prefix + ".b", 1, out);
  }
  size_t size() const { return size_; }

 private:
  RegressorParams& p_;
  size_t size_ = 0;
};

void encoder_layout(LayoutBuilder& b, const std::string& prefix, int in, const EncoderConfig& cfg) {
  int width = in;
  for (size_t i = 0; i < cfg.hidden.size(); ++i) {
    b.dense(prefix + ".l" + std::to_string(i), width, cfg.hidden[i]);
    width = cfg.hidden[i];
  }
  b.dense(prefix + ".l" + std::to_string(cfg.hidden.size()), width, cfg.feature_dim);
  for (const char* c : {".conv1", ".conv2"}) {
    b.dense(prefix + c, cfg.kernel * cfg.feature_dim, cfg.feature_dim);
    if (cfg.group_norm) {
      b.add(prefix + c + ".gn_scale", 1, cfg.feature_dim);
      b.add(prefix + c + ".gn_shift", 1, cfg.feature_dim);
    }
  }
}

// Tensor list for p's config, variant and model dimensions; returns the
// total parameter count.
size_t build_layout(RegressorParams& p) {
  const EncoderConfig& cfg = p.config;
  const int d = cfg.feature_dim, h = cfg.head_hidden, s = p.shape_dim, pd = p.pose_dim;
  p.layout.clear();
  LayoutBuilder b(p);
  encoder_layout(b, "vis", cfg.visual_dim(), cfg);
  if (uses_audio(p.variant)) encoder_layout(b, "aud", cfg.audio_dim(), cfg);
  if (p.variant == Variant::early_fusion) {
    b.dense("fuse.l0", 2 * d, d);
    b.dense("fuse.l1", d, d);
  }
  b.dense("psi.l0", d + s + 3, h);
  b.dense("psi.l1", h, s + 3);
  b.dense("phi.l0", d + pd, h);
  b.dense("phi.l1", h, pd);
  b.dense("glob", d, 3);
  return b.size();
}

ad::Var dense(const NetView& net, const std::string& prefix, const ad::Var& x) {
  return ad::matmul(x, net[prefix + ".w"]) + net[prefix + ".b"];
}

ad::Var mlp(const NetView& net, const std::string& prefix, int layers, const ad::Var& x) {
  ad::Var h = x;
  for (int i = 0; i < layers; ++i) {
    h = dense(net, prefix + ".l" + std::to_string(i), h);
    if (i + 1 < layers) h = ad::relu(h);
  }
  return h;
}

// Zero-padded 1D convolution over the rows (time) of x.
ad::Var temporal_conv(const NetView& net, const std::string& prefix, const ad::Var& x, int kernel) {
  const int t = x.rows(), d = x.cols();
  const ad::Var w = net[prefix + ".w"];
  ad::Var out = net[prefix + ".b"];
  bool first = true;
  for (int j = 0; j < kernel; ++j) {
    const int o = j - kernel / 2;
    ad::Var shifted;
    if (o == 0) {
      shifted = x;
    } else if (std::abs(o) >= t) {
      continue;
    } else if (o > 0) {
      shifted = ad::concat_rows({ad::slice_rows(x, o, t - o), x.tape().zeros(o, d)});
    } else {
      shifted = ad::concat_rows({x.tape().zeros(-o, d), ad::slice_rows(x, 0, t + o)});
    }
    const ad::Var term = ad::matmul(shifted, ad::slice_rows(w, j * d, d));
    out = first ? term + out : out + term;
    first = false;
  }
  return out;
}

ad::Var group_norm(const NetView& net, const std::string& prefix, const ad::Var& x, int groups) {
  const int d = x.cols(), c = d / groups;
  std::vector<ad::Var> parts;
  for (int g = 0; g < groups; ++g) {
    const ad::Var xs = ad::slice_cols(x, g * c, c);
    const ad::Var centered = xs - ad::mean(xs);
    const ad::Var var = ad::mean(ad::square(centered));
    parts.push_back(centered * ad::pow(var + 1e-5, -0.5));
  }
  return ad::concat_cols(parts) * net[prefix + ".gn_scale"] + net[prefix + ".gn_shift"];
}

ad::Var encoder(const NetView& net, const std::string& prefix, const ad::Var& x) {
  const EncoderConfig& cfg = net.params().config;
  const ad::Var f = mlp(net, prefix, static_cast<int>(cfg.hidden.size()) + 1, x);
  ad::Var h = temporal_conv(net, prefix + ".conv1", f, cfg.kernel);
  if (cfg.group_norm) h = group_norm(net, prefix + ".conv1", h, cfg.groups);
  h = temporal_conv(net, prefix + ".conv2", ad::relu(h), cfg.kernel);
  if (cfg.group_norm) h = group_norm(net, prefix + ".conv2", h, cfg.groups);
  return f + h;
}

ad::Var rows_of(ad::Tape& tape, const std::vector<double>& row, int t) {
  std::vector<double> v;
  for (int i = 0; i < t; ++i) v.insert(v.end(), row.begin(), row.end());
  return tape.constant(std::move(v), t, static_cast<int>(row.size()));
}

std::vector<double> values_of(const ad::Var& v) { return {v.value().begin(), v.value().end()}; }

// The visual-branch pose as a flat fit-parameter vector.
ad::Var as_fit_params(const RegressedVars& r, const ad::Var& joints) {
  auto col = [](const ad::Var& v) { return ad::reshape(v, v.size(), 1); };
  return ad::concat_rows({col(r.beta), col(r.theta_global), col(joints), col(r.cam)});
}

PoseState to_pose(const RegressedVars& r) {
  PoseState p;
  p.beta = values_of(r.beta);
  p.theta_global = values_of(r.theta_global);
  p.theta_joints = values_of(r.theta_joints);
  p.cam_weak = values_of(r.cam);
  return p;
}

struct Forwarded {
  RegressedVars visual;
  std::optional<ad::Var> audio_joints;
};

Forwarded run(const NetView& net, const ClipRecord& clip, std::uint64_t noise_seed, bool want_audio_branch) {
  const RegressorParams& p = net.params();
  const EncoderConfig& cfg = p.config;
  if (clip.frames() != cfg.frames)
    throw Error(Errc::config_error, "clip has " + std::to_string(clip.frames()) + " frames, network expects " +
                                        std::to_string(cfg.frames));
  const auto vis = visual_inputs(clip, cfg, noise_seed);
  std::vector<double> aud;
  if (uses_audio(p.variant)) aud = audio_inputs(clip, cfg);
  if (p.variant == Variant::early_fusion && aud.empty()) throw Error(Errc::audio_required, "early fusion needs audio");
  const EncodedVars enc = encode_clip(net, vis, aud);
  Forwarded out;
  if (p.variant == Variant::early_fusion) {
    const ad::Var fused = mlp(net, "fuse", 2, ad::concat_cols({enc.visual, *enc.audio}));
    out.visual = ief_regress(net, enc.visual, ad::relu(fused), cfg.n_iter);
  } else {
    out.visual = ief_regress(net, enc.visual, enc.visual, cfg.n_iter);
  }
  if (p.variant == Variant::model_fusion && enc.audio && want_audio_branch)
    out.audio_joints = ief_joints(net, *enc.audio, cfg.n_iter);
  return out;
}

}  // namespace

Variant parse_variant(std::string_view name) {
  if (name == "image" || name == "image_only") return Variant::image_only;
  if (name == "early" || name == "early_fusion") return Variant::early_fusion;
  if (name == "model" || name == "model_fusion") return Variant::model_fusion;
  throw Error(Errc::config_error, "unknown variant " + std::string(name));
}

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::image_only: return "image_only";
    case Variant::early_fusion: return "early_fusion";
    case Variant::model_fusion: return "model_fusion";
  }
  return "image_only";
}

int EncoderConfig::visual_dim() const {
  return (visual == VisualInput::oracle ? 3 * keypoints : crop_side * crop_side) + bbox_pad;
}

void validate_config(const EncoderConfig& c) {
  auto fail = [](const std::string& m) { throw Error(Errc::config_error, m); };
  if (c.frames <= 0 || c.keypoints <= 0 || c.crop_side <= 0 || c.mel_bins <= 0 || c.audio_width <= 0 ||
      c.feature_dim <= 0 || c.head_hidden <= 0)
    fail("dimensions must be positive");
  for (int h : c.hidden)
    if (h <= 0) fail("hidden sizes must be positive");
  if (c.bbox_pad < 3) fail("bbox_pad must hold the 3 bbox values");
  if (c.kernel <= 0 || c.kernel % 2 == 0) fail("kernel must be odd");
  if (c.audio_width % c.frames != 0) fail("audio_width must be a multiple of frames");
  if (c.group_norm && (c.groups <= 0 || c.feature_dim % c.groups != 0)) fail("groups must divide feature_dim");
  if (!(c.keypoint_noise >= 0.0)) fail("keypoint_noise must be non-negative");
  if (c.n_iter < 0) fail("n_iter must be non-negative");
}

const Tensor& RegressorParams::tensor(std::string_view name) const {
  for (const auto& t : layout)
    if (t.name == name) return t;
  throw Error(Errc::config_error, "no tensor " + std::string(name));
}

bool RegressorParams::has(std::string_view name) const {
  return std::any_of(layout.begin(), layout.end(), [&](const Tensor& t) { return t.name == name; });
}

RegressorParams init_params(const EncoderConfig& cfg, Variant variant, const MeshModel& model, std::uint64_t seed) {
  validate_config(cfg);
  validate_model(model);
  RegressorParams p;
  p.config = cfg;
  p.variant = variant;
  p.shape_dim = model.num_shape();
  p.pose_dim = model.pose_dim();
  if (model.num_keypoints() != cfg.keypoints) throw Error(Errc::config_error, "keypoint count differs from the model");
  p.values.assign(build_layout(p), 0.0);
  std::mt19937_64 rng(seed);
  for (const Tensor& t : p.layout) {
    if (t.rows == 1 && t.name.ends_with(".b")) continue;
    if (t.name.ends_with(".gn_shift")) continue;
    if (t.name.ends_with(".gn_scale")) {
      std::fill_n(p.values.begin() + static_cast<long>(t.offset), t.cols, 1.0);
      continue;
    }
    const bool last = t.name == "psi.l1.w" || t.name == "phi.l1.w" || t.name == "glob.w";
    const double bound = std::sqrt(6.0 / t.rows) * (last ? 0.01 : 1.0);
    std::uniform_real_distribution<double> u(-bound, bound);
    for (int i = 0; i < t.rows * t.cols; ++i) p.values[t.offset + static_cast<size_t>(i)] = u(rng);
  }
  p.mean_cam = {std::log(0.6), 0.0, 0.0};
  p.mean_pose = model.pose_mean;
  return p;
}

std::vector<double> visual_inputs(const ClipRecord& clip, const EncoderConfig& cfg, std::uint64_t noise_seed) {
  validate_config(cfg);
  const int nt = clip.frames();
  std::vector<double> out;
  out.reserve(static_cast<size_t>(nt * cfg.visual_dim()));
  if (cfg.visual == VisualInput::oracle) {
    if (clip.keypoints() != cfg.keypoints) throw Error(Errc::config_error, "keypoint count differs from the config");
    std::mt19937_64 rng(mix(noise_seed));
    std::normal_distribution<double> n(0.0, 1.0);
    for (int t = 0; t < nt; ++t) {
      const BBox& box = clip.boxes[static_cast<size_t>(t)];
      for (int k = 0; k < cfg.keypoints; ++k) {
        const size_t i = static_cast<size_t>(t * cfg.keypoints + k);
        const auto q = full_to_crop({clip.keypoints2d[2 * i], clip.keypoints2d[2 * i + 1]}, box);
        const double nx = cfg.keypoint_noise * n(rng), ny = cfg.keypoint_noise * n(rng);
        const double c = clip.confidence[i];
        const bool seen = c > 0.0;
        out.push_back(seen ? 2.0 * q[0] / kCropRes - 1.0 + nx : 0.0);
        out.push_back(seen ? 2.0 * q[1] / kCropRes - 1.0 + ny : 0.0);
        out.push_back(c);
      }
      const auto info = bbox_info(box);
      out.insert(out.end(), info.begin(), info.end());
      out.insert(out.end(), static_cast<size_t>(cfg.bbox_pad - 3), 0.0);
    }
  } else {
    if (static_cast<int>(clip.crops.size()) != nt) throw Error(Errc::config_error, "crop input needs one crop per frame");
    for (int t = 0; t < nt; ++t) {
      const Image& im = clip.crops[static_cast<size_t>(t)];
      Mask gray(im.width, im.height);
      for (int y = 0; y < im.height; ++y)
        for (int x = 0; x < im.width; ++x) {
          double v = 0.0;
          for (int ch = 0; ch < im.channels; ++ch) v += im.at(x, y, ch);
          gray.at(x, y) = v / (255.0 * im.channels);
        }
      const Mask small = downsample_mask(gray, cfg.crop_side);
      for (double v : small.values) out.push_back(v - 0.5);
      const auto info = bbox_info(clip.boxes[static_cast<size_t>(t)]);
      out.insert(out.end(), info.begin(), info.end());
      out.insert(out.end(), static_cast<size_t>(cfg.bbox_pad - 3), 0.0);
    }
  }
  return out;
}

std::vector<double> audio_inputs(const ClipRecord& clip, const EncoderConfig& cfg) {
  validate_config(cfg);
  if (!clip.audio) return {};
  const audio::Window& w = *clip.audio;
  if (w.n_mels != cfg.mel_bins || w.width != cfg.audio_width)
    throw Error(Errc::config_error, "audio window is " + std::to_string(w.n_mels) + " x " + std::to_string(w.width) +
                                        ", network expects " + std::to_string(cfg.mel_bins) + " x " +
                                        std::to_string(cfg.audio_width));
  const int per = cfg.audio_width / cfg.frames;
  std::vector<double> out;
  out.reserve(static_cast<size_t>(cfg.frames * cfg.audio_dim()));
  for (int t = 0; t < cfg.frames; ++t)
    for (int m = 0; m < w.n_mels; ++m)
      for (int c = 0; c < per; ++c) out.push_back(w.values[static_cast<size_t>(m * w.width + t * per + c)]);
  return out;
}

NetView::NetView(ad::Tape& tape, const RegressorParams& params, bool trainable) : tape_(tape), params_(params) {
  const int n = static_cast<int>(params.values.size());
  flat_ = trainable ? tape.variable(params.values, n, 1) : tape.constant(params.values, n, 1);
}

NetView::NetView(ad::Tape& tape, const RegressorParams& params, ad::Var flat)
    : tape_(tape), params_(params), flat_(std::move(flat)) {
  if (flat_.rows() != static_cast<int>(params.values.size()) || flat_.cols() != 1)
    throw Error(Errc::shape_error, "flat parameter vector does not match the layout");
}

ad::Var NetView::operator[](std::string_view name) const {
  const Tensor& t = params_.tensor(name);
  return ad::reshape(ad::slice_rows(flat_, static_cast<int>(t.offset), t.rows * t.cols), t.rows, t.cols);
}

EncodedVars encode_clip(const NetView& net, const std::vector<double>& visual, const std::vector<double>& audio) {
  const RegressorParams& p = net.params();
  const EncoderConfig& cfg = p.config;
  ad::Tape& tape = net.tape();
  if (visual.size() != static_cast<size_t>(cfg.frames * cfg.visual_dim()))
    throw Error(Errc::config_error, "visual input size");
  EncodedVars out;
  out.visual = encoder(net, "vis", tape.constant(visual, cfg.frames, cfg.visual_dim()));
  if (uses_audio(p.variant) && !audio.empty()) {
    if (audio.size() != static_cast<size_t>(cfg.frames * cfg.audio_dim())) throw Error(Errc::config_error, "audio input size");
    std::vector<double> a(audio);
    for (double& v : a) v = (v - p.audio_shift) / p.audio_scale;
    out.audio = encoder(net, "aud", tape.constant(std::move(a), cfg.frames, cfg.audio_dim()));
  }
  return out;
}

Encoded encode_clip(const ClipRecord& clip, const RegressorParams& params, std::uint64_t noise_seed) {
  ad::Tape tape;
  const NetView net(tape, params, false);
  const EncodedVars e = encode_clip(net, visual_inputs(clip, params.config, noise_seed),
                                    uses_audio(params.variant) ? audio_inputs(clip, params.config) : std::vector<double>{});
  Encoded out;
  out.visual = values_of(e.visual);
  if (e.audio) out.audio = values_of(*e.audio);
  return out;
}

ad::Var ief_joints(const NetView& net, const ad::Var& pose_features, int n_iter) {
  ad::Var theta = rows_of(net.tape(), net.params().mean_pose, pose_features.rows());
  for (int i = 0; i < n_iter; ++i) theta = theta + mlp(net, "phi", 2, ad::concat_cols({pose_features, theta}));
  return theta;
}

RegressedVars ief_regress(const NetView& net, const ad::Var& visual, const ad::Var& pose_features, int n_iter) {
  const RegressorParams& p = net.params();
  const int t = visual.rows(), s = p.shape_dim;
  std::vector<double> start(static_cast<size_t>(s), 0.0);
  start.insert(start.end(), p.mean_cam.begin(), p.mean_cam.end());
  ad::Var state = rows_of(net.tape(), start, t);
  for (int i = 0; i < n_iter; ++i) state = state + mlp(net, "psi", 2, ad::concat_cols({visual, state}));

  RegressedVars r;
  r.beta = ad::reshape(ad::sum_rows(ad::slice_cols(state, 0, s)) * (1.0 / t), s, 1);
  r.cam = ad::concat_cols({ad::exp(ad::slice_cols(state, s, 1)), ad::slice_cols(state, s + 1, 2)});
  r.theta_global = dense(net, "glob", visual);
  r.theta_joints = ief_joints(net, pose_features, n_iter);
  return r;
}

Prediction forward(const ClipRecord& clip, const RegressorParams& params, std::uint64_t noise_seed) {
  ad::Tape tape;
  const NetView net(tape, params, false);
  const Forwarded f = run(net, clip, noise_seed, true);
  Prediction out;
  out.pose = to_pose(f.visual);
  if (f.audio_joints) out.audio_joints = values_of(*f.audio_joints);
  return out;
}

ad::Var clip_loss(const NetView& net, const ClipRecord& clip, const MeshModel& model, const LossWeights& weights,
                  const TrainConfig& config, std::uint64_t noise_seed, LossReport* visual_report) {
  const bool audio_branch = net.params().variant == Variant::model_fusion && config.audio_loss;
  const Forwarded f = run(net, clip, noise_seed, audio_branch);
  FitOptions fo;
  fo.sil_res = config.sil_res;
  fo.sil_sigma = config.sil_sigma;
  const SequenceObjective objective(clip, model, weights, fo);
  ad::Tape& tape = net.tape();
  ad::Var loss = objective(tape, as_fit_params(f.visual, f.visual.theta_joints), visual_report);
  // Equal weight on the pose seen through the audio channel.
  if (f.audio_joints) loss = loss + objective(tape, as_fit_params(f.visual, *f.audio_joints));
  return loss;
}

TrainResult train(const std::vector<ClipRecord>& clips, Variant variant, const MeshModel& model,
                  const LossWeights& weights, const TrainConfig& config) {
  if (clips.empty()) throw Error(Errc::invalid_argument, "training needs at least one clip");
  if (config.epochs < 0 || config.batch <= 0 || !(config.lr > 0.0))
    throw Error(Errc::config_error, "epochs, batch and lr must be positive");
  validate_weights(weights);
  TrainResult result;
  RegressorParams& p = result.params;
  p = init_params(config.encoder, variant, model, config.seed);

  // Input statistics and the mean camera come from the training clips.
  if (uses_audio(variant)) {
    double sum = 0.0, sq = 0.0;
    size_t n = 0;
    for (const auto& c : clips) {
      const auto a = audio_inputs(c, p.config);
      if (a.empty() && variant == Variant::early_fusion) throw Error(Errc::audio_required, "clip " + c.sequence);
      for (double v : a) sum += v, sq += v * v, ++n;
    }
    if (n > 0) {
      p.audio_shift = sum / static_cast<double>(n);
      p.audio_scale = std::max(1e-6, std::sqrt(std::max(0.0, sq / static_cast<double>(n) - p.audio_shift * p.audio_shift)));
    }
  }
  {
    std::array<double, 3> acc{0.0, 0.0, 0.0};
    int n = 0;
    for (const auto& c : clips) {
      const PoseState init = initial_pose(c, model);
      for (int t = 0; t < init.frames(); ++t, ++n) {
        const auto cam = init.cam(t);
        acc[0] += std::log(cam[0]), acc[1] += cam[1], acc[2] += cam[2];
      }
    }
    for (int i = 0; i < 3; ++i) p.mean_cam[static_cast<size_t>(i)] = acc[static_cast<size_t>(i)] / n;
  }

  auto noise_seed = [&](int epoch, size_t clip) {
    return mix(config.seed ^ mix(static_cast<std::uint64_t>(epoch) * 1000003ULL + clip));
  };
  auto evaluate = [&](int epoch, const std::vector<double>& totals, const std::vector<LossReport>& reports) {
    EpochReport e;
    e.epoch = epoch;
    const double n = static_cast<double>(reports.size());
    for (size_t i = 0; i < reports.size(); ++i) {
      e.total += totals[i] / n;
      e.mean.l_kp += reports[i].l_kp / n;
      e.mean.l_sil += reports[i].l_sil / n;
      e.mean.l_smooth += reports[i].l_smooth / n;
      e.mean.l_prior += reports[i].l_prior / n;
      e.mean.total += reports[i].total / n;
    }
    return e;
  };

  {
    std::vector<double> totals;
    std::vector<LossReport> reports;
    for (size_t i = 0; i < clips.size(); ++i) {
      ad::Tape tape;
      const NetView net(tape, p, false);
      LossReport rep;
      totals.push_back(clip_loss(net, clips[i], model, weights, config, noise_seed(0, i), &rep).item());
      reports.push_back(rep);
    }
    result.trace.push_back(evaluate(0, totals, reports));
  }

  opt::Adam adam(p.values.size(), {.lr = config.lr});
  std::mt19937_64 rng(mix(config.seed + 17));
  std::vector<size_t> order(clips.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<double> totals;
    std::vector<LossReport> reports;
    for (size_t first = 0; first < order.size(); first += static_cast<size_t>(config.batch)) {
      const size_t last = std::min(order.size(), first + static_cast<size_t>(config.batch));
      ad::Tape tape;
      const NetView net(tape, p, true);
      ad::Var loss;
      for (size_t j = first; j < last; ++j) {
        LossReport rep;
        const ad::Var l = clip_loss(net, clips[order[j]], model, weights, config, noise_seed(epoch, order[j]), &rep);
        if (!std::isfinite(l.item()))
          throw Error(Errc::diverged, "epoch " + std::to_string(epoch) + ", clip " + std::to_string(order[j]));
        totals.push_back(l.item());
        reports.push_back(rep);
        loss = j == first ? l : loss + l;
      }
      loss = loss * (1.0 / static_cast<double>(last - first));
      tape.backward(loss);
      const auto g = tape.grad(net.flat());
      if (!std::all_of(g.begin(), g.end(), [](double v) { return std::isfinite(v); }))
        throw Error(Errc::diverged, "epoch " + std::to_string(epoch) + ": non-finite gradient");
      adam.step(p.values, g);
    }
    result.trace.push_back(evaluate(epoch, totals, reports));
  }
  return result;
}

void save_params(const RegressorParams& p, const std::filesystem::path& path) {
  const EncoderConfig& c = p.config;
  json tensors = json::array();
  for (const Tensor& t : p.layout)
    tensors.push_back({{"name", t.name},
                       {"rows", t.rows},
                       {"cols", t.cols},
                       {"values", std::vector<double>(p.values.begin() + static_cast<long>(t.offset),
                                                      p.values.begin() + static_cast<long>(t.offset) + t.rows * t.cols)}});
  const json doc{{"format", kNetFormat},
                 {"variant", variant_name(p.variant)},
                 {"config",
                  {{"visual", c.visual == VisualInput::oracle ? "oracle" : "crop"},
                   {"frames", c.frames},
                   {"keypoints", c.keypoints},
                   {"crop_side", c.crop_side},
                   {"bbox_pad", c.bbox_pad},
                   {"mel_bins", c.mel_bins},
                   {"audio_width", c.audio_width},
                   {"hidden", c.hidden},
                   {"feature_dim", c.feature_dim},
                   {"head_hidden", c.head_hidden},
                   {"kernel", c.kernel},
                   {"group_norm", c.group_norm},
                   {"groups", c.groups},
                   {"keypoint_noise", c.keypoint_noise},
                   {"n_iter", c.n_iter}}},
                 {"shape_dim", p.shape_dim},
                 {"pose_dim", p.pose_dim},
                 {"mean_cam", p.mean_cam},
                 {"mean_pose", p.mean_pose},
                 {"audio_shift", p.audio_shift},
                 {"audio_scale", p.audio_scale},
                 {"tensors", tensors}};
  std::ofstream out(path);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  out << doc.dump() << '\n';
  if (!out) throw Error(Errc::io_error, "write failed: " + path.string());
}

RegressorParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  try {
    const json doc = json::parse(in);
    if (doc.at("format") != kNetFormat) throw Error(Errc::config_error, "not a quadfit-net/1 file: " + path.string());
    RegressorParams p;
    const json& c = doc.at("config");
    p.config.visual = c.at("visual") == "crop" ? VisualInput::crop : VisualInput::oracle;
    p.config.frames = c.at("frames");
    p.config.keypoints = c.at("keypoints");
    p.config.crop_side = c.at("crop_side");
    p.config.bbox_pad = c.at("bbox_pad");
    p.config.mel_bins = c.at("mel_bins");
    p.config.audio_width = c.at("audio_width");
    p.config.hidden = c.at("hidden").get<std::vector<int>>();
    p.config.feature_dim = c.at("feature_dim");
    p.config.head_hidden = c.at("head_hidden");
    p.config.kernel = c.at("kernel");
    p.config.group_norm = c.at("group_norm");
    p.config.groups = c.at("groups");
    p.config.keypoint_noise = c.at("keypoint_noise");
    p.config.n_iter = c.at("n_iter");
    validate_config(p.config);
    p.variant = parse_variant(doc.at("variant").get<std::string>());
    p.shape_dim = doc.at("shape_dim");
    p.pose_dim = doc.at("pose_dim");
    p.mean_cam = doc.at("mean_cam").get<std::vector<double>>();
    p.mean_pose = doc.at("mean_pose").get<std::vector<double>>();
    p.audio_shift = doc.at("audio_shift");
    p.audio_scale = doc.at("audio_scale");
    if (p.mean_cam.size() != 3 || static_cast<int>(p.mean_pose.size()) != p.pose_dim)
      throw Error(Errc::config_error, "mean parameter sizes");
    for (const json& t : doc.at("tensors")) {
      Tensor tensor{t.at("name"), t.at("rows"), t.at("cols"), p.values.size()};
      const auto v = t.at("values").get<std::vector<double>>();
      if (v.size() != static_cast<size_t>(tensor.rows) * static_cast<size_t>(tensor.cols))
        throw Error(Errc::config_error, "tensor " + tensor.name + " size");
      p.values.insert(p.values.end(), v.begin(), v.end());
      p.layout.push_back(tensor);
    }
    // The layout must be the one this configuration builds.
    RegressorParams ref = p;
    build_layout(ref);
    if (ref.layout.size() != p.layout.size()) throw Error(Errc::config_error, "tensor list does not match the variant");
    for (size_t i = 0; i < ref.layout.size(); ++i)
      if (ref.layout[i].name != p.layout[i].name || ref.layout[i].rows != p.layout[i].rows ||
          ref.layout[i].cols != p.layout[i].cols)
        throw Error(Errc::config_error, "tensor " + p.layout[i].name + " does not match the variant");
    for (double v : p.values)
      if (!std::isfinite(v)) throw Error(Errc::config_error, "non-finite weight");
    return p;
  } catch (const json::exception& e) {
    throw Error(Errc::config_error, path.string() + ": " + e.what());
  }
}

Stitched stitch_middle(const std::vector<int>& starts, const std::vector<PoseState>& poses, int sequence_frames) {
  if (starts.size() != poses.size()) throw Error(Errc::shape_error, "one start per clip");
  Stitched out;
  out.frames.resize(static_cast<size_t>(std::max(0, sequence_frames)));
  for (size_t i = 0; i < poses.size(); ++i) {
    const PoseState& p = poses[i];
    const int mid = p.frames() / 2, f = starts[i] + mid;
    if (f < 0 || f >= sequence_frames) throw Error(Errc::shape_error, "clip outside the sequence");
    const int pd = static_cast<int>(p.theta_joints.size()) / std::max(1, p.frames());
    FramePose fp;
    fp.beta = p.beta;
    std::copy_n(p.theta_global.begin() + 3 * mid, 3, fp.theta_global.begin());
    const auto j = p.joints(mid, pd);
    fp.theta_joints.assign(j.begin(), j.end());
    std::copy_n(p.cam_weak.begin() + 3 * mid, 3, fp.cam.begin());
    out.frames[static_cast<size_t>(f)] = std::move(fp);
  }
  out.missing = static_cast<int>(std::count_if(out.frames.begin(), out.frames.end(), [](const auto& f) { return !f; }));
  return out;
}

std::vector<double> pose_keypoints3d(const MeshModel& model, const PoseState& pose) {
  std::vector<double> out;
  for (int t = 0; t < pose.frames(); ++t) {
    const auto k = regress_keypoints3d(pose_mesh(model, pose.beta, pose.global(t), pose.joints(t, model.pose_dim())), model);
    out.insert(out.end(), k.begin(), k.end());
  }
  return out;
}

}  // namespace quadfit
