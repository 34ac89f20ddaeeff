#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "quadfit/autodiff.hpp"
#include "quadfit/body_model.hpp"
#include "quadfit/dataset.hpp"
#include "quadfit/losses.hpp"

namespace quadfit {

enum class Variant { image_only, early_fusion, model_fusion };

// Accepts "image", "early", "model" and the full names.
Variant parse_variant(std::string_view name);
std::string_view variant_name(Variant v);

enum class VisualInput {
  oracle,  // noisy ground-truth 2D keypoints with their confidences
  crop,    // grayscale crop downsampled to crop_side x crop_side
};

struct EncoderConfig {
  VisualInput visual = VisualInput::oracle;
  int frames = 5;
  int keypoints = 17;
  int crop_side = 16;
  int bbox_pad = 32;  // bbox info is zero-padded to this length
  int mel_bins = 64;
  int audio_width = 20;  // spectrogram columns per clip
  std::vector<int> hidden = {128, 128};
  int feature_dim = 64;
  int head_hidden = 128;
  int kernel = 3;  // temporal convolution width
  bool group_norm = false;
  int groups = 32;
  double keypoint_noise = 0.01;  // oracle mode, in normalized crop units
  int n_iter = 3;

  int visual_dim() const;
  // Per-frame slice of the log-mel window.
  int audio_dim() const { return mel_bins * (audio_width / frames); }
};

void validate_config(const EncoderConfig& cfg);

// A named slice of the flat parameter vector.
struct Tensor {
  std::string name;
  int rows = 0;
  int cols = 0;
  size_t offset = 0;
};

struct RegressorParams {
  EncoderConfig config;
  Variant variant = Variant::image_only;
  int shape_dim = 0;
  int pose_dim = 0;
  std::vector<Tensor> layout;
  std::vector<double> values;
  // IEF starting point: (log s, px, py) and the mean joint pose.
  std::vector<double> mean_cam;
  std::vector<double> mean_pose;
  // Affine normalization of log-mel inputs.
  double audio_shift = 0.0;
  double audio_scale = 1.0;

  const Tensor& tensor(std::string_view name) const;
  bool has(std::string_view name) const;
};

// Fresh weights: He-uniform matrices and zero biases, final head layers
// scaled down so the first predictions stay near the mean.
RegressorParams init_params(const EncoderConfig& cfg, Variant variant, const MeshModel& model, std::uint64_t seed);

// Per-frame inputs. Visual is T x visual_dim; audio is T x audio_dim or
// empty when the clip has no audio window.
std::vector<double> visual_inputs(const ClipRecord& clip, const EncoderConfig& cfg, std::uint64_t noise_seed);
std::vector<double> audio_inputs(const ClipRecord& clip, const EncoderConfig& cfg);

// Weights materialized on a tape, either trainable or constant.
class NetView {
 public:
  NetView(ad::Tape& tape, const RegressorParams& params, bool trainable);
  // Uses flat (n x 1) in place of params.values.
  NetView(ad::Tape& tape, const RegressorParams& params, ad::Var flat);

  ad::Var operator[](std::string_view name) const;
  const ad::Var& flat() const { return flat_; }
  const RegressorParams& params() const { return params_; }
  ad::Tape& tape() const { return tape_; }

 private:
  ad::Tape& tape_;
  const RegressorParams& params_;
  ad::Var flat_;
};

struct EncodedVars {
  ad::Var visual;                // T x d
  std::optional<ad::Var> audio;  // T x d
};

// Dense encoder per frame, then one residual temporal-convolution block.
EncodedVars encode_clip(const NetView& net, const std::vector<double>& visual, const std::vector<double>& audio);

struct Encoded {
  std::vector<double> visual;                // T x d
  std::optional<std::vector<double>> audio;  // T x d
};
Encoded encode_clip(const ClipRecord& clip, const RegressorParams& params, std::uint64_t noise_seed = 0);

struct RegressedVars {
  ad::Var beta;          // S x 1
  ad::Var theta_global;  // T x 3
  ad::Var theta_joints;  // T x 3(J-1)
  ad::Var cam;           // T x 3 (s, px, py)
};

// Iterative error feedback from the mean parameters: psi refines shape and
// camera from the visual features, phi refines joints from pose_features,
// and the global rotation is a linear read-out of the visual features.
RegressedVars ief_regress(const NetView& net, const ad::Var& visual, const ad::Var& pose_features, int n_iter);

// Joint pose from phi alone, for the audio branch of model fusion.
ad::Var ief_joints(const NetView& net, const ad::Var& pose_features, int n_iter);

struct Prediction {
  PoseState pose;                                 // visual branch
  std::optional<std::vector<double>> audio_joints;  // model fusion with audio
};

// Throws "audio required" for early fusion on a clip without audio.
Prediction forward(const ClipRecord& clip, const RegressorParams& params, std::uint64_t noise_seed = 0);

struct TrainConfig {
  int epochs = 30;
  int batch = 8;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  EncoderConfig encoder;
  // The silhouette term is rendered only when the weight is non-zero.
  int sil_res = 32;
  double sil_sigma = 0.25;
  // Drops the audio-branch loss of model fusion (ablation).
  bool audio_loss = true;
};

struct EpochReport {
  int epoch = 0;
  LossReport mean;  // visual-branch terms averaged over clips
  double total = 0.0;  // training objective, including the audio branch
};

struct TrainResult {
  RegressorParams params;
  std::vector<EpochReport> trace;  // entry 0 is before any update
};

TrainResult train(const std::vector<ClipRecord>& clips, Variant variant, const MeshModel& model,
                  const LossWeights& weights, const TrainConfig& config);

// Training objective of one clip; exposed for gradient checks and ablations.
ad::Var clip_loss(const NetView& net, const ClipRecord& clip, const MeshModel& model, const LossWeights& weights,
                  const TrainConfig& config, std::uint64_t noise_seed, LossReport* visual_report = nullptr);

// "quadfit-net/1" JSON.
void save_params(const RegressorParams& params, const std::filesystem::path& path);
RegressorParams load_params(const std::filesystem::path& path);

// One prediction per frame from overlapping clips of one sequence, taking
// each clip's middle frame. The first and last T/2 frames have none.
struct FramePose {
  std::vector<double> beta;
  std::array<double, 3> theta_global{};
  std::vector<double> theta_joints;
  std::array<double, 3> cam{};
};
struct Stitched {
  std::vector<std::optional<FramePose>> frames;
  int missing = 0;
};
Stitched stitch_middle(const std::vector<int>& starts, const std::vector<PoseState>& poses, int sequence_frames);

// Posed 3D keypoints (T x K x 3) of a pose state.
std::vector<double> pose_keypoints3d(const MeshModel& model, const PoseState& pose);

}  // namespace quadfit
