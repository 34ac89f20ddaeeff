#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "quadfit/audio.hpp"
#include "quadfit/body_model.hpp"
#include "quadfit/camera.hpp"
#include "quadfit/image.hpp"
#include "quadfit/render.hpp"

namespace quadfit {

// Axis-aligned box in full-frame pixels; contains() treats it as closed.
struct Rect {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return width() * height(); }
  bool contains(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
};

double rect_iou(const Rect& a, const Rect& b);
Rect rect_union(const Rect& a, const Rect& b);
Rect rect_of(const BBox& box);
// Smallest square box containing r, scaled by pad around its center.
BBox square_bbox(const Rect& r, double frame_w, double frame_h, double pad = 1.0);
// Tight rectangle around points (N x 2) whose confidence is >= threshold.
Rect rect_from_points(std::span<const double> points, std::span<const double> conf, double threshold = 0.5);
// Tight rectangle around mask pixels >= 0.5, in the mask's own pixels.
Rect rect_from_mask(const Mask& mask);

inline constexpr double kFuseGamma = 2.78;

// Keypoint box when the boxes are disjoint or the keypoint box is more than
// gamma times larger than the silhouette box; otherwise their union.
Rect fuse_bbox(const Rect& kp, const Rect& sil, double gamma = kFuseGamma);
BBox fuse_bbox(const BBox& kp, const BBox& sil, double gamma = kFuseGamma);

struct Crop {
  Image image;
  bool clamped = false;  // the box reached outside the frame; zeros fill the gap
};

// Bilinear resample of the square box to res x res. Pixel centers follow the
// (x + 0.5, y + 0.5) convention, so the maps in camera.hpp apply unchanged.
Crop crop_resize(const Image& frame, const BBox& box, int res = kCropRes);

// Area-average resample of a mask to res x res.
Mask downsample_mask(const Mask& mask, int res);

// T frames of one video. Keypoints are full-frame pixels; crops and masks
// live in each frame's crop.
struct ClipRecord {
  std::string sequence;
  int start = 0;  // index of the first frame within its sequence
  double fps = 25.0;
  std::vector<BBox> boxes;          // T
  std::vector<double> keypoints2d;  // T x K x 2
  std::vector<double> confidence;   // T x K
  std::vector<Image> crops;         // T, or empty
  std::vector<Mask> masks;          // T
  std::vector<bool> mask_valid;     // T
  std::optional<audio::Window> audio;
  std::optional<PoseState> gt_pose;
  std::vector<double> gt_keypoints3d;  // T x K x 3, or empty

  int frames() const { return static_cast<int>(boxes.size()); }
  int keypoints() const { return boxes.empty() ? 0 : static_cast<int>(confidence.size() / boxes.size()); }
};

void validate_clip(const ClipRecord& clip);

// A whole video plus its soundtrack; clips are windows into it.
struct Sequence {
  ClipRecord all;
  std::optional<audio::AudioTrack> audio;
  std::string gait;  // empty for non-synthetic data
};

// Sliding windows of length T with stride 1. Audio windows are cut from one
// spectrogram of the whole track.
std::vector<ClipRecord> make_clips(const Sequence& seq, int frames, const audio::MelConfig& mel = {});

// Per-sequence directory layout:
//   meta.json          {"format": "quadfit-seq/1", fps, frame_w, frame_h, frames, keypoints, ...}
//   frames/NNNNNN.ppm  224 x 224 crops (optional)
//   masks/NNNNNN.pgm   crop-space silhouettes; a missing file marks the frame invalid
//   keypoints.csv      frame,k,x,y,conf
//   bboxes.csv         frame,cx,cy,b
//   audio.wav          optional
//   gt_pose.json, gt_keypoints3d.csv   optional ground truth
void write_sequence(const Sequence& seq, const std::filesystem::path& dir);
Sequence read_sequence(const std::filesystem::path& dir);
// A sequence directory, or a root whose subdirectories are sequences.
std::vector<ClipRecord> load_sequence(const std::filesystem::path& root, int frames = 5,
                                      const audio::MelConfig& mel = {});

// "quadfit-pose/1" JSON.
void save_pose(const PoseState& pose, const std::filesystem::path& path);
PoseState load_pose(const std::filesystem::path& path);

enum class OccluderKind { patch, human_box };

struct OccluderSpec {
  OccluderKind kind = OccluderKind::patch;
  // Keypoint region tag ("head", "legs", "front_left_leg", ...) or "whole"
  // for the entire bounding box.
  std::string anchor = "whole";
  // Minimum occluder area as a fraction of the bbox area.
  double size = 0.4;
  std::uint64_t seed = 0;
  // Source for patch occluders; a seeded texture when empty.
  Image source;
};

void validate_occluder(const OccluderSpec& spec);
// Occluder rectangle for one frame, in full-frame pixels.
Rect occluder_rect(const ClipRecord& clip, int t, const MeshModel& model, const OccluderSpec& spec);
// Paints the occluder into the crops and zeroes the confidence of every
// keypoint it covers. Masks and ground truth are left alone.
ClipRecord apply_occluder(const ClipRecord& clip, const MeshModel& model, const OccluderSpec& spec);

struct JitterParams {
  double brightness = 0.0;  // added to every channel, in [0, 1] units
  double contrast = 1.0;    // scale about the mean gray level
  double saturation = 1.0;  // 0 gives gray
  double hue = 0.0;         // rotation about the gray axis, radians
};

JitterParams draw_jitter(double strength, std::uint64_t seed);
Image adjust(const Image& image, const JitterParams& p);
// One parameter draw per clip, applied to every crop.
ClipRecord color_jitter(const ClipRecord& clip, double strength, std::uint64_t seed);

}  // namespace quadfit
