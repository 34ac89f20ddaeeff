#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

#include "quadfit/body_model.hpp"
#include "quadfit/dataset.hpp"

namespace quadfit {

enum class Gait { walk, trot, canter };

Gait parse_gait(std::string_view name);
std::string_view gait_name(Gait gait);
// Phase offsets of the front-left, front-right, hind-left and hind-right legs.
std::array<double, 4> gait_phases(Gait gait);

// Per-sequence motion parameters, drawn from the seed.
struct GaitParams {
  Gait gait = Gait::trot;
  double stride_hz = 1.5;
  double phase0 = 0.0;
  double swing = 0.35;    // hip/shoulder swing amplitude, radians
  double knee = 0.6;      // peak knee flexion during swing
  double head = 0.05;     // head nod amplitude
  double yaw = 0.0;       // heading relative to a side view
  std::vector<double> beta;
};

GaitParams draw_gait_params(const MeshModel& model, Gait gait, std::uint64_t seed);

// Leg phase at time t; a hoof is lowest when its phase is a multiple of 2 pi.
double leg_phase(const GaitParams& p, int leg, double t);
// (J-1) x 3 joint rotations at continuous time t.
std::vector<double> gait_joint_pose(const MeshModel& model, const GaitParams& p, double t);
std::array<double, 3> gait_global_pose(const GaitParams& p, double t);

struct Contact {
  double time;
  int leg;
};
// Hoof-ground contacts in [0, duration), sorted by time.
std::vector<Contact> contact_times(const GaitParams& p, double duration);

struct SynthConfig {
  Gait gait = Gait::trot;
  int frames = 5;
  double fps = 25.0;
  std::uint64_t seed = 0;
  double frame_w = 1920.0;
  double frame_h = 1080.0;
  int crop_res = kCropRes;
  bool crops = true;
  bool audio = true;
  double sample_rate = 44100.0;
};

// A fully labelled sequence: ground-truth pose and 3D keypoints, projected
// 2D keypoints (confidence 1), hard silhouettes, rendered crops and a
// soundtrack with a hoof-impact burst at every contact.
Sequence synth_sequence(const MeshModel& model, const SynthConfig& config);
ClipRecord synth_gait(const MeshModel& model, Gait gait, int frames, double fps, std::uint64_t seed);

// Hoof-impact soundtrack for the given contacts.
audio::AudioTrack synth_audio(const std::vector<Contact>& contacts, double duration, double sample_rate,
                              std::uint64_t seed);

// Shaded render of the posed mesh into a res x res crop over a textured
// background.
Image render_crop(const MeshModel& model, std::span<const double> vertices, std::span<const double> gamma_crop,
                  int res, std::uint64_t seed);

// The toy quadruped with its pose prior refitted to sampled gait poses.
MeshModel bundled_toy_model();

}  // namespace quadfit
