#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "quadfit/dataset.hpp"
#include "quadfit/error.hpp"

namespace quadfit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kSeqFormat = "quadfit-seq/1";
constexpr const char* kPoseFormat = "quadfit-pose/1";

std::string frame_name(int t, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06d.%s", t, ext);
  return buf;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw Error(Errc::io_error, "cannot write " + p.string());
  out.precision(17);
  return out;
}

[[noreturn]] void corrupt(const fs::path& p, const std::string& why) {
  throw Error(Errc::corrupt_dataset, p.string() + ": " + why);
}

// Rows of a headed CSV as numbers; every row must have `cols` fields.
std::vector<std::vector<double>> read_csv(const fs::path& p, size_t cols) {
  std::ifstream in(p);
  if (!in) corrupt(p, "missing");
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        size_t used = 0;
        row.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        corrupt(p, "bad number '" + cell + "'");
      }
    }
    if (row.size() != cols) corrupt(p, "expected " + std::to_string(cols) + " columns");
    rows.push_back(std::move(row));
  }
  return rows;
}

template <typename T>
std::vector<T> slice(const std::vector<T>& v, size_t per_frame, int t0, int frames) {
  return {v.begin() + static_cast<std::ptrdiff_t>(per_frame * static_cast<size_t>(t0)),
          v.begin() + static_cast<std::ptrdiff_t>(per_frame * static_cast<size_t>(t0 + frames))};
}

}  // namespace

void validate_clip(const ClipRecord& c) {
  const size_t t = static_cast<size_t>(c.frames());
  if (t == 0) throw Error(Errc::shape_error, "clip has no frames");
  if (c.confidence.size() % t != 0 || c.keypoints2d.size() != 2 * c.confidence.size())
    throw Error(Errc::shape_error, "keypoints must be T x K x 2 with T x K confidences");
  if (c.masks.size() != t || c.mask_valid.size() != t) throw Error(Errc::shape_error, "one mask per frame");
  if (!c.crops.empty() && c.crops.size() != t) throw Error(Errc::shape_error, "one crop per frame");
  for (double v : c.confidence)
    if (!(v >= 0.0 && v <= 1.0)) throw Error(Errc::invalid_argument, "confidence outside [0, 1]");
  if (c.gt_pose && c.gt_pose->frames() != c.frames()) throw Error(Errc::shape_error, "ground truth pose length");
  if (!c.gt_keypoints3d.empty() && c.gt_keypoints3d.size() != 3 * c.confidence.size())
    throw Error(Errc::shape_error, "ground truth keypoints must be T x K x 3");
}

std::vector<ClipRecord> make_clips(const Sequence& seq, int frames, const audio::MelConfig& mel) {
  const ClipRecord& all = seq.all;
  validate_clip(all);
  if (frames <= 0) throw Error(Errc::invalid_argument, "clip length must be positive");
  std::optional<audio::Spectrogram> spec;
  if (seq.audio) spec = audio::log_mel(*seq.audio, mel);

  const size_t k = static_cast<size_t>(all.keypoints());
  std::vector<ClipRecord> clips;
  for (int t0 = 0; t0 + frames <= all.frames(); ++t0) {
    ClipRecord c;
    c.sequence = all.sequence;
    c.start = all.start + t0;
    c.fps = all.fps;
    c.boxes = slice(all.boxes, 1, t0, frames);
    c.keypoints2d = slice(all.keypoints2d, 2 * k, t0, frames);
    c.confidence = slice(all.confidence, k, t0, frames);
    if (!all.crops.empty()) c.crops = slice(all.crops, 1, t0, frames);
    c.masks = slice(all.masks, 1, t0, frames);
    c.mask_valid = slice(all.mask_valid, 1, t0, frames);
    if (spec) c.audio = audio::clip_window(*spec, all.fps, t0, frames);
    if (all.gt_pose) {
      const PoseState& g = *all.gt_pose;
      const size_t pd = g.theta_joints.size() / static_cast<size_t>(g.frames());
      c.gt_pose = PoseState{g.beta, slice(g.theta_global, 3, t0, frames), slice(g.theta_joints, pd, t0, frames),
                            slice(g.cam_weak, 3, t0, frames)};
    }
    if (!all.gt_keypoints3d.empty()) c.gt_keypoints3d = slice(all.gt_keypoints3d, 3 * k, t0, frames);
    clips.push_back(std::move(c));
  }
  return clips;
}

void save_pose(const PoseState& pose, const fs::path& path) {
  const json doc{{"format", kPoseFormat},       {"frames", pose.frames()},
                 {"beta", pose.beta},           {"theta_global", pose.theta_global},
                 {"theta_joints", pose.theta_joints}, {"cam_weak", pose.cam_weak}};
  auto out = open_out(path);
  out << doc.dump(1) << '\n';
}

PoseState load_pose(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  try {
    const json doc = json::parse(in);
    if (doc.value("format", std::string()) != kPoseFormat) throw Error(Errc::io_error, path.string() + ": not a pose file");
    PoseState p{doc.at("beta").get<std::vector<double>>(), doc.at("theta_global").get<std::vector<double>>(),
                doc.at("theta_joints").get<std::vector<double>>(), doc.at("cam_weak").get<std::vector<double>>()};
    const size_t t = doc.at("frames").get<size_t>();
    if (t == 0 || p.cam_weak.size() != 3 * t || p.theta_global.size() != 3 * t || p.theta_joints.size() % t != 0)
      throw Error(Errc::shape_error, path.string() + ": inconsistent pose arrays");
    return p;
  } catch (const json::exception& e) {
    throw Error(Errc::io_error, path.string() + ": " + e.what());
  }
}

void write_sequence(const Sequence& seq, const fs::path& dir) {
  const ClipRecord& c = seq.all;
  validate_clip(c);
  fs::create_directories(dir / "masks");
  const int t = c.frames(), k = c.keypoints();
  const BBox& b0 = c.boxes.front();
  const int mask_res = c.masks.front().width;

  json meta{{"format", kSeqFormat}, {"fps", c.fps},  {"frame_w", b0.frame_w}, {"frame_h", b0.frame_h},
            {"frames", t},          {"keypoints", k}, {"mask_res", mask_res}, {"gait", seq.gait}};
  auto m = open_out(dir / "meta.json");
  m << meta.dump(1) << '\n';

  if (!c.crops.empty()) {
    fs::create_directories(dir / "frames");
    for (int i = 0; i < t; ++i) write_pnm(c.crops[static_cast<size_t>(i)], dir / "frames" / frame_name(i, c.crops[static_cast<size_t>(i)].channels == 3 ? "ppm" : "pgm"));
  }
  for (int i = 0; i < t; ++i) {
    const fs::path p = dir / "masks" / frame_name(i, "pgm");
    if (c.mask_valid[static_cast<size_t>(i)]) write_mask_pgm(c.masks[static_cast<size_t>(i)], p);
    else fs::remove(p);
  }

  auto kp = open_out(dir / "keypoints.csv");
  kp << "frame,k,x,y,conf\n";
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < k; ++j) {
      const size_t n = static_cast<size_t>(i * k + j);
      kp << i << ',' << j << ',' << c.keypoints2d[2 * n] << ',' << c.keypoints2d[2 * n + 1] << ',' << c.confidence[n] << '\n';
    }
  auto bb = open_out(dir / "bboxes.csv");
  bb << "frame,cx,cy,b\n";
  for (int i = 0; i < t; ++i) {
    const BBox& b = c.boxes[static_cast<size_t>(i)];
    bb << i << ',' << b.cx << ',' << b.cy << ',' << b.b << '\n';
  }
  if (seq.audio) audio::write_wav(*seq.audio, dir / "audio.wav", audio::WavFormat::float32);
  if (c.gt_pose) save_pose(*c.gt_pose, dir / "gt_pose.json");
  if (!c.gt_keypoints3d.empty()) {
    auto g = open_out(dir / "gt_keypoints3d.csv");
    g << "frame,k,x,y,z\n";
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < k; ++j) {
        const size_t n = static_cast<size_t>(i * k + j);
        g << i << ',' << j << ',' << c.gt_keypoints3d[3 * n] << ',' << c.gt_keypoints3d[3 * n + 1] << ','
          << c.gt_keypoints3d[3 * n + 2] << '\n';
      }
  }
}

Sequence read_sequence(const fs::path& dir) {
  const fs::path meta_path = dir / "meta.json";
  std::ifstream in(meta_path);
  if (!in) corrupt(meta_path, "missing");
  json meta;
  try {
    meta = json::parse(in);
  } catch (const json::exception& e) {
    corrupt(meta_path, e.what());
  }
  if (meta.value("format", std::string()) != kSeqFormat) corrupt(meta_path, std::string("format must be ") + kSeqFormat);

  Sequence seq;
  ClipRecord& c = seq.all;
  int t = 0, k = 0, mask_res = kCropRes;
  double fw = 0, fh = 0;
  try {
    c.fps = meta.at("fps").get<double>();
    fw = meta.at("frame_w").get<double>();
    fh = meta.at("frame_h").get<double>();
    t = meta.at("frames").get<int>();
    k = meta.at("keypoints").get<int>();
    mask_res = meta.value("mask_res", kCropRes);
    seq.gait = meta.value("gait", std::string());
  } catch (const json::exception& e) {
    corrupt(meta_path, e.what());
  }
  if (t <= 0 || k <= 0 || !(c.fps > 0)) corrupt(meta_path, "frames, keypoints and fps must be positive");
  c.sequence = dir.filename().string();
  if (c.sequence.empty()) c.sequence = dir.parent_path().filename().string();

  const auto kp = read_csv(dir / "keypoints.csv", 5);
  if (kp.size() != static_cast<size_t>(t * k)) corrupt(dir / "keypoints.csv", "expected one row per frame and keypoint");
  c.keypoints2d.assign(static_cast<size_t>(2 * t * k), 0.0);
  c.confidence.assign(static_cast<size_t>(t * k), 0.0);
  std::set<std::pair<int, int>> seen;
  for (const auto& r : kp) {
    const int i = static_cast<int>(r[0]), j = static_cast<int>(r[1]);
    if (i < 0 || i >= t || j < 0 || j >= k || !seen.insert({i, j}).second)
      corrupt(dir / "keypoints.csv", "bad or repeated (frame, k)");
    const size_t n = static_cast<size_t>(i * k + j);
    c.keypoints2d[2 * n] = r[2];
    c.keypoints2d[2 * n + 1] = r[3];
    c.confidence[n] = r[4];
  }

  const auto bb = read_csv(dir / "bboxes.csv", 4);
  if (bb.size() != static_cast<size_t>(t)) corrupt(dir / "bboxes.csv", "expected one row per frame");
  c.boxes.resize(static_cast<size_t>(t));
  for (const auto& r : bb) {
    const int i = static_cast<int>(r[0]);
    if (i < 0 || i >= t) corrupt(dir / "bboxes.csv", "bad frame index");
    c.boxes[static_cast<size_t>(i)] = {r[1], r[2], r[3], fw, fh};
  }

  for (int i = 0; i < t; ++i) {
    const fs::path p = dir / "masks" / frame_name(i, "pgm");
    if (fs::exists(p)) {
      c.masks.push_back(read_mask_pgm(p));
      c.mask_valid.push_back(true);
    } else {
      c.masks.emplace_back(mask_res, mask_res);
      c.mask_valid.push_back(false);
    }
  }
  if (fs::exists(dir / "frames")) {
    for (int i = 0; i < t; ++i) {
      fs::path p = dir / "frames" / frame_name(i, "ppm");
      if (!fs::exists(p)) p = dir / "frames" / frame_name(i, "pgm");
      if (!fs::exists(p)) corrupt(p, "missing frame");
      Image img = read_pnm(p);
      // Full frames are cropped here; pre-cropped frames pass through.
      if (img.width != kCropRes || img.height != kCropRes) img = crop_resize(img, c.boxes[static_cast<size_t>(i)]).image;
      c.crops.push_back(std::move(img));
    }
  }
  if (fs::exists(dir / "audio.wav")) seq.audio = audio::read_wav(dir / "audio.wav");
  if (fs::exists(dir / "gt_pose.json")) c.gt_pose = load_pose(dir / "gt_pose.json");
  if (fs::exists(dir / "gt_keypoints3d.csv")) {
    const auto g = read_csv(dir / "gt_keypoints3d.csv", 5);
    if (g.size() != static_cast<size_t>(t * k)) corrupt(dir / "gt_keypoints3d.csv", "expected one row per frame and keypoint");
    c.gt_keypoints3d.assign(static_cast<size_t>(3 * t * k), 0.0);
    for (const auto& r : g) {
      const int i = static_cast<int>(r[0]), j = static_cast<int>(r[1]);
      if (i < 0 || i >= t || j < 0 || j >= k) corrupt(dir / "gt_keypoints3d.csv", "bad (frame, k)");
      for (int d = 0; d < 3; ++d) c.gt_keypoints3d[static_cast<size_t>(3 * (i * k + j) + d)] = r[static_cast<size_t>(2 + d)];
    }
  }
  try {
    validate_clip(c);
  } catch (const Error& e) {
    corrupt(dir, e.what());
  }
  return seq;
}

std::vector<ClipRecord> load_sequence(const fs::path& root, int frames, const audio::MelConfig& mel) {
  if (!fs::is_directory(root)) corrupt(root, "not a directory");
  std::vector<fs::path> dirs;
  if (fs::exists(root / "meta.json")) {
    dirs.push_back(root);
  } else {
    for (const auto& e : fs::directory_iterator(root))
      if (e.is_directory() && fs::exists(e.path() / "meta.json")) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
  }
  if (dirs.empty()) corrupt(root, "no sequences found");
  std::vector<ClipRecord> clips;
  for (const auto& d : dirs) {
    const auto part = make_clips(read_sequence(d), frames, mel);
    clips.insert(clips.end(), part.begin(), part.end());
  }
  return clips;
}

}  // namespace quadfit
