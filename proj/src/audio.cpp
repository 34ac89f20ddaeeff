#include "quadfit/audio.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <mutex>

#include "quadfit/error.hpp"

namespace quadfit::audio {

namespace {

// The FFTW planner is not reentrant.
std::mutex planner_mutex;

constexpr double kMelBreakHz = 1000.0;
constexpr double kHzPerMel = 200.0 / 3.0;
const double kLogStep = std::log(6.4) / 27.0;

void check_config(const MelConfig& c, double sample_rate, size_t samples) {
  auto bad = [](const char* what) { throw Error(Errc::invalid_dsp_config, what); };
  if (c.n_fft < 2 || c.n_fft % 2) bad("n_fft must be even and >= 2");
  if (c.hop < 1) bad("hop must be positive");
  if (c.n_mels < 1) bad("n_mels must be positive");
  if (!(c.floor > 0.0)) bad("floor must be positive");
  if (!(c.fmin >= 0.0) || !(c.fmin < c.fmax) || c.fmax > sample_rate / 2.0) bad("need 0 <= fmin < fmax <= sample_rate / 2");
  if (static_cast<size_t>(c.n_fft) > samples) bad("n_fft exceeds the track length");
  if (c.highpass_hz < 0.0 || c.highpass_hz >= sample_rate / 2.0) bad("high-pass cutoff out of range");
}

std::vector<char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

uint32_t le32(const char* p) {
  uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}

uint16_t le16(const char* p) {
  uint16_t v;
  std::memcpy(&v, p, 2);
  return v;
}

template <class T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

}  // namespace

void validate_track(const AudioTrack& track) {
  if (!(track.sample_rate > 0.0) || !std::isfinite(track.sample_rate))
    throw Error(Errc::invalid_dsp_config, "sample rate must be positive");
  for (double s : track.samples)
    if (!std::isfinite(s)) throw Error(Errc::invalid_dsp_config, "non-finite sample");
}

double hz_to_mel(double hz) {
  if (hz < kMelBreakHz) return hz / kHzPerMel;
  return kMelBreakHz / kHzPerMel + std::log(hz / kMelBreakHz) / kLogStep;
}

double mel_to_hz(double mel) {
  const double break_mel = kMelBreakHz / kHzPerMel;
  if (mel < break_mel) return mel * kHzPerMel;
  return kMelBreakHz * std::exp(kLogStep * (mel - break_mel));
}

std::vector<double> mel_edges(double fmin, double fmax, int n_mels) {
  const double lo = hz_to_mel(fmin), hi = hz_to_mel(fmax);
  std::vector<double> edges(static_cast<size_t>(n_mels) + 2);
  for (size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  return edges;
}

std::vector<double> mel_filterbank(double sample_rate, int n_fft, int n_mels, double fmin, double fmax) {
  const int bins = n_fft / 2 + 1;
  const auto edges = mel_edges(fmin, fmax, n_mels);
  std::vector<double> fb(static_cast<size_t>(n_mels) * static_cast<size_t>(bins), 0.0);
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[static_cast<size_t>(m)], mid = edges[static_cast<size_t>(m) + 1],
                 hi = edges[static_cast<size_t>(m) + 2];
    const double norm = 2.0 / (hi - lo);
    for (int k = 0; k < bins; ++k) {
      const double f = k * sample_rate / n_fft;
      const double w = std::min((f - lo) / (mid - lo), (hi - f) / (hi - mid));
      if (w > 0.0) fb[static_cast<size_t>(m) * static_cast<size_t>(bins) + static_cast<size_t>(k)] = norm * w;
    }
  }
  return fb;
}

std::vector<double> hann_window(int n) {
  std::vector<double> w(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) w[static_cast<size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / n);
  return w;
}

int frame_count(size_t samples, int n_fft, int hop) {
  if (samples < static_cast<size_t>(n_fft)) return 0;
  return 1 + static_cast<int>((samples - static_cast<size_t>(n_fft)) / static_cast<size_t>(hop));
}

std::vector<double> stft_power(std::span<const double> samples, int n_fft, int hop) {
  const int frames = frame_count(samples.size(), n_fft, hop);
  const int bins = n_fft / 2 + 1;
  std::vector<double> power(static_cast<size_t>(frames) * static_cast<size_t>(bins));
  if (frames == 0) return power;

  const auto window = hann_window(n_fft);
  double* in = fftw_alloc_real(static_cast<size_t>(n_fft));
  fftw_complex* out = fftw_alloc_complex(static_cast<size_t>(bins));
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(planner_mutex);
    plan = fftw_plan_dft_r2c_1d(n_fft, in, out, FFTW_ESTIMATE);
  }
  for (int t = 0; t < frames; ++t) {
    const size_t start = static_cast<size_t>(t) * static_cast<size_t>(hop);
    for (int i = 0; i < n_fft; ++i) in[i] = samples[start + static_cast<size_t>(i)] * window[static_cast<size_t>(i)];
    fftw_execute(plan);
    double* row = power.data() + static_cast<size_t>(t) * static_cast<size_t>(bins);
    for (int k = 0; k < bins; ++k) row[k] = out[k][0] * out[k][0] + out[k][1] * out[k][1];
  }
  {
    std::lock_guard<std::mutex> lock(planner_mutex);
    fftw_destroy_plan(plan);
  }
  fftw_free(in);
  fftw_free(out);
  return power;
}

// Butterworth biquad (Q = 1/sqrt(2)), direct form I.
AudioTrack highpass(const AudioTrack& track, double cutoff_hz) {
  validate_track(track);
  if (!(cutoff_hz > 0.0) || cutoff_hz >= track.sample_rate / 2.0)
    throw Error(Errc::invalid_dsp_config, "high-pass cutoff out of range");
  const double w0 = 2.0 * M_PI * cutoff_hz / track.sample_rate;
  const double alpha = std::sin(w0) / std::sqrt(2.0);
  const double c = std::cos(w0);
  const double a0 = 1.0 + alpha;
  const double b0 = (1.0 + c) / 2.0 / a0, b1 = -(1.0 + c) / a0, b2 = b0;
  const double a1 = -2.0 * c / a0, a2 = (1.0 - alpha) / a0;
  AudioTrack out{std::vector<double>(track.samples.size()), track.sample_rate};
  double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
  for (size_t i = 0; i < track.samples.size(); ++i) {
    const double x = track.samples[i];
    const double y = b0 * x + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
    x2 = x1;
    x1 = x;
    y2 = y1;
    y1 = y;
    out.samples[i] = y;
  }
  return out;
}

Spectrogram log_mel(const AudioTrack& track, const MelConfig& config) {
  validate_track(track);
  check_config(config, track.sample_rate, track.samples.size());
  const AudioTrack filtered = config.highpass_hz > 0.0 ? highpass(track, config.highpass_hz) : track;

  const int bins = config.n_fft / 2 + 1;
  const auto power = stft_power(filtered.samples, config.n_fft, config.hop);
  const auto fb = mel_filterbank(track.sample_rate, config.n_fft, config.n_mels, config.fmin, config.fmax);

  Spectrogram s;
  s.n_mels = config.n_mels;
  s.frames = frame_count(track.samples.size(), config.n_fft, config.hop);
  s.sample_rate = track.sample_rate;
  s.duration = static_cast<double>(track.samples.size()) / track.sample_rate;
  s.config = config;
  s.values.resize(static_cast<size_t>(s.n_mels) * static_cast<size_t>(s.frames));
  const double log_floor = std::log(config.floor);
  for (int t = 0; t < s.frames; ++t) {
    s.times.push_back(static_cast<double>(t) * config.hop / track.sample_rate);
    const double* row = power.data() + static_cast<size_t>(t) * static_cast<size_t>(bins);
    for (int m = 0; m < s.n_mels; ++m) {
      const double* w = fb.data() + static_cast<size_t>(m) * static_cast<size_t>(bins);
      double e = 0.0;
      for (int k = 0; k < bins; ++k) e += w[k] * row[k];
      s.values[static_cast<size_t>(m) * static_cast<size_t>(s.frames) + static_cast<size_t>(t)] =
          e > config.floor ? std::log(e) : log_floor;
    }
  }
  return s;
}

int window_width(const Spectrogram& spec, double fps, int frames) {
  if (!(fps > 0.0) || frames <= 0) throw Error(Errc::invalid_argument, "fps and frame count must be positive");
  return static_cast<int>(std::lround(frames / fps * spec.sample_rate / spec.config.hop));
}

Window clip_window(const Spectrogram& spec, double fps, int t0, int frames) {
  const int width = window_width(spec, fps, frames);
  const double start = t0 / fps, end = (t0 + frames) / fps;
  if (t0 < 0 || end > spec.duration + 1e-9) throw Error(Errc::window_out_of_bounds);

  // Column i starts at i * hop / sr; take those with start <= time < end.
  const double cols_per_sec = spec.sample_rate / spec.config.hop;
  const int first = static_cast<int>(std::ceil(start * cols_per_sec - 1e-9));
  const int last = std::min(spec.frames, static_cast<int>(std::ceil(end * cols_per_sec - 1e-9)));
  const int available = std::max(0, last - first);
  const int used = std::min(available, width);
  const int pad_left = (width - used) / 2;

  Window w;
  w.n_mels = spec.n_mels;
  w.width = width;
  w.values.assign(static_cast<size_t>(spec.n_mels) * static_cast<size_t>(width), std::log(spec.config.floor));
  for (int m = 0; m < spec.n_mels; ++m)
    for (int c = 0; c < used; ++c)
      w.values[static_cast<size_t>(m) * static_cast<size_t>(width) + static_cast<size_t>(pad_left + c)] =
          spec.at(m, first + c);
  return w;
}

AudioTrack read_wav(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  const auto bad = [&](const char* what) { return Error(Errc::io_error, path.string() + ": " + what); };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) || std::memcmp(bytes.data() + 8, "WAVE", 4))
    throw bad("not a RIFF/WAVE file");

  int format = 0, channels = 0, bits = 0;
  double rate = 0.0;
  const char* data = nullptr;
  size_t data_size = 0;
  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* chunk = bytes.data() + pos;
    const size_t size = le32(chunk + 4);
    const size_t body = pos + 8;
    if (body + size > bytes.size()) throw bad("truncated chunk");
    if (!std::memcmp(chunk, "fmt ", 4)) {
      if (size < 16) throw bad("short fmt chunk");
      format = le16(chunk + 8);
      channels = le16(chunk + 10);
      rate = le32(chunk + 12);
      bits = le16(chunk + 22);
      // WAVE_FORMAT_EXTENSIBLE keeps the real format tag in the sub-format GUID.
      if (format == 0xFFFE && size >= 26) format = le16(chunk + 32);
    } else if (!std::memcmp(chunk, "data", 4)) {
      data = chunk + 8;
      data_size = size;
    }
    pos = body + size + (size & 1);
  }
  if (!data || channels < 1 || rate <= 0) throw bad("missing fmt or data chunk");

  AudioTrack track;
  track.sample_rate = rate;
  const size_t width = static_cast<size_t>(bits / 8);
  const size_t frames = data_size / (width * static_cast<size_t>(channels));
  track.samples.resize(frames);
  for (size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
      const char* p = data + (i * static_cast<size_t>(channels) + static_cast<size_t>(c)) * width;
      if (format == 1 && bits == 16) {
        acc += static_cast<int16_t>(le16(p)) / 32768.0;
      } else if (format == 3 && bits == 32) {
        float f;
        std::memcpy(&f, p, 4);
        acc += f;
      } else {
        throw bad("only PCM-16 and float-32 are supported");
      }
    }
    track.samples[i] = acc / channels;
  }
  validate_track(track);
  return track;
}

void write_wav(const AudioTrack& track, const std::filesystem::path& path, WavFormat format) {
  validate_track(track);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  const uint16_t bits = format == WavFormat::pcm16 ? 16 : 32;
  const uint32_t rate = static_cast<uint32_t>(std::lround(track.sample_rate));
  const uint32_t data_size = static_cast<uint32_t>(track.samples.size() * bits / 8);
  out.write("RIFF", 4);
  put<uint32_t>(out, 36 + data_size + (data_size & 1));
  out.write("WAVEfmt ", 8);
  put<uint32_t>(out, 16);
  put<uint16_t>(out, format == WavFormat::pcm16 ? 1 : 3);
  put<uint16_t>(out, 1);
  put<uint32_t>(out, rate);
  put<uint32_t>(out, rate * bits / 8);
  put<uint16_t>(out, static_cast<uint16_t>(bits / 8));
  put<uint16_t>(out, bits);
  out.write("data", 4);
  put<uint32_t>(out, data_size);
  for (double s : track.samples) {
    if (format == WavFormat::pcm16)
      put<int16_t>(out, static_cast<int16_t>(std::lround(std::clamp(s, -1.0, 32767.0 / 32768.0) * 32768.0)));
    else
      put<float>(out, static_cast<float>(s));
  }
  if (data_size & 1) put<uint8_t>(out, 0);
}

void write_spectrogram_csv(const Spectrogram& spec, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  out.precision(9);
  out << "time";
  for (int m = 0; m < spec.n_mels; ++m) out << ",mel_" << m;
  out << '\n';
  for (int t = 0; t < spec.frames; ++t) {
    out << spec.times[static_cast<size_t>(t)];
    for (int m = 0; m < spec.n_mels; ++m) out << ',' << spec.at(m, t);
    out << '\n';
  }
}

void write_spectrogram_raw(const Spectrogram& spec, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  out << "quadfit-spec/1 " << spec.n_mels << ' ' << spec.frames << " f32le\n";
  for (double v : spec.values) put<float>(out, static_cast<float>(v));
}

}  // namespace quadfit::audio
