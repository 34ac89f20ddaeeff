#pragma once

#include <filesystem>
#include <span>
#include <vector>

namespace quadfit::audio {

struct AudioTrack {
  std::vector<double> samples;  // mono, nominally in [-1, 1]
  double sample_rate = 44100.0;
};

void validate_track(const AudioTrack& track);

struct MelConfig {
  int n_fft = 1024;
  int hop = 441;
  int n_mels = 64;
  double fmin = 30.0;
  double fmax = 8000.0;
  double floor = 1e-10;
  // Second-order high-pass applied before the STFT; 0 disables it.
  double highpass_hz = 0.0;
};

// Natural-log mel power, n_mels rows by frames columns, row-major.
struct Spectrogram {
  int n_mels = 0;
  int frames = 0;
  std::vector<double> values;
  std::vector<double> times;  // start time of each analysis frame, seconds
  double sample_rate = 0.0;
  double duration = 0.0;  // length of the source track, seconds
  MelConfig config;

  double at(int mel, int frame) const { return values[static_cast<size_t>(mel) * static_cast<size_t>(frames) + static_cast<size_t>(frame)]; }
};

// Slaney mel scale: linear below 1 kHz, logarithmic above.
double hz_to_mel(double hz);
double mel_to_hz(double mel);

// n_mels + 2 edge frequencies; band m spans edges m .. m + 2 and peaks at m + 1.
std::vector<double> mel_edges(double fmin, double fmax, int n_mels);
// Triangular filters with area normalization, n_mels x (n_fft / 2 + 1).
std::vector<double> mel_filterbank(double sample_rate, int n_fft, int n_mels, double fmin, double fmax);

std::vector<double> hann_window(int n);  // periodic

int frame_count(size_t samples, int n_fft, int hop);
// One-sided |X_k|^2 of each Hann-windowed frame, frames x (n_fft / 2 + 1).
std::vector<double> stft_power(std::span<const double> samples, int n_fft, int hop);

AudioTrack highpass(const AudioTrack& track, double cutoff_hz);

Spectrogram log_mel(const AudioTrack& track, const MelConfig& config = {});

struct Window {
  int n_mels = 0;
  int width = 0;
  std::vector<double> values;  // n_mels x width, row-major
};

// Number of spectrogram columns covering `frames` video frames.
int window_width(const Spectrogram& spec, double fps, int frames);
// Columns whose start times fall in [t0 / fps, (t0 + frames) / fps), padded
// evenly on both sides with log(floor) up to window_width.
Window clip_window(const Spectrogram& spec, double fps, int t0, int frames);

// RIFF/WAVE: PCM-16 or IEEE float-32, any channel count (mixed down to mono).
AudioTrack read_wav(const std::filesystem::path& path);
enum class WavFormat { pcm16, float32 };
void write_wav(const AudioTrack& track, const std::filesystem::path& path, WavFormat format = WavFormat::pcm16);

// One row per frame: time, then one column per mel band.
void write_spectrogram_csv(const Spectrogram& spec, const std::filesystem::path& path);
// Header line "quadfit-spec/1 <n_mels> <frames> f32le" then the values.
void write_spectrogram_raw(const Spectrogram& spec, const std::filesystem::path& path);

}  // namespace quadfit::audio
