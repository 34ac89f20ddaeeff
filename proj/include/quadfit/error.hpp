#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace quadfit {

// Every failure the toolkit reports carries one of these codes. The message
// always starts with the code's canonical text, optionally followed by
// ": <detail>".
enum class Errc {
  malformed_model,
  invalid_model,
  shape_error,
  invalid_frame,
  invalid_scale,
  behind_camera,
  no_supervision,
  sequence_too_short,
  invalid_prior,
  not_differentiable,
  diverged,
  invalid_dsp_config,
  window_out_of_bounds,
  rank_deficient,
  identical_samples,
  too_few_samples,
  degenerate_bbox,
  corrupt_dataset,
  config_error,
  audio_required,
  invalid_argument,
  io_error,
};

std::string_view errc_text(Errc code);

class Error : public std::runtime_error {
 public:
  explicit Error(Errc code);
  Error(Errc code, std::string_view detail);

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace quadfit
