#include "quadfit/error.hpp"

namespace quadfit {

std::string_view errc_text(Errc code) {
  switch (code) {
    case Errc::malformed_model: return "malformed model";
    case Errc::invalid_model: return "invalid model";
    case Errc::shape_error: return "shape error";
    case Errc::invalid_frame: return "invalid frame";
    case Errc::invalid_scale: return "invalid scale";
    case Errc::behind_camera: return "behind camera";
    case Errc::no_supervision: return "no supervision";
    case Errc::sequence_too_short: return "sequence too short";
    case Errc::invalid_prior: return "invalid prior";
    case Errc::not_differentiable: return "not differentiable";
    case Errc::diverged: return "diverged";
    case Errc::invalid_dsp_config: return "invalid dsp config";
    case Errc::window_out_of_bounds: return "window out of bounds";
    case Errc::rank_deficient: return "rank deficient";
    case Errc::identical_samples: return "identical samples";
    case Errc::too_few_samples: return "too few samples";
    case Errc::degenerate_bbox: return "degenerate bbox";
    case Errc::corrupt_dataset: return "corrupt dataset";
    case Errc::config_error: return "config error";
    case Errc::audio_required: return "audio required";
    case Errc::invalid_argument: return "invalid argument";
    case Errc::io_error: return "io error";
  }
  return "error";
}

namespace {

std::string compose(Errc code, std::string_view detail) {
  std::string msg(errc_text(code));
  if (!detail.empty()) {
    msg += ": ";
    msg += detail;
  }
  return msg;
}

}  // namespace

Error::Error(Errc code) : std::runtime_error(compose(code, {})), code_(code) {}

Error::Error(Errc code, std::string_view detail)
    : std::runtime_error(compose(code, detail)), code_(code) {}

}  // namespace quadfit
