#include "quadfit/image.hpp"

#include <cctype>
#include <fstream>
#include <string>

#include "quadfit/error.hpp"

namespace quadfit {

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string token(std::istream& in) {
  std::string out;
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      c = in.get();
    } else {
      break;
    }
  }
  while (c != EOF && !std::isspace(c)) {
    out.push_back(static_cast<char>(c));
    c = in.get();
  }
  return out;
}

}  // namespace

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  const std::string magic = token(in);
  int channels = 0;
  if (magic == "P5") channels = 1;
  if (magic == "P6") channels = 3;
  if (channels == 0) throw Error(Errc::io_error, "not a binary PGM/PPM: " + path.string());
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token(in));
    h = std::stoi(token(in));
    maxval = std::stoi(token(in));
  } catch (const std::exception&) {
    throw Error(Errc::io_error, "bad header in " + path.string());
  }
  if (w <= 0 || h <= 0 || maxval != 255) throw Error(Errc::io_error, "unsupported header in " + path.string());
  Image img(w, h, channels);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw Error(Errc::io_error, "truncated image " + path.string());
  return img;
}

void write_pnm(const Image& image, const std::filesystem::path& path) {
  if (image.channels != 1 && image.channels != 3) throw Error(Errc::invalid_argument, "PNM needs 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  out << (image.channels == 1 ? "P5" : "P6") << '\n' << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
}

}  // namespace quadfit
