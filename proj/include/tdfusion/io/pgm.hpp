#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tdfusion/image.hpp"

namespace tdfusion::io {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary (P5) PGM with 8-bit samples. Pixel value = round(maxval * clamp(v, 0, 1)).
inline void write_pgm(const std::filesystem::path& path, const Image& image, int maxval = 255) {
  if (maxval < 1 || maxval > 255) throw std::invalid_argument("write_pgm: maxval must be in [1,255]");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "P5\n" << image.width << ' ' << image.height << '\n' << maxval << '\n';
  std::vector<unsigned char> bytes(image.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<unsigned char>(std::lround(maxval * std::clamp(image.pixels[i], 0.0, 1.0)));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

/// Integer label map written verbatim; maxval is the largest class id.
inline void write_label_pgm(const std::filesystem::path& path, const std::vector<int>& labels, std::size_t height,
                            std::size_t width, int classes) {
  if (labels.size() != height * width) throw ShapeError("write_label_pgm: label count does not match image size");
  Image scaled(height, width);
  for (std::size_t i = 0; i < labels.size(); ++i) scaled.pixels[i] = static_cast<double>(labels[i]) / (classes - 1);
  write_pgm(path, scaled, classes - 1);
}

/// Raw sample values of a P5 file, maxval <= 255.
struct PgmData {
  std::size_t height = 0;
  std::size_t width = 0;
  int maxval = 255;
  std::vector<unsigned char> samples;

  Image normalized() const {
    Image im(height, width);
    for (std::size_t i = 0; i < samples.size(); ++i) im.pixels[i] = static_cast<double>(samples[i]) / maxval;
    return im;
  }
};

inline PgmData read_pgm_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  auto token = [&]() {
    std::string t;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(c);
    }
    return t;
  };
  if (token() != "P5") throw FormatError(path.string() + ": not a binary PGM (P5)");
  PgmData d;
  try {
    d.width = std::stoul(token());
    d.height = std::stoul(token());
    d.maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw FormatError(path.string() + ": malformed PGM header");
  }
  if (d.width == 0 || d.height == 0 || d.maxval < 1 || d.maxval > 255) {
    throw FormatError(path.string() + ": unsupported PGM dimensions or maxval");
  }
  d.samples.resize(d.width * d.height);
  in.read(reinterpret_cast<char*>(d.samples.data()), static_cast<std::streamsize>(d.samples.size()));
  if (in.gcount() != static_cast<std::streamsize>(d.samples.size())) throw FormatError(path.string() + ": truncated PGM");
  return d;
}

inline Image read_pgm(const std::filesystem::path& path) { return read_pgm_raw(path).normalized(); }

}  // namespace tdfusion::io
