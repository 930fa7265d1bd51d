#include "vseg/image_io.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

namespace vseg::io {

namespace {

std::ifstream open_in(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw MissingFileError("cannot open " + file.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw MissingFileError("cannot write " + file.string());
  return out;
}

// Reads one whitespace-delimited PNM header token, skipping '#' comments.
std::string pnm_token(std::istream& in) {
  std::string tok;
  int c = in.get();
  while (c != EOF && (std::isspace(c) || c == '#')) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    }
    c = in.get();
  }
  while (c != EOF && !std::isspace(c)) {
    tok.push_back(static_cast<char>(c));
    c = in.get();
  }
  return tok;
}

struct PnmHeader {
  int width = 0;
  int height = 0;
  int maxval = 0;
};

PnmHeader read_pnm_header(std::istream& in, const char* magic,
                          const std::filesystem::path& file) {
  if (pnm_token(in) != magic)
    throw FormatError("bad magic in " + file.string());
  PnmHeader h;
  try {
    h.width = std::stoi(pnm_token(in));
    h.height = std::stoi(pnm_token(in));
    h.maxval = std::stoi(pnm_token(in));
  } catch (const std::exception&) {
    throw FormatError("bad header in " + file.string());
  }
  if (h.width <= 0 || h.height <= 0 || h.maxval != 255)
    throw FormatError("unsupported dimensions/maxval in " + file.string());
  return h;
}

}  // namespace

void write_ppm(const std::filesystem::path& file, const Planes& rgb) {
  if (rgb.channels() != 3)
    throw DimensionError("write_ppm: expected 3 channels");
  auto out = open_out(file);
  out << "P6\n" << rgb.width() << " " << rgb.height() << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(rgb.width()) * 3);
  for (int y = 0; y < rgb.height(); ++y) {
    for (int x = 0; x < rgb.width(); ++x)
      for (int c = 0; c < 3; ++c) {
        double v = std::clamp(rgb[c](y, x), 0.0, 1.0);
        row[3 * x + c] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
}

Planes read_ppm(const std::filesystem::path& file) {
  auto in = open_in(file);
  PnmHeader h = read_pnm_header(in, "P6", file);
  Planes rgb(3, h.height, h.width);
  std::vector<unsigned char> row(static_cast<size_t>(h.width) * 3);
  for (int y = 0; y < h.height; ++y) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size()));
    if (!in) throw FormatError("truncated pixel data in " + file.string());
    for (int x = 0; x < h.width; ++x)
      for (int c = 0; c < 3; ++c) rgb[c](y, x) = row[3 * x + c] / 255.0;
  }
  return rgb;
}

void write_pgm(const std::filesystem::path& file, const LabelMap& map) {
  auto out = open_out(file);
  const int height = static_cast<int>(map.rows());
  const int width = static_cast<int>(map.cols());
  out << "P5\n" << width << " " << height << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(width));
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) row[x] = map(y, x);
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
}

LabelMap read_pgm(const std::filesystem::path& file) {
  auto in = open_in(file);
  PnmHeader h = read_pnm_header(in, "P5", file);
  LabelMap map(h.height, h.width);
  std::vector<unsigned char> row(static_cast<size_t>(h.width));
  for (int y = 0; y < h.height; ++y) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size()));
    if (!in) throw FormatError("truncated pixel data in " + file.string());
    for (int x = 0; x < h.width; ++x) map(y, x) = row[x];
  }
  return map;
}

void write_flo(const std::filesystem::path& file, const FlowField& flow) {
  auto out = open_out(file);
  const float magic = kFloMagic;
  const std::int32_t w = flow.width();
  const std::int32_t h = flow.height();
  out.write(reinterpret_cast<const char*>(&magic), 4);
  out.write(reinterpret_cast<const char*>(&w), 4);
  out.write(reinterpret_cast<const char*>(&h), 4);
  std::vector<float> row(static_cast<size_t>(w) * 2);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      row[2 * x] = static_cast<float>(flow.u(y, x));
      row[2 * x + 1] = static_cast<float>(flow.v(y, x));
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
}

FlowField read_flo(const std::filesystem::path& file) {
  auto in = open_in(file);
  float magic = 0.f;
  std::int32_t w = 0, h = 0;
  in.read(reinterpret_cast<char*>(&magic), 4);
  if (!in || magic != kFloMagic)
    throw FormatError("bad flow magic in " + file.string());
  in.read(reinterpret_cast<char*>(&w), 4);
  in.read(reinterpret_cast<char*>(&h), 4);
  if (!in || w <= 0 || h <= 0 || w > 1 << 20 || h > 1 << 20)
    throw DimensionError("bad flow dimensions in " + file.string());
  FlowField flow(h, w);
  std::vector<float> row(static_cast<size_t>(w) * 2);
  for (int y = 0; y < h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(float)));
    if (!in) throw FormatError("truncated flow data in " + file.string());
    for (int x = 0; x < w; ++x) {
      flow.u(y, x) = row[2 * x];
      flow.v(y, x) = row[2 * x + 1];
    }
  }
  return flow;
}

}  // namespace vseg::io
