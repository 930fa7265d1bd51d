#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace vseg {

using Scalar = double;
using Array2D = Eigen::ArrayXXd;  // rows = y (height), cols = x (width)
using LabelMap = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;
using BinaryMap = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

// Label value excluded from every loss and metric.
inline constexpr std::uint8_t kIgnoreIndex = 255;

template <typename S>
using Grid = Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic>;

/// Dense H x W x C tensor stored as C channel planes.
struct Planes {
  std::vector<Array2D> ch;

  Planes() = default;
  Planes(int channels, int height, int width)
      : ch(channels, Array2D::Zero(height, width)) {}

  int channels() const { return static_cast<int>(ch.size()); }
  int height() const { return ch.empty() ? 0 : static_cast<int>(ch[0].rows()); }
  int width() const { return ch.empty() ? 0 : static_cast<int>(ch[0].cols()); }

  Array2D& operator[](int c) { return ch[c]; }
  const Array2D& operator[](int c) const { return ch[c]; }

  bool same_shape(const Planes& o) const {
    return channels() == o.channels() && height() == o.height() &&
           width() == o.width();
  }
};

/// Dense per-pixel displacement field in pixels. u is the x component,
/// v the y component; the value at (y, x) tells where that pixel's
/// content is found in the other frame (backward-sampling convention).
struct FlowField {
  Array2D u;
  Array2D v;

  FlowField() = default;
  FlowField(int height, int width)
      : u(Array2D::Zero(height, width)), v(Array2D::Zero(height, width)) {}

  int height() const { return static_cast<int>(u.rows()); }
  int width() const { return static_cast<int>(u.cols()); }
};

// Error taxonomy. Distinct types so callers (and the CLI exit-code map)
// can tell a malformed file from a missing one from a bad config.
struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ManifestError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingFileError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require_same_shape(const Planes& a, const Planes& b,
                               const char* what) {
  if (!a.same_shape(b))
    throw DimensionError(std::string(what) + ": shape mismatch");
}

}  // namespace vseg
