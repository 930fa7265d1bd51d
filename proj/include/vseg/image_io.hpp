#pragma once

#include "vseg/types.hpp"

#include <filesystem>

namespace vseg::io {

// Binary PPM (P6) for RGB frames and binary PGM (P5) for label/mask maps.
// Frames are quantized to 8 bits per channel; values round-trip exactly
// because the renderer emits colors already on the k/255 grid.

void write_ppm(const std::filesystem::path& file, const Planes& rgb);
Planes read_ppm(const std::filesystem::path& file);

void write_pgm(const std::filesystem::path& file, const LabelMap& map);
LabelMap read_pgm(const std::filesystem::path& file);

// Middlebury .flo layout: little-endian float 202021.25 magic, then
// int32 width, int32 height, then row-major interleaved float32 (u, v).
void write_flo(const std::filesystem::path& file, const FlowField& flow);
FlowField read_flo(const std::filesystem::path& file);

inline constexpr float kFloMagic = 202021.25f;

}  // namespace vseg::io
