#pragma once

#include <filesystem>

#include "hazeforge/image.hpp"

namespace hazeforge {

// Reads an 8-bit PNG as 1 or 3 channels with samples v/255. Alpha is dropped with a
// warning on stderr. Throws IoError / FormatError.
PlanarImage read_png(const std::filesystem::path& path);

// Writes 8-bit gray or RGB; samples are clamped to [0,1] and rounded half away from zero.
void write_png(const std::filesystem::path& path, const PlanarImage& img);

std::uint8_t encode_sample(double v);

}  // namespace hazeforge
