// Copyright (C) 2026 The napmat authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace napmat {

// In-memory raster, 8-bit, 1 (gray) or 3 (RGB) channels, row-major.
struct Raster {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<std::uint8_t> pixels;  // width * height * channels

    std::uint8_t at(int x, int y, int c = 0) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    std::uint8_t& at(int x, int y, int c = 0) {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
};

// Reads a binary PGM (P5) or PPM (P6) file with maxval <= 255.
// Throws InputError on malformed or unsupported input.
Raster load_netpbm(const std::string& path);

// Writes PGM for 1-channel rasters, PPM for 3-channel ones.
void save_netpbm(const Raster& raster, const std::string& path);

// Smooth random test image: a sum of seeded low-frequency waves per
// channel, normalized to 0..255. Neighboring pixels vary gradually, the
// regime the locality experiments care about.
Raster synthetic_raster(int width, int height, int channels, std::uint64_t seed);

}  // namespace napmat
