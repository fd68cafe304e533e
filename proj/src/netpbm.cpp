// Copyright (C) 2026 The napmat authors
// SPDX-License-Identifier: Apache-2.0

#include "napmat/netpbm.hpp"

#include <cmath>
#include <fstream>

#include "napmat/errors.hpp"
#include "napmat/rng.hpp"

namespace napmat {
namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string next_header_token(std::istream& in) {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    return tok;
}

int parse_header_int(std::istream& in, const char* what) {
    const std::string tok = next_header_token(in);
    if (tok.empty()) throw InputError(std::string("netpbm: missing ") + what);
    int value = 0;
    for (char c : tok) {
        if (c < '0' || c > '9') throw InputError(std::string("netpbm: malformed ") + what);
        value = value * 10 + (c - '0');
        if (value > 1 << 28) throw InputError(std::string("netpbm: absurd ") + what);
    }
    return value;
}

}  // namespace

Raster load_netpbm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open image: " + path);

    const std::string magic = next_header_token(in);
    int channels = 0;
    if (magic == "P5") {
        channels = 1;
    } else if (magic == "P6") {
        channels = 3;
    } else {
        throw InputError("unsupported netpbm magic '" + magic + "' in " + path);
    }

    Raster raster;
    raster.channels = channels;
    raster.width = parse_header_int(in, "width");
    raster.height = parse_header_int(in, "height");
    const int maxval = parse_header_int(in, "maxval");
    if (raster.width < 1 || raster.height < 1) throw InputError("netpbm: empty image " + path);
    if (maxval < 1 || maxval > 255) {
        throw InputError("netpbm: only maxval <= 255 supported, got " + std::to_string(maxval));
    }

    const std::size_t count =
        static_cast<std::size_t>(raster.width) * raster.height * channels;
    raster.pixels.resize(count);
    in.read(reinterpret_cast<char*>(raster.pixels.data()),
            static_cast<std::streamsize>(count));
    if (static_cast<std::size_t>(in.gcount()) != count) {
        throw InputError("netpbm: truncated pixel data in " + path);
    }
    if (maxval != 255) {
        for (auto& px : raster.pixels) {
            px = static_cast<std::uint8_t>((px * 255 + maxval / 2) / maxval);
        }
    }
    return raster;
}

void save_netpbm(const Raster& raster, const std::string& path) {
    if (raster.channels != 1 && raster.channels != 3) {
        throw InputError("netpbm: only 1- or 3-channel rasters can be written");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write image: " + path);
    out << (raster.channels == 1 ? "P5" : "P6") << "\n"
        << raster.width << " " << raster.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(raster.pixels.data()),
              static_cast<std::streamsize>(raster.pixels.size()));
    if (!out) throw InputError("failed writing image: " + path);
}

Raster synthetic_raster(int width, int height, int channels, std::uint64_t seed) {
    Raster raster;
    raster.width = width;
    raster.height = height;
    raster.channels = channels;
    raster.pixels.resize(static_cast<std::size_t>(width) * height * channels);

    constexpr int kWaves = 6;
    for (int c = 0; c < channels; ++c) {
        Rng rng(derive_seed(seed, 101 + static_cast<std::uint64_t>(c)));
        double fx[kWaves], fy[kWaves], phase[kWaves], amp[kWaves];
        for (int w = 0; w < kWaves; ++w) {
            fx[w] = rng.uniform(-3.0, 3.0);
            fy[w] = rng.uniform(-3.0, 3.0);
            phase[w] = rng.uniform(0.0, 6.28318530717958647692);
            amp[w] = rng.uniform(0.3, 1.0);
        }
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                double v = 0.0;
                const double u = static_cast<double>(x) / width;
                const double t = static_cast<double>(y) / height;
                for (int w = 0; w < kWaves; ++w) {
                    v += amp[w] * std::sin(6.28318530717958647692 * (fx[w] * u + fy[w] * t) +
                                           phase[w]);
                }
                // kWaves unit-amplitude waves stay within +-kWaves.
                const double norm = 0.5 + 0.5 * v / kWaves;
                raster.at(x, y, c) =
                    static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(norm, 0.0, 1.0)));
            }
        }
    }
    return raster;
}

}  // namespace napmat
