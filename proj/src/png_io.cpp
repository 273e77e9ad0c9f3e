#include "hazeforge/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <vector>

#include "hazeforge/error.hpp"

namespace hazeforge {

std::uint8_t encode_sample(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

PlanarImage read_png(const std::filesystem::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        if (!std::filesystem::exists(path)) throw IoError("cannot open " + path.string());
        throw FormatError(path.string() + ": " + image.message);
    }
    const bool color = image.format & PNG_FORMAT_FLAG_COLOR;
    const bool alpha = image.format & PNG_FORMAT_FLAG_ALPHA;
    if (alpha) std::cerr << "warning: " << path.string() << ": dropping alpha channel\n";

    image.format = color ? (alpha ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB) : (alpha ? PNG_FORMAT_GA : PNG_FORMAT_GRAY);
    const int stored = static_cast<int>(PNG_IMAGE_PIXEL_CHANNELS(image.format));
    std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw FormatError(path.string() + ": " + msg);
    }

    const int W = static_cast<int>(image.width), H = static_cast<int>(image.height);
    const int channels = color ? 3 : 1;
    PlanarImage out(W, H, channels);
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                out.at(c, y, x) = buffer[(static_cast<std::size_t>(y) * W + x) * stored + c] / 255.0;
    return out;
}

void write_png(const std::filesystem::path& path, const PlanarImage& img) {
    require_valid(img);
    const int W = img.width(), H = img.height(), C = img.channels();
    std::vector<png_byte> buffer(static_cast<std::size_t>(W) * H * C);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                buffer[(static_cast<std::size_t>(y) * W + x) * C + c] = encode_sample(img.at(c, y, x));

    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(W);
    image.height = static_cast<png_uint_32>(H);
    image.format = C == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&image, path.c_str(), 0, buffer.data(), 0, nullptr))
        throw IoError("cannot write " + path.string() + ": " + image.message);
}

}  // namespace hazeforge
