#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace signsynth {

// Thrown for malformed input data: bad config keys, broken annotation
// files, out-of-range values. CLI maps this to exit code 2.
struct SchemaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown for filesystem / codec failures. CLI maps this to exit code 3.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown when an operation's precondition is violated (placement out of
// bounds, degenerate warp, ...). CLI maps this to exit code 2.
struct ValueError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using ClassId = int;

/// Axis-aligned box in continuous pixel coordinates, top-left origin.
/// Area is width*height; there is no +1 pixel convention.
struct BoundingBox {
    double x = 0;
    double y = 0;
    double width = 0;
    double height = 0;

    double area() const { return width * height; }
    double right() const { return x + width; }
    double bottom() const { return y + height; }

    bool valid() const { return width > 0 && height > 0; }

    bool operator==(const BoundingBox& o) const {
        return x == o.x && y == o.y && width == o.width && height == o.height;
    }
};

inline double iou(const BoundingBox& a, const BoundingBox& b) {
    const double ix = std::max(0.0, std::min(a.right(), b.right()) - std::max(a.x, b.x));
    const double iy = std::max(0.0, std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y));
    const double inter = ix * iy;
    if (inter <= 0)
        return 0.0;
    // areas derived from the same edge differences as the intersection, so
    // iou(a, a) == 1 exactly and the ratio never leaves [0, 1]
    const double area_a = (a.right() - a.x) * (a.bottom() - a.y);
    const double area_b = (b.right() - b.x) * (b.bottom() - b.y);
    return inter / (area_a + area_b - inter);
}

/// True iff the boxes, each dilated by `margin` on all sides, overlap with
/// positive area. intersects(a, b, 0) is equivalent to iou(a, b) > 0.
inline bool intersects(const BoundingBox& a, const BoundingBox& b, double margin) {
    const double ix = std::min(a.right() + margin, b.right() + margin) -
                      std::max(a.x - margin, b.x - margin);
    const double iy = std::min(a.bottom() + margin, b.bottom() + margin) -
                      std::max(a.y - margin, b.y - margin);
    return ix > 0 && iy > 0;
}

/// Interleaved image with float intensities; the external 8-bit form lives
/// in [0,255] and is produced exactly once, at write-out (see quantize()).
/// channels is 3 (RGB) or 4 (RGB + alpha).
struct ImageBuffer {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<float> data;

    ImageBuffer() = default;
    ImageBuffer(int w, int h, int c, float fill = 0.f)
        : width(w), height(h), channels(c),
          data(static_cast<size_t>(w) * h * c, fill) {}

    float& at(int x, int y, int c) {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    float at(int x, int y, int c) const {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }

    bool same_shape(const ImageBuffer& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }

    bool operator==(const ImageBuffer& o) const {
        return same_shape(o) && data == o.data;
    }
};

/// Round half away from zero, then clamp to [0,255].
inline uint8_t quantize(float v) {
    const long r = std::lround(v);
    return static_cast<uint8_t>(std::clamp(r, 0L, 255L));
}

inline std::vector<uint8_t> to_bytes(const ImageBuffer& img) {
    std::vector<uint8_t> out(img.data.size());
    for (size_t i = 0; i < img.data.size(); ++i)
        out[i] = quantize(img.data[i]);
    return out;
}

inline ImageBuffer from_bytes(const uint8_t* bytes, int w, int h, int c) {
    ImageBuffer img(w, h, c);
    const size_t n = img.data.size();
    for (size_t i = 0; i < n; ++i)
        img.data[i] = static_cast<float>(bytes[i]);
    return img;
}

/// Bilinear sample of one channel at continuous pixel-center coordinates.
/// Out-of-range coordinates clamp to the edge.
inline float bilinear_at(const ImageBuffer& img, double x, double y, int c) {
    x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
    y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
    const int x0 = static_cast<int>(x);
    const int y0 = static_cast<int>(y);
    const int x1 = std::min(x0 + 1, img.width - 1);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double fx = x - x0;
    const double fy = y - y0;
    const double top = img.at(x0, y0, c) * (1.0 - fx) + img.at(x1, y0, c) * fx;
    const double bot = img.at(x0, y1, c) * (1.0 - fx) + img.at(x1, y1, c) * fx;
    return static_cast<float>(top * (1.0 - fy) + bot * fy);
}

/// Bilinear resize (pixel-center alignment). Same dimensions return a copy,
/// bit-exact.
inline ImageBuffer bilinear_resize(const ImageBuffer& img, int new_w, int new_h) {
    if (new_w <= 0 || new_h <= 0)
        throw ValueError("bilinear_resize: non-positive target size");
    if (new_w == img.width && new_h == img.height)
        return img;
    ImageBuffer out(new_w, new_h, img.channels);
    const double sx = static_cast<double>(img.width) / new_w;
    const double sy = static_cast<double>(img.height) / new_h;
    for (int y = 0; y < new_h; ++y) {
        const double src_y = (y + 0.5) * sy - 0.5;
        for (int x = 0; x < new_w; ++x) {
            const double src_x = (x + 0.5) * sx - 0.5;
            for (int c = 0; c < img.channels; ++c)
                out.at(x, y, c) = bilinear_at(img, src_x, src_y, c);
        }
    }
    return out;
}

}  // namespace signsynth
