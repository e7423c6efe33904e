#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "signsynth/core.hpp"
#include "signsynth/rng.hpp"
#include "signsynth/template_store.hpp"

namespace signsynth {

struct PhotometricParams {
    double alpha = 1.0;  // contrast multiplier, > 0
    double beta = 0.0;   // intensity offset in [-255, 255]
};

struct GeomParams {
    double yaw_deg = 0;    // out-of-plane, about the vertical axis
    double pitch_deg = 0;  // out-of-plane, about the horizontal axis
    double roll_deg = 0;   // in-plane
    double scale = 0;      // target longest side of the warped sign, px
};

/// Warped template plus the tight bounds of its nonzero-alpha pixels.
struct WarpedTemplate {
    ImageBuffer image;  // 4 channels
    BoundingBox tight_box;
};

/// v -> clamp(alpha*v + beta) on the color channels; alpha channel untouched.
inline ImageBuffer adjust_brightness_contrast(const ImageBuffer& image,
                                              const PhotometricParams& p) {
    if (p.alpha <= 0)
        throw ValueError("adjust_brightness_contrast: alpha must be > 0");
    ImageBuffer out = image;
    const int color_channels = std::min(image.channels, 3);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < color_channels; ++c) {
                const double v = p.alpha * image.at(x, y, c) + p.beta;
                out.at(x, y, c) = static_cast<float>(std::clamp(v, 0.0, 255.0));
            }
    return out;
}

namespace detail {

struct Mat3 {
    std::array<double, 9> m{};  // row-major

    Mat3 operator*(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double s = 0;
                for (int k = 0; k < 3; ++k)
                    s += m[i * 3 + k] * o.m[k * 3 + j];
                r.m[i * 3 + j] = s;
            }
        return r;
    }

    std::array<double, 3> apply(double x, double y) const {
        return {m[0] * x + m[1] * y + m[2], m[3] * x + m[4] * y + m[5],
                m[6] * x + m[7] * y + m[8]};
    }

    Mat3 inverse() const {
        const auto& a = m;
        const double det = a[0] * (a[4] * a[8] - a[5] * a[7]) -
                           a[1] * (a[3] * a[8] - a[5] * a[6]) +
                           a[2] * (a[3] * a[7] - a[4] * a[6]);
        if (std::abs(det) < 1e-12)
            throw ValueError("warp: singular homography");
        Mat3 r;
        r.m = {(a[4] * a[8] - a[5] * a[7]) / det, (a[2] * a[7] - a[1] * a[8]) / det,
               (a[1] * a[5] - a[2] * a[4]) / det, (a[5] * a[6] - a[3] * a[8]) / det,
               (a[0] * a[8] - a[2] * a[6]) / det, (a[2] * a[3] - a[0] * a[5]) / det,
               (a[3] * a[7] - a[4] * a[6]) / det, (a[1] * a[6] - a[0] * a[7]) / det,
               (a[0] * a[4] - a[1] * a[3]) / det};
        return r;
    }
};

inline Mat3 rotation_matrix(double yaw_deg, double pitch_deg, double roll_deg) {
    const double d2r = std::acos(-1.0) / 180.0;
    const double cy = std::cos(yaw_deg * d2r), sy = std::sin(yaw_deg * d2r);
    const double cp = std::cos(pitch_deg * d2r), sp = std::sin(pitch_deg * d2r);
    const double cr = std::cos(roll_deg * d2r), sr = std::sin(roll_deg * d2r);
    Mat3 ry, rx, rz;
    ry.m = {cy, 0, sy, 0, 1, 0, -sy, 0, cy};
    rx.m = {1, 0, 0, 0, cp, -sp, 0, sp, cp};
    rz.m = {cr, -sr, 0, sr, cr, 0, 0, 0, 1};
    return rz * rx * ry;
}

inline std::optional<BoundingBox> tight_alpha_box(const ImageBuffer& img) {
    int minx = img.width, miny = img.height, maxx = -1, maxy = -1;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            if (img.at(x, y, 3) > 0.f) {
                minx = std::min(minx, x);
                miny = std::min(miny, y);
                maxx = std::max(maxx, x);
                maxy = std::max(maxy, y);
            }
    if (maxx < 0)
        return std::nullopt;
    return BoundingBox{static_cast<double>(minx), static_cast<double>(miny),
                       static_cast<double>(maxx - minx + 1),
                       static_cast<double>(maxy - miny + 1)};
}

// Premultiplied bilinear sample; pixels outside the buffer contribute zero.
inline std::array<double, 4> sample_premultiplied(const ImageBuffer& img, double x, double y) {
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const double fx = x - x0;
    const double fy = y - y0;
    const double wts[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
    const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
    const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
    std::array<double, 4> acc{};
    for (int k = 0; k < 4; ++k) {
        if (wts[k] == 0.0 || xs[k] < 0 || xs[k] >= img.width || ys[k] < 0 || ys[k] >= img.height)
            continue;
        const double a = img.at(xs[k], ys[k], 3) / 255.0;
        acc[0] += wts[k] * img.at(xs[k], ys[k], 0) * a;
        acc[1] += wts[k] * img.at(xs[k], ys[k], 1) * a;
        acc[2] += wts[k] * img.at(xs[k], ys[k], 2) * a;
        acc[3] += wts[k] * a;
    }
    return acc;
}

struct WarpGrid {
    double x0, y0;  // projected coords of dest pixel (0,0)
    int width, height;
};

}  // namespace detail

/// Projects the sign plane through the pinhole-induced homography for
/// (yaw, pitch, roll) about the tight-box center, then scales uniformly so
/// the warped tight box's longest side lands on g.scale (+/- 1 px).
/// Focal length is 2x the sign's longest side.
inline WarpedTemplate warp_template(const ImageBuffer& timage, const GeomParams& g) {
    if (timage.channels != 4)
        throw ValueError("warp_template: template must have an alpha channel");
    if (g.scale < 1)
        throw ValueError("warp_template: scale must be >= 1 px");
    const auto src_box = detail::tight_alpha_box(timage);
    if (!src_box)
        throw ValueError("warp_template: template alpha is empty");
    const double sx = src_box->x, sy = src_box->y;
    const double sw = src_box->width, sh = src_box->height;
    const double cx = sx + (sw - 1) / 2.0;
    const double cy = sy + (sh - 1) / 2.0;
    const double focal = 2.0 * std::max(sw, sh);

    const detail::Mat3 rot = detail::rotation_matrix(g.yaw_deg, g.pitch_deg, g.roll_deg);
    detail::Mat3 h;
    h.m = {focal * rot.m[0], focal * rot.m[1], 0,
           focal * rot.m[3], focal * rot.m[4], 0,
           rot.m[6],         rot.m[7],         focal};

    // Region corners in centered plane coordinates (pixel centers +- 0.5).
    const std::array<std::pair<double, double>, 4> corners = {
        {{sx - 0.5 - cx, sy - 0.5 - cy},
         {sx + sw - 0.5 - cx, sy - 0.5 - cy},
         {sx - 0.5 - cx, sy + sh - 0.5 - cy},
         {sx + sw - 0.5 - cx, sy + sh - 0.5 - cy}}};
    std::array<std::pair<double, double>, 4> proj;
    for (size_t k = 0; k < 4; ++k) {
        const auto p = h.apply(corners[k].first, corners[k].second);
        if (p[2] <= 0.05 * focal)
            throw ValueError("warp_template: degenerate homography (plane behind camera)");
        proj[k] = {p[0] / p[2], p[1] / p[2]};
    }
    const detail::Mat3 hinv = h.inverse();

    const auto tl_center = h.apply(sx - cx, sy - cy);
    const double tlx = tl_center[0] / tl_center[2];
    const double tly = tl_center[1] / tl_center[2];

    auto rasterize = [&](double s, bool alpha_only,
                         ImageBuffer& out) -> std::optional<BoundingBox> {
        double minx = proj[0].first, maxx = proj[0].first;
        double miny = proj[0].second, maxy = proj[0].second;
        for (const auto& p : proj) {
            minx = std::min(minx, p.first);
            maxx = std::max(maxx, p.first);
            miny = std::min(miny, p.second);
            maxy = std::max(maxy, p.second);
        }
        minx *= s, maxx *= s, miny *= s, maxy *= s;
        // Dest grid origin pinned to the projected top-left pixel center's
        // lattice so that identity warps resample exactly.
        const double x0 = tlx * s - std::ceil(tlx * s - minx) - 1;
        const double y0 = tly * s - std::ceil(tly * s - miny) - 1;
        const int w = static_cast<int>(std::ceil(maxx - x0)) + 2;
        const int hgt = static_cast<int>(std::ceil(maxy - y0)) + 2;
        if (w <= 0 || hgt <= 0 || w > 8192 || hgt > 8192)
            throw ValueError("warp_template: warped extent out of range");
        out = ImageBuffer(w, hgt, 4, 0.f);
        for (int j = 0; j < hgt; ++j)
            for (int i = 0; i < w; ++i) {
                const double px = (x0 + i) / s;
                const double py = (y0 + j) / s;
                const auto q = hinv.apply(px, py);
                if (q[2] <= 1e-9)
                    continue;
                double u = q[0] / q[2] + cx;
                double v = q[1] / q[2] + cy;
                // snap coordinates that are integer up to double-rounding
                // noise, so identity-like warps resample exactly
                if (std::abs(u - std::round(u)) < 1e-6)
                    u = std::round(u);
                if (std::abs(v - std::round(v)) < 1e-6)
                    v = std::round(v);
                if (u < -1 || u > timage.width || v < -1 || v > timage.height)
                    continue;
                const auto acc = detail::sample_premultiplied(timage, u, v);
                if (acc[3] <= 0.0)
                    continue;
                out.at(i, j, 3) = static_cast<float>(acc[3] * 255.0);
                if (!alpha_only) {
                    out.at(i, j, 0) = static_cast<float>(acc[0] / acc[3]);
                    out.at(i, j, 1) = static_cast<float>(acc[1] / acc[3]);
                    out.at(i, j, 2) = static_cast<float>(acc[2] / acc[3]);
                }
            }
        return detail::tight_alpha_box(out);
    };

    // Converge the post-projection scale until the measured tight box's
    // longest side lands in [scale-1, ceil(scale)]. The upper bound is hard:
    // the generator reserves ceil(scale)-sided cells, so the sign must fit.
    double s = g.scale / std::max(sw, sh);
    const double hi = std::ceil(g.scale);
    const double lo = g.scale - 1.0;
    ImageBuffer buf;
    std::optional<BoundingBox> box;
    double longest = 0;
    for (int iter = 0; iter < 12; ++iter) {
        box = rasterize(s, /*alpha_only=*/true, buf);
        if (!box)
            throw ValueError("warp_template: warped alpha vanished");
        longest = std::max(box->width, box->height);
        if (longest >= lo && longest <= hi)
            break;
        s *= (longest > hi ? hi - 0.25 : g.scale) / longest;
    }
    for (int iter = 0; longest > hi && iter < 8; ++iter) {
        s *= 0.97;
        box = rasterize(s, /*alpha_only=*/true, buf);
        if (!box)
            throw ValueError("warp_template: warped alpha vanished");
        longest = std::max(box->width, box->height);
    }
    if (longest > hi)
        throw ValueError("warp_template: could not fit warped sign to target scale");
    WarpedTemplate result;
    box = rasterize(s, /*alpha_only=*/false, result.image);
    if (!box)
        throw ValueError("warp_template: warped alpha vanished");
    result.tight_box = *box;
    return result;
}

inline WarpedTemplate warp_template(const Template& t, const GeomParams& g) {
    return warp_template(t.image, g);
}

/// Shifts sign colors by (region_mean - constant) so the sign's brightness
/// follows the patch it lands on.
inline WarpedTemplate match_local_brightness(const WarpedTemplate& w, double region_mean,
                                             double constant) {
    if (region_mean < 0 || region_mean > 255)
        throw ValueError("match_local_brightness: region_mean out of [0,255]");
    WarpedTemplate out = w;
    const double shift = region_mean - constant;
    for (int y = 0; y < out.image.height; ++y)
        for (int x = 0; x < out.image.width; ++x) {
            if (out.image.at(x, y, 3) <= 0.f)
                continue;
            for (int c = 0; c < 3; ++c)
                out.image.at(x, y, c) = static_cast<float>(
                    std::clamp(out.image.at(x, y, c) + shift, 0.0, 255.0));
        }
    return out;
}

/// Independent additive U(-amplitude, amplitude) per color value of each
/// alpha>0 pixel. Row-major draw order, channels innermost.
inline WarpedTemplate apply_jitter(const WarpedTemplate& w, double amplitude, Rng& rng) {
    if (amplitude < 0)
        throw ValueError("apply_jitter: negative amplitude");
    WarpedTemplate out = w;
    for (int y = 0; y < out.image.height; ++y)
        for (int x = 0; x < out.image.width; ++x) {
            if (out.image.at(x, y, 3) <= 0.f)
                continue;
            for (int c = 0; c < 3; ++c) {
                const double noise = rng.uniform(-amplitude, amplitude);
                out.image.at(x, y, c) = static_cast<float>(
                    std::clamp(out.image.at(x, y, c) + noise, 0.0, 255.0));
            }
        }
    return out;
}

namespace detail {

/// Exact chessboard distance to the nearest alpha==0 or buffer-edge pixel
/// (two-pass chamfer; unit weights on the 8-neighborhood are exact for the
/// L-inf metric).
inline std::vector<int> chessboard_distance(const ImageBuffer& img) {
    const int w = img.width, h = img.height;
    const int inf = std::numeric_limits<int>::max() / 2;
    std::vector<int> dist(static_cast<size_t>(w) * h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const bool source =
                img.at(x, y, 3) <= 0.f || x == 0 || y == 0 || x == w - 1 || y == h - 1;
            dist[static_cast<size_t>(y) * w + x] = source ? 0 : inf;
        }
    auto at = [&](int x, int y) -> int& { return dist[static_cast<size_t>(y) * w + x]; };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int d = at(x, y);
            if (x > 0) d = std::min(d, at(x - 1, y) + 1);
            if (y > 0) {
                d = std::min(d, at(x, y - 1) + 1);
                if (x > 0) d = std::min(d, at(x - 1, y - 1) + 1);
                if (x < w - 1) d = std::min(d, at(x + 1, y - 1) + 1);
            }
            at(x, y) = d;
        }
    for (int y = h - 1; y >= 0; --y)
        for (int x = w - 1; x >= 0; --x) {
            int d = at(x, y);
            if (x < w - 1) d = std::min(d, at(x + 1, y) + 1);
            if (y < h - 1) {
                d = std::min(d, at(x, y + 1) + 1);
                if (x < w - 1) d = std::min(d, at(x + 1, y + 1) + 1);
                if (x > 0) d = std::min(d, at(x - 1, y + 1) + 1);
            }
            at(x, y) = d;
        }
    return dist;
}

}  // namespace detail

/// alpha(p) *= min(1, dist(p)/fade_width), dist being the chessboard
/// distance to the nearest alpha==0 or buffer-edge pixel. fade_width 0 is
/// the identity.
inline WarpedTemplate fade_borders(const WarpedTemplate& w, int fade_width) {
    if (fade_width < 0)
        throw ValueError("fade_borders: negative fade width");
    if (fade_width == 0)
        return w;
    WarpedTemplate out = w;
    const auto dist = detail::chessboard_distance(out.image);
    for (int y = 0; y < out.image.height; ++y)
        for (int x = 0; x < out.image.width; ++x) {
            const int d = dist[static_cast<size_t>(y) * out.image.width + x];
            if (d >= fade_width)
                continue;
            out.image.at(x, y, 3) = static_cast<float>(
                out.image.at(x, y, 3) * (static_cast<double>(d) / fade_width));
        }
    return out;
}

/// Standard over-compositing of the tight box at (px, py). Never writes
/// outside the translated tight box. The returned box is the ground-truth
/// annotation.
inline std::pair<ImageBuffer, BoundingBox> alpha_composite(ImageBuffer canvas,
                                                           const WarpedTemplate& w, int px,
                                                           int py) {
    const int tbx = static_cast<int>(w.tight_box.x);
    const int tby = static_cast<int>(w.tight_box.y);
    const int tbw = static_cast<int>(w.tight_box.width);
    const int tbh = static_cast<int>(w.tight_box.height);
    if (px < 0 || py < 0 || px + tbw > canvas.width || py + tbh > canvas.height)
        throw ValueError("alpha_composite: placement out of canvas bounds");
    for (int y = 0; y < tbh; ++y)
        for (int x = 0; x < tbw; ++x) {
            const float a = w.image.at(tbx + x, tby + y, 3);
            if (a <= 0.f)
                continue;
            const double m = a / 255.0;
            for (int c = 0; c < 3; ++c) {
                const double t = w.image.at(tbx + x, tby + y, c);
                const double b = canvas.at(px + x, py + y, c);
                canvas.at(px + x, py + y, c) = static_cast<float>(m * t + (1.0 - m) * b);
            }
        }
    BoundingBox box{static_cast<double>(px), static_cast<double>(py),
                    static_cast<double>(tbw), static_cast<double>(tbh)};
    return {std::move(canvas), box};
}

/// Separable Gaussian with kernel radius ceil(3*sigma), clamp-to-edge.
/// sigma below 0.01 is the identity. Constants are preserved exactly.
inline ImageBuffer gaussian_blur(const ImageBuffer& image, double sigma) {
    if (sigma < 0)
        throw ValueError("gaussian_blur: negative sigma");
    if (sigma < 0.01)
        return image;
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[static_cast<size_t>(i + radius)] = std::exp(-(i * i) / (2.0 * sigma * sigma));
        sum += kernel[static_cast<size_t>(i + radius)];
    }
    for (auto& k : kernel)
        k /= sum;

    const int w = image.width, h = image.height, ch = image.channels;
    ImageBuffer tmp(w, h, ch), out(w, h, ch);
    // Accumulating k_i*(v_i - v_center) + v_center keeps constant regions
    // bit-exact regardless of kernel normalization error.
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < ch; ++c) {
                const double center = image.at(x, y, c);
                double acc = 0;
                for (int i = -radius; i <= radius; ++i) {
                    const int xi = std::clamp(x + i, 0, w - 1);
                    acc += kernel[static_cast<size_t>(i + radius)] *
                           (image.at(xi, y, c) - center);
                }
                tmp.at(x, y, c) = static_cast<float>(center + acc);
            }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < ch; ++c) {
                const double center = tmp.at(x, y, c);
                double acc = 0;
                for (int i = -radius; i <= radius; ++i) {
                    const int yi = std::clamp(y + i, 0, h - 1);
                    acc += kernel[static_cast<size_t>(i + radius)] *
                           (tmp.at(x, yi, c) - center);
                }
                out.at(x, y, c) = static_cast<float>(center + acc);
            }
    return out;
}

struct PoissonResult {
    ImageBuffer image;
    BoundingBox box;
    bool converged = true;
    int iterations = 0;
};

/// Gradient-domain alternative to alpha_composite. Solves the discrete
/// Poisson equation (5-point Laplacian) on the alpha>=128 interior with the
/// canvas as Dirichlet boundary, per channel, by Jacobi iteration. Stops at
/// max-abs residual <= tolerance or max_iters; the result is returned
/// either way with `converged` telling which. Pixels outside the interior
/// are bit-identical to the canvas.
inline PoissonResult poisson_blend(ImageBuffer canvas, const WarpedTemplate& w, int px, int py,
                                   double tolerance, int max_iters) {
    const int tbx = static_cast<int>(w.tight_box.x);
    const int tby = static_cast<int>(w.tight_box.y);
    const int tbw = static_cast<int>(w.tight_box.width);
    const int tbh = static_cast<int>(w.tight_box.height);
    if (px < 1 || py < 1 || px + tbw > canvas.width - 1 || py + tbh > canvas.height - 1)
        throw ValueError("poisson_blend: placement must leave a 1 px canvas border");

    BoundingBox box{static_cast<double>(px), static_cast<double>(py),
                    static_cast<double>(tbw), static_cast<double>(tbh)};

    std::vector<int> omega_index(static_cast<size_t>(tbw) * tbh, -1);
    std::vector<std::pair<int, int>> omega;  // tight-box-local coords
    for (int y = 0; y < tbh; ++y)
        for (int x = 0; x < tbw; ++x)
            if (w.image.at(tbx + x, tby + y, 3) >= 128.f) {
                omega_index[static_cast<size_t>(y) * tbw + x] = static_cast<int>(omega.size());
                omega.emplace_back(x, y);
            }
    if (omega.empty())
        return {std::move(canvas), box, true, 0};

    auto in_omega = [&](int x, int y) {
        return x >= 0 && x < tbw && y >= 0 && y < tbh &&
               omega_index[static_cast<size_t>(y) * tbw + x] >= 0;
    };
    // Guidance colors: template where painted, else fall back to the center
    // pixel (zero gradient across the silhouette boundary).
    auto guide = [&](int x, int y, int cx_, int cy_, int c) -> double {
        if (x >= -tbx && x < w.image.width - tbx && y >= -tby && y < w.image.height - tby &&
            w.image.at(tbx + x, tby + y, 3) > 0.f)
            return w.image.at(tbx + x, tby + y, c);
        return w.image.at(tbx + cx_, tby + cy_, c);
    };

    const int dx[4] = {1, -1, 0, 0};
    const int dy[4] = {0, 0, 1, -1};
    const size_t n = omega.size();
    PoissonResult res;
    res.converged = true;
    res.iterations = 0;

    for (int c = 0; c < 3; ++c) {
        std::vector<double> known(n, 0.0), f(n), fn(n);
        for (size_t i = 0; i < n; ++i) {
            const auto [x, y] = omega[i];
            const double gp = guide(x, y, x, y, c);
            f[i] = gp;
            for (int k = 0; k < 4; ++k) {
                const int qx = x + dx[k], qy = y + dy[k];
                known[i] += gp - guide(qx, qy, x, y, c);
                if (!in_omega(qx, qy))
                    known[i] += canvas.at(px + qx, py + qy, c);
            }
        }
        int iter = 0;
        bool channel_converged = false;
        for (; iter < max_iters; ++iter) {
            double max_delta = 0;
            for (size_t i = 0; i < n; ++i) {
                const auto [x, y] = omega[i];
                double s = known[i];
                for (int k = 0; k < 4; ++k) {
                    const int qx = x + dx[k], qy = y + dy[k];
                    if (in_omega(qx, qy))
                        s += f[static_cast<size_t>(
                            omega_index[static_cast<size_t>(qy) * tbw + qx])];
                }
                fn[i] = s / 4.0;
                max_delta = std::max(max_delta, std::abs(fn[i] - f[i]));
            }
            f.swap(fn);
            // residual at the previous iterate equals 4*max_delta
            if (4.0 * max_delta <= tolerance) {
                channel_converged = true;
                ++iter;
                break;
            }
        }
        res.iterations = std::max(res.iterations, iter);
        if (!channel_converged)
            res.converged = false;
        for (size_t i = 0; i < n; ++i) {
            const auto [x, y] = omega[i];
            canvas.at(px + x, py + y, c) =
                static_cast<float>(std::clamp(f[i], 0.0, 255.0));
        }
    }
    res.image = std::move(canvas);
    res.box = box;
    return res;
}

}  // namespace signsynth
