#include "stabnet/augment.hpp"

#include <cmath>
#include <string>

#include "stabnet/errors.hpp"

namespace stabnet {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Rotation about the image center, sampling the source bilinearly with zero
// fill outside the frame.
Tensor rotate_bilinear(const Tensor& x, double angle_deg) {
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const double a = angle_deg * kPi / 180.0;
    const double cos_a = std::cos(a);
    const double sin_a = std::sin(a);
    const double cy = (h - 1) / 2.0;
    const double cx = (w - 1) / 2.0;

    Tensor out({c, h, w});
    for (int ci = 0; ci < c; ++ci) {
        const float* plane = x.data() + static_cast<std::size_t>(ci) * h * w;
        for (int y = 0; y < h; ++y) {
            for (int xo = 0; xo < w; ++xo) {
                const double dy = y - cy;
                const double dx = xo - cx;
                const double sy = cy + dy * cos_a - dx * sin_a;
                const double sx = cx + dy * sin_a + dx * cos_a;
                const int y0 = static_cast<int>(std::floor(sy));
                const int x0 = static_cast<int>(std::floor(sx));
                const double fy = sy - y0;
                const double fx = sx - x0;
                double acc = 0.0;
                for (int oy = 0; oy <= 1; ++oy) {
                    for (int ox = 0; ox <= 1; ++ox) {
                        const int yy = y0 + oy;
                        const int xx = x0 + ox;
                        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                        const double wgt = (oy ? fy : 1.0 - fy) * (ox ? fx : 1.0 - fx);
                        acc += wgt * plane[static_cast<std::size_t>(yy) * w + xx];
                    }
                }
                out.data()[(static_cast<std::size_t>(ci) * h + y) * w + xo] =
                    static_cast<float>(acc);
            }
        }
    }
    return out;
}

Tensor hflip_image(const Tensor& x) {
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor out({c, h, w});
    for (int ci = 0; ci < c; ++ci) {
        for (int y = 0; y < h; ++y) {
            const float* src = x.data() + (static_cast<std::size_t>(ci) * h + y) * w;
            float* dst = out.data() + (static_cast<std::size_t>(ci) * h + y) * w;
            for (int xo = 0; xo < w; ++xo) dst[xo] = src[w - 1 - xo];
        }
    }
    return out;
}

Tensor crop_image(const Tensor& x, int th, int tw, int ay, int ax) {
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    (void)h;
    Tensor out({c, th, tw});
    for (int ci = 0; ci < c; ++ci) {
        for (int y = 0; y < th; ++y) {
            const float* src = x.data() + (static_cast<std::size_t>(ci) * x.dim(1) + ay + y) * w + ax;
            float* dst = out.data() + (static_cast<std::size_t>(ci) * th + y) * tw;
            for (int xo = 0; xo < tw; ++xo) dst[xo] = src[xo];
        }
    }
    return out;
}

}  // namespace

Tensor apply_transform(const Tensor& x, const TransformSpec& spec, RngStream& rng) {
    if (!spec.enabled) return x;
    if (x.dims() != 3) {
        throw ParameterError("apply_transform: transforms need a [C,H,W] sample, got " +
                             x.shape_str());
    }
    const int h = x.dim(1), w = x.dim(2);
    if (spec.crop_to) {
        if (spec.crop_to->first > h || spec.crop_to->second > w) {
            throw ParameterError("apply_transform: crop " + std::to_string(spec.crop_to->first) +
                                 "x" + std::to_string(spec.crop_to->second) +
                                 " larger than input " + std::to_string(h) + "x" +
                                 std::to_string(w));
        }
    }
    if (spec.max_rotation_deg < 0.0) {
        throw ParameterError("apply_transform: max_rotation_deg must be >= 0");
    }

    Tensor cur = x;
    if (spec.max_rotation_deg > 0.0) {
        const double angle = rng.uniform(-spec.max_rotation_deg, spec.max_rotation_deg);
        cur = rotate_bilinear(cur, angle);
    }
    if (spec.hflip && rng.bernoulli(0.5)) {
        cur = hflip_image(cur);
    }
    if (spec.crop_to) {
        const int th = spec.crop_to->first;
        const int tw = spec.crop_to->second;
        const int ay = static_cast<int>(rng.uniform_int(0, h - th));
        const int ax = static_cast<int>(rng.uniform_int(0, w - tw));
        cur = crop_image(cur, th, tw, ay, ax);
    }
    return cur;
}

std::vector<Tensor> replicate_with_transforms(const Tensor& x, int n, const TransformSpec& spec,
                                              RngStream& rng) {
    if (n < 1) throw ParameterError("replicate_with_transforms: n must be >= 1");
    std::vector<Tensor> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out.push_back(apply_transform(x, spec, rng));
    return out;
}

}  // namespace stabnet
