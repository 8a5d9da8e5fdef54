#include "ttl/augment.hpp"

#include <algorithm>
#include <cmath>

namespace ttl {

void AugmentConfig::validate() const {
    if (num_views < 1) throw config_error("augment: num_views must be >= 1");
    if (!(crop_scale_lo > 0.0 && crop_scale_lo <= crop_scale_hi && crop_scale_hi <= 1.0))
        throw config_error("augment: crop_scale must satisfy 0 < lo <= hi <= 1");
    if (!(crop_aspect_lo > 0.0 && crop_aspect_lo <= crop_aspect_hi))
        throw config_error("augment: invalid crop_aspect range");
    if (!(flip_probability >= 0.0 && flip_probability <= 1.0))
        throw config_error("augment: flip_probability must be in [0, 1]");
}

CropRect sample_crop(std::size_t img_h, std::size_t img_w, const AugmentConfig& cfg,
                     Rng& rng) {
    const double area = static_cast<double>(img_h) * static_cast<double>(img_w);
    const double log_lo = std::log(cfg.crop_aspect_lo);
    const double log_hi = std::log(cfg.crop_aspect_hi);
    for (int attempt = 0; attempt < 10; ++attempt) {
        const double target_area = area * rng.uniform(cfg.crop_scale_lo, cfg.crop_scale_hi);
        const double aspect = std::exp(rng.uniform(log_lo, log_hi));
        auto w = static_cast<std::size_t>(std::lround(std::sqrt(target_area * aspect)));
        auto h = static_cast<std::size_t>(std::lround(std::sqrt(target_area / aspect)));
        if (w >= 1 && h >= 1 && w <= img_w && h <= img_h) {
            CropRect r;
            r.x = rng.next_below(img_w - w + 1);
            r.y = rng.next_below(img_h - h + 1);
            r.w = w;
            r.h = h;
            return r;
        }
    }
    // center-crop fallback at the geometric mean scale
    const double s = std::sqrt(0.5 * (cfg.crop_scale_lo + cfg.crop_scale_hi));
    auto w = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(s * img_w)));
    auto h = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(s * img_h)));
    w = std::min(w, img_w);
    h = std::min(h, img_h);
    return CropRect{(img_w - w) / 2, (img_h - h) / 2, w, h};
}

Tensor resize_bilinear_crop(const Tensor& image, const CropRect& crop, std::size_t out_h,
                            std::size_t out_w) {
    if (image.ndim() != 3) throw shape_error("resize: image must be [C,H,W]");
    const std::size_t c = image.dim(0), ih = image.dim(1), iw = image.dim(2);
    if (crop.w == 0 || crop.h == 0 || crop.x + crop.w > iw || crop.y + crop.h > ih)
        throw shape_error("resize: crop outside image bounds");
    Tensor out({c, out_h, out_w});
    auto o = out.mutable_data();
    const double sy = static_cast<double>(crop.h) / static_cast<double>(out_h);
    const double sx = static_cast<double>(crop.w) / static_cast<double>(out_w);
    for (std::size_t oy = 0; oy < out_h; ++oy) {
        double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(crop.h - 1));
        const auto y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, crop.h - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::size_t ox = 0; ox < out_w; ++ox) {
            double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(crop.w - 1));
            const auto x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, crop.w - 1);
            const double wx = fx - static_cast<double>(x0);
            for (std::size_t ch = 0; ch < c; ++ch) {
                auto px = [&](std::size_t yy, std::size_t xx) {
                    return image.at(ch * ih * iw + (crop.y + yy) * iw + (crop.x + xx));
                };
                const double top = px(y0, x0) * (1.0 - wx) + px(y0, x1) * wx;
                const double bot = px(y1, x0) * (1.0 - wx) + px(y1, x1) * wx;
                o[ch * out_h * out_w + oy * out_w + ox] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    return out;
}

Tensor horizontal_flip(const Tensor& image) {
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    Tensor out(image.shape());
    auto o = out.mutable_data();
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                o[ch * h * w + y * w + x] = image.at(ch * h * w + y * w + (w - 1 - x));
    return out;
}

ViewBatch make_views(const Tensor& image, const AugmentConfig& cfg,
                     std::uint64_t sample_index) {
    cfg.validate();
    if (image.ndim() != 3 || image.dim(1) < 2 || image.dim(2) < 2)
        throw shape_error("make_views: degenerate image " + shape_str(image.shape()));
    const std::size_t h = image.dim(1), w = image.dim(2);

    ViewBatch batch;
    batch.views.reserve(cfg.num_views);
    batch.params.reserve(cfg.num_views);

    ViewParams orig;
    orig.crop = CropRect{0, 0, w, h};
    orig.is_original = true;
    batch.views.push_back(image.clone());
    batch.params.push_back(orig);

    for (std::size_t i = 1; i < cfg.num_views; ++i) {
        Rng rng(cfg.seed, sample_index, i);
        ViewParams p;
        p.crop = sample_crop(h, w, cfg, rng);
        p.flipped = rng.next_double() < cfg.flip_probability;
        Tensor v = resize_bilinear_crop(image, p.crop, h, w);
        if (p.flipped) v = horizontal_flip(v);
        batch.views.push_back(std::move(v));
        batch.params.push_back(p);
    }
    return batch;
}

}  // namespace ttl
