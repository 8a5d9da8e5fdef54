#pragma once

#include <vector>

#include "ttl/tensor.hpp"

namespace ttl {

struct AugmentConfig {
    std::size_t num_views = 64;
    double crop_scale_lo = 0.5;
    double crop_scale_hi = 1.0;
    double crop_aspect_lo = 0.75;
    double crop_aspect_hi = 4.0 / 3.0;
    double flip_probability = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
};

struct CropRect {
    std::size_t x = 0, y = 0, w = 0, h = 0;
};

struct ViewParams {
    CropRect crop;
    bool flipped = false;
    bool is_original = false;
};

struct ViewBatch {
    std::vector<Tensor> views;  // [C,H,W] each, at the input resolution
    std::vector<ViewParams> params;
};

// View 0 is the untouched original. View i of sample s draws from the
// counter-based stream (seed, s, i), so batches are order-independent.
ViewBatch make_views(const Tensor& image, const AugmentConfig& cfg,
                     std::uint64_t sample_index = 0);

// Bilinear resample of a crop region to [out_h, out_w]. align_corners=false
// convention: output pixel centers map to src as (i + 0.5) * scale - 0.5,
// clamped at the borders.
Tensor resize_bilinear_crop(const Tensor& image, const CropRect& crop, std::size_t out_h,
                            std::size_t out_w);

Tensor horizontal_flip(const Tensor& image);

// torchvision-style sampler: up to 10 area/log-aspect proposals, then a
// center-crop fallback
CropRect sample_crop(std::size_t img_h, std::size_t img_w, const AugmentConfig& cfg,
                     Rng& rng);

}  // namespace ttl
