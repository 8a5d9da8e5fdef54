#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ttl/tensor.hpp"

namespace ttl {

enum class ShiftKind { none, gaussian_noise, rotation, channel_shift, blur };

ShiftKind shift_kind_from_string(const std::string& s);
const char* shift_kind_name(ShiftKind k);

struct ShiftSpec {
    ShiftKind kind = ShiftKind::none;
    int severity = 1;  // 1..5
    std::uint64_t seed = 0;

    void validate() const;
};

// versioned severity tables (index 0 unused)
namespace shift_tables {
inline constexpr int version = 1;
inline constexpr double gaussian_noise_std[6] = {0, 0.05, 0.10, 0.16, 0.24, 0.34};
inline constexpr double rotation_degrees[6] = {0, 5, 10, 16, 24, 34};
inline constexpr double channel_shift_amount[6] = {0, 0.04, 0.08, 0.12, 0.18, 0.25};
inline constexpr double blur_sigma[6] = {0, 0.5, 0.8, 1.1, 1.5, 2.0};
}  // namespace shift_tables

// u8 images, row-major [N, C, H, W], labels in [0, C)
struct DatasetContainer {
    std::size_t image_size = 32;
    std::size_t channels = 3;
    std::vector<std::string> class_names;
    std::vector<std::uint8_t> images;
    std::vector<std::int64_t> labels;
    std::vector<double> norm_mean{0.5, 0.5, 0.5};
    std::vector<double> norm_std{0.25, 0.25, 0.25};
    std::string shift_descriptor = "none";

    std::size_t count() const { return labels.size(); }
    void validate() const;

    // [C,H,W] doubles in [0,1]
    Tensor image_tensor(std::size_t index) const;
};

inline const std::vector<std::string>& shape_class_names() {
    static const std::vector<std::string> names = {
        "circle", "square",  "triangle",       "cross",
        "ring",   "checker", "bar-horizontal", "bar-vertical"};
    return names;
}

// procedurally generated 32x32 RGB shapes, randomized position/size/color
DatasetContainer make_shapes_dataset(std::size_t count, std::uint64_t seed,
                                     std::uint64_t stream = 0);

void apply_shift(DatasetContainer& ds, const ShiftSpec& shift);

void save_dataset(const DatasetContainer& ds, const std::filesystem::path& path);
DatasetContainer load_dataset(const std::filesystem::path& path);

}  // namespace ttl
