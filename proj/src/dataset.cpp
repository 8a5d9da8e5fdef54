#include "ttl/dataset.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "ttl/container.hpp"

namespace ttl {

using nlohmann::json;

ShiftKind shift_kind_from_string(const std::string& s) {
    if (s == "none") return ShiftKind::none;
    if (s == "gaussian_noise") return ShiftKind::gaussian_noise;
    if (s == "rotation") return ShiftKind::rotation;
    if (s == "channel_shift") return ShiftKind::channel_shift;
    if (s == "blur") return ShiftKind::blur;
    throw config_error("unknown shift kind '" + s + "'");
}

const char* shift_kind_name(ShiftKind k) {
    switch (k) {
        case ShiftKind::none: return "none";
        case ShiftKind::gaussian_noise: return "gaussian_noise";
        case ShiftKind::rotation: return "rotation";
        case ShiftKind::channel_shift: return "channel_shift";
        case ShiftKind::blur: return "blur";
    }
    return "?";
}

void ShiftSpec::validate() const {
    if (severity < 1 || severity > 5)
        throw config_error("shift: severity must be in 1..5");
}

void DatasetContainer::validate() const {
    const std::size_t per_image = channels * image_size * image_size;
    if (images.size() != count() * per_image)
        throw io_error("dataset: image blob length inconsistent with sample count");
    const auto c = static_cast<std::int64_t>(class_names.size());
    for (auto l : labels)
        if (l < 0 || l >= c) throw io_error("dataset: label out of range");
}

Tensor DatasetContainer::image_tensor(std::size_t index) const {
    const std::size_t per_image = channels * image_size * image_size;
    Tensor t({channels, image_size, image_size});
    auto d = t.mutable_data();
    const std::uint8_t* src = images.data() + index * per_image;
    for (std::size_t i = 0; i < per_image; ++i) d[i] = static_cast<double>(src[i]) / 255.0;
    return t;
}

namespace {

struct Canvas {
    std::size_t n;
    std::vector<double> rgb;  // [3, n, n] in [0,1]

    explicit Canvas(std::size_t size) : n(size), rgb(3 * size * size, 0.0) {}

    void set(std::size_t y, std::size_t x, const double color[3], double alpha = 1.0) {
        for (std::size_t c = 0; c < 3; ++c) {
            double& px = rgb[c * n * n + y * n + x];
            px = (1.0 - alpha) * px + alpha * color[c];
        }
    }
};

// each class gets a shape drawn by a signed membership test over pixel centers
void draw_shape(Canvas& cv, std::size_t cls, Rng& rng) {
    const auto n = static_cast<double>(cv.n);
    // background: dark random tint
    double bg[3] = {rng.uniform(0.0, 0.2), rng.uniform(0.0, 0.2), rng.uniform(0.0, 0.2)};
    for (std::size_t y = 0; y < cv.n; ++y)
        for (std::size_t x = 0; x < cv.n; ++x) cv.set(y, x, bg);
    // foreground: bright color, kept away from the background band
    double fg[3] = {rng.uniform(0.45, 1.0), rng.uniform(0.45, 1.0), rng.uniform(0.45, 1.0)};

    // keep the shape large and near the center so random resized crops at the
    // default 0.5-1.0 area range still contain it
    const double cx = n * rng.uniform(0.42, 0.58);
    const double cy = n * rng.uniform(0.42, 0.58);
    const double r = n * rng.uniform(0.22, 0.34);

    auto inside = [&](double px, double py) -> bool {
        const double dx = px - cx, dy = py - cy;
        switch (cls) {
            case 0:  // circle
                return dx * dx + dy * dy <= r * r;
            case 1:  // square
                return std::abs(dx) <= r * 0.85 && std::abs(dy) <= r * 0.85;
            case 2:  // triangle (upward)
                return dy <= r * 0.8 && dy >= -r * 0.8 &&
                       std::abs(dx) <= (dy + r * 0.8) * 0.6;
            case 3:  // cross
                return (std::abs(dx) <= r * 0.28 && std::abs(dy) <= r) ||
                       (std::abs(dy) <= r * 0.28 && std::abs(dx) <= r);
            case 4: {  // ring
                const double d2 = dx * dx + dy * dy;
                return d2 <= r * r && d2 >= r * r * 0.3;
            }
            case 5: {  // checker
                if (std::abs(dx) > r || std::abs(dy) > r) return false;
                const double cell = r / 1.5;
                const auto ix = static_cast<long>(std::floor((dx + r) / cell));
                const auto iy = static_cast<long>(std::floor((dy + r) / cell));
                return (ix + iy) % 2 == 0;
            }
            case 6:  // horizontal bar
                return std::abs(dy) <= r * 0.3 && std::abs(dx) <= r * 1.15;
            case 7:  // vertical bar
                return std::abs(dx) <= r * 0.3 && std::abs(dy) <= r * 1.15;
        }
        return false;
    };

    // 2x2 supersampling for soft edges
    for (std::size_t y = 0; y < cv.n; ++y) {
        for (std::size_t x = 0; x < cv.n; ++x) {
            int hits = 0;
            for (int sy = 0; sy < 2; ++sy)
                for (int sx = 0; sx < 2; ++sx)
                    if (inside(x + 0.25 + 0.5 * sx, y + 0.25 + 0.5 * sy)) ++hits;
            if (hits > 0) cv.set(y, x, fg, hits / 4.0);
        }
    }
}

std::uint8_t to_u8(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

DatasetContainer make_shapes_dataset(std::size_t count, std::uint64_t seed,
                                     std::uint64_t stream) {
    DatasetContainer ds;
    ds.class_names = shape_class_names();
    const std::size_t num_classes = ds.class_names.size();
    const std::size_t per_image = ds.channels * ds.image_size * ds.image_size;
    ds.images.resize(count * per_image);
    ds.labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        Rng rng(seed, stream, i);
        const std::size_t cls = i % num_classes;  // balanced classes
        Canvas cv(ds.image_size);
        draw_shape(cv, cls, rng);
        ds.labels[i] = static_cast<std::int64_t>(cls);
        for (std::size_t j = 0; j < per_image; ++j)
            ds.images[i * per_image + j] = to_u8(cv.rgb[j]);
    }
    return ds;
}

namespace {

void shift_image(std::vector<double>& img, std::size_t n, const ShiftSpec& spec, Rng& rng) {
    const int sev = spec.severity;
    switch (spec.kind) {
        case ShiftKind::none:
            break;
        case ShiftKind::gaussian_noise: {
            const double sd = shift_tables::gaussian_noise_std[sev];
            for (auto& v : img) v = std::clamp(v + rng.normal(0.0, sd), 0.0, 1.0);
            break;
        }
        case ShiftKind::channel_shift: {
            const double amt = shift_tables::channel_shift_amount[sev];
            for (std::size_t c = 0; c < 3; ++c) {
                const double delta = rng.uniform(-amt, amt);
                for (std::size_t i = 0; i < n * n; ++i) {
                    double& v = img[c * n * n + i];
                    v = std::clamp(v + delta, 0.0, 1.0);
                }
            }
            break;
        }
        case ShiftKind::rotation: {
            const double max_deg = shift_tables::rotation_degrees[sev];
            const double deg = rng.next_double() < 0.5 ? max_deg : -max_deg;
            const double th = deg * M_PI / 180.0;
            const double ct = std::cos(th), st = std::sin(th);
            const double c0 = (static_cast<double>(n) - 1.0) / 2.0;
            std::vector<double> out(img.size());
            for (std::size_t ch = 0; ch < 3; ++ch) {
                for (std::size_t y = 0; y < n; ++y) {
                    for (std::size_t x = 0; x < n; ++x) {
                        const double dx = static_cast<double>(x) - c0;
                        const double dy = static_cast<double>(y) - c0;
                        const double sx = ct * dx + st * dy + c0;
                        const double sy = -st * dx + ct * dy + c0;
                        double v = 0.0;
                        if (sx >= 0 && sy >= 0 && sx <= n - 1.0 && sy <= n - 1.0) {
                            const auto x0 = static_cast<std::size_t>(sx);
                            const auto y0 = static_cast<std::size_t>(sy);
                            const std::size_t x1 = std::min(x0 + 1, n - 1);
                            const std::size_t y1 = std::min(y0 + 1, n - 1);
                            const double wx = sx - static_cast<double>(x0);
                            const double wy = sy - static_cast<double>(y0);
                            auto px = [&](std::size_t yy, std::size_t xx) {
                                return img[ch * n * n + yy * n + xx];
                            };
                            v = (px(y0, x0) * (1 - wx) + px(y0, x1) * wx) * (1 - wy) +
                                (px(y1, x0) * (1 - wx) + px(y1, x1) * wx) * wy;
                        }
                        out[ch * n * n + y * n + x] = v;
                    }
                }
            }
            img = std::move(out);
            break;
        }
        case ShiftKind::blur: {
            const double sigma = shift_tables::blur_sigma[sev];
            const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
            std::vector<double> kernel(2 * radius + 1);
            double ksum = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
                ksum += kernel[i + radius];
            }
            for (auto& k : kernel) k /= ksum;
            auto ni = static_cast<int>(n);
            std::vector<double> tmp(img.size());
            for (std::size_t ch = 0; ch < 3; ++ch) {
                // horizontal then vertical pass, clamped borders
                for (int y = 0; y < ni; ++y)
                    for (int x = 0; x < ni; ++x) {
                        double acc = 0.0;
                        for (int k = -radius; k <= radius; ++k) {
                            int xx = std::clamp(x + k, 0, ni - 1);
                            acc += kernel[k + radius] * img[ch * n * n + y * n + xx];
                        }
                        tmp[ch * n * n + y * n + x] = acc;
                    }
                for (int y = 0; y < ni; ++y)
                    for (int x = 0; x < ni; ++x) {
                        double acc = 0.0;
                        for (int k = -radius; k <= radius; ++k) {
                            int yy = std::clamp(y + k, 0, ni - 1);
                            acc += kernel[k + radius] * tmp[ch * n * n + yy * n + x];
                        }
                        img[ch * n * n + y * n + x] = acc;
                    }
            }
            break;
        }
    }
}

}  // namespace

void apply_shift(DatasetContainer& ds, const ShiftSpec& spec) {
    if (spec.kind == ShiftKind::none) return;
    spec.validate();
    const std::size_t per_image = ds.channels * ds.image_size * ds.image_size;
    std::vector<double> img(per_image);
    for (std::size_t i = 0; i < ds.count(); ++i) {
        Rng rng(spec.seed, 0x5317f7, i);
        std::uint8_t* px = ds.images.data() + i * per_image;
        for (std::size_t j = 0; j < per_image; ++j)
            img[j] = static_cast<double>(px[j]) / 255.0;
        shift_image(img, ds.image_size, spec, rng);
        for (std::size_t j = 0; j < per_image; ++j) px[j] = to_u8(img[j]);
    }
    ds.shift_descriptor = std::string(shift_kind_name(spec.kind)) + ":" +
                          std::to_string(spec.severity) + ":v" +
                          std::to_string(shift_tables::version);
}

void save_dataset(const DatasetContainer& ds, const std::filesystem::path& path) {
    ds.validate();
    ContainerWriter w;
    w.add_u8("images", {ds.count(), ds.channels, ds.image_size, ds.image_size}, ds.images);
    w.add_i64("labels", ds.labels);
    json meta;
    meta["kind"] = "dataset";
    meta["image_size"] = ds.image_size;
    meta["channels"] = ds.channels;
    meta["class_names"] = ds.class_names;
    meta["norm_mean"] = ds.norm_mean;
    meta["norm_std"] = ds.norm_std;
    meta["shift"] = ds.shift_descriptor;
    w.set_metadata(meta.dump());
    w.write(path);
}

DatasetContainer load_dataset(const std::filesystem::path& path) {
    ContainerReader r(path);
    json meta = json::parse(r.metadata_json());
    if (meta.value("kind", "") != "dataset")
        throw io_error("dataset: " + path.string() + " is not a dataset container");
    DatasetContainer ds;
    ds.image_size = meta.at("image_size").get<std::size_t>();
    ds.channels = meta.at("channels").get<std::size_t>();
    ds.class_names = meta.at("class_names").get<std::vector<std::string>>();
    ds.norm_mean = meta.at("norm_mean").get<std::vector<double>>();
    ds.norm_std = meta.at("norm_std").get<std::vector<double>>();
    ds.shift_descriptor = meta.value("shift", "none");
    ds.images = r.read_u8("images");
    ds.labels = r.read_i64("labels");
    ds.validate();
    return ds;
}

}  // namespace ttl
