#pragma once

// Straight-line reimplementation of the encoder forward pass with plain loops.
// Reads the same checkpoint tensors but shares no kernel code with the ops
// library; used to cross-check encode().

#include <cmath>
#include <string>
#include <vector>

#include "ttl/encoder.hpp"
#include "ttl/lora.hpp"

namespace reference {

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const ttl::Tensor& t) {
    Mat m(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.at(i * t.cols() + j);
    return m;
}

inline Mat mat_mul(const Mat& a, const Mat& b) {
    Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t p = 0; p < b.size(); ++p)
            for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][p] * b[p][j];
    return out;
}

inline void add_bias(Mat& m, const ttl::Tensor& bias) {
    for (auto& row : m)
        for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias.at(j);
}

inline Mat layer_norm(const Mat& x, const ttl::Tensor& g, const ttl::Tensor& b,
                      double eps = 1e-5) {
    Mat out = x;
    const std::size_t n = x[0].size();
    for (auto& row : out) {
        double mu = 0.0;
        for (double v : row) mu += v;
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (double v : row) var += (v - mu) * (v - mu);
        var /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) row[j] = (row[j] - mu) * is * g.at(j) + b.at(j);
    }
    return out;
}

inline ttl::Tensor encode(const ttl::EncoderCheckpoint& ckpt,
                          const ttl::LoraAdapterSet* adapters, const ttl::Tensor& image) {
    const auto& cfg = ckpt.config;
    const std::size_t ps = cfg.patch_size, d = cfg.embed_dim;
    const std::size_t gw = cfg.image_size / ps;
    const std::size_t plane = cfg.image_size * cfg.image_size;

    // normalize + patchify
    Mat patches(cfg.num_patches(), std::vector<double>(3 * ps * ps));
    for (std::size_t p = 0; p < cfg.num_patches(); ++p) {
        const std::size_t py = p / gw, px = p % gw;
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t dy = 0; dy < ps; ++dy)
                for (std::size_t dx = 0; dx < ps; ++dx) {
                    const double raw =
                        image.at(c * plane + (py * ps + dy) * cfg.image_size + px * ps + dx);
                    patches[p][c * ps * ps + dy * ps + dx] =
                        (raw - ckpt.norm_mean[c]) / ckpt.norm_std[c];
                }
    }
    Mat tok = mat_mul(patches, to_mat(ckpt.at("patch.weight")));
    add_bias(tok, ckpt.at("patch.bias"));

    Mat x(cfg.seq_len(), std::vector<double>(d));
    for (std::size_t j = 0; j < d; ++j) x[0][j] = ckpt.at("cls").at(j);
    for (std::size_t i = 0; i < tok.size(); ++i) x[i + 1] = tok[i];
    const auto& pos = ckpt.at("pos");
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) x[i][j] += pos.at(i * d + j);

    const std::size_t hd = cfg.head_dim();
    for (std::size_t l = 1; l <= cfg.num_layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        Mat h = layer_norm(x, ckpt.at(p + "ln1.g"), ckpt.at(p + "ln1.b"));

        auto project = [&](const char* name, ttl::Projection proj) {
            Mat out = mat_mul(h, to_mat(ckpt.at(p + "attn." + name + ".weight")));
            add_bias(out, ckpt.at(p + "attn." + name + ".bias"));
            if (adapters && adapters->has(l, proj)) {
                const auto& pair = adapters->pair(l, proj);
                const std::size_t r = pair.A.rows(), k = pair.A.cols();
                for (std::size_t i = 0; i < h.size(); ++i) {
                    std::vector<double> ah(r, 0.0);
                    for (std::size_t q = 0; q < r; ++q)
                        for (std::size_t j = 0; j < k; ++j)
                            ah[q] += pair.A.at(q * k + j) * h[i][j];
                    for (std::size_t j = 0; j < d; ++j) {
                        double bah = 0.0;
                        for (std::size_t q = 0; q < r; ++q)
                            bah += pair.B.at(j * r + q) * ah[q];
                        out[i][j] += adapters->gamma() * bah;
                    }
                }
            }
            return out;
        };
        Mat q = project("q", ttl::Projection::Q);
        Mat k = project("k", ttl::Projection::K);
        Mat v = project("v", ttl::Projection::V);

        Mat merged(x.size(), std::vector<double>(d, 0.0));
        const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
        for (std::size_t head = 0; head < cfg.num_heads; ++head) {
            const std::size_t off = head * hd;
            for (std::size_t i = 0; i < x.size(); ++i) {
                std::vector<double> logits(x.size());
                double mx = -1e300;
                for (std::size_t j = 0; j < x.size(); ++j) {
                    double dot = 0.0;
                    for (std::size_t m = 0; m < hd; ++m)
                        dot += q[i][off + m] * k[j][off + m];
                    logits[j] = dot * scale;
                    mx = std::max(mx, logits[j]);
                }
                double z = 0.0;
                for (auto& lv : logits) {
                    lv = std::exp(lv - mx);
                    z += lv;
                }
                for (std::size_t j = 0; j < x.size(); ++j)
                    for (std::size_t m = 0; m < hd; ++m)
                        merged[i][off + m] += (logits[j] / z) * v[j][off + m];
            }
        }
        Mat attn_out = mat_mul(merged, to_mat(ckpt.at(p + "attn.out.weight")));
        add_bias(attn_out, ckpt.at(p + "attn.out.bias"));
        for (std::size_t i = 0; i < x.size(); ++i)
            for (std::size_t j = 0; j < d; ++j) x[i][j] += attn_out[i][j];

        Mat h2 = layer_norm(x, ckpt.at(p + "ln2.g"), ckpt.at(p + "ln2.b"));
        Mat m1 = mat_mul(h2, to_mat(ckpt.at(p + "mlp.fc1.weight")));
        add_bias(m1, ckpt.at(p + "mlp.fc1.bias"));
        for (auto& row : m1)
            for (auto& vv : row) vv = 0.5 * vv * (1.0 + std::erf(vv / std::sqrt(2.0)));
        Mat m2 = mat_mul(m1, to_mat(ckpt.at(p + "mlp.fc2.weight")));
        add_bias(m2, ckpt.at(p + "mlp.fc2.bias"));
        for (std::size_t i = 0; i < x.size(); ++i)
            for (std::size_t j = 0; j < d; ++j) x[i][j] += m2[i][j];
    }

    Mat cls = {x[0]};
    cls = layer_norm(cls, ckpt.at("ln_f.g"), ckpt.at("ln_f.b"));
    Mat emb = mat_mul(cls, to_mat(ckpt.at("proj.weight")));
    double n2 = 0.0;
    for (double vv : emb[0]) n2 += vv * vv;
    const double inv = 1.0 / std::sqrt(n2);
    ttl::Tensor out({cfg.out_dim});
    for (std::size_t j = 0; j < cfg.out_dim; ++j) out.mutable_data()[j] = emb[0][j] * inv;
    return out;
}

}  // namespace reference
