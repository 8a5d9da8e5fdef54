#pragma once

#include <map>
#include <string>

#include "ttl/ops.hpp"
#include "ttl/tensor.hpp"

namespace ttl {

struct EncoderConfig {
    std::size_t image_size = 32;
    std::size_t patch_size = 8;
    std::size_t embed_dim = 64;
    std::size_t num_layers = 6;
    std::size_t num_heads = 4;
    double mlp_ratio = 4.0;
    std::size_t out_dim = 64;

    std::size_t num_patches() const {
        return (image_size / patch_size) * (image_size / patch_size);
    }
    std::size_t seq_len() const { return num_patches() + 1; }  // +CLS
    std::size_t head_dim() const { return embed_dim / num_heads; }
    std::size_t mlp_hidden() const {
        return static_cast<std::size_t>(mlp_ratio * static_cast<double>(embed_dim));
    }
    void validate() const;
};

// Frozen weights, addressed by name. Weight matrices are stored so that a
// row-major token matrix X multiplies on the left: out = X * W + b.
struct EncoderCheckpoint {
    EncoderConfig config;
    std::map<std::string, Tensor> tensors;  // ordered for stable serialization
    std::vector<double> norm_mean;          // per-channel input normalization
    std::vector<double> norm_std;

    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;

    void set_trainable(bool trainable);
    std::uint64_t checksum() const;

    static EncoderCheckpoint random_init(const EncoderConfig& config, std::uint64_t seed);
};

class LoraAdapterSet;  // lora.hpp

// image [C,H,W] -> unit-norm embedding [out_dim]
Tensor encode(const EncoderCheckpoint& ckpt, const LoraAdapterSet* adapters,
              const Tensor& image, GradTape* tape = nullptr);

// exposed for block-level tests: one pre-norm transformer block over [T,d] tokens
Tensor attention_block(const EncoderCheckpoint& ckpt, std::size_t layer,
                       const LoraAdapterSet* adapters, const Tensor& tokens,
                       GradTape* tape = nullptr);

}  // namespace ttl
