#pragma once

#include <map>
#include <set>
#include <vector>

#include "ttl/encoder.hpp"
#include "ttl/tensor.hpp"

namespace ttl {

enum class Projection { Q, K, V };

const char* projection_name(Projection p);
Projection projection_from_char(char c);

enum class LoraInit { xavier_both, xavier_A_zero_B, kaiming_both, gaussian_both };

enum class ScalingConvention { rank_over_alpha, alpha_over_rank };  // gamma = r/alpha vs alpha/r

struct LoraSpec {
    std::size_t rank = 16;
    double alpha = 32.0;
    std::set<std::size_t> target_layers;       // 1-based layer indices
    std::set<Projection> target_projections;   // nonempty
    LoraInit init_policy = LoraInit::xavier_A_zero_B;
    ScalingConvention scaling = ScalingConvention::rank_over_alpha;
    std::uint64_t seed = 0;

    double gamma() const;
    void validate(const EncoderConfig& config) const;
};

// Trainable (A, B) pairs per targeted (layer, projection). A is [r,k], B is
// [d,r]; the adapted projection adds gamma * (h A^T) B^T on top of the frozen
// path.
class LoraAdapterSet {
public:
    struct Pair {
        Tensor A;
        Tensor B;
    };

    LoraAdapterSet() = default;
    static LoraAdapterSet init(const LoraSpec& spec, const EncoderConfig& config);

    bool has(std::size_t layer, Projection proj) const;
    const Pair& pair(std::size_t layer, Projection proj) const;
    Pair& pair(std::size_t layer, Projection proj);

    double gamma() const { return gamma_; }
    const LoraSpec& spec() const { return spec_; }

    // gamma * B A h for a [T,k] row-major activation block
    Tensor delta_forward(std::size_t layer, Projection proj, const Tensor& h,
                         GradTape* tape = nullptr) const;

    std::vector<Tensor> trainable_parameters() const;
    std::size_t trainable_parameter_count() const;

    // restore every A,B to its initialization snapshot, bit for bit
    void reset();

    std::map<std::string, Tensor> named_tensors() const;  // for debug dumps

private:
    LoraSpec spec_;
    double gamma_ = 0.0;
    std::map<std::pair<std::size_t, int>, Pair> pairs_;
    std::map<std::pair<std::size_t, int>, Pair> snapshot_;
};

}  // namespace ttl
