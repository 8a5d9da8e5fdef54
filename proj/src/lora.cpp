#include "ttl/lora.hpp"

#include <cmath>

namespace ttl {

const char* projection_name(Projection p) {
    switch (p) {
        case Projection::Q: return "q";
        case Projection::K: return "k";
        case Projection::V: return "v";
    }
    return "?";
}

Projection projection_from_char(char c) {
    switch (c) {
        case 'q': case 'Q': return Projection::Q;
        case 'k': case 'K': return Projection::K;
        case 'v': case 'V': return Projection::V;
    }
    throw config_error(std::string("unknown projection '") + c + "'");
}

double LoraSpec::gamma() const {
    if (alpha <= 0.0) throw config_error("lora: alpha must be positive");
    return scaling == ScalingConvention::rank_over_alpha ? static_cast<double>(rank) / alpha
                                               : alpha / static_cast<double>(rank);
}

void LoraSpec::validate(const EncoderConfig& config) const {
    const std::size_t d = config.embed_dim;
    if (rank < 1 || rank > d)
        throw config_error("lora: rank " + std::to_string(rank) + " outside [1, " +
                           std::to_string(d) + "]");
    if (target_projections.empty())
        throw config_error("lora: no target projections");
    for (auto l : target_layers)
        if (l < 1 || l > config.num_layers)
            throw config_error("lora: target layer " + std::to_string(l) +
                               " outside [1, " + std::to_string(config.num_layers) + "]");
    if (target_layers.empty()) throw config_error("lora: no target layers");
    gamma();  // validates alpha
}

namespace {

Tensor init_matrix(std::size_t rows, std::size_t cols, LoraInit policy, bool is_b, Rng& rng) {
    Tensor t({rows, cols});
    auto data = t.mutable_data();
    const double fan_in = static_cast<double>(cols);
    const double fan_out = static_cast<double>(rows);
    switch (policy) {
        case LoraInit::xavier_A_zero_B:
            if (is_b) return t;  // zeros
            [[fallthrough]];
        case LoraInit::xavier_both: {
            const double bound = std::sqrt(6.0 / (fan_in + fan_out));
            for (auto& v : data) v = rng.uniform(-bound, bound);
            break;
        }
        case LoraInit::kaiming_both: {
            const double std_dev = std::sqrt(2.0 / fan_in);
            for (auto& v : data) v = rng.normal(0.0, std_dev);
            break;
        }
        case LoraInit::gaussian_both:
            for (auto& v : data) v = rng.normal(0.0, 0.02);
            break;
    }
    return t;
}

}  // namespace

LoraAdapterSet LoraAdapterSet::init(const LoraSpec& spec, const EncoderConfig& config) {
    spec.validate(config);
    LoraAdapterSet set;
    set.spec_ = spec;
    set.gamma_ = spec.gamma();
    const std::size_t d = config.embed_dim;
    const std::size_t k = config.embed_dim;  // Q/K/V input dim equals embed dim
    for (auto layer : spec.target_layers) {
        for (auto proj : spec.target_projections) {
            // one stream per (layer, projection) so the draw order is
            // independent of iteration order
            Rng rng(spec.seed, layer, static_cast<std::uint64_t>(proj) + 1);
            Pair p;
            p.A = init_matrix(spec.rank, k, spec.init_policy, /*is_b=*/false, rng);
            p.B = init_matrix(d, spec.rank, spec.init_policy, /*is_b=*/true, rng);
            p.A.set_requires_grad(true);
            p.B.set_requires_grad(true);
            auto key = std::make_pair(layer, static_cast<int>(proj));
            set.snapshot_[key] = Pair{p.A.clone(), p.B.clone()};
            set.pairs_[key] = std::move(p);
        }
    }
    return set;
}

bool LoraAdapterSet::has(std::size_t layer, Projection proj) const {
    return pairs_.count({layer, static_cast<int>(proj)}) > 0;
}

const LoraAdapterSet::Pair& LoraAdapterSet::pair(std::size_t layer, Projection proj) const {
    auto it = pairs_.find({layer, static_cast<int>(proj)});
    if (it == pairs_.end())
        throw config_error("lora: no adapter at layer " + std::to_string(layer) +
                           " projection " + projection_name(proj));
    return it->second;
}

LoraAdapterSet::Pair& LoraAdapterSet::pair(std::size_t layer, Projection proj) {
    return const_cast<Pair&>(static_cast<const LoraAdapterSet*>(this)->pair(layer, proj));
}

Tensor LoraAdapterSet::delta_forward(std::size_t layer, Projection proj, const Tensor& h,
                                     GradTape* tape) const {
    const Pair& p = pair(layer, proj);
    // row-major composition of gamma * B A h
    Tensor ha = matmul(h, transpose(p.A, tape), tape);
    Tensor hab = matmul(ha, transpose(p.B, tape), tape);
    return scale(hab, gamma_, tape);
}

std::vector<Tensor> LoraAdapterSet::trainable_parameters() const {
    std::vector<Tensor> out;
    for (const auto& [key, p] : pairs_) {
        out.push_back(p.A);
        out.push_back(p.B);
    }
    return out;
}

std::size_t LoraAdapterSet::trainable_parameter_count() const {
    std::size_t n = 0;
    for (const auto& [key, p] : pairs_) n += p.A.size() + p.B.size();
    return n;
}

void LoraAdapterSet::reset() {
    for (auto& [key, p] : pairs_) {
        const Pair& snap = snapshot_.at(key);
        std::copy(snap.A.data().begin(), snap.A.data().end(), p.A.mutable_data().begin());
        std::copy(snap.B.data().begin(), snap.B.data().end(), p.B.mutable_data().begin());
        p.A.zero_grad();
        p.B.zero_grad();
    }
}

std::map<std::string, Tensor> LoraAdapterSet::named_tensors() const {
    std::map<std::string, Tensor> out;
    for (const auto& [key, p] : pairs_) {
        std::string base = "lora.layer" + std::to_string(key.first) + "." +
                           projection_name(static_cast<Projection>(key.second));
        out[base + ".A"] = p.A;
        out[base + ".B"] = p.B;
    }
    return out;
}

}  // namespace ttl
