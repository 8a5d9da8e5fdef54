#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "ttl/lora.hpp"
#include "ttl/objective.hpp"

using namespace ttl;

namespace {

EncoderConfig desk_config() { return EncoderConfig{}; }  // 32x32, d=64, L=6

LoraSpec base_spec() {
    LoraSpec spec;
    spec.rank = 16;
    spec.alpha = 32.0;
    spec.target_layers = {4, 5, 6};
    spec.target_projections = {Projection::Q, Projection::V};
    spec.seed = 1;
    return spec;
}

}  // namespace

TEST_CASE("gamma is r/alpha; rank 16 alpha 32 gives 0.5") {
    LoraSpec spec = base_spec();
    CHECK(spec.gamma() == 0.5);

    spec.scaling = ScalingConvention::alpha_over_rank;
    CHECK(spec.gamma() == 2.0);
}

TEST_CASE("spec validation") {
    EncoderConfig cfg = desk_config();
    LoraSpec spec = base_spec();
    spec.rank = 65;  // > d = 64
    CHECK_THROWS_AS(LoraAdapterSet::init(spec, cfg), config_error);

    spec = base_spec();
    spec.target_projections = {};
    CHECK_THROWS_AS(LoraAdapterSet::init(spec, cfg), config_error);

    spec = base_spec();
    spec.target_layers = {0};
    CHECK_THROWS_AS(LoraAdapterSet::init(spec, cfg), config_error);
}

TEST_CASE("same seed and spec give bit-identical adapters") {
    EncoderConfig cfg = desk_config();
    LoraSpec spec = base_spec();
    spec.init_policy = LoraInit::xavier_both;
    LoraAdapterSet a = LoraAdapterSet::init(spec, cfg);
    LoraAdapterSet b = LoraAdapterSet::init(spec, cfg);
    for (std::size_t l : {4, 5, 6})
        for (auto proj : {Projection::Q, Projection::V}) {
            const auto& pa = a.pair(l, proj);
            const auto& pb = b.pair(l, proj);
            for (std::size_t i = 0; i < pa.A.size(); ++i) CHECK(pa.A.at(i) == pb.A.at(i));
            for (std::size_t i = 0; i < pa.B.size(); ++i) CHECK(pa.B.at(i) == pb.B.at(i));
        }
}

TEST_CASE("xavier bounds and zero-B policy") {
    EncoderConfig cfg = desk_config();
    LoraSpec spec = base_spec();
    spec.init_policy = LoraInit::xavier_A_zero_B;
    LoraAdapterSet set = LoraAdapterSet::init(spec, cfg);
    const auto& p = set.pair(4, Projection::Q);
    const double bound_a = std::sqrt(6.0 / (64.0 + 16.0));
    bool any_nonzero = false;
    for (std::size_t i = 0; i < p.A.size(); ++i) {
        CHECK(std::abs(p.A.at(i)) <= bound_a);
        any_nonzero = any_nonzero || p.A.at(i) != 0.0;
    }
    CHECK(any_nonzero);
    for (std::size_t i = 0; i < p.B.size(); ++i) CHECK(p.B.at(i) == 0.0);
}

TEST_CASE("delta_forward hand example: r=1 adapter") {
    // A = [[1,0]], B = [[2],[0]], gamma = 0.5, h = [3,7] -> [3, 0]
    LoraAdapterSet set;
    EncoderConfig cfg;
    cfg.embed_dim = 2;
    cfg.num_heads = 1;
    LoraSpec spec;
    spec.rank = 1;
    spec.alpha = 2.0;  // gamma = 1/2
    spec.target_layers = {1};
    spec.target_projections = {Projection::Q};
    set = LoraAdapterSet::init(spec, cfg);
    auto& p = set.pair(1, Projection::Q);
    p.A.mutable_data()[0] = 1.0;
    p.A.mutable_data()[1] = 0.0;
    p.B.mutable_data()[0] = 2.0;
    p.B.mutable_data()[1] = 0.0;

    Tensor h({1, 2}, {3, 7});
    Tensor out = set.delta_forward(1, Projection::Q, h);
    CHECK(out.at(0) == 3.0);
    CHECK(out.at(1) == 0.0);
}

TEST_CASE("doubling alpha exactly halves delta_forward output") {
    EncoderConfig cfg = desk_config();
    LoraSpec spec = base_spec();
    spec.init_policy = LoraInit::xavier_both;
    LoraSpec doubled = spec;
    doubled.alpha = 2.0 * spec.alpha;

    LoraAdapterSet s1 = LoraAdapterSet::init(spec, cfg);
    LoraAdapterSet s2 = LoraAdapterSet::init(doubled, cfg);

    Tensor h({3, cfg.embed_dim});
    Rng rng(17);
    for (auto& v : h.mutable_data()) v = rng.uniform(-1.0, 1.0);

    Tensor o1 = s1.delta_forward(4, Projection::Q, h);
    Tensor o2 = s2.delta_forward(4, Projection::Q, h);
    for (std::size_t i = 0; i < o1.size(); ++i) CHECK(o1.at(i) == 2.0 * o2.at(i));
}

TEST_CASE("B = 0 gives exactly zero delta") {
    EncoderConfig cfg = desk_config();
    LoraSpec spec = base_spec();
    spec.init_policy = LoraInit::xavier_A_zero_B;
    LoraAdapterSet set = LoraAdapterSet::init(spec, cfg);
    Tensor h({2, cfg.embed_dim});
    Rng rng(3);
    for (auto& v : h.mutable_data()) v = rng.uniform(-1.0, 1.0);
    Tensor out = set.delta_forward(5, Projection::V, h);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.at(i) == 0.0);
}

TEST_CASE("trainable parameter count follows r*(d+k) per target") {
    EncoderConfig cfg = desk_config();
    LoraSpec spec = base_spec();
    LoraAdapterSet set = LoraAdapterSet::init(spec, cfg);
    // 3 layers x 2 projections, each r*(d + k) with d = k = 64, r = 16
    const std::size_t expected = 6 * 16 * (64 + 64);
    CHECK(set.trainable_parameter_count() == expected);

    // a full-scale configuration: d = k = 768, r = 16, Q+V, 3 layers
    EncoderConfig big;
    big.image_size = 32;
    big.patch_size = 8;
    big.embed_dim = 768;
    big.num_layers = 12;
    big.num_heads = 12;
    LoraSpec big_spec = base_spec();
    big_spec.target_layers = {10, 11, 12};
    LoraAdapterSet big_set = LoraAdapterSet::init(big_spec, big);
    CHECK(big_set.trainable_parameter_count() == 6u * 16u * 1536u);  // 147,456
}

TEST_CASE("reset restores the snapshot bit-for-bit and is idempotent") {
    EncoderConfig cfg = desk_config();
    LoraSpec spec = base_spec();
    spec.init_policy = LoraInit::xavier_both;
    LoraAdapterSet set = LoraAdapterSet::init(spec, cfg);

    std::vector<double> original;
    for (const auto& p : set.trainable_parameters())
        original.insert(original.end(), p.data().begin(), p.data().end());

    for (auto& p : set.trainable_parameters())
        for (auto& v : p.mutable_data()) v += 0.123;

    set.reset();
    set.reset();  // idempotent

    std::size_t idx = 0;
    for (const auto& p : set.trainable_parameters())
        for (double v : p.data()) CHECK(v == original[idx++]);
}

TEST_CASE("adapter tensors remain trainable after reset") {
    EncoderConfig cfg = desk_config();
    LoraAdapterSet set = LoraAdapterSet::init(base_spec(), cfg);
    set.reset();
    for (const auto& p : set.trainable_parameters()) CHECK(p.requires_grad());
}
