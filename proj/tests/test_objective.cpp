#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "ttl/encoder.hpp"
#include "ttl/lora.hpp"
#include "ttl/objective.hpp"

using namespace ttl;

namespace {

Tensor prob_tensor(std::vector<double> p) {
    const std::size_t n = p.size();
    return Tensor({n}, std::move(p));
}

ClassPrototypes orthonormal_protos(std::size_t c, std::size_t d, std::uint64_t seed = 1) {
    return ClassPrototypes::random_orthonormal(c, d, seed);
}

}  // namespace

TEST_CASE("prototype rows are unit norm and orthogonal") {
    ClassPrototypes p = orthonormal_protos(8, 64);
    p.validate();
    const std::size_t d = 64;
    for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = i + 1; j < 8; ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < d; ++k)
                dot += p.matrix.at(i * d + k) * p.matrix.at(j * d + k);
            CHECK(std::abs(dot) <= 1e-10);
        }
}

TEST_CASE("predict_probs limit cases") {
    ClassPrototypes p = orthonormal_protos(4, 16);
    const std::size_t d = 16;

    SUBCASE("embedding equal to a prototype row wins at high temperature") {
        Tensor emb({d});
        for (std::size_t k = 0; k < d; ++k) emb.mutable_data()[k] = p.matrix.at(2 * d + k);
        ProbVector pv = predict_probs(emb, p, 100.0);
        CHECK(pv.argmax() == 2);
        CHECK(pv.probs[2] > 1.0 - 1e-12);
    }

    SUBCASE("all prototypes identical gives uniform probs and entropy ln C") {
        ClassPrototypes same;
        same.matrix = Tensor({4, d});
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t k = 0; k < d; ++k)
                same.matrix.mutable_data()[i * d + k] = p.matrix.at(k);
        Tensor emb({d});
        Rng rng(2);
        for (auto& v : emb.mutable_data()) v = rng.normal();
        ProbVector pv = predict_probs(emb, same, 100.0);
        for (double pr : pv.probs) CHECK(pr == doctest::Approx(0.25).epsilon(1e-12));
        CHECK(pv.entropy == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    }

    SUBCASE("zero-norm embedding is an error") {
        CHECK_THROWS_AS(predict_probs(Tensor({d}), p, 100.0), numeric_error);
    }
}

TEST_CASE("predict_probs matches the direct-formula oracle") {
    // C = 3, similarities (0.9, 0.1, -0.2), tau = 100
    const std::size_t d = 4;
    ClassPrototypes p;
    p.matrix = Tensor({3, d}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0});
    p.class_names = {"a", "b", "c"};
    Tensor emb({d}, {0.9, 0.1, -0.2, std::sqrt(1.0 - 0.81 - 0.01 - 0.04)});
    ProbVector pv = predict_probs(emb, p, 100.0);
    auto expected = oracle::softmax({0.9, 0.1, -0.2}, 100.0);
    CHECK(oracle::max_rel_err(std::span<const double>(pv.probs), expected, 1e-300) <= 1e-10);
    CHECK(pv.entropy == doctest::Approx(oracle::entropy(expected)).epsilon(1e-10));
}

TEST_CASE("predict_probs is invariant to positive rescaling of the embedding") {
    ClassPrototypes p = orthonormal_protos(5, 12);
    Tensor emb({12});
    Rng rng(9);
    for (auto& v : emb.mutable_data()) v = rng.normal();
    ProbVector a = predict_probs(emb, p, 50.0);
    Tensor scaled = emb.clone();
    for (auto& v : scaled.mutable_data()) v *= 37.5;
    ProbVector b = predict_probs(scaled, p, 50.0);
    for (std::size_t i = 0; i < a.probs.size(); ++i)
        CHECK(a.probs[i] == doctest::Approx(b.probs[i]).epsilon(1e-12));
}

TEST_CASE("entropy values") {
    std::vector<double> uniform(10, 0.1);
    CHECK(entropy(uniform) == doctest::Approx(std::log(10.0)).epsilon(1e-12));

    std::vector<double> onehot{0, 0, 1, 0};
    CHECK(entropy(onehot) == 0.0);

    std::vector<double> p{0.7, 0.2, 0.1};
    CHECK(entropy(p) == doctest::Approx(oracle::entropy(p)).epsilon(1e-12));
    CHECK(entropy(p) == doctest::Approx(0.801819).epsilon(1e-5));

    CHECK_THROWS_AS(entropy(std::vector<double>{-0.1, 1.1}), numeric_error);
    CHECK_THROWS_AS(entropy(std::vector<double>{0.4, 0.4}), numeric_error);
}

TEST_CASE("beta weight") {
    WeightedLossConfig cfg;  // epsilon 0.4, confident_up

    CHECK(beta_weight(0.4, cfg) == 1.0);  // H = epsilon
    CHECK(beta_weight(0.0, cfg) == doctest::Approx(std::exp(0.4)).epsilon(1e-12));

    SUBCASE("confident_up is strictly decreasing, literal strictly increasing") {
        WeightedLossConfig lit = cfg;
        lit.weight_direction = WeightDirection::literal;
        double prev_up = 1e300, prev_lit = 0.0;
        for (double h = 0.0; h <= 3.0; h += 0.1) {
            const double up = beta_weight(h, cfg);
            const double li = beta_weight(h, lit);
            CHECK(up < prev_up);
            CHECK(li > prev_lit);
            prev_up = up;
            prev_lit = li;
        }
    }
}

TEST_CASE("weighted entropy loss") {
    WeightedLossConfig cfg;
    GradTape tape;

    SUBCASE("single one-hot view gives zero loss") {
        // exact one-hot would hit log(0); use the limit via a spike
        Tensor p = prob_tensor({1.0 - 2e-16, 1e-16, 1e-16});
        Tensor loss = weighted_entropy_loss({p}, cfg, &tape);
        CHECK(std::abs(loss.item()) <= 1e-10);
    }

    SUBCASE("views at H = epsilon give loss = epsilon") {
        // 3-class distribution with entropy exactly epsilon = 0.4: solve
        // numerically for (p, (1-p)/2, (1-p)/2)
        double lo = 1.0 / 3.0, hi = 1.0 - 1e-12;
        for (int it = 0; it < 200; ++it) {
            double mid = 0.5 * (lo + hi);
            std::vector<double> probs{mid, (1 - mid) / 2, (1 - mid) / 2};
            (oracle::entropy(probs) > 0.4 ? lo : hi) = mid;
        }
        std::vector<double> probs{lo, (1 - lo) / 2, (1 - lo) / 2};
        REQUIRE(std::abs(oracle::entropy(probs) - 0.4) < 1e-9);
        Tensor p = prob_tensor(probs);
        Tensor loss = weighted_entropy_loss({p, p}, cfg, &tape);
        CHECK(loss.item() == doctest::Approx(0.4).epsilon(1e-8));
    }

    SUBCASE("matches the scalar formula oracle on mixed entropies") {
        // four probability vectors with distinct entropies
        std::vector<Tensor> views = {
            prob_tensor({0.95, 0.03, 0.02}),
            prob_tensor({0.8, 0.15, 0.05}),
            prob_tensor({0.6, 0.25, 0.15}),
            prob_tensor({0.4, 0.35, 0.25}),
        };
        double expected = 0.0;
        for (const auto& v : views) {
            const double h = oracle::entropy({v.data().begin(), v.data().end()});
            expected += std::exp(0.4 - h) * h;
        }
        expected /= 4.0;
        Tensor loss = weighted_entropy_loss(views, cfg, &tape);
        CHECK(loss.item() == doctest::Approx(expected).epsilon(1e-12));
    }

    SUBCASE("all-equal entropies reduce to beta times mean entropy") {
        Tensor p = prob_tensor({0.5, 0.3, 0.2});
        const double h = oracle::entropy({0.5, 0.3, 0.2});
        const double beta = std::exp(0.4 - h);
        Tensor loss = weighted_entropy_loss({p, p, p}, cfg, &tape);
        CHECK(std::abs(loss.item() - beta * h) <= 1e-12);
    }

    SUBCASE("empty view list is an error") {
        CHECK_THROWS_AS(weighted_entropy_loss({}, cfg, &tape), config_error);
    }
}

TEST_CASE("selected entropy loss") {
    GradTape tape;
    SUBCASE("rho = 1 with identical views equals the common entropy") {
        Tensor p = prob_tensor({0.6, 0.3, 0.1});
        Tensor loss = selected_entropy_loss({p, p, p}, 1.0, &tape);
        CHECK(loss.item() ==
              doctest::Approx(oracle::entropy({0.6, 0.3, 0.1})).epsilon(1e-12));
    }

    SUBCASE("rho = 1/N keeps only the most confident view") {
        std::vector<Tensor> views = {
            prob_tensor({0.5, 0.5, 0.0}),
            prob_tensor({0.98, 0.01, 0.01}),  // lowest entropy
            prob_tensor({0.4, 0.3, 0.3}),
            prob_tensor({0.34, 0.33, 0.33}),
        };
        Tensor loss = selected_entropy_loss(views, 0.25, &tape);
        CHECK(loss.item() ==
              doctest::Approx(oracle::entropy({0.98, 0.01, 0.01})).epsilon(1e-12));
    }

    SUBCASE("rho = 0.5 averages the two most confident views, brute-force checked") {
        std::vector<std::vector<double>> raw = {
            {0.5, 0.5, 0.0},
            {0.9, 0.05, 0.05},
            {0.25, 0.35, 0.4},
            {0.85, 0.1, 0.05},
        };
        std::vector<Tensor> views;
        for (auto& r : raw) views.push_back(prob_tensor(r));
        // brute force: enumerate all 2-subsets, pick the one with the two
        // lowest entropies, average, take entropy
        std::vector<std::pair<double, std::size_t>> hs;
        for (std::size_t i = 0; i < raw.size(); ++i)
            hs.push_back({oracle::entropy(raw[i]), i});
        std::sort(hs.begin(), hs.end());
        std::vector<double> avg(3, 0.0);
        for (int t = 0; t < 2; ++t)
            for (std::size_t j = 0; j < 3; ++j) avg[j] += 0.5 * raw[hs[t].second][j];
        Tensor loss = selected_entropy_loss(views, 0.5, &tape);
        CHECK(loss.item() == doctest::Approx(oracle::entropy(avg)).epsilon(1e-12));
    }

    SUBCASE("rho outside (0,1] is an error") {
        Tensor p = prob_tensor({0.6, 0.4});
        CHECK_THROWS_AS(selected_entropy_loss({p}, 0.0, &tape), config_error);
        CHECK_THROWS_AS(selected_entropy_loss({p}, 1.5, &tape), config_error);
    }
}

TEST_CASE("entropy of softmax is maximized exactly at equal logits") {
    Tensor logits({4}, {0.3, 0.3, 0.3, 0.3});
    Tensor p = softmax(logits, 2.0);
    CHECK(entropy(std::span<const double>(p.data())) ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));

    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor pert({4});
        for (std::size_t i = 0; i < 4; ++i)
            pert.mutable_data()[i] = 0.3 + rng.uniform(-0.1, 0.1);
        Tensor q = softmax(pert, 2.0);
        double h = entropy(std::span<const double>(q.data()));
        bool all_equal = pert.at(0) == pert.at(1) && pert.at(1) == pert.at(2) &&
                         pert.at(2) == pert.at(3);
        if (!all_equal) CHECK(h < std::log(4.0));
    }
}

TEST_CASE("octile report") {
    SUBCASE("8 records, alternating correctness") {
        std::vector<EntropyRecord> recs;
        for (int i = 1; i <= 8; ++i)
            recs.push_back({static_cast<double>(i), i % 2 == 0});
        auto bins = octile_report(recs);
        REQUIRE(bins.size() == 8);
        for (std::size_t b = 0; b < 8; ++b) {
            CHECK(bins[b].count == 1);
            CHECK(bins[b].mean_entropy == static_cast<double>(b + 1));
            CHECK(bins[b].accuracy == ((b + 1) % 2 == 0 ? 1.0 : 0.0));
        }
    }

    SUBCASE("all correct gives accuracy 1 in every bin") {
        std::vector<EntropyRecord> recs;
        Rng rng(3);
        for (int i = 0; i < 50; ++i) recs.push_back({rng.next_double(), true});
        for (const auto& b : octile_report(recs)) CHECK(b.accuracy == 1.0);
    }

    SUBCASE("100 records match an independent sort-and-slice oracle") {
        std::vector<EntropyRecord> recs;
        Rng rng(8);
        for (int i = 0; i < 100; ++i)
            recs.push_back({rng.uniform(0.0, 2.3), rng.next_double() < 0.6});
        auto bins = octile_report(recs);

        // oracle: sort pairs, slice with remainder to earlier bins
        std::vector<std::pair<double, bool>> sorted;
        for (const auto& r : recs) sorted.push_back({r.entropy, r.correct});
        std::stable_sort(sorted.begin(), sorted.end(),
                         [](auto& a, auto& b) { return a.first < b.first; });
        std::size_t pos = 0;
        for (std::size_t b = 0; b < 8; ++b) {
            const std::size_t sz = 100 / 8 + (b < 100 % 8 ? 1 : 0);
            double mean = 0.0;
            double acc = 0.0;
            for (std::size_t i = 0; i < sz; ++i) {
                mean += sorted[pos].first;
                acc += sorted[pos].second ? 1.0 : 0.0;
                ++pos;
            }
            CHECK(bins[b].count == sz);
            CHECK(bins[b].mean_entropy == doctest::Approx(mean / sz).epsilon(1e-12));
            CHECK(bins[b].accuracy == doctest::Approx(acc / sz).epsilon(1e-12));
        }
    }

    SUBCASE("fewer than 8 records is an error") {
        std::vector<EntropyRecord> recs(7, {0.5, true});
        CHECK_THROWS_AS(octile_report(recs), config_error);
    }
}

TEST_CASE("weighted-loss gradients through the micro encoder match finite differences") {
    EncoderConfig cfg;
    cfg.image_size = 8;
    cfg.patch_size = 4;
    cfg.embed_dim = 8;
    cfg.num_layers = 2;
    cfg.num_heads = 2;
    cfg.mlp_ratio = 2.0;
    cfg.out_dim = 8;
    EncoderCheckpoint ckpt = EncoderCheckpoint::random_init(cfg, 3);
    LoraSpec spec;
    spec.rank = 2;
    spec.alpha = 4.0;
    spec.target_layers = {1, 2};
    spec.target_projections = {Projection::Q, Projection::V};
    spec.seed = 5;
    spec.init_policy = LoraInit::xavier_both;
    LoraAdapterSet adapters = LoraAdapterSet::init(spec, cfg);
    ClassPrototypes protos = ClassPrototypes::random_orthonormal(3, cfg.out_dim, 11);

    std::vector<Tensor> views;
    Rng rng(13, 4, 4);
    for (int i = 0; i < 3; ++i) {
        Tensor img({3, cfg.image_size, cfg.image_size});
        for (auto& v : img.mutable_data()) v = rng.next_double();
        views.push_back(img);
    }

    WeightedLossConfig cfgw;
    auto view_entropies = [&]() {
        std::vector<double> hs;
        for (const auto& img : views) {
            Tensor emb = encode(ckpt, &adapters, img);
            hs.push_back(predict_probs(emb, protos, 10.0).entropy);
        }
        return hs;
    };
    auto forward = [&](GradTape* tape) {
        std::vector<Tensor> probs;
        for (const auto& img : views) {
            Tensor emb = encode(ckpt, &adapters, img, tape);
            probs.push_back(predict_probs_t(emb, protos, 10.0, tape));
        }
        return weighted_entropy_loss(probs, cfgw, tape);
    };

    for (bool stop : {true, false})
        for (auto dir : {WeightDirection::confident_up, WeightDirection::literal}) {
            CAPTURE(stop);
            cfgw.beta_stop_gradient = stop;
            cfgw.weight_direction = dir;
            GradTape tape;
            Tensor loss = forward(&tape);
            tape.backward(loss);

            // with stop-gradient on, beta is a constant during backward, so the
            // finite-difference probe must hold beta at its base value too
            std::vector<double> frozen_beta;
            for (double h : view_entropies()) frozen_beta.push_back(beta_weight(h, cfgw));
            auto scalar_loss = [&] {
                if (!stop) return forward(nullptr).item();
                const auto hs = view_entropies();
                double acc = 0.0;
                for (std::size_t i = 0; i < hs.size(); ++i) acc += frozen_beta[i] * hs[i];
                return acc / static_cast<double>(hs.size());
            };
            for (auto& p : adapters.trainable_parameters()) {
                auto fd = oracle::finite_diff(p, scalar_loss);
                CHECK(oracle::max_rel_err(p.grad(), fd) <= 1e-5);
                p.zero_grad();
            }
        }
}
