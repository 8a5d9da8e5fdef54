#pragma once

#include <optional>
#include <vector>

#include "ttl/augment.hpp"
#include "ttl/dataset.hpp"
#include "ttl/encoder.hpp"
#include "ttl/lora.hpp"
#include "ttl/objective.hpp"

namespace ttl {

struct AdamWConfig {
    double lr = 5e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// decoupled weight decay, bias-corrected moments, in-place update
class AdamW {
public:
    AdamW(std::vector<Tensor> params, AdamWConfig cfg);

    void step();       // consumes accumulated grads, then zeroes them
    void reset_state();
    std::size_t step_count() const { return t_; }

private:
    std::vector<Tensor> params_;
    AdamWConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
};

enum class Method { ttl_weighted, ttl_unweighted, entropy_select, zeroshot };
Method method_from_string(const std::string& s);
const char* method_name(Method m);

enum class PredictionProtocol { original_view, mean_probs };

struct AdaptConfig {
    std::size_t steps = 1;
    AdamWConfig optimizer;
    Method method = Method::ttl_weighted;
    PredictionProtocol prediction_protocol = PredictionProtocol::original_view;
    bool episodic_reset = true;
    double tau = 100.0;

    void validate() const;
};

struct AdaptReport {
    std::size_t sample_id = 0;
    ProbVector pre;                     // zero-shot, original view
    ProbVector post;                    // after adaptation, per protocol
    ProbVector post_mean_probs;         // mean over views, always reported
    std::vector<double> view_entropies; // at the last forward
    std::vector<double> view_betas;
    std::vector<double> loss_per_step;
    bool nonfinite_fallback = false;
    double wall_time_sec = 0.0;
};

// One full episode: views -> loss -> S optimizer steps on adapter params ->
// predict -> reset (when episodic). Frozen weights are never touched.
AdaptReport adapt_one(const Tensor& image, std::size_t sample_id,
                      const EncoderCheckpoint& ckpt, LoraAdapterSet& adapters,
                      const ClassPrototypes& prototypes, const AugmentConfig& aug_cfg,
                      const WeightedLossConfig& loss_cfg, const AdaptConfig& adapt_cfg);

struct StreamMetrics {
    double top1 = 0.0;
    double mean_pre_entropy = 0.0;
    double mean_post_entropy = 0.0;
    std::size_t episodes = 0;
    std::size_t fallbacks = 0;
    std::vector<AdaptReport> reports;
    std::vector<std::int64_t> labels;
};

StreamMetrics evaluate_stream(const DatasetContainer& ds, const EncoderCheckpoint& ckpt,
                              const ClassPrototypes& prototypes, const LoraSpec& lora_spec,
                              const AugmentConfig& aug_cfg,
                              const WeightedLossConfig& loss_cfg,
                              const AdaptConfig& adapt_cfg,
                              std::optional<std::size_t> limit = std::nullopt,
                              std::size_t num_threads = 1);

}  // namespace ttl
