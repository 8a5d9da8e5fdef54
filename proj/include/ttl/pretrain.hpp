#pragma once

#include "ttl/adapt.hpp"
#include "ttl/dataset.hpp"
#include "ttl/encoder.hpp"
#include "ttl/objective.hpp"

namespace ttl {

struct PretrainConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    AdamWConfig optimizer{.lr = 1e-3, .weight_decay = 1e-4};
    double tau = 100.0;
    std::uint64_t seed = 0;
    std::size_t num_threads = 1;
    bool verbose = false;
};

struct PretrainResult {
    EncoderCheckpoint checkpoint;
    ClassPrototypes prototypes;
    double final_train_accuracy = 0.0;
    double val_accuracy = 0.0;
    std::vector<double> epoch_losses;
};

// Cross-entropy over tau-scaled cosine similarities to fixed random
// orthonormal class prototypes; the prototypes stay frozen so inference can
// score against the same vectors.
PretrainResult pretrain(const DatasetContainer& train, const DatasetContainer& val,
                        const EncoderConfig& config, const PretrainConfig& cfg);

double zero_shot_accuracy(const DatasetContainer& ds, const EncoderCheckpoint& ckpt,
                          const ClassPrototypes& prototypes, double tau,
                          std::size_t num_threads = 1);

}  // namespace ttl
