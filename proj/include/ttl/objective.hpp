#pragma once

#include <string>
#include <vector>

#include "ttl/ops.hpp"
#include "ttl/tensor.hpp"

namespace ttl {

struct ClassPrototypes {
    Tensor matrix;                         // [C, out_dim], unit-norm rows
    std::vector<std::string> class_names;  // size C

    std::size_t num_classes() const { return matrix.rows(); }
    void validate() const;

    // fixed random orthonormal prototypes (requires C <= out_dim)
    static ClassPrototypes random_orthonormal(std::size_t num_classes, std::size_t out_dim,
                                              std::uint64_t seed,
                                              std::vector<std::string> names = {});
};

struct ProbVector {
    std::vector<double> probs;
    std::vector<double> logits;  // tau-scaled cosine similarities
    double entropy = 0.0;        // nats

    std::size_t argmax() const;
};

enum class WeightDirection { confident_up, literal };

struct WeightedLossConfig {
    double epsilon = 0.4;
    bool beta_stop_gradient = true;
    WeightDirection weight_direction = WeightDirection::confident_up;
    double cutoff_rho = 1.0;  // used by the confidence-selection baseline

    void validate() const;
};

// plain-value path, used for reporting and as the non-differentiable probe
ProbVector predict_probs(const Tensor& embedding, const ClassPrototypes& prototypes,
                         double tau);

// entropy of a plain probability vector, 0*ln 0 := 0
double entropy(std::span<const double> probs);

double beta_weight(double entropy_nats, const WeightedLossConfig& cfg);

// Differentiable path. Each view contributes a probability tensor [C] produced
// under the tape; these build the scalar loss tensors for backward().
Tensor predict_probs_t(const Tensor& embedding, const ClassPrototypes& prototypes,
                       double tau, GradTape* tape);
Tensor entropy_t(const Tensor& probs, GradTape* tape);

Tensor weighted_entropy_loss(const std::vector<Tensor>& view_probs,
                             const WeightedLossConfig& cfg, GradTape* tape);

// keep the ceil(rho*N) lowest-entropy views; entropy of their averaged probs
Tensor selected_entropy_loss(const std::vector<Tensor>& view_probs, double rho,
                             GradTape* tape);

struct OctileBin {
    double mean_entropy = 0.0;
    double accuracy = 0.0;
    std::size_t count = 0;
};

struct EntropyRecord {
    double entropy;
    bool correct;
};

// sort by entropy, split into 8 bins (remainder spread over the earlier bins)
std::vector<OctileBin> octile_report(std::vector<EntropyRecord> records);

}  // namespace ttl
