#include "ttl/objective.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ttl {

void ClassPrototypes::validate() const {
    if (matrix.ndim() != 2) throw shape_error("prototypes: matrix must be 2-D");
    const std::size_t c = matrix.rows(), d = matrix.cols();
    if (!class_names.empty() && class_names.size() != c)
        throw config_error("prototypes: name count vs row count");
    for (std::size_t i = 0; i < c; ++i) {
        double n2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) n2 += matrix.at(i * d + j) * matrix.at(i * d + j);
        if (std::abs(std::sqrt(n2) - 1.0) > 1e-9)
            throw numeric_error("prototypes: row " + std::to_string(i) + " not unit-norm");
    }
}

ClassPrototypes ClassPrototypes::random_orthonormal(std::size_t num_classes,
                                                    std::size_t out_dim, std::uint64_t seed,
                                                    std::vector<std::string> names) {
    if (num_classes > out_dim)
        throw config_error("prototypes: need num_classes <= out_dim for orthonormal rows");
    Rng rng(seed, 0x9e37, 0);
    Tensor m({num_classes, out_dim});
    auto data = m.mutable_data();
    // Gram-Schmidt on Gaussian rows
    for (std::size_t i = 0; i < num_classes; ++i) {
        for (;;) {
            for (std::size_t j = 0; j < out_dim; ++j) data[i * out_dim + j] = rng.normal();
            for (std::size_t p = 0; p < i; ++p) {
                double dot = 0.0;
                for (std::size_t j = 0; j < out_dim; ++j)
                    dot += data[i * out_dim + j] * data[p * out_dim + j];
                for (std::size_t j = 0; j < out_dim; ++j)
                    data[i * out_dim + j] -= dot * data[p * out_dim + j];
            }
            double n2 = 0.0;
            for (std::size_t j = 0; j < out_dim; ++j)
                n2 += data[i * out_dim + j] * data[i * out_dim + j];
            if (n2 > 1e-12) {
                double inv = 1.0 / std::sqrt(n2);
                for (std::size_t j = 0; j < out_dim; ++j) data[i * out_dim + j] *= inv;
                break;
            }
        }
    }
    ClassPrototypes out;
    out.matrix = std::move(m);
    if (names.empty())
        for (std::size_t i = 0; i < num_classes; ++i)
            names.push_back("class" + std::to_string(i));
    out.class_names = std::move(names);
    return out;
}

std::size_t ProbVector::argmax() const {
    return static_cast<std::size_t>(
        std::max_element(probs.begin(), probs.end()) - probs.begin());
}

void WeightedLossConfig::validate() const {
    if (!std::isfinite(epsilon)) throw config_error("loss: epsilon must be finite");
    if (!(cutoff_rho > 0.0 && cutoff_rho <= 1.0))
        throw config_error("loss: cutoff_rho must be in (0, 1]");
}

ProbVector predict_probs(const Tensor& embedding, const ClassPrototypes& prototypes,
                         double tau) {
    if (tau <= 0.0) throw numeric_error("predict_probs: tau must be positive");
    const std::size_t d = prototypes.matrix.cols();
    if (embedding.size() != d)
        throw shape_error("predict_probs: embedding dim " + std::to_string(embedding.size()) +
                          " vs prototype dim " + std::to_string(d));
    double n2 = 0.0;
    for (double v : embedding.data()) n2 += v * v;
    if (n2 < 1e-24) throw numeric_error("predict_probs: zero-norm embedding");
    const double inv_norm = 1.0 / std::sqrt(n2);

    const std::size_t c = prototypes.num_classes();
    ProbVector out;
    out.logits.resize(c);
    for (std::size_t i = 0; i < c; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j)
            dot += prototypes.matrix.at(i * d + j) * embedding.at(j);
        out.logits[i] = tau * dot * inv_norm;
    }
    double mx = *std::max_element(out.logits.begin(), out.logits.end());
    out.probs.resize(c);
    double z = 0.0;
    for (std::size_t i = 0; i < c; ++i) {
        out.probs[i] = std::exp(out.logits[i] - mx);
        z += out.probs[i];
    }
    for (auto& p : out.probs) p /= z;
    out.entropy = entropy(out.probs);
    return out;
}

double entropy(std::span<const double> probs) {
    double sum = 0.0, h = 0.0;
    for (double p : probs) {
        if (p < 0.0) throw numeric_error("entropy: negative probability");
        sum += p;
        if (p > 0.0) h -= p * std::log(p);
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw numeric_error("entropy: probabilities sum to " + std::to_string(sum));
    return h;
}

double beta_weight(double h, const WeightedLossConfig& cfg) {
    if (h < 0.0) throw numeric_error("beta_weight: negative entropy");
    return cfg.weight_direction == WeightDirection::confident_up
               ? std::exp(cfg.epsilon - h)
               : std::exp(cfg.epsilon + h);
}

Tensor predict_probs_t(const Tensor& embedding, const ClassPrototypes& prototypes,
                       double tau, GradTape* tape) {
    const std::size_t d = prototypes.matrix.cols();
    Tensor col = reshape(embedding, {d, 1}, tape);
    Tensor sims = matmul(prototypes.matrix, col, tape);  // embedding is unit-norm
    Tensor logits = reshape(sims, {prototypes.num_classes()}, tape);
    return softmax(logits, tau, tape);
}

Tensor entropy_t(const Tensor& probs, GradTape* tape) {
    Tensor plogp = mul(probs, log_op(probs, tape), tape);
    return scale(sum(plogp, tape), -1.0, tape);
}

Tensor weighted_entropy_loss(const std::vector<Tensor>& view_probs,
                             const WeightedLossConfig& cfg, GradTape* tape) {
    cfg.validate();
    if (view_probs.empty()) throw config_error("weighted_entropy_loss: empty view list");
    Tensor acc;
    bool first = true;
    for (const auto& p : view_probs) {
        Tensor h = entropy_t(p, tape);
        Tensor term;
        if (cfg.beta_stop_gradient) {
            term = scale(h, beta_weight(h.item(), cfg), tape);
        } else {
            const double sign =
                cfg.weight_direction == WeightDirection::confident_up ? -1.0 : 1.0;
            Tensor beta = exp_op(add_scalar(scale(h, sign, tape), cfg.epsilon, tape), tape);
            term = mul(beta, h, tape);
        }
        acc = first ? term : add(acc, term, tape);
        first = false;
    }
    return scale(acc, 1.0 / static_cast<double>(view_probs.size()), tape);
}

Tensor selected_entropy_loss(const std::vector<Tensor>& view_probs, double rho,
                             GradTape* tape) {
    if (!(rho > 0.0 && rho <= 1.0))
        throw config_error("selected_entropy_loss: rho must be in (0, 1]");
    if (view_probs.empty()) throw config_error("selected_entropy_loss: empty view list");
    const std::size_t n = view_probs.size();
    const std::size_t keep = static_cast<std::size_t>(
        std::ceil(rho * static_cast<double>(n)));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> ent(n);
    for (std::size_t i = 0; i < n; ++i)
        ent[i] = entropy(std::span<const double>(view_probs[i].data()));
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return ent[a] < ent[b]; });

    Tensor acc = view_probs[order[0]];
    for (std::size_t i = 1; i < keep; ++i) acc = add(acc, view_probs[order[i]], tape);
    Tensor avg = scale(acc, 1.0 / static_cast<double>(keep), tape);
    return entropy_t(avg, tape);
}

std::vector<OctileBin> octile_report(std::vector<EntropyRecord> records) {
    if (records.size() < 8)
        throw config_error("octile_report: need at least 8 records, got " +
                           std::to_string(records.size()));
    std::stable_sort(records.begin(), records.end(),
                     [](const EntropyRecord& a, const EntropyRecord& b) {
                         return a.entropy < b.entropy;
                     });
    const std::size_t n = records.size();
    const std::size_t base = n / 8, rem = n % 8;
    std::vector<OctileBin> bins(8);
    std::size_t pos = 0;
    for (std::size_t b = 0; b < 8; ++b) {
        const std::size_t sz = base + (b < rem ? 1 : 0);
        double sum_h = 0.0;
        std::size_t correct = 0;
        for (std::size_t i = 0; i < sz; ++i) {
            sum_h += records[pos].entropy;
            correct += records[pos].correct ? 1 : 0;
            ++pos;
        }
        bins[b].count = sz;
        bins[b].mean_entropy = sz ? sum_h / static_cast<double>(sz) : 0.0;
        bins[b].accuracy = sz ? static_cast<double>(correct) / static_cast<double>(sz) : 0.0;
    }
    return bins;
}

}  // namespace ttl
