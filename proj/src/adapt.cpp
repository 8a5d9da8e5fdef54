#include "ttl/adapt.hpp"

#include <chrono>
#include <cmath>
#include <thread>

namespace ttl {

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(params_[i].size(), 0.0);
        v_[i].assign(params_[i].size(), 0.0);
    }
}

void AdamW::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        auto theta = p.mutable_data();
        if (!p.has_grad()) continue;  // no gradient flowed; decoupled decay still skipped
        auto g = p.grad();
        for (std::size_t j = 0; j < theta.size(); ++j) {
            m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g[j];
            v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g[j] * g[j];
            const double mhat = m_[i][j] / bc1;
            const double vhat = v_[i][j] / bc2;
            theta[j] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                                   cfg_.weight_decay * theta[j]);
        }
        p.zero_grad();
    }
}

void AdamW::reset_state() {
    t_ = 0;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        std::fill(m_[i].begin(), m_[i].end(), 0.0);
        std::fill(v_[i].begin(), v_[i].end(), 0.0);
    }
}

Method method_from_string(const std::string& s) {
    if (s == "ttl_weighted") return Method::ttl_weighted;
    if (s == "ttl_unweighted") return Method::ttl_unweighted;
    if (s == "entropy_select") return Method::entropy_select;
    if (s == "zeroshot") return Method::zeroshot;
    throw config_error("unknown method '" + s + "'");
}

const char* method_name(Method m) {
    switch (m) {
        case Method::ttl_weighted: return "ttl_weighted";
        case Method::ttl_unweighted: return "ttl_unweighted";
        case Method::entropy_select: return "entropy_select";
        case Method::zeroshot: return "zeroshot";
    }
    return "?";
}

void AdaptConfig::validate() const {
    if (tau <= 0.0) throw config_error("adapt: tau must be positive");
    if (optimizer.lr < 0.0) throw config_error("adapt: negative learning rate");
}

namespace {

Tensor method_loss(Method method, const std::vector<Tensor>& view_probs,
                   const WeightedLossConfig& loss_cfg, GradTape* tape) {
    switch (method) {
        case Method::ttl_weighted:
            return weighted_entropy_loss(view_probs, loss_cfg, tape);
        case Method::ttl_unweighted:
            return selected_entropy_loss(view_probs, 1.0, tape);
        case Method::entropy_select:
            return selected_entropy_loss(view_probs, loss_cfg.cutoff_rho, tape);
        case Method::zeroshot:
            break;
    }
    throw config_error("method_loss: zeroshot has no loss");
}

ProbVector mean_prob_vector(const std::vector<ProbVector>& per_view) {
    ProbVector out;
    const std::size_t c = per_view[0].probs.size();
    out.probs.assign(c, 0.0);
    out.logits.assign(c, 0.0);
    for (const auto& pv : per_view)
        for (std::size_t j = 0; j < c; ++j) {
            out.probs[j] += pv.probs[j];
            out.logits[j] += pv.logits[j];
        }
    const double inv_n = 1.0 / static_cast<double>(per_view.size());
    for (std::size_t j = 0; j < c; ++j) {
        out.probs[j] *= inv_n;
        out.logits[j] *= inv_n;
    }
    out.entropy = entropy(out.probs);
    return out;
}

}  // namespace

AdaptReport adapt_one(const Tensor& image, std::size_t sample_id,
                      const EncoderCheckpoint& ckpt, LoraAdapterSet& adapters,
                      const ClassPrototypes& prototypes, const AugmentConfig& aug_cfg,
                      const WeightedLossConfig& loss_cfg, const AdaptConfig& adapt_cfg) {
    adapt_cfg.validate();
    loss_cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();

    AdaptReport report;
    report.sample_id = sample_id;
    report.pre = predict_probs(encode(ckpt, nullptr, image), prototypes, adapt_cfg.tau);

    auto finish = [&](ProbVector post, ProbVector post_mean) {
        report.post = std::move(post);
        report.post_mean_probs = std::move(post_mean);
        report.wall_time_sec =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return report;
    };

    if (adapt_cfg.method == Method::zeroshot) return finish(report.pre, report.pre);

    ViewBatch batch = make_views(image, aug_cfg, sample_id);
    AdamW optimizer(adapters.trainable_parameters(), adapt_cfg.optimizer);

    bool failed = false;
    try {
        for (std::size_t s = 0; s < adapt_cfg.steps; ++s) {
            GradTape tape;
            std::vector<Tensor> view_probs;
            view_probs.reserve(batch.views.size());
            for (const auto& v : batch.views) {
                Tensor emb = encode(ckpt, &adapters, v, &tape);
                view_probs.push_back(
                    predict_probs_t(emb, prototypes, adapt_cfg.tau, &tape));
            }
            report.view_entropies.clear();
            report.view_betas.clear();
            for (const auto& p : view_probs) {
                const double h = entropy(std::span<const double>(p.data()));
                report.view_entropies.push_back(h);
                report.view_betas.push_back(beta_weight(h, loss_cfg));
            }
            Tensor loss = method_loss(adapt_cfg.method, view_probs, loss_cfg, &tape);
            const double loss_value = loss.item();
            if (!std::isfinite(loss_value)) {
                failed = true;
                break;
            }
            report.loss_per_step.push_back(loss_value);
            tape.backward(loss);
            optimizer.step();
        }
    } catch (const numeric_error&) {
        failed = true;
    }

    if (failed) {
        report.nonfinite_fallback = true;
        if (adapt_cfg.episodic_reset) adapters.reset();
        return finish(report.pre, report.pre);
    }

    // post-adaptation predictions, original view and mean over all views
    std::vector<ProbVector> post_views;
    post_views.reserve(batch.views.size());
    for (const auto& v : batch.views)
        post_views.push_back(
            predict_probs(encode(ckpt, &adapters, v), prototypes, adapt_cfg.tau));
    ProbVector post_mean = mean_prob_vector(post_views);
    ProbVector post = adapt_cfg.prediction_protocol == PredictionProtocol::original_view
                          ? post_views[0]
                          : post_mean;

    if (adapt_cfg.episodic_reset) adapters.reset();
    return finish(std::move(post), std::move(post_mean));
}

StreamMetrics evaluate_stream(const DatasetContainer& ds, const EncoderCheckpoint& ckpt,
                              const ClassPrototypes& prototypes, const LoraSpec& lora_spec,
                              const AugmentConfig& aug_cfg,
                              const WeightedLossConfig& loss_cfg,
                              const AdaptConfig& adapt_cfg,
                              std::optional<std::size_t> limit, std::size_t num_threads) {
    ds.validate();
    const std::size_t n = limit ? std::min(*limit, ds.count()) : ds.count();
    if (n == 0) throw config_error("evaluate_stream: empty sample stream");

    StreamMetrics metrics;
    metrics.reports.resize(n);
    metrics.labels.assign(ds.labels.begin(), ds.labels.begin() + static_cast<long>(n));

    auto worker = [&](std::size_t begin, std::size_t end) {
        LoraAdapterSet adapters;
        if (adapt_cfg.method != Method::zeroshot)
            adapters = LoraAdapterSet::init(lora_spec, ckpt.config);
        for (std::size_t i = begin; i < end; ++i) {
            Tensor img = ds.image_tensor(i);
            metrics.reports[i] =
                adapt_one(img, i, ckpt, adapters, prototypes, aug_cfg, loss_cfg, adapt_cfg);
        }
    };

    if (num_threads <= 1) {
        worker(0, n);
    } else {
        std::vector<std::thread> threads;
        const std::size_t chunk = (n + num_threads - 1) / num_threads;
        for (std::size_t t = 0; t < num_threads; ++t) {
            const std::size_t begin = t * chunk;
            const std::size_t end = std::min(begin + chunk, n);
            if (begin >= end) break;
            threads.emplace_back(worker, begin, end);
        }
        for (auto& th : threads) th.join();
    }

    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const AdaptReport& r = metrics.reports[i];
        if (static_cast<std::int64_t>(r.post.argmax()) == metrics.labels[i]) ++correct;
        metrics.mean_pre_entropy += r.pre.entropy;
        metrics.mean_post_entropy += r.post.entropy;
        if (r.nonfinite_fallback) ++metrics.fallbacks;
    }
    metrics.episodes = n;
    metrics.top1 = static_cast<double>(correct) / static_cast<double>(n);
    metrics.mean_pre_entropy /= static_cast<double>(n);
    metrics.mean_post_entropy /= static_cast<double>(n);
    return metrics;
}

}  // namespace ttl
