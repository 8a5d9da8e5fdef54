#include "ttl/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <thread>

namespace ttl {

namespace {

// -log p[label], differentiable through the tape
Tensor nll_loss(const Tensor& probs, std::size_t label, GradTape* tape) {
    Tensor col = reshape(probs, {probs.size(), 1}, tape);
    Tensor picked = slice_rows(col, label, 1, tape);
    return scale(log_op(picked, tape), -1.0, tape);
}

}  // namespace

PretrainResult pretrain(const DatasetContainer& train, const DatasetContainer& val,
                        const EncoderConfig& config, const PretrainConfig& cfg) {
    train.validate();
    val.validate();
    config.validate();
    const std::size_t num_classes = train.class_names.size();
    if (num_classes > config.out_dim)
        throw config_error("pretrain: out_dim must be >= class count for orthonormal prototypes");

    PretrainResult result;
    result.checkpoint = EncoderCheckpoint::random_init(config, cfg.seed);
    result.checkpoint.norm_mean = train.norm_mean;
    result.checkpoint.norm_std = train.norm_std;
    result.prototypes = ClassPrototypes::random_orthonormal(num_classes, config.out_dim,
                                                            cfg.seed, train.class_names);

    result.checkpoint.set_trainable(true);
    std::vector<Tensor> params;
    for (auto& [name, t] : result.checkpoint.tensors) params.push_back(t);
    AdamW optimizer(params, cfg.optimizer);

    const std::size_t n = train.count();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(cfg.seed, 0x50ff1e, epoch);
        for (std::size_t i = n; i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);

        double epoch_loss = 0.0;
        std::size_t epoch_correct = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t end = std::min(start + cfg.batch_size, n);
            const double inv_b = 1.0 / static_cast<double>(end - start);
            for (std::size_t i = start; i < end; ++i) {
                const std::size_t idx = order[i];
                GradTape tape;
                Tensor img = train.image_tensor(idx);
                Tensor emb = encode(result.checkpoint, nullptr, img, &tape);
                Tensor probs = predict_probs_t(emb, result.prototypes, cfg.tau, &tape);
                const auto label = static_cast<std::size_t>(train.labels[idx]);
                Tensor loss = scale(nll_loss(probs, label, &tape), inv_b, &tape);
                const double lv = loss.item();
                if (!std::isfinite(lv))
                    throw numeric_error("pretrain: non-finite loss at epoch " +
                                        std::to_string(epoch));
                epoch_loss += lv;
                const double* p = probs.data().data();
                if (static_cast<std::size_t>(
                        std::max_element(p, p + probs.size()) - p) == label)
                    ++epoch_correct;
                tape.backward(loss);
            }
            optimizer.step();
        }
        result.epoch_losses.push_back(epoch_loss /
                                      std::ceil(static_cast<double>(n) /
                                                static_cast<double>(cfg.batch_size)));
        result.final_train_accuracy =
            static_cast<double>(epoch_correct) / static_cast<double>(n);
        if (cfg.verbose)
            std::fprintf(stderr, "epoch %zu/%zu  loss %.4f  train-acc %.4f\n", epoch + 1,
                         cfg.epochs, result.epoch_losses.back(),
                         result.final_train_accuracy);
    }

    result.checkpoint.set_trainable(false);
    result.val_accuracy = zero_shot_accuracy(val, result.checkpoint, result.prototypes,
                                             cfg.tau, cfg.num_threads);
    return result;
}

double zero_shot_accuracy(const DatasetContainer& ds, const EncoderCheckpoint& ckpt,
                          const ClassPrototypes& prototypes, double tau,
                          std::size_t num_threads) {
    const std::size_t n = ds.count();
    if (n == 0) return 0.0;
    std::vector<std::uint8_t> correct(n, 0);
    auto worker = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            Tensor img = ds.image_tensor(i);
            ProbVector pv = predict_probs(encode(ckpt, nullptr, img), prototypes, tau);
            correct[i] = static_cast<std::int64_t>(pv.argmax()) == ds.labels[i] ? 1 : 0;
        }
    };
    if (num_threads <= 1) {
        worker(0, n);
    } else {
        std::vector<std::thread> threads;
        const std::size_t chunk = (n + num_threads - 1) / num_threads;
        for (std::size_t t = 0; t < num_threads; ++t) {
            const std::size_t b = t * chunk, e = std::min(b + chunk, n);
            if (b >= e) break;
            threads.emplace_back(worker, b, e);
        }
        for (auto& th : threads) th.join();
    }
    const auto hits = static_cast<double>(
        std::accumulate(correct.begin(), correct.end(), std::size_t{0}));
    return hits / static_cast<double>(n);
}

}  // namespace ttl
