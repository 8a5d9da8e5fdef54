#include "ttl/encoder.hpp"

#include <cmath>

#include "ttl/lora.hpp"

namespace ttl {

void EncoderConfig::validate() const {
    if (image_size == 0 || patch_size == 0 || image_size % patch_size != 0)
        throw config_error("encoder: image_size must be a positive multiple of patch_size");
    if (embed_dim == 0 || num_heads == 0 || embed_dim % num_heads != 0)
        throw config_error("encoder: embed_dim must be a positive multiple of num_heads");
    if (num_layers == 0 || out_dim == 0 || mlp_ratio <= 0.0)
        throw config_error("encoder: invalid num_layers/out_dim/mlp_ratio");
}

Tensor& EncoderCheckpoint::at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw config_error("checkpoint: missing tensor " + name);
    return it->second;
}

const Tensor& EncoderCheckpoint::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw config_error("checkpoint: missing tensor " + name);
    return it->second;
}

void EncoderCheckpoint::set_trainable(bool trainable) {
    for (auto& [name, t] : tensors) t.set_requires_grad(trainable);
}

std::uint64_t EncoderCheckpoint::checksum() const {
    Fnv1a h;
    for (const auto& [name, t] : tensors) {
        h.update(name);
        h.update(t.data().data(), t.size() * sizeof(double));
    }
    return h.digest();
}

namespace {

Tensor xavier(std::size_t rows, std::size_t cols, Rng& rng) {
    Tensor t({rows, cols});
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    for (auto& v : t.mutable_data()) v = rng.uniform(-bound, bound);
    return t;
}

Tensor small_normal(std::vector<std::size_t> shape, Rng& rng, double std_dev = 0.02) {
    Tensor t(std::move(shape));
    for (auto& v : t.mutable_data()) v = rng.normal(0.0, std_dev);
    return t;
}

std::string layer_prefix(std::size_t layer) {  // 1-based
    return "layer" + std::to_string(layer) + ".";
}

}  // namespace

EncoderCheckpoint EncoderCheckpoint::random_init(const EncoderConfig& config,
                                                 std::uint64_t seed) {
    config.validate();
    EncoderCheckpoint ckpt;
    ckpt.config = config;
    ckpt.norm_mean = {0.5, 0.5, 0.5};
    ckpt.norm_std = {0.25, 0.25, 0.25};
    Rng rng(seed, 0xc0ffee, 0);
    const std::size_t d = config.embed_dim;
    const std::size_t pd = 3 * config.patch_size * config.patch_size;
    const std::size_t hid = config.mlp_hidden();
    auto& t = ckpt.tensors;
    t["patch.weight"] = xavier(pd, d, rng);
    t["patch.bias"] = Tensor({d});
    t["cls"] = small_normal({1, d}, rng);
    t["pos"] = small_normal({config.seq_len(), d}, rng);
    for (std::size_t l = 1; l <= config.num_layers; ++l) {
        const std::string p = layer_prefix(l);
        t[p + "ln1.g"] = Tensor::full({d}, 1.0);
        t[p + "ln1.b"] = Tensor({d});
        for (const char* proj : {"q", "k", "v"}) {
            t[p + "attn." + proj + ".weight"] = xavier(d, d, rng);
            t[p + "attn." + proj + ".bias"] = Tensor({d});
        }
        t[p + "attn.out.weight"] = xavier(d, d, rng);
        t[p + "attn.out.bias"] = Tensor({d});
        t[p + "ln2.g"] = Tensor::full({d}, 1.0);
        t[p + "ln2.b"] = Tensor({d});
        t[p + "mlp.fc1.weight"] = xavier(d, hid, rng);
        t[p + "mlp.fc1.bias"] = Tensor({hid});
        t[p + "mlp.fc2.weight"] = xavier(hid, d, rng);
        t[p + "mlp.fc2.bias"] = Tensor({d});
    }
    t["ln_f.g"] = Tensor::full({d}, 1.0);
    t["ln_f.b"] = Tensor({d});
    t["proj.weight"] = xavier(d, config.out_dim, rng);
    return ckpt;
}

namespace {

// frozen projection plus optional low-rank delta on the same input
Tensor projected(const EncoderCheckpoint& ckpt, const std::string& prefix,
                 const LoraAdapterSet* adapters, std::size_t layer, Projection proj,
                 const Tensor& h, GradTape* tape) {
    const char* name = projection_name(proj);
    Tensor out = add_rowwise(matmul(h, ckpt.at(prefix + "attn." + name + ".weight"), tape),
                             ckpt.at(prefix + "attn." + name + ".bias"), tape);
    if (adapters && adapters->has(layer, proj))
        out = add(out, adapters->delta_forward(layer, proj, h, tape), tape);
    return out;
}

}  // namespace

Tensor attention_block(const EncoderCheckpoint& ckpt, std::size_t layer,
                       const LoraAdapterSet* adapters, const Tensor& tokens,
                       GradTape* tape) {
    const EncoderConfig& cfg = ckpt.config;
    const std::string p = layer_prefix(layer);
    const std::size_t hd = cfg.head_dim();
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(hd));

    Tensor h = layer_norm(tokens, ckpt.at(p + "ln1.g"), ckpt.at(p + "ln1.b"), tape);
    Tensor q = projected(ckpt, p, adapters, layer, Projection::Q, h, tape);
    Tensor k = projected(ckpt, p, adapters, layer, Projection::K, h, tape);
    Tensor v = projected(ckpt, p, adapters, layer, Projection::V, h, tape);

    std::vector<Tensor> heads;
    heads.reserve(cfg.num_heads);
    for (std::size_t i = 0; i < cfg.num_heads; ++i) {
        Tensor qh = slice_cols(q, i * hd, hd, tape);
        Tensor kh = slice_cols(k, i * hd, hd, tape);
        Tensor vh = slice_cols(v, i * hd, hd, tape);
        Tensor scores = scale(matmul(qh, transpose(kh, tape), tape), attn_scale, tape);
        Tensor attn = softmax(scores, 1.0, tape);
        heads.push_back(matmul(attn, vh, tape));
    }
    Tensor merged = concat_cols(heads, tape);
    Tensor attn_out = add_rowwise(matmul(merged, ckpt.at(p + "attn.out.weight"), tape),
                                  ckpt.at(p + "attn.out.bias"), tape);
    Tensor x = add(tokens, attn_out, tape);

    Tensor h2 = layer_norm(x, ckpt.at(p + "ln2.g"), ckpt.at(p + "ln2.b"), tape);
    Tensor m = add_rowwise(matmul(h2, ckpt.at(p + "mlp.fc1.weight"), tape),
                           ckpt.at(p + "mlp.fc1.bias"), tape);
    m = gelu(m, tape);
    m = add_rowwise(matmul(m, ckpt.at(p + "mlp.fc2.weight"), tape),
                    ckpt.at(p + "mlp.fc2.bias"), tape);
    return add(x, m, tape);
}

Tensor encode(const EncoderCheckpoint& ckpt, const LoraAdapterSet* adapters,
              const Tensor& image, GradTape* tape) {
    const EncoderConfig& cfg = ckpt.config;
    if (image.ndim() != 3 || image.dim(0) != 3 || image.dim(1) != cfg.image_size ||
        image.dim(2) != cfg.image_size)
        throw shape_error("encode: image " + shape_str(image.shape()) + " vs config [3," +
                          std::to_string(cfg.image_size) + "," +
                          std::to_string(cfg.image_size) + "]");
    if (adapters) adapters->spec().validate(cfg);

    // per-channel input normalization, recorded in the checkpoint
    Tensor norm(image.shape());
    const std::size_t plane = cfg.image_size * cfg.image_size;
    auto nd = norm.mutable_data();
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < plane; ++i)
            nd[c * plane + i] =
                (image.at(c * plane + i) - ckpt.norm_mean[c]) / ckpt.norm_std[c];

    Tensor patches = extract_patches(norm, cfg.patch_size, tape);
    Tensor tok = add_rowwise(matmul(patches, ckpt.at("patch.weight"), tape),
                             ckpt.at("patch.bias"), tape);
    Tensor x = concat_rows({ckpt.at("cls"), tok}, tape);
    x = add(x, ckpt.at("pos"), tape);
    for (std::size_t l = 1; l <= cfg.num_layers; ++l)
        x = attention_block(ckpt, l, adapters, x, tape);
    Tensor cls = slice_rows(x, 0, 1, tape);
    Tensor h = layer_norm(cls, ckpt.at("ln_f.g"), ckpt.at("ln_f.b"), tape);
    Tensor emb = matmul(h, ckpt.at("proj.weight"), tape);
    emb = l2_normalize(emb, tape);
    return reshape(emb, {cfg.out_dim}, tape);
}

}  // namespace ttl
