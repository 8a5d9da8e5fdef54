#include "ttl/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace ttl {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "container blobs are little-endian; big-endian hosts are unsupported");

std::filesystem::path blob_path_for(const std::filesystem::path& manifest_path) {
    auto p = manifest_path;
    p.replace_extension(".bin");
    return p;
}

void ContainerWriter::add_f64(const std::string& name, const Tensor& t) {
    BlobEntry e;
    e.name = name;
    e.dtype = "f64";
    e.shape = t.shape();
    e.offset = blob_.size();
    e.length = t.size() * sizeof(double);
    entries_.push_back(e);
    const auto* bytes = reinterpret_cast<const std::uint8_t*>(t.data().data());
    blob_.insert(blob_.end(), bytes, bytes + e.length);
}

void ContainerWriter::add_u8(const std::string& name, std::vector<std::size_t> shape,
                             const std::vector<std::uint8_t>& bytes) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    if (n != bytes.size()) throw io_error("container: u8 shape/bytes mismatch for " + name);
    BlobEntry e;
    e.name = name;
    e.dtype = "u8";
    e.shape = std::move(shape);
    e.offset = blob_.size();
    e.length = bytes.size();
    entries_.push_back(e);
    blob_.insert(blob_.end(), bytes.begin(), bytes.end());
}

void ContainerWriter::add_i64(const std::string& name,
                              const std::vector<std::int64_t>& values) {
    BlobEntry e;
    e.name = name;
    e.dtype = "i64";
    e.shape = {values.size()};
    e.offset = blob_.size();
    e.length = values.size() * sizeof(std::int64_t);
    entries_.push_back(e);
    const auto* bytes = reinterpret_cast<const std::uint8_t*>(values.data());
    blob_.insert(blob_.end(), bytes, bytes + e.length);
}

void ContainerWriter::write(const std::filesystem::path& manifest_path) const {
    json manifest;
    manifest["format"] = "ttl-container";
    manifest["version"] = 1;
    manifest["metadata"] = json::parse(metadata_json_);
    json tensors = json::array();
    for (const auto& e : entries_) {
        json t;
        t["name"] = e.name;
        t["dtype"] = e.dtype;
        t["shape"] = e.shape;
        t["offset"] = e.offset;
        t["length"] = e.length;
        tensors.push_back(t);
    }
    manifest["tensors"] = tensors;

    std::ofstream mf(manifest_path, std::ios::binary | std::ios::trunc);
    if (!mf) throw io_error("container: cannot write " + manifest_path.string());
    mf << manifest.dump(2) << "\n";
    mf.close();
    if (!mf) throw io_error("container: write failed for " + manifest_path.string());

    auto bp = blob_path_for(manifest_path);
    std::ofstream bf(bp, std::ios::binary | std::ios::trunc);
    if (!bf) throw io_error("container: cannot write " + bp.string());
    bf.write(reinterpret_cast<const char*>(blob_.data()),
             static_cast<std::streamsize>(blob_.size()));
    bf.close();
    if (!bf) throw io_error("container: write failed for " + bp.string());
}

ContainerReader::ContainerReader(const std::filesystem::path& manifest_path) {
    std::ifstream mf(manifest_path, std::ios::binary);
    if (!mf) throw io_error("container: cannot open " + manifest_path.string());
    json manifest;
    try {
        mf >> manifest;
    } catch (const json::exception& e) {
        throw io_error("container: bad manifest " + manifest_path.string() + ": " + e.what());
    }
    if (manifest.value("format", "") != "ttl-container")
        throw io_error("container: " + manifest_path.string() + " is not a ttl container");
    metadata_json_ = manifest.value("metadata", json::object()).dump();

    auto bp = blob_path_for(manifest_path);
    std::ifstream bf(bp, std::ios::binary | std::ios::ate);
    if (!bf) throw io_error("container: cannot open " + bp.string());
    const auto size = static_cast<std::size_t>(bf.tellg());
    bf.seekg(0);
    blob_.resize(size);
    bf.read(reinterpret_cast<char*>(blob_.data()), static_cast<std::streamsize>(size));
    if (!bf) throw io_error("container: short read on " + bp.string());

    for (const auto& t : manifest.at("tensors")) {
        BlobEntry e;
        e.name = t.at("name").get<std::string>();
        e.dtype = t.at("dtype").get<std::string>();
        e.shape = t.at("shape").get<std::vector<std::size_t>>();
        e.offset = t.at("offset").get<std::uint64_t>();
        e.length = t.at("length").get<std::uint64_t>();
        if (e.offset + e.length > blob_.size())
            throw io_error("container: tensor " + e.name + " exceeds blob size");
        entries_[e.name] = std::move(e);
    }
}

bool ContainerReader::has(const std::string& name) const { return entries_.count(name) > 0; }

const BlobEntry& ContainerReader::entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw io_error("container: missing tensor " + name);
    return it->second;
}

std::vector<std::string> ContainerReader::names() const {
    std::vector<std::string> out;
    for (const auto& [name, e] : entries_) out.push_back(name);
    return out;
}

Tensor ContainerReader::read_f64(const std::string& name) const {
    const BlobEntry& e = entry(name);
    if (e.dtype != "f64") throw io_error("container: " + name + " is " + e.dtype + ", not f64");
    std::vector<double> values(e.length / sizeof(double));
    std::memcpy(values.data(), blob_.data() + e.offset, e.length);
    return Tensor(e.shape, std::move(values));
}

std::vector<std::uint8_t> ContainerReader::read_u8(const std::string& name) const {
    const BlobEntry& e = entry(name);
    if (e.dtype != "u8") throw io_error("container: " + name + " is " + e.dtype + ", not u8");
    return std::vector<std::uint8_t>(blob_.begin() + static_cast<std::ptrdiff_t>(e.offset),
                                     blob_.begin() +
                                         static_cast<std::ptrdiff_t>(e.offset + e.length));
}

std::vector<std::int64_t> ContainerReader::read_i64(const std::string& name) const {
    const BlobEntry& e = entry(name);
    if (e.dtype != "i64") throw io_error("container: " + name + " is " + e.dtype + ", not i64");
    std::vector<std::int64_t> values(e.length / sizeof(std::int64_t));
    std::memcpy(values.data(), blob_.data() + e.offset, e.length);
    return values;
}

void save_checkpoint(const EncoderCheckpoint& ckpt, const std::filesystem::path& path) {
    ContainerWriter w;
    for (const auto& [name, t] : ckpt.tensors) w.add_f64(name, t);
    json meta;
    meta["kind"] = "encoder-checkpoint";
    meta["config"] = {{"image_size", ckpt.config.image_size},
                      {"patch_size", ckpt.config.patch_size},
                      {"embed_dim", ckpt.config.embed_dim},
                      {"num_layers", ckpt.config.num_layers},
                      {"num_heads", ckpt.config.num_heads},
                      {"mlp_ratio", ckpt.config.mlp_ratio},
                      {"out_dim", ckpt.config.out_dim}};
    meta["norm_mean"] = ckpt.norm_mean;
    meta["norm_std"] = ckpt.norm_std;
    w.set_metadata(meta.dump());
    w.write(path);
}

EncoderCheckpoint load_checkpoint(const std::filesystem::path& path) {
    ContainerReader r(path);
    json meta = json::parse(r.metadata_json());
    if (meta.value("kind", "") != "encoder-checkpoint")
        throw io_error("checkpoint: " + path.string() + " is not an encoder checkpoint");
    EncoderCheckpoint ckpt;
    const auto& c = meta.at("config");
    ckpt.config.image_size = c.at("image_size").get<std::size_t>();
    ckpt.config.patch_size = c.at("patch_size").get<std::size_t>();
    ckpt.config.embed_dim = c.at("embed_dim").get<std::size_t>();
    ckpt.config.num_layers = c.at("num_layers").get<std::size_t>();
    ckpt.config.num_heads = c.at("num_heads").get<std::size_t>();
    ckpt.config.mlp_ratio = c.at("mlp_ratio").get<double>();
    ckpt.config.out_dim = c.at("out_dim").get<std::size_t>();
    ckpt.config.validate();
    ckpt.norm_mean = meta.at("norm_mean").get<std::vector<double>>();
    ckpt.norm_std = meta.at("norm_std").get<std::vector<double>>();
    for (const auto& name : r.names()) ckpt.tensors[name] = r.read_f64(name);
    return ckpt;
}

void save_prototypes(const ClassPrototypes& protos, const std::filesystem::path& path) {
    ContainerWriter w;
    w.add_f64("prototypes", protos.matrix);
    json meta;
    meta["kind"] = "class-prototypes";
    meta["class_names"] = protos.class_names;
    w.set_metadata(meta.dump());
    w.write(path);
}

ClassPrototypes load_prototypes(const std::filesystem::path& path) {
    ContainerReader r(path);
    json meta = json::parse(r.metadata_json());
    if (meta.value("kind", "") != "class-prototypes")
        throw io_error("prototypes: " + path.string() + " is not a prototype container");
    ClassPrototypes protos;
    protos.matrix = r.read_f64("prototypes");
    protos.class_names = meta.at("class_names").get<std::vector<std::string>>();
    protos.validate();
    return protos;
}

}  // namespace ttl
