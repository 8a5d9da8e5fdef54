#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ttl/encoder.hpp"
#include "ttl/objective.hpp"
#include "ttl/tensor.hpp"

namespace ttl {

// One manifest (JSON, UTF-8) next to one raw little-endian blob. The manifest
// lists {name, dtype, shape, offset, length} per tensor plus free-form
// metadata; the blob holds the concatenated tensor bytes. Weights are f64,
// images u8, labels i64.
//
// A container path names the manifest; the blob sits at the same path with a
// .bin extension.

struct BlobEntry {
    std::string name;
    std::string dtype;  // "f64" | "u8" | "i64"
    std::vector<std::size_t> shape;
    std::uint64_t offset = 0;
    std::uint64_t length = 0;  // bytes
};

class ContainerWriter {
public:
    void add_f64(const std::string& name, const Tensor& t);
    void add_u8(const std::string& name, std::vector<std::size_t> shape,
                const std::vector<std::uint8_t>& bytes);
    void add_i64(const std::string& name, const std::vector<std::int64_t>& values);
    void set_metadata(const std::string& json_text) { metadata_json_ = json_text; }

    void write(const std::filesystem::path& manifest_path) const;

private:
    std::vector<BlobEntry> entries_;
    std::vector<std::uint8_t> blob_;
    std::string metadata_json_ = "{}";
};

class ContainerReader {
public:
    explicit ContainerReader(const std::filesystem::path& manifest_path);

    bool has(const std::string& name) const;
    const BlobEntry& entry(const std::string& name) const;
    std::vector<std::string> names() const;

    Tensor read_f64(const std::string& name) const;
    std::vector<std::uint8_t> read_u8(const std::string& name) const;
    std::vector<std::int64_t> read_i64(const std::string& name) const;

    const std::string& metadata_json() const { return metadata_json_; }

private:
    std::map<std::string, BlobEntry> entries_;
    std::vector<std::uint8_t> blob_;
    std::string metadata_json_;
};

std::filesystem::path blob_path_for(const std::filesystem::path& manifest_path);

// checkpoint and prototype round-trips on top of the container
void save_checkpoint(const EncoderCheckpoint& ckpt, const std::filesystem::path& path);
EncoderCheckpoint load_checkpoint(const std::filesystem::path& path);

void save_prototypes(const ClassPrototypes& protos, const std::filesystem::path& path);
ClassPrototypes load_prototypes(const std::filesystem::path& path);

}  // namespace ttl
