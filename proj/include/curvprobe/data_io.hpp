#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "curvprobe/tensor.hpp"
#include "curvprobe/zoo.hpp"

namespace curvprobe {

struct Dataset {
    int channels = 0;
    int height = 0;
    int width = 0;
    int num_classes = 0;
    std::string split;
    std::vector<float> images;  // N*C*H*W, values in [0,1]
    std::vector<int> labels;

    size_t size() const { return labels.size(); }
    int64_t sample_dim() const { return int64_t(channels) * height * width; }
    std::span<const float> image(size_t i) const {
        return {images.data() + int64_t(i) * sample_dim(), size_t(sample_dim())};
    }
    // Gathers the given samples into a [n, C, H, W] tensor.
    Tensor batch(std::span<const size_t> indices) const;
    Tensor single(size_t i) const;
};

enum class DataFormat { idx, cifar_binary };
DataFormat data_format_from_name(const std::string& s);

// idx: path is the images file (big-endian IDX); the labels file is derived
//      by replacing "images"->"labels" and "idx3"->"idx1" in the name.
// cifar_binary: path is one .bin batch file (1 label byte + 3072 pixel bytes
//      per record) or a directory holding data_batch_*.bin.
Dataset load_dataset(const std::string& path, DataFormat format);

struct Subset {
    Dataset data;
    std::vector<size_t> indices;      // positions in the source dataset
    std::vector<int64_t> class_counts;
};

// Seeded Fisher-Yates prefix; deterministic for a given seed.
Subset subset(const Dataset& ds, size_t n, uint64_t seed);

// Checkpoint: "CPRB" magic, version, JSON header (arch config, epoch tag,
// parameter manifest), then raw little-endian float32 blobs.
void save_checkpoint(const Classifier& model, const std::string& path, int epoch);

struct LoadedCheckpoint {
    Classifier model;
    int epoch = 0;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

// Arch config <-> JSON text (the checkpoint header fragment; also used by
// run manifests).
std::string arch_config_to_json(const ArchConfig& cfg);
ArchConfig arch_config_from_json(const std::string& json_text);

}  // namespace curvprobe
