#include "curvprobe/data_io.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace curvprobe {

Tensor Dataset::batch(std::span<const size_t> indices) const {
    const int64_t d = sample_dim();
    std::vector<float> out(indices.size() * size_t(d));
    for (size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= size()) throw ValueError("batch: sample index out of range");
        std::memcpy(out.data() + i * size_t(d), images.data() + int64_t(indices[i]) * d,
                    sizeof(float) * size_t(d));
    }
    return Tensor::from_data({int64_t(indices.size()), channels, height, width}, std::move(out));
}

Tensor Dataset::single(size_t i) const {
    size_t idx[1] = {i};
    return batch(std::span<const size_t>(idx, 1));
}

DataFormat data_format_from_name(const std::string& s) {
    if (s == "idx") return DataFormat::idx;
    if (s == "cifar" || s == "cifar-binary") return DataFormat::cifar_binary;
    throw ValueError("unknown dataset format '" + s + "' (expected idx or cifar)");
}

namespace {

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    in.seekg(0, std::ios::end);
    const auto len = in.tellg();
    in.seekg(0);
    std::vector<uint8_t> buf(size_t(len), 0);
    in.read(reinterpret_cast<char*>(buf.data()), len);
    if (!in) throw DataError("short read: " + path);
    return buf;
}

uint32_t be32(const uint8_t* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

Dataset load_idx(const std::string& images_path) {
    std::string labels_path = images_path;
    auto replace = [&](const std::string& from, const std::string& to) {
        const auto pos = labels_path.rfind(from);
        if (pos != std::string::npos) labels_path.replace(pos, from.size(), to);
    };
    replace("images", "labels");
    replace("idx3", "idx1");
    if (labels_path == images_path)
        throw DataError("idx: cannot derive labels file from '" + images_path +
                        "' (expected an *images*idx3* name)");

    const auto img = read_file(images_path);
    if (img.size() < 16) throw DataError("idx: truncated image header in " + images_path);
    if (be32(img.data()) != 0x00000803u)
        throw DataError("idx: bad magic number in " + images_path);
    const uint32_t n = be32(img.data() + 4);
    const uint32_t rows = be32(img.data() + 8);
    const uint32_t cols = be32(img.data() + 12);
    if (img.size() != 16 + size_t(n) * rows * cols)
        throw DataError("idx: truncated image data in " + images_path);

    const auto lab = read_file(labels_path);
    if (lab.size() < 8) throw DataError("idx: truncated label header in " + labels_path);
    if (be32(lab.data()) != 0x00000801u)
        throw DataError("idx: bad magic number in " + labels_path);
    if (be32(lab.data() + 4) != n)
        throw DataError("idx: image/label count mismatch between " + images_path + " and " + labels_path);
    if (lab.size() != 8 + size_t(n))
        throw DataError("idx: truncated label data in " + labels_path);

    Dataset ds;
    ds.channels = 1;
    ds.height = int(rows);
    ds.width = int(cols);
    ds.num_classes = 10;
    ds.images.resize(size_t(n) * rows * cols);
    ds.labels.resize(n);
    for (size_t i = 0; i < ds.images.size(); ++i)
        ds.images[i] = float(img[16 + i]) / 255.0f;
    for (uint32_t i = 0; i < n; ++i) {
        const int y = lab[8 + i];
        if (y < 0 || y >= ds.num_classes)
            throw DataError("idx: label out of range in " + labels_path + ": " + std::to_string(y));
        ds.labels[i] = y;
    }
    return ds;
}

void append_cifar_file(const std::string& path, Dataset& ds) {
    constexpr size_t record = 3073;  // 1 label byte + 3*32*32 pixels
    const auto buf = read_file(path);
    if (buf.empty() || buf.size() % record != 0)
        throw DataError("cifar: truncated file (size not a multiple of 3073 bytes): " + path);
    const size_t n = buf.size() / record;
    const size_t base = ds.labels.size();
    ds.labels.resize(base + n);
    ds.images.resize((base + n) * 3072);
    for (size_t i = 0; i < n; ++i) {
        const uint8_t* rec = buf.data() + i * record;
        const int y = rec[0];
        if (y < 0 || y >= 10)
            throw DataError("cifar: label out of range in " + path + ": " + std::to_string(y));
        ds.labels[base + i] = y;
        float* dst = ds.images.data() + (base + i) * 3072;
        for (size_t p = 0; p < 3072; ++p) dst[p] = float(rec[1 + p]) / 255.0f;
    }
}

Dataset load_cifar(const std::string& path) {
    Dataset ds;
    ds.channels = 3;
    ds.height = 32;
    ds.width = 32;
    ds.num_classes = 10;
    if (fs::is_directory(path)) {
        std::vector<std::string> files;
        for (const auto& e : fs::directory_iterator(path)) {
            const auto name = e.path().filename().string();
            if (name.rfind("data_batch_", 0) == 0 && name.size() >= 4 &&
                name.substr(name.size() - 4) == ".bin")
                files.push_back(e.path().string());
        }
        if (files.empty())
            throw DataError("cifar: no data_batch_*.bin files in directory " + path);
        std::sort(files.begin(), files.end());
        for (const auto& f : files) append_cifar_file(f, ds);
    } else {
        append_cifar_file(path, ds);
    }
    return ds;
}

}  // namespace

Dataset load_dataset(const std::string& path, DataFormat format) {
    Dataset ds = format == DataFormat::idx ? load_idx(path) : load_cifar(path);
    ds.split = fs::path(path).filename().string();
    return ds;
}

Subset subset(const Dataset& ds, size_t n, uint64_t seed) {
    if (n > ds.size())
        throw ValueError("subset: requested " + std::to_string(n) + " of " +
                         std::to_string(ds.size()) + " samples");
    std::vector<size_t> idx(ds.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(mix_seed(seed, 0x5355425345ULL));  // subset stream
    for (size_t i = 0; i < n; ++i) {
        const size_t j = i + size_t(rng.below(uint64_t(idx.size() - i)));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(n);

    Subset out;
    out.indices = idx;
    out.class_counts.assign(size_t(ds.num_classes), 0);
    out.data.channels = ds.channels;
    out.data.height = ds.height;
    out.data.width = ds.width;
    out.data.num_classes = ds.num_classes;
    out.data.split = ds.split + ":subset" + std::to_string(n);
    out.data.images.resize(n * size_t(ds.sample_dim()));
    out.data.labels.resize(n);
    for (size_t i = 0; i < n; ++i) {
        const auto img = ds.image(idx[i]);
        std::memcpy(out.data.images.data() + i * img.size(), img.data(),
                    sizeof(float) * img.size());
        out.data.labels[i] = ds.labels[idx[i]];
        out.class_counts[size_t(ds.labels[idx[i]])]++;
    }
    return out;
}

// ---- arch config json ---------------------------------------------------

std::string arch_config_to_json(const ArchConfig& cfg) {
    json j;
    j["arch"] = arch_name(cfg.arch);
    j["in_channels"] = cfg.in_channels;
    j["height"] = cfg.height;
    j["width"] = cfg.width;
    j["num_classes"] = cfg.num_classes;
    j["widths"] = cfg.widths;
    j["blocks"] = cfg.blocks;
    j["patch"] = cfg.patch;
    j["embed"] = cfg.embed;
    j["depth"] = cfg.depth;
    j["heads"] = cfg.heads;
    j["mlp_ratio"] = cfg.mlp_ratio;
    j["norm_mean"] = cfg.norm_mean;
    j["norm_std"] = cfg.norm_std;
    return j.dump();
}

ArchConfig arch_config_from_json(const std::string& text) {
    json j = json::parse(text);
    ArchConfig cfg;
    cfg.arch = arch_from_name(j.at("arch").get<std::string>());
    cfg.in_channels = j.at("in_channels").get<int>();
    cfg.height = j.at("height").get<int>();
    cfg.width = j.at("width").get<int>();
    cfg.num_classes = j.at("num_classes").get<int>();
    cfg.widths = j.at("widths").get<std::vector<int>>();
    cfg.blocks = j.at("blocks").get<std::vector<int>>();
    cfg.patch = j.at("patch").get<int>();
    cfg.embed = j.at("embed").get<int>();
    cfg.depth = j.at("depth").get<int>();
    cfg.heads = j.at("heads").get<int>();
    cfg.mlp_ratio = j.at("mlp_ratio").get<int>();
    cfg.norm_mean = j.at("norm_mean").get<std::vector<float>>();
    cfg.norm_std = j.at("norm_std").get<std::vector<float>>();
    cfg.validate();
    return cfg;
}

// ---- checkpoints ----------------------------------------------------------

namespace {
constexpr char kMagic[4] = {'C', 'P', 'R', 'B'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ofstream& out, uint32_t v) {
    // little-endian
    uint8_t b[4] = {uint8_t(v), uint8_t(v >> 8), uint8_t(v >> 16), uint8_t(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(const uint8_t* p) {
    return uint32_t(p[0]) | (uint32_t(p[1]) << 8) | (uint32_t(p[2]) << 16) | (uint32_t(p[3]) << 24);
}

}  // namespace

void save_checkpoint(const Classifier& model, const std::string& path, int epoch) {
    json header;
    header["arch_config"] = json::parse(arch_config_to_json(model.config()));
    header["epoch"] = epoch;
    json manifest = json::array();
    const auto state = model.named_state();
    for (const auto& nt : state) {
        json p;
        p["name"] = nt.name;
        p["shape"] = nt.tensor.shape();
        manifest.push_back(p);
    }
    header["params"] = manifest;
    const std::string htext = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("checkpoint: cannot open for writing: " + path);
    out.write(kMagic, 4);
    write_u32(out, kVersion);
    write_u32(out, uint32_t(htext.size()));
    out.write(htext.data(), std::streamsize(htext.size()));
    for (const auto& nt : state) {
        const auto d = nt.tensor.data();
        out.write(reinterpret_cast<const char*>(d.data()),
                  std::streamsize(d.size() * sizeof(float)));
    }
    if (!out) throw DataError("checkpoint: write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    const auto buf = read_file(path);
    if (buf.size() < 12) throw DataError("checkpoint: truncated header: " + path);
    if (std::memcmp(buf.data(), kMagic, 4) != 0)
        throw DataError("checkpoint: bad magic bytes in " + path);
    const uint32_t version = read_u32(buf.data() + 4);
    if (version != kVersion)
        throw DataError("checkpoint: unsupported format version " + std::to_string(version) +
                        " in " + path);
    const uint32_t hlen = read_u32(buf.data() + 8);
    if (buf.size() < 12 + size_t(hlen)) throw DataError("checkpoint: truncated header: " + path);
    json header;
    try {
        header = json::parse(std::string(reinterpret_cast<const char*>(buf.data() + 12), hlen));
    } catch (const json::exception& e) {
        throw DataError("checkpoint: corrupt header in " + path + ": " + e.what());
    }

    LoadedCheckpoint out;
    const ArchConfig cfg = arch_config_from_json(header.at("arch_config").dump());
    out.model = Classifier::create(cfg, 0);
    out.epoch = header.at("epoch").get<int>();

    size_t off = 12 + size_t(hlen);
    const auto manifest = header.at("params");
    auto state = out.model.named_state();
    if (manifest.size() != state.size())
        throw DataError("checkpoint: parameter manifest size mismatch in " + path);
    for (size_t i = 0; i < state.size(); ++i) {
        const std::string name = manifest[i].at("name").get<std::string>();
        const auto shape = manifest[i].at("shape").get<Shape>();
        if (name != state[i].name)
            throw DataError("checkpoint: parameter order mismatch at '" + name + "' in " + path);
        if (shape != state[i].tensor.shape())
            throw DataError("checkpoint: shape mismatch for '" + name + "' in " + path +
                            ": file has " + shape_str(shape) + ", arch config wants " +
                            shape_str(state[i].tensor.shape()));
        const size_t bytes = size_t(state[i].tensor.numel()) * sizeof(float);
        if (off + bytes > buf.size())
            throw DataError("checkpoint: truncated data for '" + name + "' in " + path);
        std::memcpy(state[i].tensor.mutable_data().data(), buf.data() + off, bytes);
        off += bytes;
    }
    if (off != buf.size())
        throw DataError("checkpoint: trailing bytes in " + path);
    return out;
}

}  // namespace curvprobe
