#include "cftwin/checkpoint.hpp"

#include <bit>
#include <boost/crc.hpp>
#include <cstring>
#include <fstream>
#include <numeric>

#include "cftwin/error.hpp"

namespace cftwin::checkpoint {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

const NamedTensor* Checkpoint::find(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return &t;
    return nullptr;
}

const NamedTensor& Checkpoint::get(const std::string& name) const {
    const auto* t = find(name);
    if (!t) throw FormatError(FormatError::Kind::shape_mismatch, "checkpoint: missing tensor '" + name + "'");
    return *t;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    nlohmann::json header;
    header["meta"] = ckpt.meta;
    auto& index = header["tensors"] = nlohmann::json::array();
    boost::crc_32_type crc;
    for (const auto& t : ckpt.tensors) {
        const std::size_t n = std::accumulate(t.shape.begin(), t.shape.end(), std::size_t{1},
                                              [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
        if (n != t.data.size()) throw DomainError("checkpoint: tensor '" + t.name + "' shape does not match its data");
        index.push_back({{"name", t.name}, {"shape", t.shape}});
        crc.process_bytes(t.data.data(), t.data.size() * sizeof(float));
    }
    header["payload_crc32"] = crc.checksum();
    const std::string text = header.dump();
    const std::uint64_t len = text.size();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError(FormatError::Kind::io, "checkpoint: cannot open " + tmp.string());
        out.write(kCheckpointMagic, 8);
        out.write(reinterpret_cast<const char*>(&len), sizeof len);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& t : ckpt.tensors)
            out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(float)));
        out.flush();
        if (!out) throw FormatError(FormatError::Kind::io, "checkpoint: write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(FormatError::Kind::io, "checkpoint: cannot open " + path.string());
    char magic[8];
    if (!in.read(magic, 8)) throw FormatError(FormatError::Kind::truncated, "checkpoint: file shorter than magic");
    if (std::memcmp(magic, kCheckpointMagic, 8) != 0) throw FormatError(FormatError::Kind::bad_magic, "checkpoint: bad magic in " + path.string());
    std::uint64_t len = 0;
    if (!in.read(reinterpret_cast<char*>(&len), sizeof len)) throw FormatError(FormatError::Kind::truncated, "checkpoint: missing header length");
    const auto file_size = std::filesystem::file_size(path);
    if (len > file_size) throw FormatError(FormatError::Kind::truncated, "checkpoint: header length exceeds file size");
    std::string text(len, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw FormatError(FormatError::Kind::truncated, "checkpoint: header truncated");

    Checkpoint ckpt;
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
        ckpt.meta = header.at("meta");
        for (const auto& entry : header.at("tensors")) {
            NamedTensor t;
            t.name = entry.at("name").get<std::string>();
            t.shape = entry.at("shape").get<std::vector<int>>();
            for (int d : t.shape)
                if (d < 0) throw FormatError(FormatError::Kind::bad_header, "checkpoint: negative dimension in '" + t.name + "'");
            ckpt.tensors.push_back(std::move(t));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatError::Kind::bad_header, std::string("checkpoint: malformed header: ") + e.what());
    }
    std::uint64_t expected = 0;
    for (auto& t : ckpt.tensors) {
        const std::size_t n = std::accumulate(t.shape.begin(), t.shape.end(), std::size_t{1},
                                              [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
        t.data.resize(n);
        expected += n * sizeof(float);
    }
    const std::uint64_t available = file_size - 16 - len;
    if (available < expected) throw FormatError(FormatError::Kind::truncated, "checkpoint: payload truncated");
    if (available > expected) throw FormatError(FormatError::Kind::shape_mismatch, "checkpoint: trailing bytes after payload");
    boost::crc_32_type crc;
    for (auto& t : ckpt.tensors) {
        in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(float)));
        crc.process_bytes(t.data.data(), t.data.size() * sizeof(float));
    }
    if (!in) throw FormatError(FormatError::Kind::truncated, "checkpoint: payload read failed");
    if (header.value("payload_crc32", std::uint32_t{0}) != crc.checksum())
        throw FormatError(FormatError::Kind::bad_header, "checkpoint: payload checksum mismatch");
    return ckpt;
}

template <typename T>
std::vector<NamedTensor> export_params(const denoiser::Denoiser<T>& model, const std::string& prefix) {
    std::vector<NamedTensor> out;
    for (const auto* p : model.parameters()) {
        NamedTensor t{prefix + "/" + p->name, p->shape, {}};
        t.data.assign(p->value.begin(), p->value.end());
        out.push_back(std::move(t));
    }
    return out;
}

template <typename T>
void import_params(denoiser::Denoiser<T>& model, const Checkpoint& ckpt, const std::string& prefix) {
    for (auto* p : model.parameters()) {
        const auto& t = ckpt.get(prefix + "/" + p->name);
        if (t.shape != p->shape) throw FormatError(FormatError::Kind::shape_mismatch, "checkpoint: shape mismatch for '" + t.name + "'");
        std::copy(t.data.begin(), t.data.end(), p->value.begin());
    }
}

nlohmann::json model_meta(const denoiser::DenoiserSpec& spec, const std::vector<int>& removed) {
    return {{"spec", spec}, {"removed_layers", removed}};
}

denoiser::Denoiser<float> load_model(const Checkpoint& ckpt, const std::string& prefix) {
    denoiser::DenoiserSpec spec;
    std::vector<int> removed;
    try {
        spec = ckpt.meta.at("model").at("spec").get<denoiser::DenoiserSpec>();
        removed = ckpt.meta.at("model").at("removed_layers").get<std::vector<int>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatError::Kind::bad_header, std::string("checkpoint: model description: ") + e.what());
    }
    Rng rng(0);
    denoiser::Denoiser<float> model(spec, rng);
    for (int id : removed) model.remove_layer(id);
    import_params(model, ckpt, prefix);
    return model;
}

template std::vector<NamedTensor> export_params(const denoiser::Denoiser<float>&, const std::string&);
template std::vector<NamedTensor> export_params(const denoiser::Denoiser<double>&, const std::string&);
template void import_params(denoiser::Denoiser<float>&, const Checkpoint&, const std::string&);
template void import_params(denoiser::Denoiser<double>&, const Checkpoint&, const std::string&);

}  // namespace cftwin::checkpoint
