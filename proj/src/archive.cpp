#include "imageflow/archive.hpp"

#include "imageflow/error.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>

namespace imageflow {

using json = nlohmann::json;

namespace {

constexpr char kMagic[8] = {'I', 'F', 'N', 'A', 'R', 'C', 'H', '1'};

void put_u64(std::ostream& os, std::uint64_t v) {
    char bytes[8];
    for (int k = 0; k < 8; ++k) bytes[k] = static_cast<char>((v >> (8 * k)) & 0xff);
    os.write(bytes, 8);
}

std::uint64_t get_u64(std::istream& is) {
    unsigned char bytes[8];
    is.read(reinterpret_cast<char*>(bytes), 8);
    std::uint64_t v = 0;
    for (int k = 7; k >= 0; --k) v = (v << 8) | bytes[k];
    return v;
}

void to_little_endian(std::vector<std::uint32_t>& words) {
    if constexpr (std::endian::native == std::endian::big)
        for (auto& w : words) w = __builtin_bswap32(w);
}

}  // namespace

void write_tensor_archive(const std::filesystem::path& path, const TensorArchive& archive) {
    json header;
    header["metadata"] = json::parse(archive.metadata_json);
    header["tensors"] = json::array();
    for (const auto& [name, t] : archive.tensors) header["tensors"].push_back({{"name", name}, {"shape", t.sizes().vec()}});
    const std::string text = header.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path.string());
    os.write(kMagic, 8);
    put_u64(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : archive.tensors) {
        auto flat = t.detach().to(torch::kFloat32).contiguous().view({-1});
        std::vector<std::uint32_t> words(static_cast<std::size_t>(flat.numel()));
        std::memcpy(words.data(), flat.data_ptr<float>(), words.size() * 4);
        to_little_endian(words);
        os.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
    }
    if (!os) throw IoError("failed writing " + path.string());
}

TensorArchive read_tensor_archive(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0) throw IoError(path.string() + " is not a tensor archive");
    const auto n = get_u64(is);
    std::string text(n, '\0');
    is.read(text.data(), static_cast<std::streamsize>(n));
    if (!is) throw IoError(path.string() + ": truncated header");
    json header;
    try {
        header = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": bad header: " + e.what());
    }
    TensorArchive out;
    out.metadata_json = header.at("metadata").dump();
    for (const auto& entry : header.at("tensors")) {
        auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
        auto t = torch::empty(shape, torch::kFloat32);
        std::vector<std::uint32_t> words(static_cast<std::size_t>(t.numel()));
        is.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
        if (!is) throw IoError(path.string() + ": truncated payload at '" + entry.at("name").get<std::string>() + "'");
        to_little_endian(words);
        std::memcpy(t.data_ptr<float>(), words.data(), words.size() * 4);
        out.tensors.emplace_back(entry.at("name").get<std::string>(), t);
    }
    return out;
}

}  // namespace imageflow
