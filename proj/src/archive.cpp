#include "bbnet/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace bbnet {

static_assert(std::endian::native == std::endian::little, "archive format assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'B', 'B', 'N', 'E', 'T', 'A', 'R', 'C'};

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t& pos, const std::string& origin) {
    if (pos + sizeof(T) > in.size()) throw WeightLoadError(origin + ": truncated archive");
    T v;
    std::memcpy(&v, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

}  // namespace

const torch::Tensor* TensorArchive::find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return &t;
    }
    return nullptr;
}

std::string encode_archive(const TensorArchive& a) {
    nlohmann::ordered_json header;
    header["config"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : a.config) header["config"][k] = v;
    header["tensors"] = nlohmann::ordered_json::array();

    std::string blob;
    for (const auto& [name, tensor] : a.tensors) {
        auto t = tensor.detach().to(torch::kCPU).contiguous();
        std::string dtype;
        if (t.scalar_type() == torch::kFloat64) dtype = "f64";
        else {
            t = t.to(torch::kFloat32);
            dtype = "f32";
        }
        const auto nbytes = static_cast<std::size_t>(t.numel()) * t.element_size();
        nlohmann::ordered_json entry;
        entry["name"] = name;
        entry["dtype"] = dtype;
        entry["shape"] = t.sizes().vec();
        entry["offset"] = blob.size();
        entry["nbytes"] = nbytes;
        header["tensors"].push_back(entry);
        blob.append(static_cast<const char*>(t.data_ptr()), nbytes);
    }

    const auto hdr = header.dump();
    std::string out(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kArchiveVersion);
    put<std::uint64_t>(out, hdr.size());
    out += hdr;
    out += blob;
    return out;
}

TensorArchive decode_archive(const std::string& bytes, const std::string& origin) {
    if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw WeightLoadError(origin + ": not a BBNETARC archive");
    }
    std::size_t pos = sizeof(kMagic);
    const auto version = get<std::uint32_t>(bytes, pos, origin);
    if (version != kArchiveVersion) {
        throw WeightLoadError(origin + ": unsupported archive version " + std::to_string(version));
    }
    const auto hlen = get<std::uint64_t>(bytes, pos, origin);
    if (pos + hlen > bytes.size()) throw WeightLoadError(origin + ": truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(pos, hlen));
    } catch (const nlohmann::json::exception& e) {
        throw WeightLoadError(origin + ": malformed header: " + e.what());
    }
    pos += hlen;
    const auto data_begin = pos;

    TensorArchive a;
    for (const auto& [k, v] : header.at("config").items()) a.config[k] = v.get<std::string>();
    for (const auto& e : header.at("tensors")) {
        const auto name = e.at("name").get<std::string>();
        const auto dtype = e.at("dtype").get<std::string>();
        const auto shape = e.at("shape").get<std::vector<std::int64_t>>();
        const auto offset = e.at("offset").get<std::size_t>();
        const auto nbytes = e.at("nbytes").get<std::size_t>();
        const auto st = dtype == "f64" ? torch::kFloat64 : torch::kFloat32;
        if (dtype != "f64" && dtype != "f32") throw WeightLoadError(origin + ": unknown dtype " + dtype);
        auto t = torch::empty(shape, torch::TensorOptions().dtype(st));
        if (static_cast<std::size_t>(t.numel()) * t.element_size() != nbytes ||
            data_begin + offset + nbytes > bytes.size()) {
            throw WeightLoadError(origin + ": tensor '" + name + "' has inconsistent size");
        }
        std::memcpy(t.data_ptr(), bytes.data() + data_begin + offset, nbytes);
        a.tensors.emplace_back(name, std::move(t));
    }
    return a;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void write_archive(const std::filesystem::path& path, const TensorArchive& a) {
    write_file_atomic(path, encode_archive(a));
}

TensorArchive read_archive(const std::filesystem::path& path) {
    std::string bytes;
    try {
        bytes = read_file(path);
    } catch (const IoError& e) {
        throw WeightLoadError(e.what());
    }
    return decode_archive(bytes, path.string());
}

std::string content_hash(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

}  // namespace bbnet
