#include "busdx/container.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <openssl/evp.h>

namespace busdx {

namespace {

constexpr char kMagic[8] = {'B', 'U', 'S', 'D', 'X', 'C', '0', '1'};

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new()) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) {
            throw std::runtime_error("sha256 init failed");
        }
    }
    ~Sha256() { EVP_MD_CTX_free(ctx_); }
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_, data, n); }

    std::string hex() {
        std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
        unsigned int len = 0;
        EVP_DigestFinal_ex(ctx_, md.data(), &len);
        std::ostringstream os;
        for (unsigned int i = 0; i < len; ++i) {
            os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
        }
        return os.str();
    }

private:
    EVP_MD_CTX* ctx_;
};

}  // namespace

const TensorBlob& Container::tensor(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
        throw std::runtime_error("container has no tensor named '" + name + "'");
    }
    return it->second;
}

void save_container(const std::filesystem::path& path, const Container& container) {
    nlohmann::json header;
    header["meta"] = container.meta;
    header["tensors"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, blob] : container.tensors) {
        header["tensors"].push_back(
            {{"name", name}, {"shape", blob.shape}, {"offset", offset}, {"count", blob.data.size()}});
        offset += blob.data.size();
    }
    const std::string text = header.dump();
    const std::uint64_t header_len = text.size();

    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) {
            throw std::runtime_error("cannot write " + path.string());
        }
        out.write(kMagic, sizeof(kMagic));
        out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& [name, blob] : container.tensors) {
            out.write(reinterpret_cast<const char*>(blob.data.data()),
                      static_cast<std::streamsize>(blob.data.size() * sizeof(float)));
        }
        if (!out) {
            throw std::runtime_error("write failed: " + path.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

Container load_container(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    char magic[8];
    std::uint64_t header_len = 0;
    in.read(magic, sizeof(magic));
    in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("not a busdx container: " + path.string());
    }
    std::string text(header_len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(header_len));
    if (!in) {
        throw std::runtime_error("truncated container header: " + path.string());
    }
    const auto header = nlohmann::json::parse(text);
    const auto data_start = in.tellg();

    Container c;
    c.meta = header.at("meta");
    for (const auto& t : header.at("tensors")) {
        TensorBlob blob;
        blob.shape = t.at("shape").get<std::vector<std::int64_t>>();
        const auto count = t.at("count").get<std::uint64_t>();
        const auto offset = t.at("offset").get<std::uint64_t>();
        blob.data.resize(count);
        in.seekg(data_start + static_cast<std::streamoff>(offset * sizeof(float)));
        in.read(reinterpret_cast<char*>(blob.data.data()), static_cast<std::streamsize>(count * sizeof(float)));
        if (!in) {
            throw std::runtime_error("truncated tensor '" + t.at("name").get<std::string>() + "' in " +
                                     path.string());
        }
        c.tensors.emplace(t.at("name").get<std::string>(), std::move(blob));
    }
    return c;
}

std::string sha256_hex(std::span<const unsigned char> bytes) {
    Sha256 h;
    h.update(bytes.data(), bytes.size());
    return h.hex();
}

std::string sha256_hex(const std::string& text) {
    return sha256_hex(std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    Sha256 h;
    std::array<char, 1 << 16> buf{};
    while (in) {
        in.read(buf.data(), buf.size());
        h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    return h.hex();
}

std::string tensors_digest(const std::map<std::string, TensorBlob>& tensors) {
    Sha256 h;
    for (const auto& [name, blob] : tensors) {
        h.update(name.data(), name.size());
        h.update(blob.shape.data(), blob.shape.size() * sizeof(std::int64_t));
        h.update(blob.data.data(), blob.data.size() * sizeof(float));
    }
    return h.hex();
}

}  // namespace busdx
