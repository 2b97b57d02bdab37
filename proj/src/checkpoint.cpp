#include "laconv/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace laconv {

namespace {
constexpr char kMagic[4] = {'L', 'C', 'K', 'P'};
}

void Checkpoint::add(const std::string& name, const Tensor<float>& t) {
    Entry e;
    e.name = name;
    e.shape = t.shape();
    e.data.assign(t.value().begin(), t.value().end());
    entries.push_back(std::move(e));
}

bool Checkpoint::has(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return true;
    return false;
}

const Checkpoint::Entry& Checkpoint::find(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return e;
    throw IoError("checkpoint entry not found: " + name);
}

Tensor<float> Checkpoint::tensor(const std::string& name) const {
    const Entry& e = find(name);
    return Tensor<float>::from(e.shape, e.data);
}

void Checkpoint::save(const std::string& path) const {
    nlohmann::json header;
    header["entries"] = nlohmann::json::array();
    for (const auto& e : entries) {
        nlohmann::json j;
        j["name"] = e.name;
        j["dtype"] = "f32";
        j["shape"] = e.shape;
        header["entries"].push_back(j);
    }
    header["meta"] = meta_json.empty() ? nlohmann::json::object()
                                       : nlohmann::json::parse(meta_json);
    const std::string hs = header.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    os.write(kMagic, 4);
    const char ver = static_cast<char>(kVersion);
    os.write(&ver, 1);
    const std::uint32_t len = static_cast<std::uint32_t>(hs.size());
    char lenbuf[4];
    for (int i = 0; i < 4; ++i) lenbuf[i] = static_cast<char>((len >> (8 * i)) & 0xff);
    os.write(lenbuf, 4);
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& e : entries)
        os.write(reinterpret_cast<const char*>(e.data.data()),
                 static_cast<std::streamsize>(e.data.size() * sizeof(float)));
    if (!os) throw IoError("write failed: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) throw IoError("not an LCKP file: " + path);
    char ver = 0;
    is.read(&ver, 1);
    if (static_cast<std::uint8_t>(ver) != kVersion)
        throw IoError("unsupported LCKP version " + std::to_string(static_cast<int>(ver)));
    char lenbuf[4];
    is.read(lenbuf, 4);
    if (!is) throw IoError("truncated LCKP header length: " + path);
    std::uint32_t len = 0;
    for (int i = 0; i < 4; ++i)
        len |= static_cast<std::uint32_t>(static_cast<unsigned char>(lenbuf[i])) << (8 * i);
    std::string hs(len, '\0');
    is.read(hs.data(), static_cast<std::streamsize>(len));
    if (!is) throw IoError("truncated LCKP header: " + path);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const std::exception& e) {
        throw IoError(std::string("bad LCKP header json: ") + e.what());
    }

    Checkpoint ck;
    ck.meta_json = header.contains("meta") ? header["meta"].dump() : "{}";
    for (const auto& j : header.at("entries")) {
        Entry e;
        e.name = j.at("name").get<std::string>();
        if (j.at("dtype").get<std::string>() != "f32")
            throw IoError("unsupported dtype in entry " + e.name);
        e.shape = j.at("shape").get<Shape>();
        e.data.resize(static_cast<std::size_t>(shape_numel(e.shape)));
        is.read(reinterpret_cast<char*>(e.data.data()),
                static_cast<std::streamsize>(e.data.size() * sizeof(float)));
        if (!is) throw IoError("truncated payload for entry " + e.name);
        ck.entries.push_back(std::move(e));
    }
    return ck;
}

}  // namespace laconv
