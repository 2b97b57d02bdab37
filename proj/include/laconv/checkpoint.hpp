#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "laconv/tensor.hpp"

namespace laconv {

// LCKP container: magic "LCKP", one version byte (=1), a u32-LE
// length-prefixed UTF-8 JSON header {"entries":[{name,dtype,shape}...],
// "meta":{...}}, then raw little-endian f32 payloads concatenated in header
// order.
struct Checkpoint {
    static constexpr std::uint8_t kVersion = 1;

    struct Entry {
        std::string name;
        Shape shape;
        std::vector<float> data;
    };

    std::vector<Entry> entries;
    std::string meta_json;  // serialized JSON object, "{}" when empty

    void add(const std::string& name, const Tensor<float>& t);
    const Entry& find(const std::string& name) const;
    bool has(const std::string& name) const;
    Tensor<float> tensor(const std::string& name) const;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
};

}  // namespace laconv
