#pragma once

#include <string>
#include <utility>
#include <vector>

#include "card/tensor.hpp"

namespace card {

// Named-tensor container. On disk: a small text manifest listing name,
// shape and payload offset per tensor, then a DATA marker, then the raw
// values as little-endian 64-bit floats. Offsets count doubles from the
// start of the payload. Round trips are bit exact.
struct Checkpoint {
    std::vector<std::pair<std::string, Tensor>> tensors;
    std::vector<std::pair<std::string, std::string>> meta;

    void add(const std::string& name, const Tensor& t);
    void add_meta(const std::string& key, const std::string& value);
    const Tensor* find(const std::string& name) const;
    const Tensor& require(const std::string& name) const;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
};

}  // namespace card
