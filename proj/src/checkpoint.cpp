#include "card/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace card {

namespace {

constexpr const char* kMagic = "CARD-TENSORS 1";

bool name_ok(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s)
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r') return false;
    return true;
}

void put_le_double(std::ostream& os, double x) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, sizeof(bits));
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(buf), 8);
}

double get_le_double(std::istream& is) {
    unsigned char buf[8];
    is.read(reinterpret_cast<char*>(buf), 8);
    if (!is) throw std::runtime_error("checkpoint: truncated payload");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    double x;
    std::memcpy(&x, &bits, sizeof(x));
    return x;
}

}  // namespace

void Checkpoint::add(const std::string& name, const Tensor& t) {
    if (!name_ok(name)) throw std::invalid_argument("checkpoint: bad tensor name '" + name + "'");
    if (find(name)) throw std::invalid_argument("checkpoint: duplicate tensor name '" + name + "'");
    tensors.emplace_back(name, t);
}

void Checkpoint::add_meta(const std::string& key, const std::string& value) {
    if (!name_ok(key)) throw std::invalid_argument("checkpoint: bad meta key '" + key + "'");
    if (value.find('\n') != std::string::npos || value.find('\r') != std::string::npos)
        throw std::invalid_argument("checkpoint: meta value must be a single line");
    meta.emplace_back(key, value);
}

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

const Tensor& Checkpoint::require(const std::string& name) const {
    const Tensor* t = find(name);
    if (!t) throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
    return *t;
}

void Checkpoint::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    os << kMagic << "\n";
    for (const auto& [k, v] : meta) os << "META " << k << " " << v << "\n";
    std::size_t offset = 0;
    for (const auto& [name, t] : tensors) {
        os << "TENSOR " << name << " " << t.rank();
        for (std::size_t d : t.shape) os << " " << d;
        os << " " << offset << "\n";
        offset += t.size();
    }
    os << "DATA " << offset << "\n";
    for (const auto& [name, t] : tensors)
        for (double x : t.data) put_le_double(os, x);
    if (!os) throw std::runtime_error("checkpoint: write failed on '" + path + "'");
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(is, line) || line != kMagic)
        throw std::runtime_error("checkpoint: '" + path + "' has wrong magic line");

    Checkpoint ck;
    struct Entry {
        std::string name;
        std::vector<std::size_t> shape;
        std::size_t offset;
    };
    std::vector<Entry> entries;
    std::size_t total = 0;
    bool saw_data = false;
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "META") {
            std::string key;
            ls >> key;
            std::string value;
            std::getline(ls, value);
            if (!value.empty() && value.front() == ' ') value.erase(value.begin());
            ck.meta.emplace_back(key, value);
        } else if (tag == "TENSOR") {
            Entry e;
            std::size_t rank = 0;
            ls >> e.name >> rank;
            e.shape.resize(rank);
            for (std::size_t i = 0; i < rank; ++i) ls >> e.shape[i];
            ls >> e.offset;
            if (!ls) throw std::runtime_error("checkpoint: malformed TENSOR line: " + line);
            entries.push_back(std::move(e));
        } else if (tag == "DATA") {
            ls >> total;
            if (!ls) throw std::runtime_error("checkpoint: malformed DATA line");
            saw_data = true;
            break;
        } else {
            throw std::runtime_error("checkpoint: unknown manifest tag '" + tag + "'");
        }
    }
    if (!saw_data) throw std::runtime_error("checkpoint: manifest missing DATA marker");

    std::vector<double> payload(total);
    for (std::size_t i = 0; i < total; ++i) payload[i] = get_le_double(is);

    for (const Entry& e : entries) {
        const std::size_t n = shape_size(e.shape);
        if (e.offset + n > total)
            throw std::runtime_error("checkpoint: tensor '" + e.name + "' exceeds payload");
        std::vector<double> vals(payload.begin() + static_cast<std::ptrdiff_t>(e.offset),
                                 payload.begin() + static_cast<std::ptrdiff_t>(e.offset + n));
        ck.tensors.emplace_back(e.name, Tensor::unchecked(e.shape, std::move(vals)));
    }
    return ck;
}

}  // namespace card
