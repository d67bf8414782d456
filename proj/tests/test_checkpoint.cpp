#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>

#include "card/checkpoint.hpp"
#include "card/rng.hpp"
#include "card/tensor.hpp"

using namespace card;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) : path("/tmp/card_ckpt_" + name) {}
    ~TempFile() { std::remove(path.c_str()); }
};

Tensor awkward_values() {
    // denormal, negative zero, huge, tiny: the payload must survive all of
    // them bit for bit
    return Tensor::unchecked({2, 3}, {5e-324, -0.0, 1.7976931348623157e308, -2.2250738585072014e-308,
                                      0.1, -3.0});
}

}  // namespace

TEST_CASE("checkpoint round trip is bit exact") {
    TempFile f("roundtrip");
    Checkpoint out;
    Rng rng(31);
    std::vector<double> big(257);
    for (double& x : big) x = rng.normal() * 1e3;
    out.add("enc.w0", awkward_values());
    out.add("enc.b0", Tensor::row(big));
    out.add("scalar", Tensor::scalar(-1.25));
    out.add_meta("epoch", "17");
    out.add_meta("loss", "0.123456789012345678");
    out.save(f.path);

    Checkpoint in = Checkpoint::load(f.path);
    REQUIRE(in.tensors.size() == 3);
    CHECK(in.tensors[0].first == "enc.w0");
    CHECK(in.tensors[1].first == "enc.b0");
    for (std::size_t i = 0; i < out.tensors.size(); ++i) {
        const Tensor& a = out.tensors[i].second;
        const Tensor& b = in.tensors[i].second;
        REQUIRE(a.shape == b.shape);
        CHECK(std::memcmp(a.ptr(), b.ptr(), a.size() * sizeof(double)) == 0);
    }
    REQUIRE(in.meta.size() == 2);
    CHECK(in.meta[0].first == "epoch");
    CHECK(in.meta[0].second == "17");
    CHECK(in.meta[1].second == "0.123456789012345678");
}

TEST_CASE("saving twice produces identical bytes") {
    TempFile f1("bytes_a"), f2("bytes_b");
    Checkpoint c;
    c.add("t", awkward_values());
    c.add_meta("k", "v");
    c.save(f1.path);
    c.save(f2.path);
    std::ifstream a(f1.path, std::ios::binary), b(f2.path, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(sa.size() > 0);
    CHECK(sa == sb);
}

TEST_CASE("name validation") {
    Checkpoint c;
    c.add("fine.name", Tensor::scalar(1.0));
    CHECK_THROWS_AS(c.add("has space", Tensor::scalar(1.0)), std::invalid_argument);
    CHECK_THROWS_AS(c.add("fine.name", Tensor::scalar(2.0)), std::invalid_argument);
    CHECK_THROWS_AS(c.add("", Tensor::scalar(1.0)), std::invalid_argument);
    CHECK_THROWS_AS(c.add_meta("k", "line\nbreak"), std::invalid_argument);
}

TEST_CASE("find and require") {
    Checkpoint c;
    c.add("a", Tensor::scalar(3.0));
    CHECK(c.find("a") != nullptr);
    CHECK(c.find("b") == nullptr);
    CHECK(c.require("a").data[0] == 3.0);
    CHECK_THROWS_AS(c.require("b"), std::runtime_error);
}

TEST_CASE("loading garbage or truncated files fails loudly") {
    TempFile f("bad");
    {
        std::ofstream os(f.path);
        os << "not a checkpoint\n";
    }
    CHECK_THROWS_AS(Checkpoint::load(f.path), std::runtime_error);

    // valid header, payload cut short
    Checkpoint c;
    c.add("t", Tensor::row({1.0, 2.0, 3.0, 4.0}));
    c.save(f.path);
    std::string all;
    {
        std::ifstream is(f.path, std::ios::binary);
        all.assign((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    }
    {
        std::ofstream os(f.path, std::ios::binary);
        os.write(all.data(), static_cast<std::streamsize>(all.size() - 9));
    }
    CHECK_THROWS_AS(Checkpoint::load(f.path), std::runtime_error);

    CHECK_THROWS_AS(Checkpoint::load("/tmp/card_ckpt_definitely_missing"), std::runtime_error);
}
