#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "sid/checkpoint.hpp"
#include "testutil.hpp"

using namespace sid;

namespace {

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("checkpoint roundtrip preserves names, shapes and bits") {
    Rng rng(1);
    NamedTensors ts;
    ts.emplace_back("a.w", Tensor::randn({3, 4}, rng));
    ts.emplace_back("a.b", Tensor::randn({4}, rng));
    ts.emplace_back("deep.block0.k", Tensor::randn({3, 3, 2, 2}, rng));
    const std::string path = temp_path("sid_ckpt_test.bin");
    save_checkpoint(path, ts);

    NamedTensors back = load_checkpoint(path);
    REQUIRE(back.size() == ts.size());
    for (size_t i = 0; i < ts.size(); ++i) {
        CHECK(back[i].first == ts[i].first);
        CHECK(back[i].second.shape() == ts[i].second.shape());
        CHECK(sid::test::max_abs_diff(back[i].second.data(), ts[i].second.data()) == 0.0);
    }
    std::remove(path.c_str());
}

TEST_CASE("checkpoint header starts with magic SID2 and version") {
    const std::string path = temp_path("sid_ckpt_hdr.bin");
    save_checkpoint(path, {{"x", Tensor::from_data({1}, {42.0})}});
    std::FILE* f = std::fopen(path.c_str(), "rb");
    REQUIRE(f != nullptr);
    char hdr[12];
    REQUIRE(std::fread(hdr, 1, 12, f) == 12);
    std::fclose(f);
    CHECK(std::string(hdr, 4) == "SID2");
    // version 1, count 1, little-endian
    CHECK(static_cast<uint8_t>(hdr[4]) == 1);
    CHECK(static_cast<uint8_t>(hdr[8]) == 1);
    std::remove(path.c_str());
}

TEST_CASE("checkpoint rejects bad magic and truncation") {
    const std::string path = temp_path("sid_ckpt_bad.bin");
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fwrite("NOPE\x01\x00\x00\x00", 1, 8, f);
    std::fclose(f);
    CHECK_THROWS_AS(load_checkpoint(path), IoError);

    NamedTensors ts;
    ts.emplace_back("x", Tensor::from_data({4}, {1, 2, 3, 4}));
    save_checkpoint(path, ts);
    // truncate mid-payload
    std::filesystem::resize_file(path, 30);
    CHECK_THROWS_AS(load_checkpoint(path), IoError);
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_checkpoint(path), IoError);  // missing file
}
