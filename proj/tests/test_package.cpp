#include <cstdio>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "support/graphgen.hpp"
#include "support/testutil.hpp"
#include "tinyforge/errors.hpp"
#include "tinyforge/nas.hpp"
#include "tinyforge/package.hpp"
#include "tinyforge/rng.hpp"

using namespace tinyforge;

namespace {

std::string temp_path(const char* stem) {
    auto dir = std::filesystem::temp_directory_path();
    return (dir / stem).string();
}

} // namespace

TEST_SUITE("package") {

TEST_CASE("round trip reproduces inference byte for byte") {
    Rng rng(0x9A11);
    for (int i = 0; i < 20; ++i) {
        CAPTURE(i);
        const ModelGraph g = testutil::random_graph(rng);
        const PreparedModel pm = PreparedModel::prepare(g);
        const auto bytes = serialize_package(pm);
        const PreparedModel loaded = load_package_bytes(bytes);

        CHECK(loaded.input_shape() == pm.input_shape());
        CHECK(loaded.plan().arena_size == pm.plan().arena_size);
        CHECK(loaded.layers().size() == pm.layers().size());

        const TensorI8 input = testutil::random_input_for(g, rng);
        ExecutionStats sa{}, sb{};
        const TensorI8 a = pm.run(input, &sa);
        const TensorI8 b = loaded.run(input, &sb);
        CHECK(a.data == b.data);
        CHECK(a.shape == b.shape);
        CHECK(a.qparams.scale == b.qparams.scale);
        CHECK(a.qparams.zero_point == b.qparams.zero_point);
        CHECK(sa.total_macs == sb.total_macs);
        CHECK(sa.arena_bytes == sb.arena_bytes);
    }
}

TEST_CASE("serialization is deterministic and survives a reload cycle") {
    Rng rng(0x9A12);
    const ModelGraph g = testutil::random_graph(rng);
    const PreparedModel pm = PreparedModel::prepare(g);
    const auto first = serialize_package(pm);
    const auto second = serialize_package(pm);
    CHECK(first == second);

    const auto reserialized = serialize_package(load_package_bytes(first));
    CHECK(reserialized == first);
}

TEST_CASE("foreign bytes are rejected by magic") {
    Rng rng(0x9A13);
    auto bytes = serialize_package(PreparedModel::prepare(testutil::random_graph(rng)));
    bytes[0] ^= 0x40;
    CHECK_THROWS_AS(load_package_bytes(bytes), BadMagic);

    const std::vector<uint8_t> text = {'h', 'e', 'l', 'l', 'o', ' ', 'w', 'o',
                                       'r', 'l', 'd', '.', ' ', 'n', 'o', 't',
                                       ' ', 'a', ' ', 'p', 'a', 'c', 'k', 'a',
                                       'g', 'e', ' ', 'a', 't', ' ', 'a', 'l'};
    CHECK_THROWS_AS(load_package_bytes(text), BadMagic);
}

TEST_CASE("every truncation point is detected") {
    Rng rng(0x9A14);
    const ModelGraph g = testutil::random_graph(rng);
    const auto bytes = serialize_package(PreparedModel::prepare(g));
    REQUIRE(bytes.size() > 64);
    for (size_t len = 0; len < bytes.size(); ++len) {
        const std::span<const uint8_t> prefix(bytes.data(), len);
        CHECK_THROWS_AS(load_package_bytes(prefix), CorruptStream);
    }
}

TEST_CASE("version and endianness fields are enforced") {
    Rng rng(0x9A15);
    const auto bytes = serialize_package(PreparedModel::prepare(testutil::random_graph(rng)));

    auto wrong_version = bytes;
    wrong_version[4] ^= 0x01;
    CHECK_THROWS_AS(load_package_bytes(wrong_version), CorruptStream);

    auto wrong_endian = bytes;
    wrong_endian[6] &= uint8_t(~0x01);
    CHECK_THROWS_AS(load_package_bytes(wrong_endian), CorruptStream);
}

TEST_CASE("emit enforces the budget unless overridden") {
    Rng rng(0x9A16);
    const ModelGraph g = testutil::random_graph(rng);
    const PreparedModel pm = PreparedModel::prepare(g);
    const auto bytes = serialize_package(pm);
    const std::string path = temp_path("tinyforge_pkg_budget.bin");

    ResourceBudget tiny;
    tiny.storage_limit = bytes.size() - 1;
    CHECK_THROWS_AS(emit_package(pm, path, tiny), BudgetExceeded);
    CHECK_FALSE(std::filesystem::exists(path));

    ResourceBudget no_mem = tiny;
    no_mem.storage_limit = bytes.size();
    no_mem.memory_limit = 0;
    CHECK_THROWS_AS(emit_package(pm, path, no_mem), BudgetExceeded);

    emit_package(pm, path, tiny, /*override_budget=*/true);
    CHECK(std::filesystem::file_size(path) == bytes.size());
    std::filesystem::remove(path);
}

TEST_CASE("file and in-memory loads agree") {
    Rng rng(0x9A17);
    const ModelGraph g = testutil::random_graph(rng);
    const PreparedModel pm = PreparedModel::prepare(g);
    const std::string path = temp_path("tinyforge_pkg_roundtrip.bin");
    emit_package(pm, path);

    const PreparedModel from_file = load_package(path);
    const TensorI8 input = testutil::random_input_for(g, rng);
    const TensorI8 a = pm.run(input);
    const TensorI8 b = from_file.run(input);
    CHECK(a.data == b.data);
    std::filesystem::remove(path);
}

} // TEST_SUITE
