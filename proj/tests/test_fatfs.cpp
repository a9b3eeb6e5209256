// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "netsd/fatfs.hpp"

#include "support/fat_reader.hpp"

#include <map>
#include <random>

using namespace netsd::fat;

namespace {

std::vector<std::uint8_t> random_bytes(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::uint8_t> out(n);
    for (auto& b : out) b = static_cast<std::uint8_t>(rng());
    return out;
}

std::vector<std::uint8_t> image_of(const MemoryBlockDevice& dev) {
    auto s = dev.bytes();
    return {s.begin(), s.end()};
}

} // namespace

TEST_CASE("short name codec") {
    CHECK(encode_83("HELLO.TXT") ==
          std::array<std::uint8_t, 11>{'H', 'E', 'L', 'L', 'O', ' ', ' ', ' ', 'T', 'X', 'T'});
    CHECK(encode_83("hello.txt") == encode_83("HELLO.TXT")); // upper-cased on the way in
    CHECK(encode_83("CONFIG") ==
          std::array<std::uint8_t, 11>{'C', 'O', 'N', 'F', 'I', 'G', ' ', ' ', ' ', ' ', ' '});
    CHECK(decode_83(encode_83("A.B")) == "A.B");
    CHECK(decode_83(encode_83("LOG_01.BIN")) == "LOG_01.BIN");

    for (const char* bad : {"", ".", "..", "TOOLONGNAME.TXT", "A.LONG", "SP ACE.T", "BAD/NAME",
                            "Ümlaut.txt", "A..B"}) {
        CAPTURE(bad);
        CHECK_THROWS_AS((void)encode_83(bad), FsError);
    }
}

TEST_CASE("format picks the variant by capacity and the oracle agrees") {
    SUBCASE("small volume is FAT16") {
        MemoryBlockDevice dev(8ull << 20);
        format(dev);
        FatVolume vol = FatVolume::mount(dev);
        CHECK(vol.variant() == Variant::Fat16);
        CHECK(vol.list_dir("/").empty());

        auto oracle = fat_oracle::read_volume(image_of(dev));
        CHECK_FALSE(oracle.fat32);
        CHECK(oracle.tree.empty());
        CHECK(oracle.free_clusters == vol.free_clusters());
        CHECK(oracle.fats_identical);
    }
    SUBCASE("large volume is FAT32") {
        MemoryBlockDevice dev(64ull << 20);
        format(dev);
        FatVolume vol = FatVolume::mount(dev);
        CHECK(vol.variant() == Variant::Fat32);
        CHECK(vol.list_dir("/").empty());

        auto oracle = fat_oracle::read_volume(image_of(dev));
        CHECK(oracle.fat32);
        CHECK(oracle.free_clusters == vol.free_clusters());
        CHECK(oracle.fats_identical);
    }
    SUBCASE("volumes too small to hold a valid FAT16 are rejected") {
        MemoryBlockDevice dev(1ull << 20);
        CHECK_THROWS_AS(format(dev), FsError);
    }
}

TEST_CASE("write read delete round trip at cluster boundaries") {
    MemoryBlockDevice dev(8ull << 20);
    format(dev);
    FatVolume vol = FatVolume::mount(dev);
    std::uint32_t cb = vol.cluster_bytes();

    std::uint32_t free0 = vol.free_clusters();
    std::size_t i = 0;
    for (std::uint32_t size : {0u, 1u, cb - 1, cb, cb + 1, 7 * cb + 13}) {
        CAPTURE(size);
        auto data = random_bytes(size, 100 + i++);
        std::string name = "F" + std::to_string(size) + ".BIN";
        DirEntry e = vol.write_file(name, data);
        CHECK(e.size_bytes == size);
        CHECK(vol.read_file(name) == data);

        std::uint32_t used = (size + cb - 1) / cb;
        CHECK(vol.free_clusters() == free0 - used);

        vol.delete_file(name);
        CHECK(vol.free_clusters() == free0);
        CHECK_THROWS_AS((void)vol.read_file(name), FsError);
    }
}

TEST_CASE("overwrite replaces content and never leaks clusters") {
    MemoryBlockDevice dev(8ull << 20);
    format(dev);
    FatVolume vol = FatVolume::mount(dev);
    std::uint32_t free0 = vol.free_clusters();

    vol.write_file("DATA.BIN", random_bytes(100000, 1));
    auto small = random_bytes(100, 2);
    vol.write_file("DATA.BIN", small);
    CHECK(vol.read_file("DATA.BIN") == small);
    CHECK(vol.free_clusters() == free0 - 1);

    // Rewriting a file that fills most of the volume still fits, because the
    // old chain is recycled first.
    std::uint32_t cb = vol.cluster_bytes();
    std::uint32_t big = (free0 - 8) * cb;
    vol.write_file("DATA.BIN", random_bytes(big, 3));
    auto replacement = random_bytes(big, 4);
    vol.write_file("DATA.BIN", replacement);
    CHECK(vol.read_file("DATA.BIN") == replacement);

    vol.delete_file("DATA.BIN");
    CHECK(vol.free_clusters() == free0);
}

TEST_CASE("subdirectories are created on demand and the oracle sees the file") {
    MemoryBlockDevice dev(40ull << 20); // FAT32 side
    format(dev);
    FatVolume vol = FatVolume::mount(dev);
    REQUIRE(vol.variant() == Variant::Fat32);

    auto payload = random_bytes(70000, 9);
    vol.write_file("/CFG/A.BIN", payload);
    vol.write_file("/CFG/SUB/B.TXT", {});

    auto listing = vol.list_dir("/CFG");
    REQUIRE(listing.size() == 2);

    auto oracle = fat_oracle::read_volume(image_of(dev));
    REQUIRE(oracle.tree.count("/CFG/"));
    REQUIRE(oracle.tree.count("/CFG/A.BIN"));
    CHECK(oracle.tree["/CFG/A.BIN"].content == payload);
    CHECK(oracle.tree.count("/CFG/SUB/B.TXT"));
    CHECK(oracle.free_clusters == vol.free_clusters());
    CHECK(oracle.fats_identical);
}

TEST_CASE("error paths") {
    MemoryBlockDevice dev(8ull << 20);
    format(dev);
    FatVolume vol = FatVolume::mount(dev);

    CHECK_THROWS_WITH_AS((void)vol.read_file("NOPE.TXT"), doctest::Contains("no such file"),
                         FsError);
    CHECK_THROWS_AS(vol.delete_file("NOPE.TXT"), FsError);
    CHECK_THROWS_AS((void)vol.write_file("/bad name!.txt", {}), FsError);
    CHECK_THROWS_AS((void)vol.list_dir("/MISSING"), FsError);

    vol.write_file("FILE.BIN", random_bytes(10, 1));
    // A path component that is a file, and deleting/reading a directory.
    CHECK_THROWS_AS((void)vol.write_file("/FILE.BIN/X.TXT", {}), FsError);
    vol.make_dir("/DIR");
    CHECK_THROWS_AS((void)vol.read_file("/DIR"), FsError);
    CHECK_THROWS_AS(vol.delete_file("/DIR"), FsError);
    CHECK_THROWS_AS((void)vol.write_file("/DIR", {}), FsError);

    // Exhaust the volume.
    std::uint32_t cb = vol.cluster_bytes();
    std::uint32_t free0 = vol.free_clusters();
    CHECK_THROWS_AS((void)vol.write_file("BIG.BIN", random_bytes((free0 + 1) * cb, 2)), FsError);
    CHECK(vol.free_clusters() == free0); // failed write allocates nothing
    CHECK(fat_oracle::read_volume(image_of(dev)).free_clusters == free0);
}

TEST_CASE("fat16 root directory capacity is bounded") {
    MemoryBlockDevice dev(8ull << 20);
    format(dev);
    FatVolume vol = FatVolume::mount(dev);
    // 512 root entries, one taken by the volume label.
    for (int i = 0; i < 511; ++i)
        vol.write_file("F" + std::to_string(i) + ".X", {});
    bool threw = false;
    try {
        vol.write_file("LAST.X", {});
    } catch (const FsError& e) {
        threw = true;
        CHECK(e.code() == FsErrc::NoSpace);
    }
    CHECK(threw);
}

TEST_CASE("random operation sequences match a reference model and the oracle") {
    for (std::uint64_t capacity : {8ull << 20, 40ull << 20}) {
        CAPTURE(capacity);
        MemoryBlockDevice dev(capacity);
        format(dev);
        FatVolume vol = FatVolume::mount(dev);
        std::uint32_t cb = vol.cluster_bytes();
        std::uint32_t free0 = vol.free_clusters();

        std::map<std::string, std::vector<std::uint8_t>> model;
        std::mt19937_64 rng(capacity * 31 + 7);
        const char* dirs[] = {"", "/CFG", "/LOGS"};

        for (int step = 0; step < 120; ++step) {
            std::string dir = dirs[rng() % 3];
            std::string path = dir + "/F" + std::to_string(rng() % 12) + ".DAT";
            switch (rng() % 4) {
            case 0:
            case 1: { // write or overwrite
                auto data = random_bytes(rng() % (3 * cb), rng());
                vol.write_file(path, data);
                model[path] = std::move(data);
                break;
            }
            case 2: { // delete
                if (model.count(path)) {
                    vol.delete_file(path);
                    model.erase(path);
                } else {
                    CHECK_THROWS_AS(vol.delete_file(path), FsError);
                }
                break;
            }
            default: { // read back
                if (model.count(path))
                    CHECK(vol.read_file(path) == model[path]);
                else
                    CHECK_THROWS_AS((void)vol.read_file(path), FsError);
                break;
            }
            }
        }

        // Free accounting: every cluster is either free or part of exactly one
        // file chain or directory.
        std::uint32_t file_clusters = 0;
        for (const auto& [path, data] : model)
            file_clusters += static_cast<std::uint32_t>((data.size() + cb - 1) / cb);
        std::uint32_t dir_clusters = 2; // /CFG and /LOGS, one cluster each
        CHECK(vol.free_clusters() == free0 - file_clusters - dir_clusters);

        auto oracle = fat_oracle::read_volume(image_of(dev));
        CHECK(oracle.fats_identical);
        CHECK(oracle.free_clusters == vol.free_clusters());
        std::size_t oracle_files = 0;
        for (const auto& [path, file] : oracle.tree) {
            if (path.back() == '/') continue;
            ++oracle_files;
            REQUIRE(model.count(path));
            CHECK(model[path] == file.content);
        }
        CHECK(oracle_files == model.size());
    }
}

TEST_CASE("a foreign hand-built image mounts and reads") {
    // Minimal FAT16 volume built byte by byte: 4 MiB, one file HI.TXT
    // holding "hello from elsewhere".
    const std::uint32_t total = (4u << 20) / 512;
    std::vector<std::uint8_t> img(4u << 20, 0);
    auto w16 = [&](std::size_t off, std::uint16_t v) {
        img[off] = std::uint8_t(v);
        img[off + 1] = std::uint8_t(v >> 8);
    };
    img[0] = 0xEB; img[1] = 0x3C; img[2] = 0x90;
    std::memcpy(&img[3], "FOREIGN1", 8);
    w16(11, 512);
    img[13] = 1;       // one sector per cluster
    w16(14, 4);        // reserved sectors, nonstandard on purpose
    img[16] = 2;
    w16(17, 64);       // 64 root entries = 4 sectors
    w16(19, std::uint16_t(total));
    img[21] = 0xF8;
    w16(22, 33);       // FAT sectors: covers ~8k clusters
    img[510] = 0x55; img[511] = 0xAA;

    std::size_t fat0 = 4 * 512, fat1 = (4 + 33) * 512;
    auto fat_set = [&](std::size_t base, int idx, std::uint16_t v) {
        img[base + idx * 2] = std::uint8_t(v);
        img[base + idx * 2 + 1] = std::uint8_t(v >> 8);
    };
    for (std::size_t base : {fat0, fat1}) {
        fat_set(base, 0, 0xFFF8);
        fat_set(base, 1, 0xFFFF);
        fat_set(base, 2, 0x0003); // HI.TXT spans clusters 2..3
        fat_set(base, 3, 0xFFFF);
    }

    std::size_t root = (4 + 66) * 512;
    std::memcpy(&img[root], "HI      TXT", 11);
    img[root + 11] = 0x20;
    w16(root + 26, 2); // first cluster
    std::string text = "hello from elsewhere";
    std::uint32_t size = 512 + std::uint32_t(text.size()); // spills into cluster 3
    img[root + 28] = std::uint8_t(size);
    img[root + 29] = std::uint8_t(size >> 8);

    std::size_t data = (4 + 66 + 4) * 512;
    for (std::size_t i = 0; i < 512; ++i) img[data + i] = 'A';
    std::memcpy(&img[data + 512], text.data(), text.size());

    MemoryBlockDevice dev(img.size());
    dev.write(0, img);
    FatVolume vol = FatVolume::mount(dev);
    CHECK(vol.variant() == Variant::Fat16);
    auto listing = vol.list_dir("/");
    REQUIRE(listing.size() == 1);
    CHECK(listing[0].name == "HI.TXT");
    auto content = vol.read_file("HI.TXT");
    REQUIRE(content.size() == size);
    CHECK(std::string(content.begin() + 512, content.end()) == text);
}
