// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

namespace netsd {

inline constexpr std::size_t kBlockSize = 512;

// Raw little-endian image file backing the emulated card. Created sparse and
// zero-filled on first use. Access counters let tests assert that no block
// I/O happens on rejected or pre-init commands.
class BackingImage {
public:
    struct Counters {
        std::uint64_t block_reads = 0;
        std::uint64_t block_writes = 0;
    };

    BackingImage(const std::filesystem::path& path, std::uint64_t capacity_bytes);
    ~BackingImage();

    BackingImage(const BackingImage&) = delete;
    BackingImage& operator=(const BackingImage&) = delete;

    void read_block(std::uint64_t lba, std::span<std::uint8_t> out) const;
    void write_block(std::uint64_t lba, std::span<const std::uint8_t> data);
    void flush();

    std::uint64_t capacity_bytes() const { return capacity_; }
    std::uint64_t block_count() const { return capacity_ / kBlockSize; }
    const Counters& counters() const { return counters_; }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    std::uint64_t capacity_ = 0;
    int fd_ = -1;
    void* map_ = nullptr;
    mutable Counters counters_;
};

} // namespace netsd
