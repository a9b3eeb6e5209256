// SPDX-License-Identifier: Apache-2.0
#include "netsd/backing_image.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <stdexcept>
#include <system_error>

namespace netsd {

namespace {

[[noreturn]] void throw_errno(const std::string& what) {
    throw std::system_error(errno, std::generic_category(), what);
}

} // namespace

BackingImage::BackingImage(const std::filesystem::path& path, std::uint64_t capacity_bytes)
    : path_(path), capacity_(capacity_bytes) {
    if (capacity_ == 0 || capacity_ % kBlockSize != 0)
        throw std::invalid_argument("image capacity must be a positive multiple of 512");
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) throw_errno("open " + path.string());
    // Sparse zero fill: size the file and map it; holes read back as zeros.
    if (::ftruncate(fd_, static_cast<off_t>(capacity_)) != 0) throw_errno("ftruncate");
    map_ = ::mmap(nullptr, capacity_, PROT_READ | PROT_WRITE, MAP_SHARED, fd_, 0);
    if (map_ == MAP_FAILED) {
        map_ = nullptr;
        throw_errno("mmap " + path.string());
    }
}

BackingImage::~BackingImage() {
    if (map_) ::munmap(map_, capacity_);
    if (fd_ >= 0) ::close(fd_);
}

void BackingImage::read_block(std::uint64_t lba, std::span<std::uint8_t> out) const {
    if (out.size() != kBlockSize) throw std::invalid_argument("read_block needs a 512-byte buffer");
    if (lba >= block_count()) throw std::out_of_range("read_block lba out of range");
    std::memcpy(out.data(), static_cast<const std::uint8_t*>(map_) + lba * kBlockSize, kBlockSize);
    ++counters_.block_reads;
}

void BackingImage::write_block(std::uint64_t lba, std::span<const std::uint8_t> data) {
    if (data.size() != kBlockSize) throw std::invalid_argument("write_block needs 512 bytes");
    if (lba >= block_count()) throw std::out_of_range("write_block lba out of range");
    std::memcpy(static_cast<std::uint8_t*>(map_) + lba * kBlockSize, data.data(), kBlockSize);
    ++counters_.block_writes;
}

void BackingImage::flush() {
    if (::msync(map_, capacity_, MS_SYNC) != 0) throw_errno("msync");
}

} // namespace netsd
