// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace netsd::fat {

inline constexpr std::size_t kSectorSize = 512;

// Sector-addressed storage the filesystem runs on. The gateway backs this
// with granted card transfers; tests use memory.
class BlockDevice {
public:
    virtual ~BlockDevice() = default;
    virtual std::uint64_t block_count() const = 0;
    // Lengths are multiples of the sector size.
    virtual void read(std::uint64_t lba, std::span<std::uint8_t> out) = 0;
    virtual void write(std::uint64_t lba, std::span<const std::uint8_t> data) = 0;
};

class MemoryBlockDevice final : public BlockDevice {
public:
    explicit MemoryBlockDevice(std::uint64_t capacity_bytes)
        : bytes_(capacity_bytes, 0) {}

    std::uint64_t block_count() const override { return bytes_.size() / kSectorSize; }
    void read(std::uint64_t lba, std::span<std::uint8_t> out) override;
    void write(std::uint64_t lba, std::span<const std::uint8_t> data) override;

    std::span<const std::uint8_t> bytes() const { return bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
};

enum class FsErrc {
    NotFound,
    NameInvalid,
    NoSpace,
    NotADirectory,
    IsADirectory,
    IoError,
    InvalidVolume,
    InvalidArgument,
};

class FsError : public std::runtime_error {
public:
    FsError(FsErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
    FsErrc code() const { return code_; }

private:
    FsErrc code_;
};

enum class Variant : std::uint8_t { Fat16, Fat32 };

struct DirEntry {
    std::string name; // decoded 8.3
    bool is_directory = false;
    std::uint32_t size_bytes = 0;
    std::uint32_t first_cluster = 0;
};

// Classic short-name codec: up to eight name characters plus three extension
// characters, upper-case, space padded on the media.
std::array<std::uint8_t, 11> encode_83(std::string_view name); // throws NameInvalid
std::string decode_83(std::span<const std::uint8_t> raw);      // raw.size() == 11

struct FormatOptions {
    std::string label = "NO NAME";
    std::uint32_t volume_id = 0x4E530701;
};

// Writes boot sector(s), empty FAT copies, and an empty root directory.
// Picks FAT16 below 32 MiB and FAT32 above, adjusting where the cluster-count
// validity ranges demand it.
void format(BlockDevice& dev);
void format(BlockDevice& dev, const FormatOptions& opts);

class FatVolume {
public:
    static FatVolume mount(BlockDevice& dev); // throws InvalidVolume

    Variant variant() const { return variant_; }
    std::uint32_t total_clusters() const { return total_clusters_; }
    std::uint32_t cluster_bytes() const { return sectors_per_cluster_ * kSectorSize; }
    std::uint32_t free_clusters() const;

    std::vector<DirEntry> list_dir(std::string_view path);
    std::optional<DirEntry> stat(std::string_view path); // no IsADirectory/NotFound throw
    std::vector<std::uint8_t> read_file(std::string_view path);
    DirEntry write_file(std::string_view path, std::span<const std::uint8_t> data);
    void delete_file(std::string_view path);
    void make_dir(std::string_view path);

private:
    explicit FatVolume(BlockDevice& dev) : dev_(&dev) {}

    // Location of one directory entry on the media.
    struct EntrySlot {
        std::uint64_t sector = 0;
        std::uint32_t offset = 0; // byte offset within the sector
    };
    struct Located {
        DirEntry entry;
        EntrySlot slot;
    };
    // A directory either occupies the fixed FAT16 root region or a chain.
    struct DirRef {
        bool fixed_root = false;
        std::uint32_t first_cluster = 0;
    };

    void load_fat();
    void flush_fat_range(std::uint32_t first_entry, std::uint32_t last_entry);
    std::uint32_t fat_get(std::uint32_t cluster) const;
    void fat_set(std::uint32_t cluster, std::uint32_t value);
    bool is_eoc(std::uint32_t value) const;
    std::uint32_t eoc_value() const;

    std::uint64_t cluster_lba(std::uint32_t cluster) const;
    std::vector<std::uint32_t> chain_of(std::uint32_t first) const;
    std::vector<std::uint32_t> allocate_chain(std::uint32_t count); // throws NoSpace
    void free_chain(std::uint32_t first);

    DirRef resolve_dir(std::string_view path, bool create_missing);
    std::optional<Located> find_in_dir(const DirRef& dir, const std::array<std::uint8_t, 11>& name);
    EntrySlot add_entry(DirRef& dir, const std::array<std::uint8_t, 11>& name, std::uint8_t attr,
                        std::uint32_t first_cluster, std::uint32_t size);
    void write_entry(const EntrySlot& slot, const std::array<std::uint8_t, 11>& name,
                     std::uint8_t attr, std::uint32_t first_cluster, std::uint32_t size);
    DirRef make_subdirectory(DirRef& parent, const std::array<std::uint8_t, 11>& name);

    template <typename Fn>
    void for_each_entry(const DirRef& dir, Fn&& fn); // fn(raw32, slot) -> bool keep_going

    void update_fsinfo();

    BlockDevice* dev_;
    Variant variant_ = Variant::Fat16;
    std::uint32_t sectors_per_cluster_ = 1;
    std::uint32_t reserved_sectors_ = 1;
    std::uint32_t fat_count_ = 2;
    std::uint32_t fat_sectors_ = 0;
    std::uint32_t root_entries_ = 0;   // FAT16 fixed root
    std::uint64_t root_start_lba_ = 0; // FAT16
    std::uint32_t root_cluster_ = 0;   // FAT32
    std::uint64_t data_start_lba_ = 0;
    std::uint32_t total_clusters_ = 0;
    std::uint64_t total_sectors_ = 0;

    std::vector<std::uint32_t> fat_; // entry-indexed, in memory, written through
};

} // namespace netsd::fat
