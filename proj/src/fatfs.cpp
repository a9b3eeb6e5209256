// SPDX-License-Identifier: Apache-2.0
#include "netsd/fatfs.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>

namespace netsd::fat {

namespace {

constexpr std::uint8_t kAttrReadOnly = 0x01;
constexpr std::uint8_t kAttrVolumeLabel = 0x08;
constexpr std::uint8_t kAttrDirectory = 0x10;
constexpr std::uint8_t kAttrArchive = 0x20;
constexpr std::uint8_t kAttrLongName = 0x0F;
constexpr std::uint16_t kFixedDate = 0x52E1; // 2021-07-01, the fixed stamp for all entries
constexpr std::uint32_t kFat32Mask = 0x0FFFFFFF;

std::uint16_t rd16(const std::uint8_t* p) { return std::uint16_t(p[0] | (p[1] << 8)); }
std::uint32_t rd32(const std::uint8_t* p) {
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
}
void wr16(std::uint8_t* p, std::uint16_t v) {
    p[0] = std::uint8_t(v);
    p[1] = std::uint8_t(v >> 8);
}
void wr32(std::uint8_t* p, std::uint32_t v) {
    p[0] = std::uint8_t(v);
    p[1] = std::uint8_t(v >> 8);
    p[2] = std::uint8_t(v >> 16);
    p[3] = std::uint8_t(v >> 24);
}

bool valid_short_char(char c) {
    if (c >= 'A' && c <= 'Z') return true;
    if (c >= '0' && c <= '9') return true;
    return std::strchr("!#$%&'()-@^_`{}~", c) != nullptr;
}

struct Geometry {
    Variant variant;
    std::uint32_t sectors_per_cluster;
    std::uint32_t reserved;
    std::uint32_t root_entries; // FAT16
    std::uint32_t fat_sectors;
    std::uint32_t clusters;
};

// Sizes the FAT from the data region before subtracting the FAT itself, so
// the table always covers every cluster (at the cost of a few spare sectors,
// like common formatters).
std::uint32_t solve_clusters(std::uint64_t total, std::uint32_t reserved, std::uint32_t root_sectors,
                             std::uint32_t spc, std::uint32_t entry_bytes,
                             std::uint32_t* fat_sectors_out) {
    std::uint64_t usable = total - reserved - root_sectors;
    std::uint64_t entries_per_sector = kSectorSize / entry_bytes;
    std::uint64_t fat_sectors = (usable / spc + 2 + entries_per_sector - 1) / entries_per_sector;
    if (usable <= 2 * fat_sectors) throw FsError(FsErrc::InvalidArgument, "volume too small");
    std::uint32_t clusters = static_cast<std::uint32_t>((usable - 2 * fat_sectors) / spc);
    *fat_sectors_out = static_cast<std::uint32_t>(fat_sectors);
    return clusters;
}

Geometry pick_geometry(std::uint64_t total_sectors) {
    // FAT32 with a valid cluster count when possible above the 32 MiB line,
    // FAT16 otherwise.
    if (total_sectors * kSectorSize >= (32ull << 20)) {
        for (std::uint32_t spc : {1u, 2u, 4u, 8u, 16u, 32u, 64u, 128u}) {
            std::uint32_t fat_sectors = 0;
            std::uint32_t clusters = solve_clusters(total_sectors, 32, 0, spc, 4, &fat_sectors);
            if (clusters < 65525) break; // shrinking clusters further cannot help
            if (clusters <= 0x0FFFFFF4)
                return {Variant::Fat32, spc, 32, 0, fat_sectors, clusters};
        }
    }
    for (std::uint32_t spc : {1u, 2u, 4u, 8u, 16u, 32u, 64u}) {
        std::uint32_t fat_sectors = 0;
        std::uint32_t clusters = solve_clusters(total_sectors, 1, 32, spc, 2, &fat_sectors);
        if (clusters < 4085) throw FsError(FsErrc::InvalidArgument, "volume too small to format");
        if (clusters <= 65524) return {Variant::Fat16, spc, 1, 512, fat_sectors, clusters};
    }
    throw FsError(FsErrc::InvalidArgument, "volume too large for this formatter");
}

std::array<std::uint8_t, 11> label_bytes(const std::string& label) {
    std::array<std::uint8_t, 11> out;
    out.fill(' ');
    for (std::size_t i = 0; i < label.size() && i < out.size(); ++i)
        out[i] = static_cast<std::uint8_t>(std::toupper(static_cast<unsigned char>(label[i])));
    return out;
}

} // namespace

void MemoryBlockDevice::read(std::uint64_t lba, std::span<std::uint8_t> out) {
    if (out.size() % kSectorSize != 0 || (lba + out.size() / kSectorSize) > block_count())
        throw FsError(FsErrc::IoError, "memory device read out of range");
    std::memcpy(out.data(), bytes_.data() + lba * kSectorSize, out.size());
}

void MemoryBlockDevice::write(std::uint64_t lba, std::span<const std::uint8_t> data) {
    if (data.size() % kSectorSize != 0 || (lba + data.size() / kSectorSize) > block_count())
        throw FsError(FsErrc::IoError, "memory device write out of range");
    std::memcpy(bytes_.data() + lba * kSectorSize, data.data(), data.size());
}

std::array<std::uint8_t, 11> encode_83(std::string_view name) {
    std::array<std::uint8_t, 11> out;
    out.fill(' ');
    if (name.empty() || name == "." || name == "..")
        throw FsError(FsErrc::NameInvalid, "empty or reserved name");

    auto dot = name.rfind('.');
    std::string_view base = (dot == std::string_view::npos) ? name : name.substr(0, dot);
    std::string_view ext = (dot == std::string_view::npos) ? "" : name.substr(dot + 1);

    if (base.empty() || base.size() > 8 || ext.size() > 3)
        throw FsError(FsErrc::NameInvalid, "name does not fit 8.3: " + std::string(name));

    auto put = [&](std::string_view part, std::size_t at) {
        for (std::size_t i = 0; i < part.size(); ++i) {
            char c = static_cast<char>(std::toupper(static_cast<unsigned char>(part[i])));
            if (!valid_short_char(c))
                throw FsError(FsErrc::NameInvalid,
                              "character not allowed in a short name: " + std::string(name));
            out[at + i] = static_cast<std::uint8_t>(c);
        }
    };
    put(base, 0);
    put(ext, 8);
    return out;
}

std::string decode_83(std::span<const std::uint8_t> raw) {
    auto trimmed = [&](std::size_t from, std::size_t len) {
        std::size_t end = len;
        while (end > 0 && raw[from + end - 1] == ' ') --end;
        return std::string(reinterpret_cast<const char*>(raw.data()) + from, end);
    };
    std::string base = trimmed(0, 8);
    std::string ext = trimmed(8, 3);
    return ext.empty() ? base : base + "." + ext;
}

void format(BlockDevice& dev) { format(dev, FormatOptions{}); }

void format(BlockDevice& dev, const FormatOptions& opts) {
    std::uint64_t total = dev.block_count();
    Geometry geo = pick_geometry(total);

    std::array<std::uint8_t, kSectorSize> boot{};
    boot[0] = 0xEB;
    boot[1] = geo.variant == Variant::Fat32 ? 0x58 : 0x3C;
    boot[2] = 0x90;
    std::memcpy(boot.data() + 3, "MSWIN4.1", 8);
    wr16(boot.data() + 11, kSectorSize);
    boot[13] = static_cast<std::uint8_t>(geo.sectors_per_cluster);
    wr16(boot.data() + 14, static_cast<std::uint16_t>(geo.reserved));
    boot[16] = 2;
    wr16(boot.data() + 17, static_cast<std::uint16_t>(geo.root_entries));
    if (total < 0x10000) {
        wr16(boot.data() + 19, static_cast<std::uint16_t>(total));
    } else {
        wr32(boot.data() + 32, static_cast<std::uint32_t>(total));
    }
    boot[21] = 0xF8;
    wr16(boot.data() + 24, 63);
    wr16(boot.data() + 26, 255);

    auto label = label_bytes(opts.label);
    if (geo.variant == Variant::Fat16) {
        wr16(boot.data() + 22, static_cast<std::uint16_t>(geo.fat_sectors));
        boot[36] = 0x80;
        boot[38] = 0x29;
        wr32(boot.data() + 39, opts.volume_id);
        std::memcpy(boot.data() + 43, label.data(), 11);
        std::memcpy(boot.data() + 54, "FAT16   ", 8);
    } else {
        wr32(boot.data() + 36, geo.fat_sectors);
        wr32(boot.data() + 44, 2); // root directory cluster
        wr16(boot.data() + 48, 1); // FSInfo sector
        wr16(boot.data() + 50, 6); // backup boot sector
        boot[64] = 0x80;
        boot[66] = 0x29;
        wr32(boot.data() + 67, opts.volume_id);
        std::memcpy(boot.data() + 71, label.data(), 11);
        std::memcpy(boot.data() + 82, "FAT32   ", 8);
    }
    boot[510] = 0x55;
    boot[511] = 0xAA;
    dev.write(0, boot);

    std::uint32_t root_sectors = geo.root_entries * 32 / kSectorSize;
    std::uint64_t fat0 = geo.reserved;
    std::uint64_t fat1 = fat0 + geo.fat_sectors;
    std::uint64_t root_or_data = fat1 + geo.fat_sectors;

    // Zero the metadata region (both FATs, fixed root / root cluster).
    std::array<std::uint8_t, kSectorSize> zero{};
    std::uint64_t zero_until = root_or_data + root_sectors +
                               (geo.variant == Variant::Fat32 ? geo.sectors_per_cluster : 0);
    for (std::uint64_t lba = fat0; lba < zero_until; ++lba) dev.write(lba, zero);

    std::array<std::uint8_t, kSectorSize> fat_head{};
    std::uint32_t free_clusters = geo.clusters;
    if (geo.variant == Variant::Fat16) {
        wr16(fat_head.data() + 0, 0xFFF8);
        wr16(fat_head.data() + 2, 0xFFFF);
    } else {
        wr32(fat_head.data() + 0, 0x0FFFFFF8);
        wr32(fat_head.data() + 4, 0x0FFFFFFF);
        wr32(fat_head.data() + 8, 0x0FFFFFFF); // root cluster chain terminator
        free_clusters -= 1;
    }
    dev.write(fat0, fat_head);
    dev.write(fat1, fat_head);

    // Volume label entry at the head of the root directory.
    std::array<std::uint8_t, kSectorSize> rootsec{};
    std::memcpy(rootsec.data(), label.data(), 11);
    rootsec[11] = kAttrVolumeLabel;
    wr16(rootsec.data() + 24, kFixedDate);
    dev.write(root_or_data, rootsec);

    if (geo.variant == Variant::Fat32) {
        std::array<std::uint8_t, kSectorSize> info{};
        wr32(info.data() + 0, 0x41615252);
        wr32(info.data() + 484, 0x61417272);
        wr32(info.data() + 488, free_clusters);
        wr32(info.data() + 492, 3); // next-free hint
        info[510] = 0x55;
        info[511] = 0xAA;
        dev.write(1, info);
        dev.write(6, boot); // backup copies
        dev.write(7, info);
    }
}

FatVolume FatVolume::mount(BlockDevice& dev) {
    FatVolume vol(dev);
    std::array<std::uint8_t, kSectorSize> boot{};
    dev.read(0, boot);
    if (boot[510] != 0x55 || boot[511] != 0xAA)
        throw FsError(FsErrc::InvalidVolume, "missing boot signature");
    if (rd16(boot.data() + 11) != kSectorSize)
        throw FsError(FsErrc::InvalidVolume, "unsupported sector size");

    vol.sectors_per_cluster_ = boot[13];
    if (vol.sectors_per_cluster_ == 0 || (vol.sectors_per_cluster_ & (vol.sectors_per_cluster_ - 1)))
        throw FsError(FsErrc::InvalidVolume, "bad sectors-per-cluster");
    vol.reserved_sectors_ = rd16(boot.data() + 14);
    vol.fat_count_ = boot[16];
    if (vol.fat_count_ != 2) throw FsError(FsErrc::InvalidVolume, "expected two FAT copies");
    vol.root_entries_ = rd16(boot.data() + 17);
    vol.total_sectors_ = rd16(boot.data() + 19);
    if (vol.total_sectors_ == 0) vol.total_sectors_ = rd32(boot.data() + 32);
    std::uint32_t fat16_sectors = rd16(boot.data() + 22);
    vol.fat_sectors_ = fat16_sectors ? fat16_sectors : rd32(boot.data() + 36);
    if (vol.fat_sectors_ == 0 || vol.total_sectors_ == 0 ||
        vol.total_sectors_ > dev.block_count())
        throw FsError(FsErrc::InvalidVolume, "inconsistent geometry");

    std::uint32_t root_sectors = vol.root_entries_ * 32 / kSectorSize;
    vol.root_start_lba_ = vol.reserved_sectors_ + 2ull * vol.fat_sectors_;
    vol.data_start_lba_ = vol.root_start_lba_ + root_sectors;
    std::uint64_t data_sectors = vol.total_sectors_ - vol.data_start_lba_;
    vol.total_clusters_ = static_cast<std::uint32_t>(data_sectors / vol.sectors_per_cluster_);

    // Variant by cluster count, the canonical detection rule.
    if (vol.total_clusters_ < 4085)
        throw FsError(FsErrc::InvalidVolume, "cluster count below the FAT16 range");
    vol.variant_ = vol.total_clusters_ < 65525 ? Variant::Fat16 : Variant::Fat32;
    if (vol.variant_ == Variant::Fat32) {
        vol.root_cluster_ = rd32(boot.data() + 44);
        if (vol.root_cluster_ < 2) throw FsError(FsErrc::InvalidVolume, "bad root cluster");
    }
    // Clusters the FAT cannot describe are unusable; ignore them.
    std::uint64_t fat_entries =
        std::uint64_t(vol.fat_sectors_) * kSectorSize / (vol.variant_ == Variant::Fat16 ? 2 : 4);
    if (fat_entries < 2) throw FsError(FsErrc::InvalidVolume, "FAT too small");
    vol.total_clusters_ =
        std::min<std::uint64_t>(vol.total_clusters_, fat_entries - 2);
    vol.load_fat();
    return vol;
}

void FatVolume::load_fat() {
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(fat_sectors_) * kSectorSize);
    dev_->read(reserved_sectors_, raw);
    std::uint32_t entries = total_clusters_ + 2;
    fat_.assign(entries, 0);
    for (std::uint32_t i = 0; i < entries; ++i) {
        if (variant_ == Variant::Fat16)
            fat_[i] = rd16(raw.data() + i * 2);
        else
            fat_[i] = rd32(raw.data() + i * 4) & kFat32Mask;
    }
}

void FatVolume::flush_fat_range(std::uint32_t first_entry, std::uint32_t last_entry) {
    std::uint32_t entry_bytes = variant_ == Variant::Fat16 ? 2 : 4;
    std::uint32_t first_sector = first_entry * entry_bytes / kSectorSize;
    std::uint32_t last_sector = last_entry * entry_bytes / kSectorSize;
    std::uint32_t count = last_sector - first_sector + 1;

    std::vector<std::uint8_t> raw(static_cast<std::size_t>(count) * kSectorSize, 0);
    std::uint32_t begin_entry = first_sector * kSectorSize / entry_bytes;
    std::uint32_t end_entry = std::min<std::uint32_t>((last_sector + 1) * kSectorSize / entry_bytes,
                                                      total_clusters_ + 2);
    for (std::uint32_t i = begin_entry; i < end_entry; ++i) {
        std::uint8_t* p = raw.data() + (i - begin_entry) * entry_bytes;
        if (variant_ == Variant::Fat16)
            wr16(p, static_cast<std::uint16_t>(fat_[i]));
        else
            wr32(p, fat_[i]);
    }
    // Entry 0/1 markers live in the first sector; restore them on the way out.
    if (first_sector == 0) {
        if (variant_ == Variant::Fat16) {
            wr16(raw.data(), 0xFFF8);
            wr16(raw.data() + 2, 0xFFFF);
        } else {
            wr32(raw.data(), 0x0FFFFFF8);
            wr32(raw.data() + 4, 0x0FFFFFFF);
        }
    }
    // Both copies stay identical after every mutation.
    dev_->write(reserved_sectors_ + first_sector, raw);
    dev_->write(reserved_sectors_ + fat_sectors_ + first_sector, raw);
}

std::uint32_t FatVolume::fat_get(std::uint32_t cluster) const {
    if (cluster < 2 || cluster >= fat_.size())
        throw FsError(FsErrc::IoError, "cluster reference out of range");
    return fat_[cluster];
}

void FatVolume::fat_set(std::uint32_t cluster, std::uint32_t value) {
    if (cluster < 2 || cluster >= fat_.size())
        throw FsError(FsErrc::IoError, "cluster reference out of range");
    fat_[cluster] = value;
}

bool FatVolume::is_eoc(std::uint32_t value) const {
    return variant_ == Variant::Fat16 ? value >= 0xFFF8 : (value & kFat32Mask) >= 0x0FFFFFF8;
}

std::uint32_t FatVolume::eoc_value() const {
    return variant_ == Variant::Fat16 ? 0xFFFF : 0x0FFFFFFF;
}

std::uint64_t FatVolume::cluster_lba(std::uint32_t cluster) const {
    return data_start_lba_ + std::uint64_t(cluster - 2) * sectors_per_cluster_;
}

std::vector<std::uint32_t> FatVolume::chain_of(std::uint32_t first) const {
    std::vector<std::uint32_t> chain;
    std::uint32_t cur = first;
    while (cur >= 2) {
        chain.push_back(cur);
        if (chain.size() > total_clusters_)
            throw FsError(FsErrc::IoError, "cluster chain does not terminate");
        std::uint32_t next = fat_get(cur);
        if (is_eoc(next)) break;
        if (next < 2 || next >= total_clusters_ + 2)
            throw FsError(FsErrc::IoError, "cluster chain runs into a bad entry");
        cur = next;
    }
    return chain;
}

std::uint32_t FatVolume::free_clusters() const {
    std::uint32_t n = 0;
    for (std::uint32_t i = 2; i < fat_.size(); ++i)
        if (fat_[i] == 0) ++n;
    return n;
}

std::vector<std::uint32_t> FatVolume::allocate_chain(std::uint32_t count) {
    std::vector<std::uint32_t> picked;
    if (count == 0) return picked;
    picked.reserve(count);
    // First fit, ascending.
    for (std::uint32_t c = 2; c < fat_.size() && picked.size() < count; ++c)
        if (fat_[c] == 0) picked.push_back(c);
    if (picked.size() < count) throw FsError(FsErrc::NoSpace, "no free clusters left");
    for (std::size_t i = 0; i < picked.size(); ++i)
        fat_set(picked[i], i + 1 < picked.size() ? picked[i + 1] : eoc_value());
    return picked;
}

void FatVolume::free_chain(std::uint32_t first) {
    if (first < 2) return;
    for (std::uint32_t c : chain_of(first)) fat_set(c, 0);
}

template <typename Fn>
void FatVolume::for_each_entry(const DirRef& dir, Fn&& fn) {
    std::array<std::uint8_t, kSectorSize> sec{};
    if (dir.fixed_root) {
        std::uint32_t sectors = root_entries_ * 32 / kSectorSize;
        for (std::uint32_t s = 0; s < sectors; ++s) {
            dev_->read(root_start_lba_ + s, sec);
            for (std::uint32_t off = 0; off < kSectorSize; off += 32)
                if (!fn(sec.data() + off, EntrySlot{root_start_lba_ + s, off})) return;
        }
        return;
    }
    for (std::uint32_t cluster : chain_of(dir.first_cluster)) {
        for (std::uint32_t s = 0; s < sectors_per_cluster_; ++s) {
            dev_->read(cluster_lba(cluster) + s, sec);
            for (std::uint32_t off = 0; off < kSectorSize; off += 32)
                if (!fn(sec.data() + off, EntrySlot{cluster_lba(cluster) + s, off})) return;
        }
    }
}

std::optional<FatVolume::Located> FatVolume::find_in_dir(const DirRef& dir,
                                                         const std::array<std::uint8_t, 11>& name) {
    std::optional<Located> found;
    for_each_entry(dir, [&](const std::uint8_t* raw, EntrySlot slot) {
        if (raw[0] == 0x00) return false; // end of directory
        if (raw[0] == 0xE5) return true;
        std::uint8_t attr = raw[11];
        if ((attr & kAttrLongName) == kAttrLongName || (attr & kAttrVolumeLabel)) return true;
        if (std::memcmp(raw, name.data(), 11) != 0) return true;
        Located loc;
        loc.entry.name = decode_83({raw, 11});
        loc.entry.is_directory = (attr & kAttrDirectory) != 0;
        loc.entry.size_bytes = rd32(raw + 28);
        loc.entry.first_cluster = rd16(raw + 26) | (std::uint32_t(rd16(raw + 20)) << 16);
        loc.slot = slot;
        found = loc;
        return false;
    });
    return found;
}

void FatVolume::write_entry(const EntrySlot& slot, const std::array<std::uint8_t, 11>& name,
                            std::uint8_t attr, std::uint32_t first_cluster, std::uint32_t size) {
    std::array<std::uint8_t, kSectorSize> sec{};
    dev_->read(slot.sector, sec);
    std::uint8_t* raw = sec.data() + slot.offset;
    std::memset(raw, 0, 32);
    std::memcpy(raw, name.data(), 11);
    raw[11] = attr;
    wr16(raw + 14, 0);          // creation time
    wr16(raw + 16, kFixedDate); // creation date
    wr16(raw + 18, kFixedDate); // access date
    wr16(raw + 20, static_cast<std::uint16_t>(first_cluster >> 16));
    wr16(raw + 22, 0);          // write time
    wr16(raw + 24, kFixedDate); // write date
    wr16(raw + 26, static_cast<std::uint16_t>(first_cluster));
    wr32(raw + 28, size);
    dev_->write(slot.sector, sec);
}

FatVolume::EntrySlot FatVolume::add_entry(DirRef& dir, const std::array<std::uint8_t, 11>& name,
                                          std::uint8_t attr, std::uint32_t first_cluster,
                                          std::uint32_t size) {
    std::optional<EntrySlot> free_slot;
    for_each_entry(dir, [&](const std::uint8_t* raw, EntrySlot slot) {
        if (raw[0] == 0x00 || raw[0] == 0xE5) {
            free_slot = slot;
            return false;
        }
        return true;
    });
    if (!free_slot) {
        if (dir.fixed_root) throw FsError(FsErrc::NoSpace, "root directory is full");
        // Extend the directory chain by one zeroed cluster.
        auto chain = chain_of(dir.first_cluster);
        auto added = allocate_chain(1);
        fat_set(chain.back(), added[0]);
        flush_fat_range(std::min(chain.back(), added[0]), std::max(chain.back(), added[0]));
        std::array<std::uint8_t, kSectorSize> zero{};
        for (std::uint32_t s = 0; s < sectors_per_cluster_; ++s)
            dev_->write(cluster_lba(added[0]) + s, zero);
        update_fsinfo();
        free_slot = EntrySlot{cluster_lba(added[0]), 0};
    }
    write_entry(*free_slot, name, attr, first_cluster, size);
    return *free_slot;
}

FatVolume::DirRef FatVolume::make_subdirectory(DirRef& parent, const std::array<std::uint8_t, 11>& name) {
    auto clusters = allocate_chain(1);
    flush_fat_range(clusters[0], clusters[0]);
    std::uint32_t cluster = clusters[0];

    std::array<std::uint8_t, kSectorSize> zero{};
    for (std::uint32_t s = 0; s < sectors_per_cluster_; ++s)
        dev_->write(cluster_lba(cluster) + s, zero);

    // "." and ".." head every subdirectory; ".." holds 0 for the root.
    std::array<std::uint8_t, 11> dot;
    dot.fill(' ');
    dot[0] = '.';
    write_entry(EntrySlot{cluster_lba(cluster), 0}, dot, kAttrDirectory, cluster, 0);
    std::array<std::uint8_t, 11> dotdot = dot;
    dotdot[1] = '.';
    std::uint32_t parent_cluster =
        parent.fixed_root ? 0
                          : (variant_ == Variant::Fat32 && parent.first_cluster == root_cluster_
                                 ? 0
                                 : parent.first_cluster);
    write_entry(EntrySlot{cluster_lba(cluster), 32}, dotdot, kAttrDirectory, parent_cluster, 0);

    add_entry(parent, name, kAttrDirectory, cluster, 0);
    update_fsinfo();
    return DirRef{false, cluster};
}

namespace {

std::vector<std::string> split_path(std::string_view path) {
    std::vector<std::string> parts;
    std::size_t i = 0;
    while (i < path.size()) {
        while (i < path.size() && path[i] == '/') ++i;
        std::size_t j = i;
        while (j < path.size() && path[j] != '/') ++j;
        if (j > i) parts.emplace_back(path.substr(i, j - i));
        i = j;
    }
    return parts;
}

} // namespace

FatVolume::DirRef FatVolume::resolve_dir(std::string_view path, bool create_missing) {
    DirRef dir = variant_ == Variant::Fat16 ? DirRef{true, 0} : DirRef{false, root_cluster_};
    for (const std::string& part : split_path(path)) {
        auto name = encode_83(part);
        auto found = find_in_dir(dir, name);
        if (!found) {
            if (!create_missing)
                throw FsError(FsErrc::NotFound, "no such directory: " + part);
            dir = make_subdirectory(dir, name);
            continue;
        }
        if (!found->entry.is_directory)
            throw FsError(FsErrc::NotADirectory, part + " is not a directory");
        dir = DirRef{false, found->entry.first_cluster};
    }
    return dir;
}

std::vector<DirEntry> FatVolume::list_dir(std::string_view path) {
    DirRef dir = resolve_dir(path, false);
    std::vector<DirEntry> out;
    for_each_entry(dir, [&](const std::uint8_t* raw, EntrySlot) {
        if (raw[0] == 0x00) return false;
        if (raw[0] == 0xE5 || raw[0] == '.') return true;
        std::uint8_t attr = raw[11];
        if ((attr & kAttrLongName) == kAttrLongName || (attr & kAttrVolumeLabel)) return true;
        DirEntry e;
        e.name = decode_83({raw, 11});
        e.is_directory = (attr & kAttrDirectory) != 0;
        e.size_bytes = rd32(raw + 28);
        e.first_cluster = rd16(raw + 26) | (std::uint32_t(rd16(raw + 20)) << 16);
        out.push_back(std::move(e));
        return true;
    });
    return out;
}

std::optional<DirEntry> FatVolume::stat(std::string_view path) {
    auto parts = split_path(path);
    if (parts.empty()) return std::nullopt;
    std::string file = parts.back();
    parts.pop_back();
    std::string parent_path;
    for (const auto& p : parts) parent_path += "/" + p;
    DirRef dir{};
    try {
        dir = resolve_dir(parent_path, false);
    } catch (const FsError& e) {
        if (e.code() == FsErrc::NotFound || e.code() == FsErrc::NotADirectory)
            return std::nullopt;
        throw;
    }
    auto found = find_in_dir(dir, encode_83(file));
    if (!found) return std::nullopt;
    return found->entry;
}

std::vector<std::uint8_t> FatVolume::read_file(std::string_view path) {
    auto parts = split_path(path);
    if (parts.empty()) throw FsError(FsErrc::IsADirectory, "cannot read the root directory");
    std::string file = parts.back();
    parts.pop_back();
    std::string parent_path;
    for (const auto& p : parts) parent_path += "/" + p;
    DirRef dir = resolve_dir(parent_path, false);

    auto found = find_in_dir(dir, encode_83(file));
    if (!found) throw FsError(FsErrc::NotFound, "no such file: " + file);
    if (found->entry.is_directory) throw FsError(FsErrc::IsADirectory, file + " is a directory");

    std::vector<std::uint8_t> out;
    out.reserve(found->entry.size_bytes);
    std::uint32_t remaining = found->entry.size_bytes;
    if (remaining == 0) return out;
    if (found->entry.first_cluster < 2)
        throw FsError(FsErrc::IoError, "non-empty file without clusters");

    auto chain = chain_of(found->entry.first_cluster);
    std::size_t i = 0;
    std::vector<std::uint8_t> run_buf;
    while (i < chain.size() && remaining > 0) {
        // Contiguous clusters come back in one device read.
        std::size_t j = i + 1;
        while (j < chain.size() && chain[j] == chain[j - 1] + 1) ++j;
        std::size_t run_bytes = (j - i) * cluster_bytes();
        run_buf.resize(run_bytes);
        dev_->read(cluster_lba(chain[i]), run_buf);
        std::uint32_t take = static_cast<std::uint32_t>(
            std::min<std::uint64_t>(remaining, run_bytes));
        out.insert(out.end(), run_buf.begin(), run_buf.begin() + take);
        remaining -= take;
        i = j;
    }
    if (remaining != 0) throw FsError(FsErrc::IoError, "cluster chain shorter than file size");
    return out;
}

DirEntry FatVolume::write_file(std::string_view path, std::span<const std::uint8_t> data) {
    auto parts = split_path(path);
    if (parts.empty()) throw FsError(FsErrc::NameInvalid, "missing file name");
    std::string file = parts.back();
    parts.pop_back();
    auto name = encode_83(file);

    std::string parent_path;
    for (const auto& p : parts) parent_path += "/" + p;
    DirRef dir = resolve_dir(parent_path, true);

    auto existing = find_in_dir(dir, name);
    if (existing && existing->entry.is_directory)
        throw FsError(FsErrc::IsADirectory, file + " is a directory");

    // Truncate-and-replace: the old chain goes back to the pool before the
    // new one is picked, so rewrites of the largest file still fit.
    std::vector<std::uint32_t> old_chain;
    if (existing && existing->entry.first_cluster >= 2) {
        old_chain = chain_of(existing->entry.first_cluster);
        free_chain(existing->entry.first_cluster);
    }

    std::uint32_t needed =
        static_cast<std::uint32_t>((data.size() + cluster_bytes() - 1) / cluster_bytes());
    std::vector<std::uint32_t> chain;
    try {
        chain = allocate_chain(needed);
    } catch (const FsError&) {
        if (!old_chain.empty()) load_fat(); // the free was never flushed; reload media state
        throw;
    }

    // Data clusters first, FAT copies second, directory entry last. Runs of
    // consecutive clusters (the common case under first-fit) go out in one
    // device write.
    std::vector<std::uint8_t> run_buf;
    std::uint32_t i = 0;
    while (i < needed) {
        std::uint32_t j = i + 1;
        while (j < needed && chain[j] == chain[j - 1] + 1) ++j;
        std::size_t run_bytes = std::size_t(j - i) * cluster_bytes();
        std::size_t off = std::size_t(i) * cluster_bytes();
        std::size_t have = std::min<std::size_t>(run_bytes, data.size() - off);
        run_buf.assign(run_bytes, 0);
        std::memcpy(run_buf.data(), data.data() + off, have);
        dev_->write(cluster_lba(chain[i]), run_buf);
        i = j;
    }

    std::uint32_t lo = 0, hi = 0;
    auto widen = [&](const std::vector<std::uint32_t>& cs) {
        for (std::uint32_t c : cs) {
            lo = lo ? std::min(lo, c) : c;
            hi = std::max(hi, c);
        }
    };
    widen(old_chain);
    widen(chain);
    if (lo) flush_fat_range(lo, hi);

    std::uint32_t first = chain.empty() ? 0 : chain[0];
    if (existing)
        write_entry(existing->slot, name, kAttrArchive, first,
                    static_cast<std::uint32_t>(data.size()));
    else
        add_entry(dir, name, kAttrArchive, first, static_cast<std::uint32_t>(data.size()));
    update_fsinfo();

    DirEntry e;
    e.name = decode_83({name.data(), 11});
    e.is_directory = false;
    e.size_bytes = static_cast<std::uint32_t>(data.size());
    e.first_cluster = first;
    return e;
}

void FatVolume::delete_file(std::string_view path) {
    auto parts = split_path(path);
    if (parts.empty()) throw FsError(FsErrc::NameInvalid, "missing file name");
    std::string file = parts.back();
    parts.pop_back();
    std::string parent_path;
    for (const auto& p : parts) parent_path += "/" + p;
    DirRef dir = resolve_dir(parent_path, false);

    auto found = find_in_dir(dir, encode_83(file));
    if (!found) throw FsError(FsErrc::NotFound, "no such file: " + file);
    if (found->entry.is_directory) throw FsError(FsErrc::IsADirectory, file + " is a directory");

    // Drop the reference, then recycle the clusters.
    std::array<std::uint8_t, kSectorSize> sec{};
    dev_->read(found->slot.sector, sec);
    sec[found->slot.offset] = 0xE5;
    dev_->write(found->slot.sector, sec);

    if (found->entry.first_cluster >= 2) {
        auto chain = chain_of(found->entry.first_cluster);
        free_chain(found->entry.first_cluster);
        flush_fat_range(*std::min_element(chain.begin(), chain.end()),
                        *std::max_element(chain.begin(), chain.end()));
    }
    update_fsinfo();
}

void FatVolume::make_dir(std::string_view path) { resolve_dir(path, true); }

void FatVolume::update_fsinfo() {
    if (variant_ != Variant::Fat32) return;
    std::array<std::uint8_t, kSectorSize> info{};
    dev_->read(1, info);
    if (rd32(info.data()) != 0x41615252) return;
    wr32(info.data() + 488, free_clusters());
    std::uint32_t hint = 2;
    for (std::uint32_t c = 2; c < fat_.size(); ++c)
        if (fat_[c] == 0) {
            hint = c;
            break;
        }
    wr32(info.data() + 492, hint);
    dev_->write(1, info);
    dev_->write(7, info);
}

} // namespace netsd::fat
