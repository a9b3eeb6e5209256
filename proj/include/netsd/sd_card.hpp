// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "netsd/backing_image.hpp"
#include "netsd/sd_protocol.hpp"
#include "netsd/types.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>

namespace netsd {

// Command-level emulation of an SDHC card in SPI mode, backed by a raw image
// file. Block addressed, 512-byte blocks. The card is a plain state machine;
// the arbiter serializes all access to it.
class SdCard {
public:
    enum class Phase : std::uint8_t {
        Uninitialized, // powered off, or powered on awaiting CMD0
        Idle,          // after CMD0, before ACMD41 completes
        Ready,         // ACMD41 reported ready; OCR not read yet
        TransferReady, // full init sequence done, data commands accepted
        ReadingMulti,
        WritingMulti,
    };

    struct Config {
        std::uint64_t capacity_bytes = 0; // 0: adopt the backing image size
        // ACMD41 polls the card answers "busy" before reporting ready.
        int acmd41_busy_polls = 1;
        DeviceCaps caps;
        std::uint32_t serial = 0x4E530001;
    };

    explicit SdCard(BackingImage& backing) : SdCard(backing, Config()) {}
    SdCard(BackingImage& backing, Config cfg);

    // Supply control. Dropping power abandons any in-flight multi-block
    // operation and resets the interface; image contents are never touched.
    void set_power(bool on);
    bool powered() const { return powered_; }

    Phase phase() const { return phase_; }
    bool crc_checking() const { return crc_checking_; }
    std::uint64_t capacity_bytes() const { return cfg_.capacity_bytes; }
    std::uint64_t block_count() const { return cfg_.capacity_bytes / kBlockSize; }
    const DeviceCaps& caps() const { return cfg_.caps; }

    const std::array<std::uint8_t, 16>& cid() const { return cid_; }
    const std::array<std::uint8_t, 16>& csd() const { return csd_; }
    std::uint32_t ocr() const;

    SdResponse handle_command(const SdCommand& cmd);

    // Data phase below a read command. Returns false and fills `error_token`
    // when the stream hits an invalid address.
    struct ReadBlockResult {
        bool ok = false;
        std::uint8_t error_token = 0;
        std::array<std::uint8_t, kBlockSize> data{};
        std::uint16_t crc = 0;
    };
    ReadBlockResult read_data_block();
    // Bulk variant for the transfer path: fills 512 bytes, no checksum work.
    bool read_data_block_into(std::span<std::uint8_t> out, std::uint8_t* error_token);

    // Data phase below a write command. The block reaches the image only on
    // Accepted; a CRC mismatch (with checking on) leaves the image unchanged.
    WriteStatus write_data_block(std::span<const std::uint8_t> data, std::uint16_t crc);
    // Bulk variant used when the wire-level check already vouched for the
    // trailer; skips the redundant recompute.
    WriteStatus write_data_block_checked(std::span<const std::uint8_t> data);
    void end_write_burst(); // stop-tran token after CMD25

    // Direct single-block transport (the machinery beneath CMD17/CMD24).
    enum class BlockStatus : std::uint8_t { Ok, NotInitialized, AddressError, CrcError };
    BlockStatus read_block(std::uint64_t lba, std::span<std::uint8_t> out,
                           std::uint16_t* crc_out = nullptr);
    BlockStatus write_block(std::uint64_t lba, std::span<const std::uint8_t> data,
                            std::uint16_t crc);

    BackingImage& backing() { return backing_; }

private:
    SdResponse r1_response(std::uint8_t flags) const;
    std::uint8_t idle_flag() const;
    void reset_interface();
    void build_registers();

    BackingImage& backing_;
    Config cfg_;

    bool powered_ = false;
    Phase phase_ = Phase::Uninitialized;
    bool crc_checking_ = false; // SPI-mode default after reset
    bool cmd8_seen_ = false;
    bool app_cmd_pending_ = false;
    int acmd41_polls_ = 0;

    std::uint64_t transfer_lba_ = 0; // next block of an in-flight CMD18/25
    bool single_block_read_ = false;

    std::array<std::uint8_t, 16> cid_{};
    std::array<std::uint8_t, 16> csd_{};
};

} // namespace netsd
