// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "netsd/crc.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace netsd {

// SPI-mode command set. Commands outside this set get the illegal-command
// bit in R1.
namespace cmd {
inline constexpr std::uint8_t kGoIdle = 0;          // CMD0
inline constexpr std::uint8_t kSendIfCond = 8;      // CMD8
inline constexpr std::uint8_t kSendCsd = 9;         // CMD9
inline constexpr std::uint8_t kSendCid = 10;        // CMD10
inline constexpr std::uint8_t kStopTransmission = 12;
inline constexpr std::uint8_t kSetBlocklen = 16;
inline constexpr std::uint8_t kReadSingle = 17;
inline constexpr std::uint8_t kReadMultiple = 18;
inline constexpr std::uint8_t kWriteSingle = 24;
inline constexpr std::uint8_t kWriteMultiple = 25;
inline constexpr std::uint8_t kAppCmd = 55;         // CMD55
inline constexpr std::uint8_t kReadOcr = 58;
inline constexpr std::uint8_t kCrcOnOff = 59;
inline constexpr std::uint8_t kAppSendOpCond = 41;  // ACMD41
} // namespace cmd

// R1 status bits (SPI mode). Bit 7 is always zero.
namespace r1 {
inline constexpr std::uint8_t kInIdle = 0x01;
inline constexpr std::uint8_t kEraseReset = 0x02;
inline constexpr std::uint8_t kIllegalCommand = 0x04;
inline constexpr std::uint8_t kCrcError = 0x08;
inline constexpr std::uint8_t kEraseSeqError = 0x10;
inline constexpr std::uint8_t kAddressError = 0x20;
inline constexpr std::uint8_t kParameterError = 0x40;
} // namespace r1

// Read-path error token bits.
namespace errtok {
inline constexpr std::uint8_t kError = 0x01;
inline constexpr std::uint8_t kCcError = 0x02;
inline constexpr std::uint8_t kEccFailed = 0x04;
inline constexpr std::uint8_t kOutOfRange = 0x08;
} // namespace errtok

// Data-phase tokens.
namespace token {
inline constexpr std::uint8_t kStartBlock = 0xFE;      // single read/write, multi read
inline constexpr std::uint8_t kStartMultiWrite = 0xFC;
inline constexpr std::uint8_t kStopTran = 0xFD;
} // namespace token

enum class WriteStatus : std::uint8_t {
    Accepted = 0x05,
    CrcRejected = 0x0B,
    WriteError = 0x0D,
};

struct SdCommand {
    std::uint8_t index = 0;     // 0..63
    std::uint32_t argument = 0;
    std::uint8_t crc = 0;       // raw 7-bit value
    bool is_app_cmd = false;    // host-side marker: preceded by CMD55

    // Five-byte frame the CRC covers: start/transmission bits, index, argument.
    std::array<std::uint8_t, 5> frame() const {
        return {static_cast<std::uint8_t>(0x40 | (index & 0x3F)),
                static_cast<std::uint8_t>(argument >> 24),
                static_cast<std::uint8_t>(argument >> 16),
                static_cast<std::uint8_t>(argument >> 8),
                static_cast<std::uint8_t>(argument)};
    }

    bool crc_valid() const {
        auto f = frame();
        return crc7({f.data(), f.size()}) == crc;
    }

    // Sixth wire byte: CRC shifted left with the stop bit set.
    std::uint8_t crc_wire_byte() const { return static_cast<std::uint8_t>((crc << 1) | 1); }

    static SdCommand make(std::uint8_t index, std::uint32_t argument, bool app = false) {
        SdCommand c;
        c.index = index;
        c.argument = argument;
        c.is_app_cmd = app;
        auto f = c.frame();
        c.crc = crc7({f.data(), f.size()});
        return c;
    }
};

enum class ResponseKind : std::uint8_t {
    None,       // card unpowered / not listening
    R1,
    R1b,
    R3,         // R1 + OCR
    R7,         // R1 + interface condition echo
    DataBlock,  // R1 + register contents as a data block (CSD/CID)
    ErrorToken,
};

struct SdResponse {
    ResponseKind kind = ResponseKind::None;
    std::uint8_t r1 = 0;
    std::array<std::uint8_t, 4> extra{}; // OCR for R3, echo for R7
    std::vector<std::uint8_t> data;      // register payload for DataBlock
    std::uint8_t error_token = 0;

    bool ok() const {
        return (kind == ResponseKind::R1 || kind == ResponseKind::R1b ||
                kind == ResponseKind::R3 || kind == ResponseKind::R7 ||
                kind == ResponseKind::DataBlock) &&
               (r1 & ~r1::kInIdle) == 0;
    }
    bool in_idle() const { return r1 & r1::kInIdle; }
    bool illegal() const { return r1 & r1::kIllegalCommand; }

    std::uint32_t extra_word() const {
        return (std::uint32_t(extra[0]) << 24) | (std::uint32_t(extra[1]) << 16) |
               (std::uint32_t(extra[2]) << 8) | std::uint32_t(extra[3]);
    }
};

} // namespace netsd
