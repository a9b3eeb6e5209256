// SPDX-License-Identifier: Apache-2.0
#include "netsd/crc.hpp"

#include <array>

namespace netsd {
namespace {

constexpr std::array<std::uint8_t, 256> make_crc7_table() {
    std::array<std::uint8_t, 256> table{};
    for (int i = 0; i < 256; ++i) {
        std::uint8_t crc = static_cast<std::uint8_t>(i);
        for (int bit = 0; bit < 8; ++bit) {
            crc = (crc & 0x80) ? static_cast<std::uint8_t>((crc << 1) ^ 0x12)
                               : static_cast<std::uint8_t>(crc << 1);
        }
        table[static_cast<std::size_t>(i)] = crc;
    }
    return table;
}

constexpr std::array<std::uint16_t, 256> make_crc16_table() {
    std::array<std::uint16_t, 256> table{};
    for (int i = 0; i < 256; ++i) {
        std::uint16_t crc = static_cast<std::uint16_t>(i << 8);
        for (int bit = 0; bit < 8; ++bit) {
            crc = (crc & 0x8000) ? static_cast<std::uint16_t>((crc << 1) ^ 0x1021)
                                 : static_cast<std::uint16_t>(crc << 1);
        }
        table[static_cast<std::size_t>(i)] = crc;
    }
    return table;
}

constexpr auto kCrc7Table = make_crc7_table();
constexpr auto kCrc16Table = make_crc16_table();

} // namespace

std::uint8_t crc7(std::span<const std::uint8_t> data) {
    // Table is indexed with the CRC kept in the top 7 bits of a byte.
    std::uint8_t crc = 0;
    for (std::uint8_t byte : data)
        crc = kCrc7Table[static_cast<std::size_t>(crc ^ byte)];
    return static_cast<std::uint8_t>(crc >> 1);
}

std::uint16_t crc16(std::span<const std::uint8_t> data) {
    std::uint16_t crc = 0;
    for (std::uint8_t byte : data)
        crc = static_cast<std::uint16_t>((crc << 8) ^
                                         kCrc16Table[((crc >> 8) ^ byte) & 0xFF]);
    return crc;
}

} // namespace netsd
