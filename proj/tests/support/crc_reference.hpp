// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>

// Reference CRCs computed by plain bitwise long division, kept deliberately
// separate from the table-driven production code they check.
namespace crc_reference {

inline std::uint8_t crc7(std::span<const std::uint8_t> data) {
    std::uint8_t reg = 0;
    auto shift_in = [&](int bit) {
        int msb = (reg >> 6) & 1;
        reg = static_cast<std::uint8_t>(((reg << 1) | bit) & 0x7F);
        if (msb) reg ^= 0x09; // x^7 + x^3 + 1, x^7 implicit
    };
    for (std::uint8_t byte : data)
        for (int i = 7; i >= 0; --i) shift_in((byte >> i) & 1);
    for (int i = 0; i < 7; ++i) shift_in(0);
    return reg;
}

inline std::uint16_t crc16(std::span<const std::uint8_t> data) {
    std::uint16_t reg = 0;
    auto shift_in = [&](int bit) {
        int msb = (reg >> 15) & 1;
        reg = static_cast<std::uint16_t>((reg << 1) | bit);
        if (msb) reg ^= 0x1021; // x^16 + x^12 + x^5 + 1, x^16 implicit
    };
    for (std::uint8_t byte : data)
        for (int i = 7; i >= 0; --i) shift_in((byte >> i) & 1);
    for (int i = 0; i < 16; ++i) shift_in(0);
    return reg;
}

} // namespace crc_reference
