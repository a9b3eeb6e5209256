// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>

namespace netsd {

// CRC-7 over a command frame, polynomial x^7 + x^3 + 1, zero initial value.
// Returns the raw 7-bit remainder; the wire format shifts it left and sets
// the stop bit ((crc << 1) | 1).
std::uint8_t crc7(std::span<const std::uint8_t> data);

// CRC-16-CCITT, polynomial x^16 + x^12 + x^5 + 1, zero initial value.
// Used as the trailer of every 512-byte data block.
std::uint16_t crc16(std::span<const std::uint8_t> data);

} // namespace netsd
