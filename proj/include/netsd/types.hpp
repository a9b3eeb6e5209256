// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string_view>

namespace netsd {

enum class Direction : std::uint8_t { Read, Write };

inline std::string_view direction_name(Direction d) {
    return d == Direction::Read ? "read" : "write";
}

// Bus-speed related capabilities of one side of the link.
struct DeviceCaps {
    bool supports_uhs = true;
    bool supports_high_speed = true;
};

} // namespace netsd
