// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string_view>

namespace netsd {

// One signal path between a port and the card. The six data/control lines
// carry the SD interface; the power line feeds the card's supply when the
// port holds access.
enum class LineId : std::uint8_t { Clk, Cmd, Dat0, Dat1, Dat2, Dat3, Power };

enum class LineState : std::uint8_t { Conductive, Disconnected };
enum class PowerState : std::uint8_t { On, Off };

inline constexpr int kDataLineCount = 6;

struct LineSet {
    std::array<LineState, kDataLineCount> data{
        LineState::Disconnected, LineState::Disconnected, LineState::Disconnected,
        LineState::Disconnected, LineState::Disconnected, LineState::Disconnected};
    PowerState power = PowerState::Off;

    LineState get(LineId id) const {
        if (id == LineId::Power)
            return power == PowerState::On ? LineState::Conductive : LineState::Disconnected;
        return data[static_cast<std::size_t>(id)];
    }

    void set(LineId id, LineState s) {
        if (id == LineId::Power)
            power = (s == LineState::Conductive) ? PowerState::On : PowerState::Off;
        else
            data[static_cast<std::size_t>(id)] = s;
    }

    bool all_data_conductive() const {
        for (LineState s : data)
            if (s != LineState::Conductive) return false;
        return true;
    }

    // A port counts as conductive for exclusivity purposes only when every
    // data line is closed; a partially cut port cannot carry a transfer.
    bool fully_conductive() const { return all_data_conductive(); }
};

inline std::string_view line_name(LineId id) {
    switch (id) {
    case LineId::Clk: return "CLK";
    case LineId::Cmd: return "CMD";
    case LineId::Dat0: return "DAT0";
    case LineId::Dat1: return "DAT1";
    case LineId::Dat2: return "DAT2";
    case LineId::Dat3: return "DAT3";
    case LineId::Power: return "POWER";
    }
    return "?";
}

inline LineId line_from_name(std::string_view name) {
    for (LineId id : {LineId::Clk, LineId::Cmd, LineId::Dat0, LineId::Dat1,
                      LineId::Dat2, LineId::Dat3, LineId::Power}) {
        if (name == line_name(id)) return id;
    }
    throw std::invalid_argument("unknown line name: " + std::string(name));
}

} // namespace netsd
