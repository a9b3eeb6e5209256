// SPDX-License-Identifier: Apache-2.0
#include "netsd/bus.hpp"

#include "netsd/bus_calibration.hpp"
#include "netsd/crc.hpp"

#include <algorithm>
#include <cmath>

namespace netsd {

TransferMode default_3v3_mode() { return {TransferModeName::Default3V3, 3.3, 25.0, 4}; }
TransferMode high_speed_3v3_mode() { return {TransferModeName::HighSpeed3V3, 3.3, 50.0, 4}; }
TransferMode uhs_1v8_mode() { return {TransferModeName::UHS1V8, 1.8, 100.0, 4}; }

std::string_view mode_name(TransferModeName name) {
    switch (name) {
    case TransferModeName::Default3V3: return "default_3v3";
    case TransferModeName::HighSpeed3V3: return "high_speed_3v3";
    case TransferModeName::UHS1V8: return "uhs_1v8";
    }
    return "?";
}

std::string_view transfer_status_name(TransferStatus s) {
    switch (s) {
    case TransferStatus::Ok: return "ok";
    case TransferStatus::CrcDetectedError: return "crc_error";
    case TransferStatus::Timeout: return "timeout";
    case TransferStatus::SilentCorruption: return "silent_corruption";
    }
    return "?";
}

TransferMode negotiate_mode(const BusConfig& cfg, const DeviceCaps& card_caps,
                            const DeviceCaps& host_caps) {
    // 1.8 V signaling is only reachable when no 3.3 V pull-ups hold the lines.
    if (!cfg.explicit_pullups && cfg.host_supports_uhs && host_caps.supports_uhs &&
        card_caps.supports_uhs)
        return uhs_1v8_mode();
    if (card_caps.supports_high_speed && host_caps.supports_high_speed)
        return high_speed_3v3_mode();
    return default_3v3_mode();
}

double per_bit_error_rate(const BusConfig& cfg, const TransferMode& mode, Direction dir) {
    double base;
    if (mode.name == TransferModeName::UHS1V8) {
        base = (dir == Direction::Write) ? cal::kUhsWriteBitError48cm : cal::kUhsReadBitError48cm;
    } else {
        // With explicit pull-ups the 3.3 V path is clean; without them only
        // the far host-side pull-ups hold the lines.
        base = cfg.explicit_pullups ? 0.0 : cal::kOpen3v3BitError48cm;
    }
    double scale = cfg.cable_length_cm / cal::kReferenceCableCm;
    if (!cfg.crosstalk_safe_layout) scale *= cal::kCrosstalkUnsafePenalty;
    return base * scale;
}

double block_error_probability(const BusConfig& cfg, const TransferMode& mode,
                               std::uint64_t n_bytes, Direction dir) {
    double p_bit = per_bit_error_rate(cfg, mode, dir);
    if (p_bit <= 0.0) return 0.0;
    double bits = 8.0 * static_cast<double>(n_bytes);
    return -std::expm1(bits * std::log1p(-p_bit));
}

double command_overhead_us(const TransferMode& mode, bool through_switch) {
    double t = cal::kCommandOverheadFixedUs + cal::kCommandOverheadCycles / mode.bus_clock_mhz;
    if (through_switch) t += cal::kSwitchInsertionUs;
    return t;
}

double simulated_transfer_time(const TransferMode& mode, std::uint64_t n_bytes,
                               double per_command_overhead_us) {
    return per_command_overhead_us +
           (8.0 * static_cast<double>(n_bytes)) / (mode.bus_clock_mhz * mode.bus_width_bits);
}

namespace {

bool data_lines_ok(const LineSet& lines, int width) {
    if (lines.get(LineId::Dat0) != LineState::Conductive) return false;
    if (width == 4) {
        if (lines.get(LineId::Dat1) != LineState::Conductive) return false;
        if (lines.get(LineId::Dat2) != LineState::Conductive) return false;
        if (lines.get(LineId::Dat3) != LineState::Conductive) return false;
    }
    return true;
}

// Burst of fewer than 16 flipped bits confined to one block: always caught
// by the block CRC-16 when checking is on.
void flip_burst_in_block(std::vector<std::uint8_t>& bytes, std::size_t block_index,
                         std::mt19937_64& rng) {
    std::size_t begin = block_index * 512;
    std::size_t len_bits = 1 + static_cast<std::size_t>(uniform01(rng) * 15.0);
    len_bits = std::min<std::size_t>(len_bits, 15);
    std::uint64_t block_bits = 512 * 8;
    std::uint64_t start_bit =
        static_cast<std::uint64_t>(uniform01(rng) * static_cast<double>(block_bits - len_bits));
    for (std::size_t i = 0; i < len_bits; ++i) {
        std::uint64_t bit = start_bit + i;
        bytes[begin + bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    }
}

} // namespace

void corrupt_payload(std::vector<std::uint8_t>& bytes, std::mt19937_64& rng) {
    if (bytes.empty()) return;
    // Count drawn geometrically (p = 1/2, at least one), positions uniform.
    std::size_t count = 1;
    while (uniform01(rng) < 0.5 && count < 64) ++count;
    std::uint64_t total_bits = bytes.size() * 8ull;
    for (std::size_t i = 0; i < count; ++i) {
        std::uint64_t bit =
            static_cast<std::uint64_t>(uniform01(rng) * static_cast<double>(total_bits));
        bit = std::min<std::uint64_t>(bit, total_bits - 1);
        bytes[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    }
}

bool apply_fault_corruption(std::vector<std::uint8_t>* payload, std::size_t n_blocks,
                            double per_block_probability, std::mt19937_64& rng) {
    if (per_block_probability <= 0.0 || n_blocks == 0) return false;
    bool corrupted = false;
    for (std::size_t b = 0; b < n_blocks; ++b) {
        if (uniform01(rng) < per_block_probability) {
            if (payload && (b + 1) * 512 <= payload->size()) flip_burst_in_block(*payload, b, rng);
            corrupted = true;
        }
    }
    return corrupted;
}

TransferOutcome transfer(const BusConfig& cfg, const TransferMode& mode, const LineSet& lines,
                         std::span<const std::uint8_t> bytes, Direction dir, bool crc_checking,
                         const TransferFaults& faults, std::mt19937_64& rng, bool through_switch) {
    TransferOutcome out;
    double overhead = command_overhead_us(mode, through_switch);

    if (lines.power != PowerState::On || lines.get(LineId::Clk) != LineState::Conductive ||
        lines.get(LineId::Cmd) != LineState::Conductive) {
        out.status = TransferStatus::Timeout;
        out.elapsed_us = overhead + kResponseTimeoutUs + faults.extra_delay_us;
        return out;
    }
    if (!bytes.empty() && !data_lines_ok(lines, mode.bus_width_bits)) {
        out.status = TransferStatus::Timeout;
        out.elapsed_us = overhead + kResponseTimeoutUs + faults.extra_delay_us;
        return out;
    }

    out.elapsed_us = simulated_transfer_time(mode, bytes.size(), overhead) + faults.extra_delay_us;
    out.bytes.assign(bytes.begin(), bytes.end());

    bool channel_error = false;
    if (!bytes.empty()) {
        double p = block_error_probability(cfg, mode, bytes.size(), dir);
        if (p > 0.0 && uniform01(rng) < p) channel_error = true;
    }
    if (channel_error) {
        if (crc_checking) {
            out.status = TransferStatus::CrcDetectedError;
        } else {
            out.status = TransferStatus::SilentCorruption;
            corrupt_payload(out.bytes, rng);
        }
        return out;
    }

    std::size_t blocks = (bytes.size() + 511) / 512;
    if (apply_fault_corruption(crc_checking ? nullptr : &out.bytes, blocks,
                               faults.corrupt_block_probability, rng)) {
        out.status =
            crc_checking ? TransferStatus::CrcDetectedError : TransferStatus::SilentCorruption;
        return out;
    }

    out.status = TransferStatus::Ok;
    return out;
}

} // namespace netsd
