// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "netsd/lines.hpp"
#include "netsd/types.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace netsd {

// Wiring of one host port: pull-up arrangement, cable, and what the host
// controller can do. Drives mode selection and the error/throughput model.
struct BusConfig {
    bool explicit_pullups = false;   // 3.3 V pull-ups added on the card side
    double cable_length_cm = 48.0;
    bool crosstalk_safe_layout = true; // ground line between data lines
    bool host_supports_uhs = true;
};

enum class TransferModeName : std::uint8_t { Default3V3, HighSpeed3V3, UHS1V8 };

struct TransferMode {
    TransferModeName name = TransferModeName::Default3V3;
    double signal_voltage = 3.3;
    double bus_clock_mhz = 25.0;
    int bus_width_bits = 4;
};

TransferMode default_3v3_mode();
TransferMode high_speed_3v3_mode();
TransferMode uhs_1v8_mode();
std::string_view mode_name(TransferModeName name);

// Highest mode both sides support under the given wiring. Explicit 3.3 V
// pull-ups preclude the 1.8 V mode entirely.
TransferMode negotiate_mode(const BusConfig& cfg, const DeviceCaps& card_caps,
                            const DeviceCaps& host_caps);

// Calibrated per-bit error rate of the path for one transfer direction.
double per_bit_error_rate(const BusConfig& cfg, const TransferMode& mode, Direction dir);

// Probability that a transfer of n_bytes suffers at least one bit error:
// 1 - (1 - p_bit)^(8 n).
double block_error_probability(const BusConfig& cfg, const TransferMode& mode,
                               std::uint64_t n_bytes, Direction dir);

// Per-command overhead of a transfer in this mode (fixed part plus the
// bus-clocked handshake, plus the switch insertion cost when the path runs
// through the switch).
double command_overhead_us(const TransferMode& mode, bool through_switch);

// t = overhead + 8 n / (clock * width). Pure; write programming time and
// fault delays are accounted on top by the caller.
double simulated_transfer_time(const TransferMode& mode, std::uint64_t n_bytes,
                               double per_command_overhead_us);

enum class TransferStatus : std::uint8_t { Ok, CrcDetectedError, Timeout, SilentCorruption };

std::string_view transfer_status_name(TransferStatus s);

struct TransferOutcome {
    TransferStatus status = TransferStatus::Ok;
    std::vector<std::uint8_t> bytes;
    double elapsed_us = 0.0;
};

// Fault-engine effects applied to a single transfer.
struct TransferFaults {
    double extra_delay_us = 0.0;
    // Per-block probability that an injected glitch corrupts the block with
    // a short burst (always CRC-detectable when checking is on).
    double corrupt_block_probability = 0.0;
};

// Flips a geometrically-drawn number of uniformly placed bits: what an
// undetected channel error does to a payload.
void corrupt_payload(std::vector<std::uint8_t>& bytes, std::mt19937_64& rng);

// Per-block glitch draws of an injected corruption fault. Flips a short
// burst (under 16 bits, always CRC-detectable) into each hit block when a
// payload is given; returns whether any block was hit. Draw order is fixed
// so runs are reproducible.
bool apply_fault_corruption(std::vector<std::uint8_t>* payload, std::size_t n_blocks,
                            double per_block_probability, std::mt19937_64& rng);

// Moves one payload across the line set: checks conductivity, samples the
// channel error model, and either delivers, flags a CRC error, or corrupts
// silently when checking is off. Deterministic for a given rng state.
TransferOutcome transfer(const BusConfig& cfg, const TransferMode& mode, const LineSet& lines,
                         std::span<const std::uint8_t> bytes, Direction dir, bool crc_checking,
                         const TransferFaults& faults, std::mt19937_64& rng,
                         bool through_switch = true);

// Host-side wait budget charged when a transfer gets no response.
inline constexpr double kResponseTimeoutUs = 1000.0;

// Uniform double in [0,1) from the top 53 bits; keeps runs reproducible
// across standard libraries.
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

} // namespace netsd
