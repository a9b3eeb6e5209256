// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "netsd/host_session.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace netsd {

enum class BenchSetup : std::uint8_t {
    Baseline,         // card seated directly: no switch, no cable
    SwitchNoPullups,  // through the switch and 48 cm cable, host pull-ups only
    SwitchWithPullups // same path with explicit 3.3 V pull-ups added
};

std::string_view bench_setup_name(BenchSetup s);

struct ThroughputSample {
    Direction direction = Direction::Read;
    std::uint32_t block_size = 0; // chunk size in bytes
    BenchSetup setup = BenchSetup::Baseline;
    double mbytes_per_s = 0.0;
    std::uint64_t retries = 0;
    bool retries_exhausted = false; // recorded as zero throughput
};

struct BenchConfig {
    std::uint64_t volume_bytes = 8ull << 20; // transferred per cell
    std::uint64_t capacity_bytes = 64ull << 20;
    std::uint64_t seed = 1;
    int retry_limit = 64;
    std::vector<std::uint32_t> block_sizes; // empty: 4 KiB .. 1 MiB powers of two
    std::filesystem::path scratch_dir;      // empty: system temp
    bool parallel = false;                  // shard cells across threads
    // Lifts a cell's volume to this many chunks so large-block cells carry
    // enough samples; 0 keeps the fixed volume everywhere.
    std::uint32_t min_chunks_per_cell = 0;
};

// Runs the full (direction x block size x setup) matrix on the simulated
// stack. Deterministic for a given seed; cells carry derived seeds so the
// parallel mode yields the identical table.
std::vector<ThroughputSample> run_matrix(const BenchConfig& cfg);

// CSV with the exact header: direction,block_size,config,mbps,retries
void write_csv(const std::vector<ThroughputSample>& samples, std::ostream& out);

struct CalibrationResult {
    double command_overhead_fixed_us = 0.0;
    double command_overhead_cycles = 0.0;
    double switch_insertion_us = 0.0;
    double write_program_us_per_block = 0.0;
    double uhs_read_bit_error = 0.0;
    double uhs_write_bit_error = 0.0;
    double worst_margin = 0.0; // smallest normalized distance to a band edge
    std::string report;
};

class CalibrationInfeasible : public std::runtime_error {
public:
    explicit CalibrationInfeasible(const std::string& what) : std::runtime_error(what) {}
};

struct CalibrationOptions {
    bool force_zero_bit_error = false; // diagnostic: proves the error term is load-bearing
};

// Grid search over the timing/error constants against the throughput anchor
// set (ratio bands at 64 KiB, the degradation band across the sweep, the
// write peak location, and the baseline floors). Throws CalibrationInfeasible
// when no candidate satisfies every anchor.
CalibrationResult calibrate();
CalibrationResult calibrate(const CalibrationOptions& opts);

} // namespace netsd
