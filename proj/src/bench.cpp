// SPDX-License-Identifier: Apache-2.0
#include "netsd/bench.hpp"

#include "netsd/bus_calibration.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <unistd.h>
#include <ostream>
#include <sstream>

namespace netsd {

namespace {

constexpr std::uint32_t kKiB = 1024;

std::vector<std::uint32_t> default_sweep() {
    std::vector<std::uint32_t> sizes;
    for (std::uint32_t b = 4 * kKiB; b <= 1024 * kKiB; b *= 2) sizes.push_back(b);
    return sizes;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

BusConfig setup_bus(BenchSetup setup) {
    BusConfig bus;
    bus.explicit_pullups = setup == BenchSetup::SwitchWithPullups;
    bus.cable_length_cm = setup == BenchSetup::Baseline ? 0.0 : 48.0;
    bus.crosstalk_safe_layout = true;
    bus.host_supports_uhs = true;
    return bus;
}

ThroughputSample run_cell(const BenchConfig& cfg, Direction dir, std::uint32_t block_size,
                          BenchSetup setup, const std::filesystem::path& image_path,
                          std::uint64_t cell_seed) {
    ThroughputSample sample;
    sample.direction = dir;
    sample.block_size = block_size;
    sample.setup = setup;

    Testbed bed(image_path, cfg.capacity_bytes, {}, cell_seed);
    bed.arbiter.release();

    HostSession::Options opts;
    opts.retry_limit = cfg.retry_limit;
    opts.enable_crc = true;
    opts.through_switch = setup != BenchSetup::Baseline;
    // The test host negotiates the 1.8 V mode on an open path; denied that,
    // it falls back to the default-speed 3.3 V class (the fitted stand-in for
    // the measured with-pull-ups behavior).
    DeviceCaps host_caps{true, false};
    HostSession host(bed.arbiter, kDutPort, setup_bus(setup), host_caps, opts);
    host.init();

    std::uint64_t volume = cfg.volume_bytes;
    if (cfg.min_chunks_per_cell)
        volume = std::max<std::uint64_t>(volume,
                                         std::uint64_t(cfg.min_chunks_per_cell) * block_size);
    if (volume > cfg.capacity_bytes)
        throw std::invalid_argument("cell volume exceeds the card capacity");

    try {
        sample.mbytes_per_s = host.throughput_mbps(dir, volume, block_size);
    } catch (const RetriesExhaustedError&) {
        sample.mbytes_per_s = 0.0;
        sample.retries_exhausted = true;
    }
    sample.retries = host.stats().retries;
    return sample;
}

} // namespace

std::string_view bench_setup_name(BenchSetup s) {
    switch (s) {
    case BenchSetup::Baseline: return "baseline";
    case BenchSetup::SwitchNoPullups: return "switch_no_pullups";
    case BenchSetup::SwitchWithPullups: return "switch_with_pullups";
    }
    return "?";
}

std::vector<ThroughputSample> run_matrix(const BenchConfig& cfg) {
    if (cfg.volume_bytes == 0 || cfg.volume_bytes % kBlockSize != 0 ||
        cfg.volume_bytes > cfg.capacity_bytes)
        throw std::invalid_argument("benchmark volume must be block aligned and fit the card");


    std::vector<std::uint32_t> sizes = cfg.block_sizes.empty() ? default_sweep() : cfg.block_sizes;
    std::filesystem::path scratch =
        cfg.scratch_dir.empty() ? std::filesystem::temp_directory_path() : cfg.scratch_dir;

    struct Cell {
        Direction dir;
        std::uint32_t block_size;
        BenchSetup setup;
    };
    std::vector<Cell> cells;
    for (Direction dir : {Direction::Read, Direction::Write})
        for (std::uint32_t bs : sizes)
            for (BenchSetup setup : {BenchSetup::Baseline, BenchSetup::SwitchNoPullups,
                                     BenchSetup::SwitchWithPullups})
                cells.push_back({dir, bs, setup});

    std::vector<ThroughputSample> samples(cells.size());
    auto run_one = [&](std::size_t i) {
        auto image = scratch / ("netsd-bench-" + std::to_string(::getpid()) + "-" +
                                std::to_string(i) + ".img");
        samples[i] = run_cell(cfg, cells[i].dir, cells[i].block_size, cells[i].setup, image,
                              mix_seed(cfg.seed, i));
        std::error_code ec;
        std::filesystem::remove(image, ec);
    };

    if (cfg.parallel) {
        std::vector<std::future<void>> jobs;
        jobs.reserve(cells.size());
        for (std::size_t i = 0; i < cells.size(); ++i)
            jobs.push_back(std::async(std::launch::async, run_one, i));
        for (auto& j : jobs) j.get();
    } else {
        for (std::size_t i = 0; i < cells.size(); ++i) run_one(i);
    }
    return samples;
}

void write_csv(const std::vector<ThroughputSample>& samples, std::ostream& out) {
    out << "direction,block_size,config,mbps,retries\n";
    for (const auto& s : samples) {
        std::ostringstream mbps;
        mbps.precision(6);
        mbps << std::fixed << s.mbytes_per_s;
        out << direction_name(s.direction) << ',' << s.block_size << ','
            << bench_setup_name(s.setup) << ',' << mbps.str() << ',' << s.retries << '\n';
    }
}

// --- calibration ---------------------------------------------------------

namespace {

// Candidate constants evaluated with the closed-form expectation of the
// simulated stack. The empirical matrix is checked against the same bands by
// the acceptance suite afterwards.
struct Candidate {
    double o_fixed;  // us
    double o_cycles; // bus cycles
    double sw_over;  // us
    double t_prog;   // us per block
    double p_read;   // per bit, reference cable
    double p_write;
};

struct ModePoint {
    double clock_mhz;
    bool through_switch;
    double p_bit;
};

double expected_mbps(const Candidate& c, const ModePoint& m, Direction dir, double block) {
    double overhead = c.o_fixed + c.o_cycles / m.clock_mhz + (m.through_switch ? c.sw_over : 0.0);
    double wire = overhead + 8.0 * block / (m.clock_mhz * 4.0);
    if (dir == Direction::Write) wire += (block / 512.0) * c.t_prog;
    double p = m.p_bit > 0.0 ? -std::expm1(8.0 * block * std::log1p(-m.p_bit)) : 0.0;
    return block * (1.0 - p) / wire;
}

struct Series {
    // [size index] -> MByte/s for the three setups
    std::vector<double> baseline, no_pullups, with_pullups;
};

Series predict(const Candidate& c, Direction dir, const std::vector<std::uint32_t>& sizes) {
    Series s;
    for (std::uint32_t b : sizes) {
        double pb = dir == Direction::Read ? c.p_read : c.p_write;
        s.baseline.push_back(expected_mbps(c, {100.0, false, 0.0}, dir, b));
        s.no_pullups.push_back(expected_mbps(c, {100.0, true, pb}, dir, b));
        s.with_pullups.push_back(expected_mbps(c, {25.0, true, 0.0}, dir, b));
    }
    return s;
}

// Margins are scored in units of the sampling noise each cell carries in
// the reference matrix run (a chunk either survives or retries, so the
// per-cell throughput noise is roughly sqrt(P_err / n_chunks)). Constraints
// with no randomness get a small noise floor so they stay comparable.
double chunk_error(double p_bit, double block) {
    return p_bit > 0.0 ? -std::expm1(8.0 * block * std::log1p(-p_bit)) : 0.0;
}

struct Anchors {
    double read_ratio_64k;      // no-pullups / with-pullups
    double read_vs_baseline_64k;
    double write_ratio_64k;     // with-pullups / no-pullups
    double write_vs_baseline_64k;
    double min_z;
    bool feasible;
};

Anchors evaluate(const Candidate& c, const std::vector<std::uint32_t>& sizes) {
    Anchors a{};
    Series rd = predict(c, Direction::Read, sizes);
    Series wr = predict(c, Direction::Write, sizes);
    std::size_t i64 = 0, i32 = 0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        if (sizes[i] == 64 * kKiB) i64 = i;
        if (sizes[i] == 32 * kKiB) i32 = i;
    }

    // Matches the reference matrix configuration (8 MiB volume with a
    // 384-chunk floor per cell).
    auto chunks = [&](std::size_t i) {
        return std::max<double>(384.0, (8.0 * 1024 * 1024) / sizes[i]);
    };
    auto sigma_read_np = [&](std::size_t i) {
        return std::sqrt(chunk_error(c.p_read, sizes[i]) / chunks(i)) + 2e-3;
    };
    auto sigma_write_np = [&](std::size_t i) {
        return std::sqrt(chunk_error(c.p_write, sizes[i]) / chunks(i)) + 2e-3;
    };

    double min_z = 1e9;
    auto apply = [&](double rel_margin, double sigma) {
        min_z = std::min(min_z, rel_margin / sigma);
    };
    auto band = [&](double x, double lo, double hi, double sigma) {
        apply((x - lo) / x, sigma);
        apply((hi - x) / x, sigma);
    };

    a.read_ratio_64k = rd.no_pullups[i64] / rd.with_pullups[i64];
    band(a.read_ratio_64k, 2.5, 3.5, sigma_read_np(i64));
    a.read_vs_baseline_64k = rd.no_pullups[i64] / rd.baseline[i64];
    band(a.read_vs_baseline_64k, 0.65, 0.79, sigma_read_np(i64));
    a.write_ratio_64k = wr.with_pullups[i64] / wr.no_pullups[i64];
    band(a.write_ratio_64k, 1.6, 2.4, sigma_write_np(i64));
    a.write_vs_baseline_64k = wr.with_pullups[i64] / wr.baseline[i64];
    band(a.write_vs_baseline_64k, 0.35, 0.45, sigma_write_np(i64));

    // Degradation band across the whole sweep, expressed on the ratio so the
    // noise units line up.
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        double ratio = rd.no_pullups[i] / rd.with_pullups[i];
        band(ratio, 1.0 / 0.70, 1.0 / 0.35, sigma_read_np(i));
    }

    // Class-10 floors at 64 KiB.
    apply((rd.baseline[i64] - 20.0) / 20.0, 2e-3);
    apply((wr.baseline[i64] - 12.0) / 12.0, 2e-3);

    // Read series never drop up to 64 KiB.
    for (const auto* series : {&rd.baseline, &rd.no_pullups, &rd.with_pullups})
        for (std::size_t i = 0; i + 1 <= i64; ++i)
            apply(((*series)[i + 1] - (*series)[i]) / (*series)[i + 1], sigma_read_np(i + 1));

    // Write no-pullups series peaks exactly at 32 KiB and falls away on both
    // sides of the peak.
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
        double step_sigma = sigma_write_np(i) + sigma_write_np(i + 1);
        if (i + 1 <= i32)
            apply((wr.no_pullups[i + 1] - wr.no_pullups[i]) / wr.no_pullups[i + 1], step_sigma);
        else
            apply((wr.no_pullups[i] - wr.no_pullups[i + 1]) / wr.no_pullups[i], step_sigma);
    }

    // With-pullups beats no-pullups on writes past the peak.
    for (std::size_t i = i32 + 1; i < sizes.size(); ++i)
        apply((wr.with_pullups[i] - wr.no_pullups[i]) / wr.with_pullups[i],
              sigma_write_np(i) + 2e-3);

    a.min_z = min_z;
    a.feasible = min_z > 0.0;
    return a;
}

} // namespace

CalibrationResult calibrate() { return calibrate(CalibrationOptions{}); }

CalibrationResult calibrate(const CalibrationOptions& opts) {
    std::vector<std::uint32_t> sizes = default_sweep();

    auto linspace = [](double lo, double hi, int n) {
        std::vector<double> v;
        for (int i = 0; i < n; ++i) v.push_back(lo + (hi - lo) * i / (n - 1));
        return v;
    };

    Candidate best{};
    Anchors best_anchors{};
    best_anchors.min_z = -1e9;

    // Coarse grid, then a refinement pass around the best coarse point.
    auto search = [&](std::vector<double> o_fixed, std::vector<double> o_cycles,
                      std::vector<double> sw_over, std::vector<double> t_prog,
                      std::vector<double> q_read, std::vector<double> s_write) {
        for (double of : o_fixed)
            for (double oc : o_cycles)
                for (double sw : sw_over)
                    for (double tp : t_prog)
                        for (double qr : q_read)
                            for (double sv : s_write) {
                                Candidate c;
                                c.o_fixed = of;
                                c.o_cycles = oc;
                                c.sw_over = sw;
                                c.t_prog = tp;
                                // q_read: survival of a 64 KiB read chunk;
                                // s_write: survival of a 32 KiB write chunk.
                                c.p_read = opts.force_zero_bit_error
                                               ? 0.0
                                               : -std::expm1(std::log(qr) / (8.0 * 65536.0));
                                c.p_write = opts.force_zero_bit_error
                                                ? 0.0
                                                : -std::expm1(std::log(sv) / (8.0 * 32768.0));
                                Anchors a = evaluate(c, sizes);
                                if (a.min_z > best_anchors.min_z) {
                                    best = c;
                                    best_anchors = a;
                                }
                            }
    };

    search(linspace(400, 900, 6), linspace(8000, 22000, 8), linspace(350, 900, 6),
           linspace(5, 11, 7), linspace(0.928, 0.958, 8), linspace(0.46, 0.62, 9));

    auto around = [&](double x, double span, int n) { return linspace(x - span, x + span, n); };
    for (double shrink : {1.0, 0.3}) {
        double qr0 = std::exp(std::log1p(-best.p_read) * 8.0 * 65536.0);
        double sv0 = std::exp(std::log1p(-best.p_write) * 8.0 * 32768.0);
        if (opts.force_zero_bit_error) {
            qr0 = 1.0;
            sv0 = 1.0;
        }
        search(around(best.o_fixed, 60 * shrink, 5), around(best.o_cycles, 1800 * shrink, 5),
               around(best.sw_over, 90 * shrink, 5), around(best.t_prog, 0.9 * shrink, 5),
               around(std::min(qr0, 0.995), 0.005 * shrink, 5),
               around(std::min(sv0, 0.995), 0.02 * shrink, 5));
    }

    std::ostringstream report;
    report << "calibration anchors (expectation model)\n";
    report << "  read 64K no-pullups/with-pullups: " << best_anchors.read_ratio_64k
           << "  band [2.5, 3.5]\n";
    report << "  read 64K no-pullups/baseline:     " << best_anchors.read_vs_baseline_64k
           << "  band [0.65, 0.79]\n";
    report << "  write 64K with-pullups/no-pullups: " << best_anchors.write_ratio_64k
           << "  band [1.6, 2.4]\n";
    report << "  write 64K with-pullups/baseline:   " << best_anchors.write_vs_baseline_64k
           << "  band [0.35, 0.45]\n";
    report << "  worst margin in noise units: " << best_anchors.min_z << "\n";
    report << "constants\n";
    report << "  command_overhead_fixed_us   = " << best.o_fixed << "\n";
    report << "  command_overhead_cycles     = " << best.o_cycles << "\n";
    report << "  switch_insertion_us         = " << best.sw_over << "\n";
    report << "  write_program_us_per_block  = " << best.t_prog << "\n";
    report << "  uhs_read_bit_error_48cm     = " << best.p_read << "\n";
    report << "  uhs_write_bit_error_48cm    = " << best.p_write << "\n";

    if (!best_anchors.feasible)
        throw CalibrationInfeasible("no constants satisfy every anchor; best margin " +
                                    std::to_string(best_anchors.min_z) + "\n" + report.str());

    CalibrationResult result;
    result.command_overhead_fixed_us = best.o_fixed;
    result.command_overhead_cycles = best.o_cycles;
    result.switch_insertion_us = best.sw_over;
    result.write_program_us_per_block = best.t_prog;
    result.uhs_read_bit_error = best.p_read;
    result.uhs_write_bit_error = best.p_write;
    result.worst_margin = best_anchors.min_z;
    result.report = report.str();
    return result;
}

} // namespace netsd
