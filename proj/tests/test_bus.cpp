// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "netsd/bus.hpp"

#include <cmath>
#include <random>

using namespace netsd;

namespace {

BusConfig switch_path(bool pullups) {
    BusConfig cfg;
    cfg.explicit_pullups = pullups;
    cfg.cable_length_cm = 48.0;
    cfg.crosstalk_safe_layout = true;
    cfg.host_supports_uhs = true;
    return cfg;
}

LineSet all_up() {
    LineSet lines;
    for (LineId id : {LineId::Clk, LineId::Cmd, LineId::Dat0, LineId::Dat1, LineId::Dat2,
                      LineId::Dat3})
        lines.set(id, LineState::Conductive);
    lines.power = PowerState::On;
    return lines;
}

} // namespace

TEST_CASE("mode negotiation over the full capability table") {
    DeviceCaps uhs_card{true, true};
    for (int pullups = 0; pullups <= 1; ++pullups) {
        for (int host_uhs = 0; host_uhs <= 1; ++host_uhs) {
            for (int card_uhs = 0; card_uhs <= 1; ++card_uhs) {
                BusConfig cfg = switch_path(pullups != 0);
                cfg.host_supports_uhs = host_uhs != 0;
                DeviceCaps host{host_uhs != 0, true};
                DeviceCaps card{card_uhs != 0, true};
                TransferMode mode = negotiate_mode(cfg, card, host);
                CAPTURE(pullups);
                CAPTURE(host_uhs);
                CAPTURE(card_uhs);
                if (pullups) {
                    CHECK(mode.name != TransferModeName::UHS1V8);
                    CHECK(mode.signal_voltage == doctest::Approx(3.3));
                } else if (host_uhs && card_uhs) {
                    CHECK(mode.name == TransferModeName::UHS1V8);
                    CHECK(mode.signal_voltage == doctest::Approx(1.8));
                } else {
                    CHECK(mode.signal_voltage == doctest::Approx(3.3));
                }
            }
        }
    }

    // The three canonical rows.
    CHECK(negotiate_mode(switch_path(false), uhs_card, {true, true}).name ==
          TransferModeName::UHS1V8);
    CHECK(negotiate_mode(switch_path(true), uhs_card, {true, true}).name ==
          TransferModeName::HighSpeed3V3);
    CHECK(negotiate_mode(switch_path(false), uhs_card, {false, true}).name ==
          TransferModeName::HighSpeed3V3);
}

TEST_CASE("error probability limits and composition") {
    BusConfig cfg = switch_path(false);
    TransferMode uhs = uhs_1v8_mode();

    CHECK(block_error_probability(cfg, uhs, 0, Direction::Write) == doctest::Approx(0.0));
    double p1 = block_error_probability(cfg, uhs, 32768, Direction::Write);
    double p2 = block_error_probability(cfg, uhs, 65536, Direction::Write);
    CHECK(p1 > 0.0);
    CHECK(p2 > p1);
    // Doubling the exposure composes as 1-(1-P)^2.
    CHECK(p2 == doctest::Approx(1.0 - (1.0 - p1) * (1.0 - p1)).epsilon(1e-9));
}

TEST_CASE("error probability is monotone in length, cable, and layout") {
    TransferMode uhs = uhs_1v8_mode();
    std::mt19937_64 rng(3);
    for (int i = 0; i < 200; ++i) {
        BusConfig cfg = switch_path(false);
        cfg.cable_length_cm = 1.0 + (rng() % 200);
        std::uint64_t n = 512 * (1 + rng() % 256);
        Direction dir = (rng() % 2) ? Direction::Read : Direction::Write;

        double p = block_error_probability(cfg, uhs, n, dir);
        CHECK(block_error_probability(cfg, uhs, n + 512, dir) >= p);

        BusConfig longer = cfg;
        longer.cable_length_cm += 10.0;
        CHECK(block_error_probability(longer, uhs, n, dir) >= p);

        BusConfig unsafe = cfg;
        unsafe.crosstalk_safe_layout = false;
        CHECK(block_error_probability(unsafe, uhs, n, dir) > p);
    }
}

TEST_CASE("explicit pull-ups silence the 3.3V path") {
    BusConfig cfg = switch_path(true);
    CHECK(per_bit_error_rate(cfg, high_speed_3v3_mode(), Direction::Write) == 0.0);
    CHECK(per_bit_error_rate(cfg, default_3v3_mode(), Direction::Read) == 0.0);
    BusConfig open = switch_path(false);
    CHECK(per_bit_error_rate(open, default_3v3_mode(), Direction::Write) > 0.0);
}

TEST_CASE("transfer time amortizes overhead toward the raw line rate") {
    TransferMode uhs = uhs_1v8_mode(); // 100 MHz x 4 bits = 50 MByte/s
    double raw = uhs.bus_clock_mhz * uhs.bus_width_bits / 8.0;

    CHECK(65536.0 / simulated_transfer_time(uhs, 65536, 0.0) == doctest::Approx(raw));

    double prev = 0.0;
    for (std::uint64_t n = 4096; n <= (64u << 20); n *= 4) {
        double tput = static_cast<double>(n) / simulated_transfer_time(uhs, n, 500.0);
        CHECK(tput > prev);
        CHECK(tput < raw);
        prev = tput;
    }
    CHECK(prev > 0.98 * raw); // 64 MiB is close to the asymptote
}

TEST_CASE("noiseless transfer is the identity") {
    BusConfig cfg = switch_path(true); // 3.3V with pull-ups: zero error rate
    std::vector<std::uint8_t> payload(4096);
    for (std::size_t i = 0; i < payload.size(); ++i) payload[i] = static_cast<std::uint8_t>(i);
    std::mt19937_64 rng(9);
    TransferOutcome out = transfer(cfg, high_speed_3v3_mode(), all_up(), payload, Direction::Read,
                                   true, {}, rng);
    CHECK(out.status == TransferStatus::Ok);
    CHECK(out.bytes == payload);
    CHECK(out.elapsed_us > 0.0);
}

TEST_CASE("cut control or data lines time the transfer out") {
    BusConfig cfg = switch_path(true);
    std::vector<std::uint8_t> payload(1024, 0xAB);
    std::mt19937_64 rng(1);

    for (LineId id : {LineId::Clk, LineId::Cmd, LineId::Dat0, LineId::Dat2}) {
        LineSet lines = all_up();
        lines.set(id, LineState::Disconnected);
        TransferOutcome out = transfer(cfg, high_speed_3v3_mode(), lines, payload,
                                       Direction::Write, true, {}, rng);
        CAPTURE(line_name(id));
        CHECK(out.status == TransferStatus::Timeout);
    }

    LineSet dark = all_up();
    dark.power = PowerState::Off;
    CHECK(transfer(cfg, high_speed_3v3_mode(), dark, payload, Direction::Write, true, {}, rng)
              .status == TransferStatus::Timeout);
}

TEST_CASE("seeded corruption is deterministic and detected when checking is on") {
    BusConfig cfg = switch_path(false);
    cfg.cable_length_cm = 1000.0; // force a high error rate
    TransferMode uhs = uhs_1v8_mode();
    std::vector<std::uint8_t> payload(8192, 0x00);

    auto run = [&](bool crc_on, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        for (int i = 0; i < 200; ++i) {
            TransferOutcome out =
                transfer(cfg, uhs, all_up(), payload, Direction::Write, crc_on, {}, rng);
            if (out.status != TransferStatus::Ok) return out;
        }
        return TransferOutcome{};
    };

    TransferOutcome a = run(false, 77);
    TransferOutcome b = run(false, 77);
    REQUIRE(a.status == TransferStatus::SilentCorruption);
    CHECK(a.bytes == b.bytes); // same seed, same flipped bits
    CHECK(a.bytes != payload);

    TransferOutcome c = run(true, 77);
    CHECK(c.status == TransferStatus::CrcDetectedError);
}
