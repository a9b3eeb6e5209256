// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "netsd/arbiter.hpp"

#include <optional>
#include <stdexcept>
#include <vector>

namespace netsd {

class NoGrantError : public std::runtime_error {
public:
    NoGrantError() : std::runtime_error("no response from card: port has no access") {}
};
class RetriesExhaustedError : public std::runtime_error {
public:
    RetriesExhaustedError() : std::runtime_error("transfer retries exhausted") {}
};
class AddressError : public std::runtime_error {
public:
    AddressError() : std::runtime_error("block address out of range") {}
};
class CardError : public std::runtime_error {
public:
    explicit CardError(const std::string& what) : std::runtime_error("card error: " + what) {}
};

struct HostStats {
    std::uint64_t attempts = 0;   // transfer commands issued
    std::uint64_t retries = 0;    // failed attempts that were reissued
    std::uint64_t crc_errors = 0;
    std::uint64_t timeouts = 0;
    std::uint64_t bytes_ok = 0;
    double elapsed_us = 0.0;      // simulated time spent in this session
};

// One host controller bound to one switch port: runs the init handshake,
// then moves data in multi-block chunks with bounded retries. Also the
// measurement probe for the benchmark matrix.
class HostSession {
public:
    struct Options {
        int retry_limit = 8;
        bool enable_crc = true;
        bool through_switch = true;
        int max_init_polls = 1000;
    };

    HostSession(Arbiter& arbiter, PortId port, BusConfig bus, DeviceCaps host_caps,
                Options opts);
    HostSession(Arbiter& arbiter, PortId port, BusConfig bus, DeviceCaps host_caps = DeviceCaps{})
        : HostSession(arbiter, port, bus, host_caps, Options()) {}

    // CMD0 / CMD8 / ACMD41 loop / CMD58, then mode negotiation. Must run
    // after every power cycle (so after every grant change).
    TransferMode init();

    bool initialized() const { return negotiated_mode_.has_value(); }
    const std::optional<TransferMode>& negotiated_mode() const { return negotiated_mode_; }

    std::vector<std::uint8_t> read(std::uint64_t lba, std::uint32_t n_blocks,
                                   std::uint32_t chunk_bytes);
    void write(std::uint64_t lba, std::span<const std::uint8_t> data, std::uint32_t chunk_bytes);

    // MByte/s over simulated time, retries included. Writes use a seeded
    // pattern; reads measure whatever the region holds.
    double throughput_mbps(Direction dir, std::uint64_t total_bytes, std::uint32_t chunk_bytes,
                           std::uint64_t lba = 0);

    const HostStats& stats() const { return stats_; }
    std::uint64_t capacity_bytes() const { return arbiter_.card_capacity_bytes(); }
    PortId port() const { return port_; }
    const BusConfig& bus_config() const { return bus_; }

private:
    TxnResult command(std::uint8_t index, std::uint32_t argument, bool app = false);
    TxnResult data_transaction(std::uint8_t index, std::uint32_t lba, Direction dir,
                               std::uint32_t blocks, std::span<const std::uint8_t> payload);
    void note(const TxnResult& r);
    static void validate_chunk(std::uint32_t chunk_bytes);

    Arbiter& arbiter_;
    PortId port_;
    BusConfig bus_;
    DeviceCaps host_caps_;
    Options opts_;
    std::optional<TransferMode> negotiated_mode_;
    HostStats stats_;
};

} // namespace netsd
