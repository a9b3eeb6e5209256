// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "netsd/backing_image.hpp"
#include "netsd/bus.hpp"
#include "netsd/faults.hpp"
#include "netsd/sd_card.hpp"
#include "netsd/sd_switch.hpp"

#include <memory>
#include <mutex>
#include <optional>
#include <random>

namespace netsd {

// One SD transaction: a command frame plus an optional data phase.
struct Transaction {
    SdCommand cmd;
    std::optional<Direction> dir;
    std::uint32_t block_count = 0;
    std::span<const std::uint8_t> write_data; // block_count * 512 bytes for writes
    TransferMode mode = default_3v3_mode();
    BusConfig bus;
    bool through_switch = true;
};

struct TxnResult {
    TransferStatus status = TransferStatus::Ok;
    SdResponse response;
    std::vector<std::uint8_t> data; // read payload
    double elapsed_us = 0.0;
};

// The single serialization point: every grant change, line poke, and bus
// transaction of every port is linearized through this object. Hosts on
// different threads may call it concurrently; effects are totally ordered.
class Arbiter {
public:
    Arbiter(SdCard& card, SdSwitch& sw, SimClock& clock, EventLog& log, FaultEngine* faults,
            std::uint64_t seed);

    TxnResult submit(PortId port, const Transaction& txn);

    SwitchGrant grant(PortId port);
    SwitchGrant release();
    SwitchGrant current_grant() const;
    void set_line(PortId port, LineId line, LineState state);
    void power_cycle_holder();
    PortId default_holder() const;
    void set_default_holder(PortId port);
    int num_ports() const;

    std::uint64_t schedule_fault(FaultKind kind, Trigger trigger = Trigger::immediate());
    FaultStatus cancel_fault(std::uint64_t id);
    std::vector<FaultSpec> list_faults() const;

    double now_us() const;
    std::uint64_t transactions_executed() const;
    DeviceCaps card_caps() const;
    std::uint64_t card_capacity_bytes() const;
    void flush_backing();

private:
    TxnResult run_command_phase(PortId port, const Transaction& txn, const FaultEffects& eff);
    TxnResult run_read_phase(const Transaction& txn, const LineSet& lines, SdResponse resp,
                             const FaultEffects& eff);
    TxnResult run_write_phase(const Transaction& txn, const LineSet& lines, SdResponse resp,
                              const FaultEffects& eff);
    void drain_read_stream(const Transaction& txn);
    TxnResult finish(PortId port, const Transaction& txn, TxnResult result);

    SdCard& card_;
    SdSwitch& switch_;
    SimClock& clock_;
    EventLog& log_;
    FaultEngine* faults_; // null disables the fault machinery entirely
    std::mt19937_64 rng_;

    mutable std::mutex mutex_;
    std::uint64_t txn_counter_ = 0;
};

// A complete emulated device: image, card, switch, fault engine, and the
// arbiter in front, wired together.
struct Testbed {
    Testbed(const std::filesystem::path& image_path, std::uint64_t capacity_bytes,
            SdSwitch::Config switch_cfg = {}, std::uint64_t seed = 1,
            bool faults_enabled = true, SdCard::Config card_cfg = {})
        : image(image_path, capacity_bytes),
          card(image, card_cfg),
          sd_switch(card, clock, log, switch_cfg),
          faults(sd_switch, log, clock),
          arbiter(card, sd_switch, clock, log, faults_enabled ? &faults : nullptr, seed) {
        log.set_clock(&clock);
    }

    BackingImage image;
    SimClock clock;
    EventLog log;
    SdCard card;
    SdSwitch sd_switch;
    FaultEngine faults;
    Arbiter arbiter;
};

} // namespace netsd
