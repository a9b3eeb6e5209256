// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "netsd/bus.hpp"
#include "netsd/event_log.hpp"
#include "netsd/sd_switch.hpp"
#include "netsd/types.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <variant>
#include <vector>

namespace netsd {

// Line-level and transaction-level fault kinds. Durations and windows run on
// simulated time, measured from the moment the trigger fires.
struct LineDisconnectFault {
    PortId port = kDutPort;
    LineId line = LineId::Dat0;
    double duration_us = 0.0;
};

struct CorruptFault {
    Direction direction = Direction::Read;
    double bit_flip_rate = 0.0; // per-bit glitch rate while active
    double window_us = 0.0;
};

struct DelayFault {
    double added_us = 0.0;
    double window_us = 0.0;
};

struct OmitFault {
    std::optional<std::uint8_t> command_index;
    std::optional<Direction> direction;
    std::uint32_t count = 1; // matches suppressed before the fault expires
};

struct ReplayFault {
    double capture_window_us = 0.0; // responses recorded in this window...
    double inject_at_us = 0.0;      // ...answer the next read from here on
};

using FaultKind =
    std::variant<LineDisconnectFault, CorruptFault, DelayFault, OmitFault, ReplayFault>;

struct Trigger {
    enum class Type : std::uint8_t { Immediate, AtTransactionCount, AtSimTime };
    Type type = Type::Immediate;
    std::uint64_t transaction_count = 0;
    double sim_time_us = 0.0;

    static Trigger immediate() { return {}; }
    static Trigger at_transaction(std::uint64_t n) {
        return {Type::AtTransactionCount, n, 0.0};
    }
    static Trigger at_sim_time(double t_us) { return {Type::AtSimTime, 0, t_us}; }
};

enum class FaultStatus : std::uint8_t { Armed, Active, Expired, Cancelled };

std::string_view fault_status_name(FaultStatus s);
std::string_view fault_kind_name(const FaultKind& kind);

struct FaultSpec {
    std::uint64_t id = 0;
    FaultKind kind;
    Trigger trigger;
    FaultStatus status = FaultStatus::Armed;
};

class InvalidSpecError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};
class UnknownFaultError : public std::invalid_argument {
public:
    explicit UnknownFaultError(std::uint64_t id)
        : std::invalid_argument("unknown fault id: " + std::to_string(id)) {}
};

// What the active fault set does to one transaction.
struct FaultEffects {
    bool omit = false;
    double extra_delay_us = 0.0;
    double corrupt_block_probability = 0.0;
    std::optional<std::vector<std::uint8_t>> replay_payload;
};

// Describes the transaction about to run, for matching.
struct TransactionInfo {
    std::uint8_t command_index = 0;
    std::optional<Direction> direction;
    std::uint64_t payload_bytes = 0;
};

// Schedules faults and applies them at transaction boundaries. Activation and
// expiry are evaluated synchronously inside the arbiter loop, so effects are
// totally ordered with transfers. With nothing scheduled the engine touches
// neither the switch nor the RNG.
class FaultEngine {
public:
    FaultEngine(SdSwitch& sw, EventLog& log, SimClock& clock);

    std::uint64_t schedule(FaultKind kind, Trigger trigger = Trigger::immediate());
    FaultStatus cancel(std::uint64_t id);
    std::vector<FaultSpec> list() const;
    std::size_t pending_count() const;

    // Arbiter hook: fires/expires due faults, returns the effects for this
    // transaction.
    FaultEffects on_transaction(std::uint64_t txn_index, const TransactionInfo& info);

    // Arbiter hook: offers a completed read payload for replay capture.
    void offer_capture(const TransactionInfo& info, std::span<const std::uint8_t> payload);

private:
    struct Entry {
        FaultSpec spec;
        double activated_at_us = 0.0;
        int window_token = 0;                      // LineDisconnect
        LineState saved_state = LineState::Conductive;
        std::uint32_t remaining = 0;               // Omit
        std::vector<std::uint8_t> captured;        // Replay
        bool has_capture = false;
    };

    void validate(const FaultKind& kind) const;
    bool due(const Entry& e, std::uint64_t txn_index) const;
    void activate(Entry& e);
    void expire(Entry& e);
    void deactivate_line(Entry& e);

    SdSwitch& switch_;
    EventLog& log_;
    SimClock& clock_;
    std::vector<Entry> entries_;
    std::uint64_t next_id_ = 1;
};

} // namespace netsd
