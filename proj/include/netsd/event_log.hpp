// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "netsd/lines.hpp"

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <string>
#include <vector>

namespace netsd {

using PortId = int;
inline constexpr PortId kDutPort = 0;
inline constexpr PortId kRagPort = 1;
inline constexpr PortId kNoPort = -1;

std::string port_name(PortId id);
PortId port_from_name(const std::string& name, int num_ports); // throws std::invalid_argument

// Simulated time in microseconds. All protocol timing runs on this clock so
// the benchmark matrix and fault triggers are independent of wall time.
class SimClock {
public:
    double now_us() const { return now_us_; }
    void advance(double us) { now_us_ += us; }

private:
    double now_us_ = 0.0;
};

enum class EventKind : std::uint8_t {
    GrantRequested,
    HolderChanged,
    LineChanged,
    PowerChanged,   // card supply edge; a=1 on, a=0 off
    GrantTimedOut,
    FaultWindowOpened,
    FaultWindowClosed,
    FaultArmed,
    FaultActivated,
    FaultExpired,
    FaultCancelled,
    Transaction,    // a=command index, b=status code
};

struct Event {
    std::uint64_t seq = 0;
    double t_us = 0.0;
    EventKind kind{};
    PortId port = kNoPort;
    LineId line = LineId::Clk;
    bool has_line = false;
    std::int64_t a = 0;
    std::int64_t b = 0;
};

std::string to_string(const Event& ev);

// Append-only structured record of every switch/fault/transaction state
// change. Kept in memory for invariant audits; optionally mirrored as text
// lines to a stream. A ring limit protects long-running servers.
class EventLog {
public:
    void record(EventKind kind, PortId port = kNoPort, std::int64_t a = 0,
                std::int64_t b = 0);
    void record_line(EventKind kind, PortId port, LineId line, std::int64_t a = 0);

    const std::deque<Event>& events() const { return events_; }
    std::size_t size() const { return events_.size(); }
    void clear() { events_.clear(); }

    void set_sink(std::ostream* sink) { sink_ = sink; }
    void set_max_events(std::size_t n) { max_events_ = n; }
    void set_clock(const SimClock* clock) { clock_ = clock; }

private:
    void push(Event ev);

    std::deque<Event> events_;
    std::uint64_t next_seq_ = 0;
    std::size_t max_events_ = 4u << 20;
    std::ostream* sink_ = nullptr;
    const SimClock* clock_ = nullptr;
};

} // namespace netsd
