// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "netsd/event_log.hpp"
#include "netsd/lines.hpp"
#include "netsd/sd_card.hpp"

#include <optional>
#include <stdexcept>
#include <vector>

namespace netsd {

struct SwitchGrant {
    std::optional<PortId> holder;
    double granted_at_us = 0.0;
    bool repower_pending = false;
};

class UnknownPortError : public std::invalid_argument {
public:
    explicit UnknownPortError(PortId id)
        : std::invalid_argument("unknown port: " + std::to_string(id)) {}
};

// Grants explicit, exclusive line-level access to the card to at most one
// port. Every holder change is break-before-make and power-cycles the card,
// so the new holder must re-run the init sequence. Line states can be forced
// individually for fault injection; exclusivity checking is suspended only
// inside an explicitly opened fault window.
class SdSwitch {
public:
    struct Config {
        int num_ports = 2;
        PortId default_holder = kDutPort;
        double max_hold_us = 30e6; // forced release of a wedged non-default holder
    };

    SdSwitch(SdCard& card, SimClock& clock, EventLog& log)
        : SdSwitch(card, clock, log, Config()) {}
    SdSwitch(SdCard& card, SimClock& clock, EventLog& log, Config cfg);

    SwitchGrant grant(PortId port);
    SwitchGrant release(); // hand access back to the default holder

    SwitchGrant current_grant() const;
    const LineSet& lines(PortId port) const;
    int num_ports() const { return static_cast<int>(ports_.size()); }

    PortId default_holder() const { return cfg_.default_holder; }
    void set_default_holder(PortId port);

    // Fault-injection escape hatch: drive a single line of a single port,
    // independent of the grant.
    void set_line(PortId port, LineId line, LineState state);

    // Exclusivity suspension tokens for intentional violations.
    int open_fault_window();
    void close_fault_window(int token);
    bool in_fault_window() const { return open_windows_ > 0; }

    // Repower the card through the current holder's power line.
    void power_cycle_holder();

    // Force-release a non-default holder that exceeded the hold budget.
    // Returns true when a timeout fired.
    bool maybe_expire_hold();

    int conductive_port_count() const;

private:
    void check_port(PortId port) const;
    void disconnect_all(PortId port);
    void connect_all(PortId port);
    void set_line_internal(PortId port, LineId line, LineState state);
    void apply_card_power();
    void check_exclusivity() const;

    SdCard& card_;
    SimClock& clock_;
    EventLog& log_;
    Config cfg_;

    std::vector<LineSet> ports_;
    std::optional<PortId> holder_;
    double granted_at_us_ = 0.0;
    int open_windows_ = 0;
    int next_window_token_ = 1;
};

} // namespace netsd
