// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "netsd/event_log.hpp"

#include <deque>
#include <vector>

namespace test_support {

// Replays a switch event log and checks the transition discipline:
//  - at no instant outside a fault window is more than one port conductive,
//  - every holder change contains an all-ports-disconnected gap,
//  - every holder change carries exactly one supply-on edge (plus the
//    supply-off edge when a previous holder existed).
struct SwitchAudit {
    int max_conductive_outside_windows = 0;
    int holder_changes = 0;
    int changes_with_gap = 0;
    int changes_with_single_power_cycle = 0;

    bool clean() const {
        return max_conductive_outside_windows <= 1 && changes_with_gap == holder_changes &&
               changes_with_single_power_cycle == holder_changes;
    }
};

inline SwitchAudit audit_switch_log(const std::deque<netsd::Event>& events, int num_ports) {
    using namespace netsd;
    SwitchAudit audit;
    std::vector<LineSet> ports(static_cast<std::size_t>(num_ports));
    int window_depth = 0;

    bool card_powered = false;
    bool saw_gap = false;       // since the last holder change
    int on_edges = 0;           // supply-on edges since the last holder change
    int off_edges = 0;
    bool had_holder = false;    // a holder existed before this segment

    auto conductive_count = [&] {
        int n = 0;
        for (const LineSet& p : ports)
            if (p.fully_conductive()) ++n;
        return n;
    };
    auto all_disconnected = [&] {
        for (const LineSet& p : ports)
            for (LineState s : p.data)
                if (s == LineState::Conductive) return false;
        return true;
    };

    for (const Event& ev : events) {
        switch (ev.kind) {
        case EventKind::LineChanged:
            if (ev.port >= 0 && ev.port < num_ports) {
                ports[static_cast<std::size_t>(ev.port)].set(
                    ev.line, ev.a ? LineState::Conductive : LineState::Disconnected);
            }
            if (window_depth == 0)
                audit.max_conductive_outside_windows =
                    std::max(audit.max_conductive_outside_windows, conductive_count());
            if (all_disconnected()) saw_gap = true;
            break;
        case EventKind::PowerChanged:
            if (ev.a) {
                ++on_edges;
                card_powered = true;
            } else {
                ++off_edges;
                card_powered = false;
            }
            break;
        case EventKind::HolderChanged: {
            ++audit.holder_changes;
            if (saw_gap) ++audit.changes_with_gap;
            bool cycle_ok = on_edges == 1 && (had_holder ? off_edges == 1 : off_edges == 0);
            if (cycle_ok) ++audit.changes_with_single_power_cycle;
            saw_gap = false;
            on_edges = 0;
            off_edges = 0;
            had_holder = true;
            break;
        }
        case EventKind::FaultWindowOpened:
            ++window_depth;
            break;
        case EventKind::FaultWindowClosed:
            --window_depth;
            break;
        default:
            break;
        }
    }
    (void)card_powered;
    return audit;
}

} // namespace test_support
