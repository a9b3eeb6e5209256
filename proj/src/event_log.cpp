// SPDX-License-Identifier: Apache-2.0
#include "netsd/event_log.hpp"

#include <ostream>
#include <sstream>
#include <stdexcept>

namespace netsd {

std::string port_name(PortId id) {
    switch (id) {
    case kNoPort: return "none";
    case kDutPort: return "dut";
    case kRagPort: return "rag";
    default: return "p" + std::to_string(id);
    }
}

PortId port_from_name(const std::string& name, int num_ports) {
    if (name == "dut") return kDutPort;
    if (name == "rag") return kRagPort;
    if (name == "none") return kNoPort;
    if (name.size() >= 2 && name[0] == 'p') {
        int id = std::stoi(name.substr(1));
        if (id >= 0 && id < num_ports) return id;
    }
    throw std::invalid_argument("unknown port name: " + name);
}

namespace {

const char* kind_name(EventKind kind) {
    switch (kind) {
    case EventKind::GrantRequested: return "grant_requested";
    case EventKind::HolderChanged: return "holder_changed";
    case EventKind::LineChanged: return "line_changed";
    case EventKind::PowerChanged: return "power_changed";
    case EventKind::GrantTimedOut: return "grant_timed_out";
    case EventKind::FaultWindowOpened: return "fault_window_opened";
    case EventKind::FaultWindowClosed: return "fault_window_closed";
    case EventKind::FaultArmed: return "fault_armed";
    case EventKind::FaultActivated: return "fault_activated";
    case EventKind::FaultExpired: return "fault_expired";
    case EventKind::FaultCancelled: return "fault_cancelled";
    case EventKind::Transaction: return "transaction";
    }
    return "?";
}

} // namespace

std::string to_string(const Event& ev) {
    std::ostringstream os;
    os << "t=" << ev.t_us << "us seq=" << ev.seq << ' ' << kind_name(ev.kind);
    if (ev.port != kNoPort) os << " port=" << port_name(ev.port);
    if (ev.has_line) os << " line=" << line_name(ev.line);
    os << " a=" << ev.a << " b=" << ev.b;
    return os.str();
}

void EventLog::record(EventKind kind, PortId port, std::int64_t a, std::int64_t b) {
    Event ev;
    ev.kind = kind;
    ev.port = port;
    ev.a = a;
    ev.b = b;
    push(ev);
}

void EventLog::record_line(EventKind kind, PortId port, LineId line, std::int64_t a) {
    Event ev;
    ev.kind = kind;
    ev.port = port;
    ev.line = line;
    ev.has_line = true;
    ev.a = a;
    push(ev);
}

void EventLog::push(Event ev) {
    ev.seq = next_seq_++;
    ev.t_us = clock_ ? clock_->now_us() : 0.0;
    if (sink_) *sink_ << to_string(ev) << '\n';
    events_.push_back(ev);
    if (events_.size() > max_events_) events_.pop_front();
}

} // namespace netsd
