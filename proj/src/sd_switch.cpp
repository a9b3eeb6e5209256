// SPDX-License-Identifier: Apache-2.0
#include "netsd/sd_switch.hpp"

namespace netsd {

SdSwitch::SdSwitch(SdCard& card, SimClock& clock, EventLog& log, Config cfg)
    : card_(card), clock_(clock), log_(log), cfg_(cfg) {
    if (cfg_.num_ports < 2) throw std::invalid_argument("switch needs at least two ports");
    if (cfg_.default_holder < 0 || cfg_.default_holder >= cfg_.num_ports)
        throw UnknownPortError(cfg_.default_holder);
    ports_.resize(static_cast<std::size_t>(cfg_.num_ports));
}

void SdSwitch::check_port(PortId port) const {
    if (port < 0 || port >= num_ports()) throw UnknownPortError(port);
}

int SdSwitch::conductive_port_count() const {
    int n = 0;
    for (const LineSet& p : ports_)
        if (p.fully_conductive()) ++n;
    return n;
}

void SdSwitch::check_exclusivity() const {
    if (open_windows_ > 0) return;
    if (conductive_port_count() > 1)
        throw std::logic_error("exclusivity violated: more than one conductive port");
}

void SdSwitch::apply_card_power() {
    bool supply = holder_.has_value() &&
                  ports_[static_cast<std::size_t>(*holder_)].power == PowerState::On;
    if (supply != card_.powered()) {
        card_.set_power(supply);
        log_.record(EventKind::PowerChanged, holder_.value_or(kNoPort), supply ? 1 : 0);
    }
}

void SdSwitch::set_line_internal(PortId port, LineId line, LineState state) {
    LineSet& lines = ports_[static_cast<std::size_t>(port)];
    if (lines.get(line) == state) return;
    lines.set(line, state);
    log_.record_line(EventKind::LineChanged, port, line,
                     state == LineState::Conductive ? 1 : 0);
    if (line == LineId::Power && holder_ && *holder_ == port) apply_card_power();
    check_exclusivity();
}

void SdSwitch::disconnect_all(PortId port) {
    for (LineId id : {LineId::Clk, LineId::Cmd, LineId::Dat0, LineId::Dat1, LineId::Dat2,
                      LineId::Dat3})
        set_line_internal(port, id, LineState::Disconnected);
    set_line_internal(port, LineId::Power, LineState::Disconnected);
}

void SdSwitch::connect_all(PortId port) {
    set_line_internal(port, LineId::Power, LineState::Conductive);
    for (LineId id : {LineId::Clk, LineId::Cmd, LineId::Dat0, LineId::Dat1, LineId::Dat2,
                      LineId::Dat3})
        set_line_internal(port, id, LineState::Conductive);
}

SwitchGrant SdSwitch::grant(PortId port) {
    check_port(port);
    log_.record(EventKind::GrantRequested, port);
    if (holder_ && *holder_ == port) return current_grant();

    // Break before make: the old path opens fully (dropping the card's
    // supply via its power line) before the new one closes.
    if (holder_) {
        PortId old = *holder_;
        disconnect_all(old);
        holder_.reset();
    }

    holder_ = port;
    connect_all(port);
    apply_card_power();
    granted_at_us_ = clock_.now_us();
    log_.record(EventKind::HolderChanged, port);
    return current_grant();
}

SwitchGrant SdSwitch::release() { return grant(cfg_.default_holder); }

SwitchGrant SdSwitch::current_grant() const {
    SwitchGrant g;
    g.holder = holder_;
    g.granted_at_us = granted_at_us_;
    return g;
}

const LineSet& SdSwitch::lines(PortId port) const {
    check_port(port);
    return ports_[static_cast<std::size_t>(port)];
}

void SdSwitch::set_default_holder(PortId port) {
    check_port(port);
    cfg_.default_holder = port;
}

void SdSwitch::set_line(PortId port, LineId line, LineState state) {
    check_port(port);
    set_line_internal(port, line, state);
}

int SdSwitch::open_fault_window() {
    ++open_windows_;
    int token = next_window_token_++;
    log_.record(EventKind::FaultWindowOpened, kNoPort, token);
    return token;
}

void SdSwitch::close_fault_window(int token) {
    if (open_windows_ <= 0) throw std::logic_error("no fault window open");
    --open_windows_;
    log_.record(EventKind::FaultWindowClosed, kNoPort, token);
    check_exclusivity();
}

void SdSwitch::power_cycle_holder() {
    if (!holder_) return;
    set_line_internal(*holder_, LineId::Power, LineState::Disconnected);
    set_line_internal(*holder_, LineId::Power, LineState::Conductive);
}

bool SdSwitch::maybe_expire_hold() {
    if (!holder_ || *holder_ == cfg_.default_holder) return false;
    if (cfg_.max_hold_us <= 0) return false;
    if (clock_.now_us() - granted_at_us_ <= cfg_.max_hold_us) return false;
    log_.record(EventKind::GrantTimedOut, *holder_);
    release();
    return true;
}

} // namespace netsd
