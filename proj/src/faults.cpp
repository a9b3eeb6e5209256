// SPDX-License-Identifier: Apache-2.0
#include "netsd/faults.hpp"

#include <cmath>

namespace netsd {

std::string_view fault_status_name(FaultStatus s) {
    switch (s) {
    case FaultStatus::Armed: return "armed";
    case FaultStatus::Active: return "active";
    case FaultStatus::Expired: return "expired";
    case FaultStatus::Cancelled: return "cancelled";
    }
    return "?";
}

std::string_view fault_kind_name(const FaultKind& kind) {
    if (std::holds_alternative<LineDisconnectFault>(kind)) return "line_disconnect";
    if (std::holds_alternative<CorruptFault>(kind)) return "corrupt";
    if (std::holds_alternative<DelayFault>(kind)) return "delay";
    if (std::holds_alternative<OmitFault>(kind)) return "omit";
    return "replay";
}

FaultEngine::FaultEngine(SdSwitch& sw, EventLog& log, SimClock& clock)
    : switch_(sw), log_(log), clock_(clock) {}

void FaultEngine::validate(const FaultKind& kind) const {
    if (const auto* ld = std::get_if<LineDisconnectFault>(&kind)) {
        if (ld->port < 0 || ld->port >= switch_.num_ports())
            throw InvalidSpecError("line disconnect: unknown port");
        if (ld->duration_us < 0) throw InvalidSpecError("line disconnect: negative duration");
    } else if (const auto* co = std::get_if<CorruptFault>(&kind)) {
        if (co->bit_flip_rate < 0 || co->bit_flip_rate > 1)
            throw InvalidSpecError("corrupt: rate outside [0,1]");
        if (co->window_us < 0) throw InvalidSpecError("corrupt: negative window");
    } else if (const auto* de = std::get_if<DelayFault>(&kind)) {
        if (de->added_us < 0 || de->window_us < 0)
            throw InvalidSpecError("delay: negative duration");
    } else if (const auto* om = std::get_if<OmitFault>(&kind)) {
        if (!om->command_index && !om->direction)
            throw InvalidSpecError("omit: needs a command index or a direction to match");
        if (om->count == 0) throw InvalidSpecError("omit: zero count");
    } else if (const auto* re = std::get_if<ReplayFault>(&kind)) {
        if (re->capture_window_us < 0 || re->inject_at_us < 0)
            throw InvalidSpecError("replay: negative window");
        if (re->capture_window_us > re->inject_at_us)
            throw InvalidSpecError("replay: capture window must end before injection");
    }
}

std::uint64_t FaultEngine::schedule(FaultKind kind, Trigger trigger) {
    validate(kind);
    Entry e;
    e.spec.id = next_id_++;
    e.spec.kind = std::move(kind);
    e.spec.trigger = trigger;
    if (const auto* om = std::get_if<OmitFault>(&e.spec.kind)) e.remaining = om->count;
    log_.record(EventKind::FaultArmed, kNoPort, static_cast<std::int64_t>(e.spec.id));
    entries_.push_back(std::move(e));
    return entries_.back().spec.id;
}

FaultStatus FaultEngine::cancel(std::uint64_t id) {
    for (Entry& e : entries_) {
        if (e.spec.id != id) continue;
        if (e.spec.status == FaultStatus::Armed) {
            e.spec.status = FaultStatus::Cancelled;
            log_.record(EventKind::FaultCancelled, kNoPort, static_cast<std::int64_t>(id));
        } else if (e.spec.status == FaultStatus::Active) {
            deactivate_line(e);
            e.spec.status = FaultStatus::Cancelled;
            log_.record(EventKind::FaultCancelled, kNoPort, static_cast<std::int64_t>(id));
        }
        return e.spec.status;
    }
    throw UnknownFaultError(id);
}

std::vector<FaultSpec> FaultEngine::list() const {
    std::vector<FaultSpec> out;
    out.reserve(entries_.size());
    for (const Entry& e : entries_) out.push_back(e.spec);
    return out;
}

std::size_t FaultEngine::pending_count() const {
    std::size_t n = 0;
    for (const Entry& e : entries_)
        if (e.spec.status == FaultStatus::Armed || e.spec.status == FaultStatus::Active) ++n;
    return n;
}

bool FaultEngine::due(const Entry& e, std::uint64_t txn_index) const {
    switch (e.spec.trigger.type) {
    case Trigger::Type::Immediate: return true;
    case Trigger::Type::AtTransactionCount: return txn_index >= e.spec.trigger.transaction_count;
    case Trigger::Type::AtSimTime: return clock_.now_us() >= e.spec.trigger.sim_time_us;
    }
    return false;
}

void FaultEngine::activate(Entry& e) {
    e.spec.status = FaultStatus::Active;
    e.activated_at_us = clock_.now_us();
    if (const auto* ld = std::get_if<LineDisconnectFault>(&e.spec.kind)) {
        e.saved_state = switch_.lines(ld->port).get(ld->line);
        e.window_token = switch_.open_fault_window();
        switch_.set_line(ld->port, ld->line, LineState::Disconnected);
    }
    log_.record(EventKind::FaultActivated, kNoPort, static_cast<std::int64_t>(e.spec.id));
}

void FaultEngine::deactivate_line(Entry& e) {
    if (const auto* ld = std::get_if<LineDisconnectFault>(&e.spec.kind)) {
        switch_.set_line(ld->port, ld->line, e.saved_state);
        switch_.close_fault_window(e.window_token);
    }
}

void FaultEngine::expire(Entry& e) {
    deactivate_line(e);
    e.spec.status = FaultStatus::Expired;
    log_.record(EventKind::FaultExpired, kNoPort, static_cast<std::int64_t>(e.spec.id));
}

FaultEffects FaultEngine::on_transaction(std::uint64_t txn_index, const TransactionInfo& info) {
    FaultEffects effects;
    double now = clock_.now_us();

    for (Entry& e : entries_) {
        if (e.spec.status == FaultStatus::Armed && due(e, txn_index)) activate(e);
    }
    for (Entry& e : entries_) {
        if (e.spec.status != FaultStatus::Active) continue;
        double age = now - e.activated_at_us;
        if (const auto* ld = std::get_if<LineDisconnectFault>(&e.spec.kind)) {
            if (age >= ld->duration_us) expire(e);
        } else if (const auto* co = std::get_if<CorruptFault>(&e.spec.kind)) {
            if (age >= co->window_us) expire(e);
        } else if (const auto* de = std::get_if<DelayFault>(&e.spec.kind)) {
            if (age >= de->window_us) expire(e);
        }
        // Omit expires by count, Replay by injection; handled below.
    }

    for (Entry& e : entries_) {
        if (e.spec.status != FaultStatus::Active) continue;
        if (const auto* co = std::get_if<CorruptFault>(&e.spec.kind)) {
            if (info.direction && *info.direction == co->direction && info.payload_bytes > 0) {
                double per_block = -std::expm1(8.0 * 512.0 * std::log1p(-co->bit_flip_rate));
                effects.corrupt_block_probability =
                    std::max(effects.corrupt_block_probability, per_block);
            }
        } else if (const auto* de = std::get_if<DelayFault>(&e.spec.kind)) {
            effects.extra_delay_us += de->added_us;
        } else if (const auto* om = std::get_if<OmitFault>(&e.spec.kind)) {
            bool match = (om->command_index && *om->command_index == info.command_index) ||
                         (om->direction && info.direction && *om->direction == *info.direction);
            if (match && e.remaining > 0) {
                effects.omit = true;
                if (--e.remaining == 0) {
                    e.spec.status = FaultStatus::Expired;
                    log_.record(EventKind::FaultExpired, kNoPort,
                                static_cast<std::int64_t>(e.spec.id));
                }
            }
        } else if (const auto* re = std::get_if<ReplayFault>(&e.spec.kind)) {
            double age = now - e.activated_at_us;
            if (age >= re->inject_at_us && e.has_capture && info.direction &&
                *info.direction == Direction::Read && !effects.replay_payload) {
                effects.replay_payload = e.captured;
                e.spec.status = FaultStatus::Expired;
                log_.record(EventKind::FaultExpired, kNoPort,
                            static_cast<std::int64_t>(e.spec.id));
            }
        }
    }
    return effects;
}

void FaultEngine::offer_capture(const TransactionInfo& info,
                                std::span<const std::uint8_t> payload) {
    if (!info.direction || *info.direction != Direction::Read || payload.empty()) return;
    double now = clock_.now_us();
    for (Entry& e : entries_) {
        if (e.spec.status != FaultStatus::Active) continue;
        const auto* re = std::get_if<ReplayFault>(&e.spec.kind);
        if (!re) continue;
        double age = now - e.activated_at_us;
        if (age <= re->capture_window_us) {
            e.captured.assign(payload.begin(), payload.end());
            e.has_capture = true;
        }
    }
}

} // namespace netsd
