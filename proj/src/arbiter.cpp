// SPDX-License-Identifier: Apache-2.0
#include "netsd/arbiter.hpp"

#include "netsd/bus_calibration.hpp"

#include <array>
#include <cstring>

namespace netsd {

Arbiter::Arbiter(SdCard& card, SdSwitch& sw, SimClock& clock, EventLog& log, FaultEngine* faults,
                 std::uint64_t seed)
    : card_(card), switch_(sw), clock_(clock), log_(log), faults_(faults), rng_(seed) {}

SwitchGrant Arbiter::grant(PortId port) {
    std::lock_guard lock(mutex_);
    return switch_.grant(port);
}

SwitchGrant Arbiter::release() {
    std::lock_guard lock(mutex_);
    return switch_.release();
}

SwitchGrant Arbiter::current_grant() const {
    std::lock_guard lock(mutex_);
    return switch_.current_grant();
}

void Arbiter::set_line(PortId port, LineId line, LineState state) {
    std::lock_guard lock(mutex_);
    switch_.set_line(port, line, state);
}

void Arbiter::power_cycle_holder() {
    std::lock_guard lock(mutex_);
    switch_.power_cycle_holder();
}

PortId Arbiter::default_holder() const {
    std::lock_guard lock(mutex_);
    return switch_.default_holder();
}

void Arbiter::set_default_holder(PortId port) {
    std::lock_guard lock(mutex_);
    switch_.set_default_holder(port);
}

int Arbiter::num_ports() const {
    std::lock_guard lock(mutex_);
    return switch_.num_ports();
}

std::uint64_t Arbiter::schedule_fault(FaultKind kind, Trigger trigger) {
    std::lock_guard lock(mutex_);
    if (!faults_) throw std::logic_error("fault injection is disabled");
    return faults_->schedule(std::move(kind), trigger);
}

FaultStatus Arbiter::cancel_fault(std::uint64_t id) {
    std::lock_guard lock(mutex_);
    if (!faults_) throw std::logic_error("fault injection is disabled");
    return faults_->cancel(id);
}

std::vector<FaultSpec> Arbiter::list_faults() const {
    std::lock_guard lock(mutex_);
    if (!faults_) return {};
    return faults_->list();
}

double Arbiter::now_us() const {
    std::lock_guard lock(mutex_);
    return clock_.now_us();
}

std::uint64_t Arbiter::transactions_executed() const {
    std::lock_guard lock(mutex_);
    return txn_counter_;
}

DeviceCaps Arbiter::card_caps() const { return card_.caps(); }

std::uint64_t Arbiter::card_capacity_bytes() const { return card_.capacity_bytes(); }

void Arbiter::flush_backing() {
    std::lock_guard lock(mutex_);
    card_.backing().flush();
}

namespace {

bool data_lines_conductive(const LineSet& lines, int width) {
    if (lines.get(LineId::Dat0) != LineState::Conductive) return false;
    if (width == 4) {
        if (lines.get(LineId::Dat1) != LineState::Conductive) return false;
        if (lines.get(LineId::Dat2) != LineState::Conductive) return false;
        if (lines.get(LineId::Dat3) != LineState::Conductive) return false;
    }
    return true;
}

} // namespace

void Arbiter::drain_read_stream(const Transaction& txn) {
    // The card streamed blocks nobody kept; close the transfer cleanly.
    if (txn.cmd.index == cmd::kReadMultiple) {
        card_.handle_command(SdCommand::make(cmd::kStopTransmission, 0));
    } else if (txn.cmd.index == cmd::kReadSingle) {
        std::array<std::uint8_t, kBlockSize> scratch;
        card_.read_data_block_into(scratch, nullptr);
    }
}

TxnResult Arbiter::finish(PortId port, const Transaction& txn, TxnResult result) {
    clock_.advance(result.elapsed_us);
    log_.record(EventKind::Transaction, port, txn.cmd.index,
                static_cast<std::int64_t>(result.status));
    return result;
}

TxnResult Arbiter::submit(PortId port, const Transaction& txn) {
    std::lock_guard lock(mutex_);
    switch_.maybe_expire_hold();

    std::uint64_t index = txn_counter_++;
    FaultEffects effects;
    if (faults_) {
        TransactionInfo info{txn.cmd.index, txn.dir,
                             static_cast<std::uint64_t>(txn.block_count) * kBlockSize};
        effects = faults_->on_transaction(index, info);
    }

    double overhead = command_overhead_us(txn.mode, txn.through_switch);

    if (effects.omit) {
        TxnResult result;
        result.status = TransferStatus::Timeout;
        result.elapsed_us = overhead + kResponseTimeoutUs + effects.extra_delay_us;
        return finish(port, txn, result);
    }

    const LineSet& lines = switch_.lines(port);
    bool command_path_up = lines.power == PowerState::On &&
                           lines.get(LineId::Clk) == LineState::Conductive &&
                           lines.get(LineId::Cmd) == LineState::Conductive && card_.powered();
    if (!command_path_up) {
        TxnResult result;
        result.status = TransferStatus::Timeout;
        result.elapsed_us = overhead + kResponseTimeoutUs + effects.extra_delay_us;
        return finish(port, txn, result);
    }

    TxnResult result;
    result.response = card_.handle_command(txn.cmd);
    result.status = TransferStatus::Ok;
    result.elapsed_us = simulated_transfer_time(txn.mode, txn.cmd.frame().size(), overhead) +
                        effects.extra_delay_us;

    if (result.response.kind == ResponseKind::None) {
        result.status = TransferStatus::Timeout;
        result.elapsed_us = overhead + kResponseTimeoutUs + effects.extra_delay_us;
        return finish(port, txn, result);
    }

    bool command_accepted = result.response.ok();
    if (!txn.dir || !command_accepted || txn.block_count == 0)
        return finish(port, txn, result);

    if (*txn.dir == Direction::Read)
        result = run_read_phase(txn, lines, std::move(result.response), effects);
    else
        result = run_write_phase(txn, lines, std::move(result.response), effects);
    result.elapsed_us += effects.extra_delay_us;
    return finish(port, txn, result);
}

TxnResult Arbiter::run_read_phase(const Transaction& txn, const LineSet& lines, SdResponse resp,
                                  const FaultEffects& eff) {
    TxnResult result;
    result.response = std::move(resp);

    std::size_t payload_bytes = static_cast<std::size_t>(txn.block_count) * kBlockSize;
    double overhead = command_overhead_us(txn.mode, txn.through_switch);
    result.elapsed_us = simulated_transfer_time(txn.mode, payload_bytes, overhead);

    bool lines_up = lines.power == PowerState::On &&
                    lines.get(LineId::Clk) == LineState::Conductive &&
                    lines.get(LineId::Cmd) == LineState::Conductive &&
                    data_lines_conductive(lines, txn.mode.bus_width_bits);
    if (!lines_up) {
        result.status = TransferStatus::Timeout;
        result.elapsed_us = overhead + kResponseTimeoutUs;
        drain_read_stream(txn);
        return result;
    }

    // Channel fate first; failed attempts never move any data. The draw
    // order (error sample, then flip positions, then fault glitches) is
    // fixed for reproducibility.
    double p = block_error_probability(txn.bus, txn.mode, payload_bytes, Direction::Read);
    bool channel_error = p > 0.0 && uniform01(rng_) < p;
    bool crc_on = card_.crc_checking();
    if (channel_error && crc_on) {
        result.status = TransferStatus::CrcDetectedError;
        drain_read_stream(txn);
        return result;
    }

    result.data.resize(payload_bytes);
    std::uint8_t error_token = 0;
    for (std::uint32_t i = 0; i < txn.block_count; ++i) {
        std::span<std::uint8_t> block{result.data.data() + std::size_t(i) * kBlockSize,
                                      kBlockSize};
        if (!card_.read_data_block_into(block, &error_token)) {
            // Stream ran off the end: surface the error token instead of data.
            result.response.kind = ResponseKind::ErrorToken;
            result.response.error_token = error_token;
            result.status = TransferStatus::Ok;
            result.data.clear();
            result.elapsed_us = simulated_transfer_time(txn.mode, i * kBlockSize, overhead);
            return result;
        }
    }
    if (txn.cmd.index == cmd::kReadMultiple)
        card_.handle_command(SdCommand::make(cmd::kStopTransmission, 0));

    if (channel_error) {
        result.status = TransferStatus::SilentCorruption;
        corrupt_payload(result.data, rng_);
        return result;
    }
    if (apply_fault_corruption(crc_on ? nullptr : &result.data, txn.block_count,
                               eff.corrupt_block_probability, rng_)) {
        result.status = crc_on ? TransferStatus::CrcDetectedError
                               : TransferStatus::SilentCorruption;
        if (crc_on) result.data.clear();
        return result;
    }

    result.status = TransferStatus::Ok;
    if (eff.replay_payload) {
        // Stale captured payload answers this request instead.
        result.data = *eff.replay_payload;
    } else if (faults_) {
        TransactionInfo info{txn.cmd.index, txn.dir, result.data.size()};
        faults_->offer_capture(info, result.data);
    }
    return result;
}

TxnResult Arbiter::run_write_phase(const Transaction& txn, const LineSet& lines, SdResponse resp,
                                   const FaultEffects& eff) {
    TxnResult result;
    result.response = std::move(resp);

    std::size_t payload_bytes = txn.write_data.size();
    double overhead = command_overhead_us(txn.mode, txn.through_switch);
    result.elapsed_us = simulated_transfer_time(txn.mode, payload_bytes, overhead);

    bool lines_up = lines.power == PowerState::On &&
                    lines.get(LineId::Clk) == LineState::Conductive &&
                    lines.get(LineId::Cmd) == LineState::Conductive &&
                    data_lines_conductive(lines, txn.mode.bus_width_bits);
    if (!lines_up) {
        result.status = TransferStatus::Timeout;
        result.elapsed_us = overhead + kResponseTimeoutUs;
        card_.end_write_burst();
        return result;
    }

    double program_us = static_cast<double>(txn.block_count) * cal::kWriteProgramUsPerBlock;
    double p = block_error_probability(txn.bus, txn.mode, payload_bytes, Direction::Write);
    bool channel_error = p > 0.0 && uniform01(rng_) < p;
    bool crc_on = card_.crc_checking();

    std::vector<std::uint8_t> corrupted;
    std::span<const std::uint8_t> wire = txn.write_data;
    if (channel_error) {
        if (crc_on) {
            // The card rejected the stream; nothing was programmed, but the
            // wire time and the program-and-verify attempt were still spent.
            result.status = TransferStatus::CrcDetectedError;
            result.elapsed_us += program_us;
            card_.end_write_burst();
            return result;
        }
        corrupted.assign(txn.write_data.begin(), txn.write_data.end());
        corrupt_payload(corrupted, rng_);
        wire = corrupted;
        result.status = TransferStatus::SilentCorruption;
    } else {
        bool faulted = apply_fault_corruption(crc_on ? nullptr : &corrupted, txn.block_count,
                                              eff.corrupt_block_probability, rng_);
        if (faulted && crc_on) {
            result.status = TransferStatus::CrcDetectedError;
            result.elapsed_us += program_us;
            card_.end_write_burst();
            return result;
        }
        if (faulted) {
            // corrupted was filled lazily above only when flips landed
            result.status = TransferStatus::SilentCorruption;
            wire = corrupted;
        } else {
            result.status = TransferStatus::Ok;
        }
    }

    for (std::uint32_t i = 0; i < txn.block_count; ++i) {
        std::span<const std::uint8_t> block{wire.data() + std::size_t(i) * kBlockSize, kBlockSize};
        if (card_.write_data_block_checked(block) != WriteStatus::Accepted) {
            result.response.r1 |= r1::kAddressError;
            break;
        }
    }
    result.elapsed_us += program_us;
    card_.end_write_burst();
    return result;
}

} // namespace netsd} // namespace netsd
