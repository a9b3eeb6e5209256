// SPDX-License-Identifier: Apache-2.0
#include "netsd/sd_card.hpp"

#include <cstring>
#include <stdexcept>

namespace netsd {

SdCard::SdCard(BackingImage& backing, Config cfg) : backing_(backing), cfg_(cfg) {
    if (cfg_.capacity_bytes == 0) cfg_.capacity_bytes = backing.capacity_bytes();
    if (cfg_.capacity_bytes % kBlockSize != 0)
        throw std::invalid_argument("card capacity must be a positive multiple of 512");
    if (cfg_.capacity_bytes > (8ull << 30))
        throw std::invalid_argument("card capacity above 8 GiB is not supported");
    if (cfg_.capacity_bytes != backing.capacity_bytes())
        throw std::invalid_argument("card capacity must match the backing image");
    build_registers();
}

void SdCard::build_registers() {
    // CSD version 2.0: C_SIZE counts 512 KiB units minus one.
    std::uint32_t c_size = static_cast<std::uint32_t>(cfg_.capacity_bytes / (512ull * 1024) - 1);
    csd_ = {0};
    csd_[0] = 0x40;                 // CSD structure 1.0 (version 2 card)
    csd_[1] = 0x0E;                 // TAAC
    csd_[2] = 0x00;                 // NSAC
    csd_[3] = 0x5A;                 // TRAN_SPEED 50 MHz class
    csd_[4] = 0x5B;                 // CCC high
    csd_[5] = 0x59;                 // CCC low | READ_BL_LEN = 9 (512)
    csd_[6] = 0x00;
    csd_[7] = static_cast<std::uint8_t>((c_size >> 16) & 0x3F);
    csd_[8] = static_cast<std::uint8_t>(c_size >> 8);
    csd_[9] = static_cast<std::uint8_t>(c_size);
    csd_[10] = 0x7F;
    csd_[11] = 0x80;
    csd_[12] = 0x0A;
    csd_[13] = 0x40;
    csd_[14] = 0x00;
    csd_[15] = static_cast<std::uint8_t>((crc7({csd_.data(), 15}) << 1) | 1);

    cid_ = {0};
    cid_[0] = 0x6E;                 // manufacturer id
    cid_[1] = 'N';                  // OEM id
    cid_[2] = 'S';
    cid_[3] = 'C';                  // product name "CARD0"
    cid_[4] = 'A';
    cid_[5] = 'R';
    cid_[6] = 'D';
    cid_[7] = '0';
    cid_[8] = 0x10;                 // revision 1.0
    cid_[9] = static_cast<std::uint8_t>(cfg_.serial >> 24);
    cid_[10] = static_cast<std::uint8_t>(cfg_.serial >> 16);
    cid_[11] = static_cast<std::uint8_t>(cfg_.serial >> 8);
    cid_[12] = static_cast<std::uint8_t>(cfg_.serial);
    cid_[13] = 0x01;                // manufacture date 2021-07
    cid_[14] = 0x57;
    cid_[15] = static_cast<std::uint8_t>((crc7({cid_.data(), 15}) << 1) | 1);
}

std::uint32_t SdCard::ocr() const {
    // 2.7-3.6 V window, high-capacity. The power-up bit reads as busy until
    // ACMD41 has completed.
    std::uint32_t ocr = 0x00FF8000 | (1u << 30);
    if (phase_ == Phase::Ready || phase_ == Phase::TransferReady ||
        phase_ == Phase::ReadingMulti || phase_ == Phase::WritingMulti)
        ocr |= 1u << 31;
    return ocr;
}

void SdCard::reset_interface() {
    phase_ = Phase::Uninitialized;
    crc_checking_ = false;
    cmd8_seen_ = false;
    app_cmd_pending_ = false;
    acmd41_polls_ = 0;
    single_block_read_ = false;
}

void SdCard::set_power(bool on) {
    if (on == powered_) return;
    powered_ = on;
    reset_interface();
}

std::uint8_t SdCard::idle_flag() const {
    return phase_ == Phase::Idle ? r1::kInIdle : 0;
}

SdResponse SdCard::r1_response(std::uint8_t flags) const {
    SdResponse resp;
    resp.kind = ResponseKind::R1;
    resp.r1 = static_cast<std::uint8_t>(flags | idle_flag());
    return resp;
}

SdResponse SdCard::handle_command(const SdCommand& cmd) {
    if (!powered_) return SdResponse{}; // kind None: nobody home

    bool app = app_cmd_pending_;
    app_cmd_pending_ = false;

    // CMD0 and CMD8 frames are always CRC checked; the rest only when
    // checking has been enabled via CMD59.
    bool check_crc = crc_checking_ || cmd.index == cmd::kGoIdle || cmd.index == cmd::kSendIfCond;
    if (check_crc && !cmd.crc_valid()) return r1_response(r1::kCrcError);

    if (phase_ == Phase::Uninitialized && cmd.index != cmd::kGoIdle)
        return r1_response(r1::kIllegalCommand);

    // A multi-block transfer only listens for its stop condition.
    if (phase_ == Phase::ReadingMulti && cmd.index != cmd::kStopTransmission)
        return r1_response(r1::kIllegalCommand);
    if (phase_ == Phase::WritingMulti)
        return r1_response(r1::kIllegalCommand); // writes end with the stop-tran token

    if (app) {
        if (cmd.index == cmd::kAppSendOpCond) {
            if (phase_ != Phase::Idle) return r1_response(0); // idempotent once ready
            if (!cmd8_seen_) return r1_response(r1::kInIdle); // v2 init requires CMD8 first
            if (++acmd41_polls_ > cfg_.acmd41_busy_polls) {
                phase_ = Phase::Ready;
                return r1_response(0);
            }
            return r1_response(r1::kInIdle);
        }
        return r1_response(r1::kIllegalCommand);
    }

    switch (cmd.index) {
    case cmd::kGoIdle: {
        phase_ = Phase::Idle;
        crc_checking_ = false;
        cmd8_seen_ = false;
        acmd41_polls_ = 0;
        return r1_response(0);
    }
    case cmd::kSendIfCond: {
        if (phase_ != Phase::Idle) return r1_response(r1::kIllegalCommand);
        cmd8_seen_ = true;
        SdResponse resp = r1_response(0);
        resp.kind = ResponseKind::R7;
        resp.extra = {0, 0, static_cast<std::uint8_t>((cmd.argument >> 8) & 0x0F),
                      static_cast<std::uint8_t>(cmd.argument)};
        return resp;
    }
    case cmd::kAppCmd: {
        app_cmd_pending_ = true;
        return r1_response(0);
    }
    case cmd::kReadOcr: {
        SdResponse resp = r1_response(0);
        resp.kind = ResponseKind::R3;
        std::uint32_t value = ocr();
        resp.extra = {static_cast<std::uint8_t>(value >> 24), static_cast<std::uint8_t>(value >> 16),
                      static_cast<std::uint8_t>(value >> 8), static_cast<std::uint8_t>(value)};
        if (phase_ == Phase::Ready) phase_ = Phase::TransferReady;
        return resp;
    }
    case cmd::kCrcOnOff: {
        if (phase_ == Phase::Uninitialized) return r1_response(r1::kIllegalCommand);
        crc_checking_ = (cmd.argument & 1) != 0;
        return r1_response(0);
    }
    case cmd::kSetBlocklen: {
        if (phase_ != Phase::TransferReady) return r1_response(r1::kIllegalCommand);
        // High-capacity cards are fixed at 512; accept only that value.
        return cmd.argument == kBlockSize ? r1_response(0) : r1_response(r1::kParameterError);
    }
    case cmd::kSendCsd:
    case cmd::kSendCid: {
        if (phase_ != Phase::TransferReady) return r1_response(r1::kIllegalCommand);
        SdResponse resp = r1_response(0);
        resp.kind = ResponseKind::DataBlock;
        const auto& reg = (cmd.index == cmd::kSendCsd) ? csd_ : cid_;
        resp.data.assign(reg.begin(), reg.end());
        return resp;
    }
    case cmd::kReadSingle:
    case cmd::kReadMultiple: {
        if (phase_ != Phase::TransferReady) return r1_response(r1::kIllegalCommand);
        if (cmd.argument >= block_count()) {
            SdResponse resp;
            resp.kind = ResponseKind::ErrorToken;
            resp.error_token = errtok::kError | errtok::kOutOfRange;
            return resp;
        }
        transfer_lba_ = cmd.argument;
        single_block_read_ = (cmd.index == cmd::kReadSingle);
        phase_ = Phase::ReadingMulti;
        return r1_response(0);
    }
    case cmd::kWriteSingle:
    case cmd::kWriteMultiple: {
        if (phase_ != Phase::TransferReady) return r1_response(r1::kIllegalCommand);
        if (cmd.argument >= block_count()) return r1_response(r1::kAddressError);
        transfer_lba_ = cmd.argument;
        phase_ = Phase::WritingMulti;
        return r1_response(0);
    }
    case cmd::kStopTransmission: {
        if (phase_ == Phase::ReadingMulti) phase_ = Phase::TransferReady;
        SdResponse resp = r1_response(0);
        resp.kind = ResponseKind::R1b;
        return resp;
    }
    default:
        return r1_response(r1::kIllegalCommand);
    }
}

bool SdCard::read_data_block_into(std::span<std::uint8_t> out, std::uint8_t* error_token) {
    if (!powered_ || phase_ != Phase::ReadingMulti) {
        if (error_token) *error_token = errtok::kError;
        return false;
    }
    if (transfer_lba_ >= block_count()) {
        if (error_token) *error_token = errtok::kError | errtok::kOutOfRange;
        phase_ = Phase::TransferReady;
        return false;
    }
    backing_.read_block(transfer_lba_, out);
    ++transfer_lba_;
    if (single_block_read_) phase_ = Phase::TransferReady;
    return true;
}

SdCard::ReadBlockResult SdCard::read_data_block() {
    ReadBlockResult result;
    result.ok = read_data_block_into({result.data.data(), result.data.size()},
                                     &result.error_token);
    if (result.ok) result.crc = crc16({result.data.data(), result.data.size()});
    return result;
}

WriteStatus SdCard::write_data_block(std::span<const std::uint8_t> data, std::uint16_t crc) {
    if (!powered_ || phase_ != Phase::WritingMulti) return WriteStatus::WriteError;
    if (crc_checking_ && data.size() == kBlockSize && crc16(data) != crc)
        return WriteStatus::CrcRejected;
    return write_data_block_checked(data);
}

WriteStatus SdCard::write_data_block_checked(std::span<const std::uint8_t> data) {
    if (!powered_ || phase_ != Phase::WritingMulti) return WriteStatus::WriteError;
    if (data.size() != kBlockSize) return WriteStatus::WriteError;
    if (transfer_lba_ >= block_count()) {
        phase_ = Phase::TransferReady;
        return WriteStatus::WriteError;
    }
    // Persisted before the (instantaneous) busy signal clears.
    backing_.write_block(transfer_lba_, data);
    ++transfer_lba_;
    return WriteStatus::Accepted;
}

void SdCard::end_write_burst() {
    if (phase_ == Phase::WritingMulti) phase_ = Phase::TransferReady;
}

SdCard::BlockStatus SdCard::read_block(std::uint64_t lba, std::span<std::uint8_t> out,
                                       std::uint16_t* crc_out) {
    if (!powered_ || (phase_ != Phase::TransferReady && phase_ != Phase::ReadingMulti))
        return BlockStatus::NotInitialized;
    if (lba >= block_count()) return BlockStatus::AddressError;
    backing_.read_block(lba, out);
    if (crc_out) *crc_out = crc16({out.data(), out.size()});
    return BlockStatus::Ok;
}

SdCard::BlockStatus SdCard::write_block(std::uint64_t lba, std::span<const std::uint8_t> data,
                                        std::uint16_t crc) {
    if (!powered_ || (phase_ != Phase::TransferReady && phase_ != Phase::WritingMulti))
        return BlockStatus::NotInitialized;
    if (lba >= block_count()) return BlockStatus::AddressError;
    if (crc_checking_ && crc16(data) != crc) return BlockStatus::CrcError;
    backing_.write_block(lba, data);
    return BlockStatus::Ok;
}

} // namespace netsd
