// SPDX-License-Identifier: Apache-2.0
#include "netsd/host_session.hpp"

#include <algorithm>
#include <bit>

namespace netsd {

HostSession::HostSession(Arbiter& arbiter, PortId port, BusConfig bus, DeviceCaps host_caps,
                         Options opts)
    : arbiter_(arbiter), port_(port), bus_(bus), host_caps_(host_caps), opts_(opts) {}

void HostSession::note(const TxnResult& r) {
    ++stats_.attempts;
    stats_.elapsed_us += r.elapsed_us;
    if (r.status == TransferStatus::CrcDetectedError) ++stats_.crc_errors;
    if (r.status == TransferStatus::Timeout) ++stats_.timeouts;
}

TxnResult HostSession::command(std::uint8_t index, std::uint32_t argument, bool app) {
    Transaction txn;
    txn.cmd = SdCommand::make(index, argument, app);
    txn.mode = default_3v3_mode(); // identification clock until negotiated
    txn.bus = bus_;
    txn.through_switch = opts_.through_switch;
    TxnResult r = arbiter_.submit(port_, txn);
    note(r);
    return r;
}

TransferMode HostSession::init() {
    negotiated_mode_.reset();

    // The first command doubles as the access probe: with open lines nothing
    // answers, and the attempt is simply repeated.
    bool idle = false;
    for (int attempt = 0; attempt <= opts_.retry_limit; ++attempt) {
        TxnResult r = command(cmd::kGoIdle, 0);
        if (r.status == TransferStatus::Ok && r.response.in_idle()) {
            idle = true;
            break;
        }
        ++stats_.retries;
    }
    if (!idle) throw NoGrantError();

    TxnResult ifcond = command(cmd::kSendIfCond, 0x1AA);
    if (ifcond.status != TransferStatus::Ok || !ifcond.response.ok())
        throw CardError("interface condition rejected");
    if ((ifcond.response.extra_word() & 0xFFF) != 0x1AA)
        throw CardError("interface condition echo mismatch");

    bool ready = false;
    for (int poll = 0; poll < opts_.max_init_polls; ++poll) {
        TxnResult app = command(cmd::kAppCmd, 0);
        if (app.status != TransferStatus::Ok) throw CardError("lost card during init");
        TxnResult op = command(cmd::kAppSendOpCond, 1u << 30, true);
        if (op.status != TransferStatus::Ok) throw CardError("lost card during init");
        if (!op.response.in_idle()) {
            ready = true;
            break;
        }
    }
    if (!ready) throw CardError("card never left idle");

    TxnResult ocr = command(cmd::kReadOcr, 0);
    if (ocr.status != TransferStatus::Ok || !ocr.response.ok())
        throw CardError("cannot read operating conditions");
    if (!(ocr.response.extra_word() & (1u << 31))) throw CardError("card still busy");

    if (opts_.enable_crc) {
        TxnResult crc = command(cmd::kCrcOnOff, 1);
        if (crc.status != TransferStatus::Ok || !crc.response.ok())
            throw CardError("cannot enable CRC checking");
    }

    negotiated_mode_ = negotiate_mode(bus_, arbiter_.card_caps(), host_caps_);
    return *negotiated_mode_;
}

void HostSession::validate_chunk(std::uint32_t chunk_bytes) {
    if (chunk_bytes < 1024 || chunk_bytes > (1u << 20) || !std::has_single_bit(chunk_bytes))
        throw std::invalid_argument("chunk size must be a power of two between 1 KiB and 1 MiB");
}

TxnResult HostSession::data_transaction(std::uint8_t index, std::uint32_t lba, Direction dir,
                                        std::uint32_t blocks,
                                        std::span<const std::uint8_t> payload) {
    Transaction txn;
    txn.cmd = SdCommand::make(index, lba);
    txn.dir = dir;
    txn.block_count = blocks;
    txn.write_data = payload;
    txn.mode = *negotiated_mode_;
    txn.bus = bus_;
    txn.through_switch = opts_.through_switch;
    TxnResult r = arbiter_.submit(port_, txn);
    note(r);
    return r;
}

std::vector<std::uint8_t> HostSession::read(std::uint64_t lba, std::uint32_t n_blocks,
                                            std::uint32_t chunk_bytes) {
    validate_chunk(chunk_bytes);
    if (!initialized()) throw CardError("session not initialized");
    if ((lba + n_blocks) * kBlockSize > arbiter_.card_capacity_bytes()) throw AddressError();

    std::vector<std::uint8_t> out;
    out.reserve(static_cast<std::size_t>(n_blocks) * kBlockSize);
    std::uint32_t chunk_blocks = chunk_bytes / kBlockSize;

    std::uint64_t cur = lba;
    std::uint32_t remaining = n_blocks;
    while (remaining > 0) {
        std::uint32_t blocks = std::min(remaining, chunk_blocks);
        std::uint8_t index = blocks == 1 ? cmd::kReadSingle : cmd::kReadMultiple;
        bool done = false;
        for (int attempt = 0; attempt <= opts_.retry_limit; ++attempt) {
            TxnResult r = data_transaction(index, static_cast<std::uint32_t>(cur), Direction::Read,
                                           blocks, {});
            if (r.response.kind == ResponseKind::ErrorToken &&
                (r.response.error_token & errtok::kOutOfRange))
                throw AddressError();
            if (r.status == TransferStatus::Ok ||
                r.status == TransferStatus::SilentCorruption) {
                if (r.response.illegal()) throw CardError("read rejected: not initialized");
                out.insert(out.end(), r.data.begin(), r.data.end());
                stats_.bytes_ok += r.data.size();
                done = true;
                break;
            }
            ++stats_.retries;
        }
        if (!done) throw RetriesExhaustedError();
        cur += blocks;
        remaining -= blocks;
    }
    return out;
}

void HostSession::write(std::uint64_t lba, std::span<const std::uint8_t> data,
                        std::uint32_t chunk_bytes) {
    validate_chunk(chunk_bytes);
    if (!initialized()) throw CardError("session not initialized");
    if (data.size() % kBlockSize != 0)
        throw std::invalid_argument("write length must be a multiple of 512");
    std::uint32_t n_blocks = static_cast<std::uint32_t>(data.size() / kBlockSize);
    if ((lba + n_blocks) * kBlockSize > arbiter_.card_capacity_bytes()) throw AddressError();

    std::uint32_t chunk_blocks = chunk_bytes / kBlockSize;
    std::uint64_t cur = lba;
    std::size_t offset = 0;
    while (offset < data.size()) {
        std::uint32_t blocks =
            std::min<std::uint32_t>(chunk_blocks,
                                    static_cast<std::uint32_t>((data.size() - offset) / kBlockSize));
        std::uint8_t index = blocks == 1 ? cmd::kWriteSingle : cmd::kWriteMultiple;
        std::span<const std::uint8_t> payload =
            data.subspan(offset, static_cast<std::size_t>(blocks) * kBlockSize);
        bool done = false;
        for (int attempt = 0; attempt <= opts_.retry_limit; ++attempt) {
            TxnResult r = data_transaction(index, static_cast<std::uint32_t>(cur), Direction::Write,
                                           blocks, payload);
            if (r.response.r1 & (r1::kAddressError | r1::kParameterError)) throw AddressError();
            if (r.status == TransferStatus::Ok ||
                r.status == TransferStatus::SilentCorruption) {
                if (r.response.illegal()) throw CardError("write rejected: not initialized");
                stats_.bytes_ok += payload.size();
                done = true;
                break;
            }
            ++stats_.retries;
        }
        if (!done) throw RetriesExhaustedError();
        cur += blocks;
        offset += payload.size();
    }
}

double HostSession::throughput_mbps(Direction dir, std::uint64_t total_bytes,
                                    std::uint32_t chunk_bytes, std::uint64_t lba) {
    validate_chunk(chunk_bytes);
    if (total_bytes == 0 || total_bytes % kBlockSize != 0)
        throw std::invalid_argument("total bytes must be a positive multiple of 512");

    double start_us = stats_.elapsed_us;
    if (dir == Direction::Read) {
        std::uint64_t done = 0;
        while (done < total_bytes) {
            std::uint32_t blocks = static_cast<std::uint32_t>(
                std::min<std::uint64_t>(chunk_bytes, total_bytes - done) / kBlockSize);
            read(lba + done / kBlockSize, blocks, chunk_bytes);
            done += static_cast<std::uint64_t>(blocks) * kBlockSize;
        }
    } else {
        // Seeded pattern; contents do not affect timing.
        std::vector<std::uint8_t> buffer(chunk_bytes);
        std::uint64_t x = 0x9E3779B97F4A7C15ull;
        std::uint64_t done = 0;
        while (done < total_bytes) {
            std::size_t len = static_cast<std::size_t>(
                std::min<std::uint64_t>(chunk_bytes, total_bytes - done));
            for (std::size_t i = 0; i < len; ++i) {
                x ^= x << 13;
                x ^= x >> 7;
                x ^= x << 17;
                buffer[i] = static_cast<std::uint8_t>(x);
            }
            write(lba + done / kBlockSize, {buffer.data(), len}, chunk_bytes);
            done += len;
        }
    }
    double elapsed = stats_.elapsed_us - start_us;
    return static_cast<double>(total_bytes) / elapsed; // B/us == MByte/s
}

} // namespace netsd
