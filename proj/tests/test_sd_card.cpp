// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "netsd/sd_card.hpp"

#include "support/temp_dir.hpp"

#include <fstream>
#include <random>

using namespace netsd;

namespace {

constexpr std::uint64_t kCapacity = 8ull << 20; // small image keeps tests quick

struct CardFixture {
    test_support::TempDir dir;
    BackingImage image{dir.file("card.img"), kCapacity};
    SdCard card{image};

    CardFixture() { card.set_power(true); }

    SdResponse send(std::uint8_t index, std::uint32_t arg = 0) {
        return card.handle_command(SdCommand::make(index, arg));
    }

    void run_init() {
        REQUIRE(send(cmd::kGoIdle).in_idle());
        REQUIRE(send(cmd::kSendIfCond, 0x1AA).ok());
        for (int i = 0; i < 100; ++i) {
            REQUIRE(send(cmd::kAppCmd).ok());
            SdCommand op = SdCommand::make(cmd::kAppSendOpCond, 1u << 30, true);
            if (!card.handle_command(op).in_idle()) break;
        }
        REQUIRE(card.phase() == SdCard::Phase::Ready);
        REQUIRE(send(cmd::kReadOcr).ok());
        REQUIRE(card.phase() == SdCard::Phase::TransferReady);
    }

    std::vector<std::uint8_t> image_bytes() const {
        std::ifstream in(dir.file("card.img"), std::ios::binary);
        return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    }
};

std::array<std::uint8_t, kBlockSize> pattern_block(std::uint8_t seed) {
    std::array<std::uint8_t, kBlockSize> b{};
    for (std::size_t i = 0; i < b.size(); ++i)
        b[i] = static_cast<std::uint8_t>(seed + i * 7);
    return b;
}

} // namespace

TEST_CASE("reset command returns in-idle") {
    CardFixture fx;
    SdCommand cmd0 = SdCommand::make(cmd::kGoIdle, 0);
    auto frame = cmd0.frame();
    CHECK(frame == std::array<std::uint8_t, 5>{0x40, 0, 0, 0, 0});
    CHECK(cmd0.crc_wire_byte() == 0x95);
    SdResponse r = fx.card.handle_command(cmd0);
    CHECK(r.kind == ResponseKind::R1);
    CHECK(r.r1 == 0x01);
}

TEST_CASE("interface condition echoes voltage and check pattern") {
    CardFixture fx;
    fx.send(cmd::kGoIdle);
    SdResponse r = fx.send(cmd::kSendIfCond, 0x1AA);
    CHECK(r.kind == ResponseKind::R7);
    CHECK((r.extra_word() & 0xFFF) == 0x1AA);
}

TEST_CASE("init sequence reaches transfer state and sets OCR bits") {
    CardFixture fx;
    fx.send(cmd::kGoIdle);
    fx.send(cmd::kSendIfCond, 0x1AA);
    fx.send(cmd::kAppCmd);
    SdResponse first = fx.card.handle_command(SdCommand::make(cmd::kAppSendOpCond, 1u << 30, true));
    CHECK(first.in_idle()); // still busy on the first poll
    fx.send(cmd::kAppCmd);
    SdResponse second = fx.card.handle_command(SdCommand::make(cmd::kAppSendOpCond, 1u << 30, true));
    CHECK_FALSE(second.in_idle());
    SdResponse ocr = fx.send(cmd::kReadOcr);
    CHECK(ocr.kind == ResponseKind::R3);
    CHECK((ocr.extra_word() >> 31) == 1);       // powered up
    CHECK(((ocr.extra_word() >> 30) & 1) == 1); // high capacity
    CHECK(fx.card.phase() == SdCard::Phase::TransferReady);
}

TEST_CASE("op-cond without a prior interface check never leaves idle") {
    CardFixture fx;
    fx.send(cmd::kGoIdle);
    for (int i = 0; i < 10; ++i) {
        fx.send(cmd::kAppCmd);
        SdResponse r = fx.card.handle_command(SdCommand::make(cmd::kAppSendOpCond, 1u << 30, true));
        CHECK(r.in_idle());
    }
    CHECK(fx.card.phase() == SdCard::Phase::Idle);
}

TEST_CASE("data commands before init complete are rejected without touching the image") {
    CardFixture fx;
    auto before = fx.image.counters();
    CHECK(fx.send(cmd::kReadSingle, 0).illegal());
    fx.send(cmd::kGoIdle);
    CHECK(fx.send(cmd::kReadSingle, 0).illegal());
    CHECK(fx.send(cmd::kWriteSingle, 0).illegal());
    CHECK(fx.image.counters().block_reads == before.block_reads);
    CHECK(fx.image.counters().block_writes == before.block_writes);
}

TEST_CASE("unsupported command index sets the illegal bit") {
    CardFixture fx;
    fx.run_init();
    CHECK(fx.send(13).illegal());
    CHECK(fx.send(32).illegal());
}

TEST_CASE("block length only accepts 512") {
    CardFixture fx;
    fx.run_init();
    CHECK(fx.send(cmd::kSetBlocklen, 512).ok());
    SdResponse bad = fx.send(cmd::kSetBlocklen, 1024);
    CHECK((bad.r1 & r1::kParameterError) != 0);
}

TEST_CASE("single block write then read round trips") {
    CardFixture fx;
    fx.run_init();
    auto block = pattern_block(0x5A);
    REQUIRE(fx.send(cmd::kWriteSingle, 5).ok());
    REQUIRE(fx.card.write_data_block(block, crc16(block)) == WriteStatus::Accepted);
    fx.card.end_write_burst();

    REQUIRE(fx.send(cmd::kReadSingle, 5).ok());
    auto read = fx.card.read_data_block();
    REQUIRE(read.ok);
    CHECK(read.data == block);
    CHECK(read.crc == crc16(block));
    CHECK(fx.card.phase() == SdCard::Phase::TransferReady);
}

TEST_CASE("multi block read streams and stops") {
    CardFixture fx;
    fx.run_init();
    for (std::uint64_t lba = 10; lba < 13; ++lba) {
        auto block = pattern_block(static_cast<std::uint8_t>(lba));
        REQUIRE(fx.card.write_block(lba, block, crc16(block)) == SdCard::BlockStatus::Ok);
    }
    REQUIRE(fx.send(cmd::kReadMultiple, 10).ok());
    for (int i = 0; i < 3; ++i) {
        auto blk = fx.card.read_data_block();
        REQUIRE(blk.ok);
        CHECK(blk.data == pattern_block(static_cast<std::uint8_t>(10 + i)));
    }
    CHECK(fx.card.phase() == SdCard::Phase::ReadingMulti);
    CHECK(fx.send(cmd::kStopTransmission).ok());
    CHECK(fx.card.phase() == SdCard::Phase::TransferReady);
}

TEST_CASE("out of range read returns the range error token and skips the image") {
    CardFixture fx;
    fx.run_init();
    auto before = fx.image.counters();
    SdResponse r = fx.send(cmd::kReadSingle, static_cast<std::uint32_t>(fx.card.block_count()));
    CHECK(r.kind == ResponseKind::ErrorToken);
    CHECK((r.error_token & errtok::kOutOfRange) != 0);
    CHECK(fx.image.counters().block_reads == before.block_reads);
}

TEST_CASE("out of range write is flagged in R1") {
    CardFixture fx;
    fx.run_init();
    SdResponse r = fx.send(cmd::kWriteSingle, static_cast<std::uint32_t>(fx.card.block_count()));
    CHECK((r.r1 & r1::kAddressError) != 0);
}

TEST_CASE("crc checking is off by default and switchable") {
    CardFixture fx;
    fx.run_init();
    CHECK_FALSE(fx.card.crc_checking());

    // Wrong command CRC is ignored while checking is off.
    SdCommand bad = SdCommand::make(cmd::kReadOcr, 0);
    bad.crc ^= 0x15;
    CHECK(fx.card.handle_command(bad).ok());

    CHECK(fx.send(cmd::kCrcOnOff, 1).ok());
    CHECK(fx.card.crc_checking());
    SdResponse r = fx.card.handle_command(bad);
    CHECK((r.r1 & r1::kCrcError) != 0);

    CHECK(fx.send(cmd::kCrcOnOff, 0).ok());
    CHECK_FALSE(fx.card.crc_checking());
}

TEST_CASE("bad data crc rejects the block and leaves the image unchanged") {
    CardFixture fx;
    fx.run_init();
    fx.send(cmd::kCrcOnOff, 1);

    auto block = pattern_block(0x11);
    REQUIRE(fx.card.write_block(3, block, crc16(block)) == SdCard::BlockStatus::Ok);
    auto snapshot = fx.image_bytes();

    auto evil = pattern_block(0x22);
    REQUIRE(fx.send(cmd::kWriteSingle, 3).ok());
    CHECK(fx.card.write_data_block(evil, static_cast<std::uint16_t>(crc16(evil) ^ 1)) ==
          WriteStatus::CrcRejected);
    fx.card.end_write_burst();

    CHECK(fx.image_bytes() == snapshot);
}

TEST_CASE("power cycling resets the interface but never the image") {
    CardFixture fx;
    fx.run_init();
    auto block = pattern_block(0x77);
    REQUIRE(fx.card.write_block(20, block, crc16(block)) == SdCard::BlockStatus::Ok);
    auto snapshot = fx.image_bytes();

    std::mt19937_64 rng(42);
    for (int i = 0; i < 1000; ++i) {
        if (rng() % 2) {
            // Aborted write: command accepted, data never arrives.
            if (fx.card.phase() == SdCard::Phase::TransferReady)
                fx.send(cmd::kWriteSingle, static_cast<std::uint32_t>(rng() % 64));
        }
        fx.card.set_power(false);
        CHECK(fx.card.phase() == SdCard::Phase::Uninitialized);
        fx.card.set_power(true);
        CHECK(fx.card.phase() == SdCard::Phase::Uninitialized);
        if (rng() % 3 == 0) fx.run_init();
    }
    CHECK(fx.image_bytes() == snapshot);
}

TEST_CASE("commands get no response while unpowered") {
    CardFixture fx;
    fx.card.set_power(false);
    SdResponse r = fx.send(cmd::kGoIdle);
    CHECK(r.kind == ResponseKind::None);
}

TEST_CASE("register blocks carry valid internal checksums and capacity") {
    CardFixture fx;
    fx.run_init();

    SdResponse csd = fx.send(cmd::kSendCsd);
    REQUIRE(csd.kind == ResponseKind::DataBlock);
    REQUIRE(csd.data.size() == 16);
    CHECK(csd.data[15] == ((crc7({csd.data.data(), 15}) << 1) | 1));
    std::uint32_t c_size = (std::uint32_t(csd.data[7] & 0x3F) << 16) |
                           (std::uint32_t(csd.data[8]) << 8) | csd.data[9];
    CHECK((std::uint64_t(c_size) + 1) * 512 * 1024 == kCapacity);

    SdResponse cid = fx.send(cmd::kSendCid);
    REQUIRE(cid.kind == ResponseKind::DataBlock);
    REQUIRE(cid.data.size() == 16);
    CHECK(cid.data[15] == ((crc7({cid.data.data(), 15}) << 1) | 1));
}

TEST_CASE("read after write identity on random blocks") {
    CardFixture fx;
    fx.run_init();
    std::mt19937_64 rng(7);
    for (int i = 0; i < 300; ++i) {
        std::uint64_t lba = rng() % fx.card.block_count();
        std::array<std::uint8_t, kBlockSize> block;
        for (auto& b : block) b = static_cast<std::uint8_t>(rng());
        REQUIRE(fx.card.write_block(lba, block, crc16(block)) == SdCard::BlockStatus::Ok);
        std::array<std::uint8_t, kBlockSize> back{};
        std::uint16_t crc = 0;
        REQUIRE(fx.card.read_block(lba, back, &crc) == SdCard::BlockStatus::Ok);
        REQUIRE(back == block);
        REQUIRE(crc == crc16(block));
    }
}
