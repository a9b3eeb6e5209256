// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "netsd/crc.hpp"

#include "support/crc_reference.hpp"

#include <random>
#include <vector>

using namespace netsd;

TEST_CASE("crc7 of the reset command frame") {
    std::vector<std::uint8_t> frame{0x40, 0x00, 0x00, 0x00, 0x00};
    CHECK(crc_reference::crc7(frame) == 0x4A); // oracle first
    CHECK(crc7(frame) == 0x4A);
    CHECK(static_cast<std::uint8_t>((crc7(frame) << 1) | 1) == 0x95);
}

TEST_CASE("crc7 of the interface-condition frame") {
    std::vector<std::uint8_t> frame{0x48, 0x00, 0x00, 0x01, 0xAA};
    CHECK(crc7(frame) == crc_reference::crc7(frame));
    CHECK(static_cast<std::uint8_t>((crc7(frame) << 1) | 1) == 0x87);
}

TEST_CASE("crc16 fixed vectors") {
    CHECK(crc16({}) == 0x0000);

    std::vector<std::uint8_t> ones(512, 0xFF);
    CHECK(crc_reference::crc16(ones) == 0x7FA1);
    CHECK(crc16(ones) == 0x7FA1);

    std::vector<std::uint8_t> digits{'1', '2', '3', '4', '5', '6', '7', '8', '9'};
    CHECK(crc16(digits) == 0x31C3);
}

TEST_CASE("both crcs agree with the long-division reference on random input") {
    std::mt19937_64 rng(0xC0FFEE);
    for (int i = 0; i < 10000; ++i) {
        std::size_t len = 1 + static_cast<std::size_t>(rng() % 64);
        std::vector<std::uint8_t> data(len);
        for (auto& b : data) b = static_cast<std::uint8_t>(rng());
        CAPTURE(i);
        REQUIRE(crc7(data) == crc_reference::crc7(data));
        REQUIRE(crc16(data) == crc_reference::crc16(data));
    }
    // Longer blocks for the 16-bit path, block-transfer sized.
    for (int i = 0; i < 200; ++i) {
        std::vector<std::uint8_t> data(512);
        for (auto& b : data) b = static_cast<std::uint8_t>(rng());
        REQUIRE(crc16(data) == crc_reference::crc16(data));
    }
}
