// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

// Minimal client for the standard network-block-device protocol
// (fixed-newstyle negotiation, simple replies). Implemented from the public
// wire format, independent of the server sources, to act as the interop
// check.
namespace nbd_client {

class Client {
public:
    Client(const std::string& host, std::uint16_t port, const std::string& export_name = "",
           bool use_go = true) {
        fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd_ < 0) throw std::runtime_error("client: socket failed");
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(port);
        if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
            throw std::runtime_error("client: bad host");
        if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
            throw std::runtime_error("client: connect failed");
        negotiate(export_name, use_go);
    }

    ~Client() {
        if (fd_ >= 0) {
            // best-effort orderly disconnect
            request(2 /*DISC*/, 0, 0, nullptr, nullptr);
            ::close(fd_);
        }
    }

    std::uint64_t export_size() const { return size_; }

    std::vector<std::uint8_t> read(std::uint64_t offset, std::uint32_t length) {
        std::vector<std::uint8_t> out(length);
        std::uint32_t err = request(0 /*READ*/, offset, length, nullptr, out.data());
        if (err != 0) throw std::runtime_error("read error " + std::to_string(err));
        return out;
    }

    std::uint32_t read_expect_error(std::uint64_t offset, std::uint32_t length) {
        return request(0, offset, length, nullptr, nullptr, /*expect_data=*/false);
    }

    void write(std::uint64_t offset, const std::vector<std::uint8_t>& data) {
        std::uint32_t err =
            request(1 /*WRITE*/, offset, static_cast<std::uint32_t>(data.size()), data.data(),
                    nullptr);
        if (err != 0) throw std::runtime_error("write error " + std::to_string(err));
    }

    void flush() {
        std::uint32_t err = request(3 /*FLUSH*/, 0, 0, nullptr, nullptr);
        if (err != 0) throw std::runtime_error("flush error " + std::to_string(err));
    }

    void disconnect() {
        request(2 /*DISC*/, 0, 0, nullptr, nullptr);
        ::close(fd_);
        fd_ = -1;
    }

private:
    void negotiate(const std::string& export_name, bool use_go) {
        std::uint64_t magic1 = get64();
        std::uint64_t magic2 = get64();
        if (magic1 != 0x4E42444D41474943ull) throw std::runtime_error("bad server magic");
        if (magic2 != 0x49484156454F5054ull) throw std::runtime_error("not newstyle negotiation");
        std::uint16_t flags = get16();
        if (!(flags & 1)) throw std::runtime_error("server is not fixed-newstyle");
        put32((flags & 2) ? 3 : 1); // echo fixed-newstyle (+no-zeroes when offered)
        no_zeroes_ = flags & 2;

        if (use_go) {
            // NBD_OPT_GO(7): name length + name + zero info requests
            std::vector<std::uint8_t> payload(4 + export_name.size() + 2, 0);
            payload[0] = static_cast<std::uint8_t>(export_name.size() >> 24);
            payload[1] = static_cast<std::uint8_t>(export_name.size() >> 16);
            payload[2] = static_cast<std::uint8_t>(export_name.size() >> 8);
            payload[3] = static_cast<std::uint8_t>(export_name.size());
            std::memcpy(payload.data() + 4, export_name.data(), export_name.size());
            put64(0x49484156454F5054ull);
            put32(7);
            put32(static_cast<std::uint32_t>(payload.size()));
            write_all(payload.data(), payload.size());

            bool acked = false;
            while (!acked) {
                std::uint64_t reply_magic = get64();
                if (reply_magic != 0x3E889045565A9ull)
                    throw std::runtime_error("bad option reply magic");
                std::uint32_t option = get32();
                std::uint32_t type = get32();
                std::uint32_t length = get32();
                std::vector<std::uint8_t> data(length);
                if (length) read_exact(data.data(), length);
                if (option != 7) throw std::runtime_error("reply for the wrong option");
                if (type == 1) { // ACK
                    acked = true;
                } else if (type == 3) { // INFO
                    if (length >= 12 && data[0] == 0 && data[1] == 0) {
                        size_ = 0;
                        for (int i = 0; i < 8; ++i) size_ = (size_ << 8) | data[2 + i];
                    }
                } else if (type & 0x80000000u) {
                    throw std::runtime_error("option error " + std::to_string(type & 0xFFFF));
                }
            }
        } else {
            // NBD_OPT_EXPORT_NAME(1): terse old path, no reply header
            put64(0x49484156454F5054ull);
            put32(1);
            put32(static_cast<std::uint32_t>(export_name.size()));
            if (!export_name.empty()) write_all(export_name.data(), export_name.size());
            size_ = get64();
            (void)get16(); // transmission flags
            if (!no_zeroes_) {
                std::uint8_t pad[124];
                read_exact(pad, sizeof(pad));
            }
        }
    }

    std::uint32_t request(std::uint16_t type, std::uint64_t offset, std::uint32_t length,
                          const std::uint8_t* out_data, std::uint8_t* in_data,
                          bool expect_data = true) {
        if (fd_ < 0) return 0;
        std::uint64_t cookie = ++next_cookie_;
        put32(0x25609513);
        put16(0);
        put16(type);
        put64(cookie);
        put64(offset);
        put32(length);
        if (type == 1 && out_data) write_all(out_data, length);
        if (type == 2) return 0; // disconnect has no reply

        std::uint32_t magic = get32();
        if (magic != 0x67446698) throw std::runtime_error("bad simple reply magic");
        std::uint32_t error = get32();
        std::uint64_t rcookie = get64();
        if (rcookie != cookie) throw std::runtime_error("cookie mismatch");
        if (type == 0 && error == 0 && expect_data && in_data) read_exact(in_data, length);
        return error;
    }

    void read_exact(void* buf, std::size_t len) {
        auto* p = static_cast<std::uint8_t*>(buf);
        while (len > 0) {
            ssize_t n = ::recv(fd_, p, len, 0);
            if (n <= 0) throw std::runtime_error("connection closed mid-read");
            p += n;
            len -= static_cast<std::size_t>(n);
        }
    }
    void write_all(const void* buf, std::size_t len) {
        auto* p = static_cast<const std::uint8_t*>(buf);
        while (len > 0) {
            ssize_t n = ::send(fd_, p, len, MSG_NOSIGNAL);
            if (n <= 0) throw std::runtime_error("connection closed mid-write");
            p += n;
            len -= static_cast<std::size_t>(n);
        }
    }
    std::uint16_t get16() {
        std::uint8_t b[2];
        read_exact(b, 2);
        return static_cast<std::uint16_t>((b[0] << 8) | b[1]);
    }
    std::uint32_t get32() {
        std::uint8_t b[4];
        read_exact(b, 4);
        return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
               (std::uint32_t(b[2]) << 8) | b[3];
    }
    std::uint64_t get64() {
        std::uint8_t b[8];
        read_exact(b, 8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v = (v << 8) | b[i];
        return v;
    }
    void put16(std::uint16_t v) {
        std::uint8_t b[2] = {std::uint8_t(v >> 8), std::uint8_t(v)};
        write_all(b, 2);
    }
    void put32(std::uint32_t v) {
        std::uint8_t b[4] = {std::uint8_t(v >> 24), std::uint8_t(v >> 16), std::uint8_t(v >> 8),
                             std::uint8_t(v)};
        write_all(b, 4);
    }
    void put64(std::uint64_t v) {
        std::uint8_t b[8];
        for (int i = 0; i < 8; ++i) b[i] = std::uint8_t(v >> (56 - 8 * i));
        write_all(b, 8);
    }

    int fd_ = -1;
    bool no_zeroes_ = false;
    std::uint64_t size_ = 0;
    std::uint64_t next_cookie_ = 0;
};

} // namespace nbd_client
