// SPDX-License-Identifier: Apache-2.0
#include "netsd/nbd_server.hpp"

#include "netsd/gateway.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cstring>
#include <mutex>
#include <thread>

namespace netsd {

namespace {

// Fixed-newstyle wire constants.
constexpr std::uint64_t kNbdMagic = 0x4E42444D41474943ull;   // "NBDMAGIC"
constexpr std::uint64_t kIHaveOpt = 0x49484156454F5054ull;   // "IHAVEOPT"
constexpr std::uint64_t kOptionReplyMagic = 0x3E889045565A9ull;
constexpr std::uint32_t kRequestMagic = 0x25609513;
constexpr std::uint32_t kSimpleReplyMagic = 0x67446698;

constexpr std::uint16_t kFlagFixedNewstyle = 1 << 0;
constexpr std::uint16_t kFlagNoZeroes = 1 << 1;
constexpr std::uint32_t kClientFixedNewstyle = 1 << 0;
constexpr std::uint32_t kClientNoZeroes = 1 << 1;

constexpr std::uint32_t kOptExportName = 1;
constexpr std::uint32_t kOptAbort = 2;
constexpr std::uint32_t kOptList = 3;
constexpr std::uint32_t kOptInfo = 6;
constexpr std::uint32_t kOptGo = 7;

constexpr std::uint32_t kRepAck = 1;
constexpr std::uint32_t kRepServer = 2;
constexpr std::uint32_t kRepInfo = 3;
constexpr std::uint32_t kRepErrUnsup = 0x80000001;
constexpr std::uint32_t kRepErrPolicy = 0x80000002;
constexpr std::uint32_t kRepErrInvalid = 0x80000003;
constexpr std::uint32_t kRepErrUnknown = 0x80000006;

constexpr std::uint16_t kInfoExport = 0;

constexpr std::uint16_t kTransmissionFlags = 1 /*HAS_FLAGS*/ | 4 /*SEND_FLUSH*/;

constexpr std::uint16_t kCmdRead = 0;
constexpr std::uint16_t kCmdWrite = 1;
constexpr std::uint16_t kCmdDisc = 2;
constexpr std::uint16_t kCmdFlush = 3;

constexpr std::uint32_t kErrIo = 5;      // EIO
constexpr std::uint32_t kErrInval = 22;  // EINVAL

constexpr std::uint32_t kMaxRequestBytes = 32u << 20;

struct Wire {
    int fd;

    bool read_exact(void* buf, std::size_t len) const {
        auto* p = static_cast<std::uint8_t*>(buf);
        while (len > 0) {
            ssize_t n = ::recv(fd, p, len, 0);
            if (n <= 0) return false;
            p += n;
            len -= static_cast<std::size_t>(n);
        }
        return true;
    }
    bool write_all(const void* buf, std::size_t len) const {
        auto* p = static_cast<const std::uint8_t*>(buf);
        while (len > 0) {
            ssize_t n = ::send(fd, p, len, MSG_NOSIGNAL);
            if (n <= 0) return false;
            p += n;
            len -= static_cast<std::size_t>(n);
        }
        return true;
    }

    bool skip(std::size_t len) const {
        std::uint8_t sink[1024];
        while (len > 0) {
            std::size_t take = std::min(len, sizeof(sink));
            if (!read_exact(sink, take)) return false;
            len -= take;
        }
        return true;
    }

    bool put16(std::uint16_t v) const {
        std::uint16_t be = htons(v);
        return write_all(&be, 2);
    }
    bool put32(std::uint32_t v) const {
        std::uint32_t be = htonl(v);
        return write_all(&be, 4);
    }
    bool put64(std::uint64_t v) const {
        std::uint8_t b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(v >> (56 - 8 * i));
        return write_all(b, 8);
    }
    bool get16(std::uint16_t* v) const {
        std::uint16_t be;
        if (!read_exact(&be, 2)) return false;
        *v = ntohs(be);
        return true;
    }
    bool get32(std::uint32_t* v) const {
        std::uint32_t be;
        if (!read_exact(&be, 4)) return false;
        *v = ntohl(be);
        return true;
    }
    bool get64(std::uint64_t* v) const {
        std::uint8_t b[8];
        if (!read_exact(b, 8)) return false;
        std::uint64_t out = 0;
        for (int i = 0; i < 8; ++i) out = (out << 8) | b[i];
        *v = out;
        return true;
    }

    bool option_reply(std::uint32_t option, std::uint32_t type,
                      std::span<const std::uint8_t> data = {}) const {
        return put64(kOptionReplyMagic) && put32(option) && put32(type) &&
               put32(static_cast<std::uint32_t>(data.size())) &&
               (data.empty() || write_all(data.data(), data.size()));
    }

    bool simple_reply(std::uint32_t error, std::uint64_t cookie,
                      std::span<const std::uint8_t> data = {}) const {
        return put32(kSimpleReplyMagic) && put32(error) && put64(cookie) &&
               (data.empty() || write_all(data.data(), data.size()));
    }
};

} // namespace

NbdServer::NbdServer(Gateway& gateway, std::string bind_host, std::uint16_t port,
                     std::string export_name)
    : gateway_(gateway), bind_host_(std::move(bind_host)), port_(port),
      export_name_(std::move(export_name)) {}

NbdServer::~NbdServer() { stop(); }

void NbdServer::start() {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (listen_fd_ < 0) throw std::runtime_error("nbd: cannot create socket");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port_);
    if (::inet_pton(AF_INET, bind_host_.c_str(), &addr.sin_addr) != 1)
        throw std::runtime_error("nbd: bad bind address " + bind_host_);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
        throw std::runtime_error("nbd: cannot bind port " + std::to_string(port_));
    if (::listen(listen_fd_, 4) != 0) throw std::runtime_error("nbd: listen failed");

    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);

    accept_thread_ = std::thread([this] { accept_loop(); });
}

void NbdServer::stop() {
    if (stopping_.exchange(true)) return;
    if (listen_fd_ >= 0) {
        ::shutdown(listen_fd_, SHUT_RDWR);
        ::close(listen_fd_);
        listen_fd_ = -1;
    }
    if (accept_thread_.joinable()) accept_thread_.join();
    {
        // Kick idle connections out of recv so their threads can finish.
        std::lock_guard lock(live_mutex_);
        for (int fd : live_fds_) ::shutdown(fd, SHUT_RDWR);
    }
    for (auto& t : connections_)
        if (t.joinable()) t.join();
    connections_.clear();
}

void NbdServer::accept_loop() {
    while (!stopping_) {
        int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) break;
        int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
        {
            std::lock_guard lock(live_mutex_);
            live_fds_.insert(fd);
        }
        connections_.emplace_back([this, fd] {
            serve_connection(fd);
            {
                std::lock_guard lock(live_mutex_);
                live_fds_.erase(fd);
            }
            ::close(fd);
        });
    }
}

// Claims the single transmission slot, waiting briefly so an immediate
// reconnect is not bounced by the previous session's teardown.
static bool claim_session(std::atomic<bool>& active, const std::atomic<bool>& stopping) {
    auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(2);
    for (;;) {
        bool expected = false;
        if (active.compare_exchange_strong(expected, true)) return true;
        if (stopping || std::chrono::steady_clock::now() >= deadline) return false;
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
}

void NbdServer::serve_connection(int fd) {
    Wire wire{fd};
    std::uint64_t size = gateway_.arbiter().card_capacity_bytes();

    if (!wire.put64(kNbdMagic) || !wire.put64(kIHaveOpt) ||
        !wire.put16(kFlagFixedNewstyle | kFlagNoZeroes))
        return;

    std::uint32_t client_flags = 0;
    if (!wire.get32(&client_flags)) return;
    if (!(client_flags & kClientFixedNewstyle)) return; // oldstyle negotiation unsupported
    bool no_zeroes = client_flags & kClientNoZeroes;

    bool transmission = false;
    bool claimed = false;
    while (!transmission) {
        std::uint64_t magic = 0;
        std::uint32_t option = 0, length = 0;
        if (!wire.get64(&magic) || magic != kIHaveOpt) return;
        if (!wire.get32(&option) || !wire.get32(&length)) return;
        if (length > (1u << 20)) return; // option payloads are tiny

        std::vector<std::uint8_t> payload(length);
        if (length && !wire.read_exact(payload.data(), length)) return;

        switch (option) {
        case kOptExportName: {
            std::string name(payload.begin(), payload.end());
            if (!name.empty() && name != export_name_) return; // no error path here
            if (!claim_session(gateway_.nbd_active_, stopping_)) return; // single-writer policy
            claimed = true;
            if (!wire.put64(size) || !wire.put16(kTransmissionFlags)) {
                gateway_.nbd_active_ = false;
                return;
            }
            if (!no_zeroes) {
                std::uint8_t zeros[124] = {};
                if (!wire.write_all(zeros, sizeof(zeros))) return;
            }
            transmission = true;
            break;
        }
        case kOptGo:
        case kOptInfo: {
            if (payload.size() < 6) {
                if (!wire.option_reply(option, kRepErrInvalid)) return;
                break;
            }
            std::uint32_t name_len = (std::uint32_t(payload[0]) << 24) |
                                     (std::uint32_t(payload[1]) << 16) |
                                     (std::uint32_t(payload[2]) << 8) | payload[3];
            if (payload.size() < 6 + name_len) {
                if (!wire.option_reply(option, kRepErrInvalid)) return;
                break;
            }
            std::string name(payload.begin() + 4, payload.begin() + 4 + name_len);
            if (!name.empty() && name != export_name_) {
                if (!wire.option_reply(option, kRepErrUnknown)) return;
                break;
            }
            if (option == kOptGo) {
                if (!claim_session(gateway_.nbd_active_, stopping_)) {
                    // A second block-level client is refused while one is mounted.
                    if (!wire.option_reply(option, kRepErrPolicy)) return;
                    break;
                }
                claimed = true;
            }
            std::uint8_t info[12];
            info[0] = 0;
            info[1] = kInfoExport;
            for (int i = 0; i < 8; ++i) info[2 + i] = static_cast<std::uint8_t>(size >> (56 - 8 * i));
            info[10] = static_cast<std::uint8_t>(kTransmissionFlags >> 8);
            info[11] = static_cast<std::uint8_t>(kTransmissionFlags);
            if (!wire.option_reply(option, kRepInfo, info) ||
                !wire.option_reply(option, kRepAck)) {
                if (claimed) gateway_.nbd_active_ = false;
                return;
            }
            if (option == kOptGo) transmission = true;
            break;
        }
        case kOptList: {
            std::vector<std::uint8_t> entry(4 + export_name_.size());
            entry[0] = entry[1] = entry[2] = 0;
            entry[3] = static_cast<std::uint8_t>(export_name_.size());
            std::memcpy(entry.data() + 4, export_name_.data(), export_name_.size());
            if (!wire.option_reply(option, kRepServer, entry)) return;
            if (!wire.option_reply(option, kRepAck)) return;
            break;
        }
        case kOptAbort: {
            wire.option_reply(option, kRepAck);
            return;
        }
        default:
            if (!wire.option_reply(option, kRepErrUnsup)) return;
            break;
        }
    }

    // Transmission phase: hold the grant for the whole session so the mounted
    // device never observes a repower between commands.
    std::unique_ptr<Gateway::CardLease> lease;
    try {
        lease = std::make_unique<Gateway::CardLease>(gateway_);
    } catch (const std::exception&) {
        gateway_.nbd_active_ = false;
        return; // could not take the card; drop the connection
    }

    constexpr std::uint32_t kChunk = 64 * 1024;
    while (true) {
        std::uint32_t magic = 0;
        std::uint16_t flags = 0, type = 0;
        std::uint64_t cookie = 0, offset = 0;
        std::uint32_t length = 0;
        if (!wire.get32(&magic) || magic != kRequestMagic) break;
        if (!wire.get16(&flags) || !wire.get16(&type) || !wire.get64(&cookie) ||
            !wire.get64(&offset) || !wire.get32(&length))
            break;

        if (type == kCmdDisc) break;

        if (type == kCmdWrite) {
            if (length == 0 || length > kMaxRequestBytes || offset + length > size) {
                if (!wire.skip(length)) break;
                if (!wire.simple_reply(kErrInval, cookie)) break;
                continue;
            }
            std::vector<std::uint8_t> data(length);
            if (!wire.read_exact(data.data(), length)) break;

            try {
                HostSession& s = lease->session();
                std::uint64_t first = offset / kBlockSize;
                std::uint64_t last = (offset + length - 1) / kBlockSize;
                std::uint32_t blocks = static_cast<std::uint32_t>(last - first + 1);
                std::uint64_t aligned_off = first * kBlockSize;

                if (offset % kBlockSize == 0 && length % kBlockSize == 0) {
                    s.write(first, data, kChunk);
                } else {
                    // Read-modify-write around the unaligned edges.
                    std::vector<std::uint8_t> span_buf = s.read(first, blocks, kChunk);
                    std::memcpy(span_buf.data() + (offset - aligned_off), data.data(), length);
                    s.write(first, span_buf, kChunk);
                }
                if (!wire.simple_reply(0, cookie)) break;
            } catch (const std::exception&) {
                if (!wire.simple_reply(kErrIo, cookie)) break;
            }
            continue;
        }

        if (type == kCmdRead) {
            if (length == 0 || length > kMaxRequestBytes || offset + length > size) {
                if (!wire.simple_reply(kErrInval, cookie)) break;
                continue;
            }
            try {
                HostSession& s = lease->session();
                std::uint64_t first = offset / kBlockSize;
                std::uint64_t last = (offset + length - 1) / kBlockSize;
                std::uint32_t blocks = static_cast<std::uint32_t>(last - first + 1);
                std::vector<std::uint8_t> span_buf = s.read(first, blocks, kChunk);
                std::span<const std::uint8_t> view{span_buf.data() + offset % kBlockSize, length};
                if (!wire.simple_reply(0, cookie, view)) break;
            } catch (const std::exception&) {
                if (!wire.simple_reply(kErrIo, cookie)) break;
            }
            continue;
        }

        if (type == kCmdFlush) {
            try {
                gateway_.arbiter().flush_backing();
                if (!wire.simple_reply(0, cookie)) break;
            } catch (const std::exception&) {
                if (!wire.simple_reply(kErrIo, cookie)) break;
            }
            continue;
        }

        if (!wire.skip(type == kCmdWrite ? length : 0)) break;
        if (!wire.simple_reply(kErrInval, cookie)) break;
    }

    gateway_.nbd_active_ = false;
    // lease destructor hands the card back to the default holder
}

} // namespace netsd
