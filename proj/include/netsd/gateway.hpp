// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "netsd/arbiter.hpp"
#include "netsd/fatfs.hpp"
#include "netsd/host_session.hpp"

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>

namespace netsd {

struct GatewayConfig {
    std::string bind_host = "127.0.0.1";
    std::uint16_t nbd_port = 10809;  // 0: pick an ephemeral port
    std::uint16_t http_port = 8080;  // 0: pick an ephemeral port
    std::filesystem::path image_path = "sd.img";
    std::uint64_t capacity_bytes = 64ull << 20;
    BusConfig dut_bus;               // pullups / cable_cm / safe_layout / host_uhs
    BusConfig rag_bus;               // short on-board path
    PortId default_holder = kDutPort;
    double grant_hold_timeout_s = 30.0;
    double rest_grant_wait_s = 5.0;  // waiting for the card owner before 409
    std::uint64_t seed = 1;
    std::string export_name = "sd";
    std::filesystem::path log_path;  // "-" for stdout, empty for no text log

    GatewayConfig() {
        rag_bus.explicit_pullups = true; // on-board termination, clean path
        rag_bus.cable_length_cm = 2.0;
    }
};

// key = value file, '#' comments. Keys: image, capacity, nbd_port, http_port,
// bind, pullups, cable_cm, safe_layout, host_uhs, seed, default_holder,
// grant_hold_timeout_s, export_name, log.
GatewayConfig load_config_file(const std::filesystem::path& path);
void apply_config_line(GatewayConfig& cfg, const std::string& key, const std::string& value);
std::uint64_t parse_capacity(const std::string& text); // "64MiB", "8GB", bytes

class NbdServer;

// The remote-access process: owns the emulated device, serves its block face
// over the network block device protocol and its file face over HTTP, and
// drives the switch so the device under test keeps access whenever no remote
// request is in flight.
class Gateway {
public:
    explicit Gateway(GatewayConfig cfg);
    ~Gateway();

    Gateway(const Gateway&) = delete;
    Gateway& operator=(const Gateway&) = delete;

    void start();
    void stop();

    std::uint16_t http_port() const { return http_port_; }
    std::uint16_t nbd_port() const { return nbd_port_; }

    Arbiter& arbiter() { return bed_->arbiter; }
    Testbed& testbed() { return *bed_; }
    const GatewayConfig& config() const { return cfg_; }

    // Exclusive use of the card through the RAG port. Grants, re-initializes
    // (the repower demands it), and hands back to the default holder when the
    // lease goes out of scope. Throws GrantBusyError when another remote
    // holder keeps the card past the wait budget.
    class CardLease {
    public:
        explicit CardLease(Gateway& gw);
        ~CardLease();
        CardLease(const CardLease&) = delete;
        CardLease& operator=(const CardLease&) = delete;
        HostSession& session() { return *session_; }

    private:
        Gateway& gw_;
        std::unique_ptr<HostSession> session_;
    };

    class GrantBusyError : public std::runtime_error {
    public:
        GrantBusyError() : std::runtime_error("card is held by another remote session") {}
    };

    bool nbd_session_active() const { return nbd_active_.load(); }

private:
    friend class NbdServer;
    friend class CardLease;

    // Remote users of the card queue strictly first-come-first-served; a
    // waiter that exceeds its budget abandons its ticket.
    class OwnerQueue {
    public:
        bool acquire_for(double seconds);
        void release();

    private:
        void skip_abandoned();

        std::mutex mutex_;
        std::condition_variable cv_;
        std::uint64_t next_ticket_ = 0;
        std::uint64_t serving_ = 0;
        std::set<std::uint64_t> abandoned_;
    };

    void acquire_owner();
    void release_owner();

    GatewayConfig cfg_;
    std::unique_ptr<Testbed> bed_;
    std::unique_ptr<std::ofstream> log_file_;

    OwnerQueue owner_queue_;
    std::atomic<bool> nbd_active_{false};

    struct HttpState;
    std::unique_ptr<HttpState> http_;
    std::unique_ptr<NbdServer> nbd_;
    std::uint16_t http_port_ = 0;
    std::uint16_t nbd_port_ = 0;
    bool running_ = false;
};

// Block device view of a host session, for mounting the filesystem layer
// over granted card transfers.
class SessionBlockDevice final : public fat::BlockDevice {
public:
    explicit SessionBlockDevice(HostSession& session, std::uint32_t chunk_bytes = 64 * 1024)
        : session_(session), chunk_bytes_(chunk_bytes) {}

    std::uint64_t block_count() const override;
    void read(std::uint64_t lba, std::span<std::uint8_t> out) override;
    void write(std::uint64_t lba, std::span<const std::uint8_t> data) override;

private:
    HostSession& session_;
    std::uint32_t chunk_bytes_;
};

} // namespace netsd
