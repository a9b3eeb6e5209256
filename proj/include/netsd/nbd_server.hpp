// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstdint>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace netsd {

class Gateway;

// Fixed-newstyle server for the network block device protocol. One
// transmission-phase client at a time; the session holds the card grant for
// its whole lifetime, so a mounted device never sees the card repowered
// between its requests.
class NbdServer {
public:
    NbdServer(Gateway& gateway, std::string bind_host, std::uint16_t port,
              std::string export_name);
    ~NbdServer();

    void start(); // binds and spawns the accept loop
    void stop();

    std::uint16_t port() const { return port_; }

private:
    void accept_loop();
    void serve_connection(int fd);

    Gateway& gateway_;
    std::string bind_host_;
    std::uint16_t port_;
    std::string export_name_;

    int listen_fd_ = -1;
    std::thread accept_thread_;
    std::vector<std::thread> connections_;
    std::mutex live_mutex_;
    std::set<int> live_fds_;
    std::atomic<bool> stopping_{false};
};

} // namespace netsd
