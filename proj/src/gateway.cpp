// SPDX-License-Identifier: Apache-2.0
#include "netsd/gateway.hpp"

#include "netsd/nbd_server.hpp"

#include <httplib.h>
#include <json.hpp>

#include <fstream>
#include <functional>
#include <iostream>

namespace netsd {

using nlohmann::json;

std::uint64_t parse_capacity(const std::string& text) {
    if (text.empty()) throw std::invalid_argument("empty capacity");
    std::size_t pos = 0;
    double value = std::stod(text, &pos);
    std::string unit = text.substr(pos);
    for (auto& c : unit) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    double mult = 1;
    if (unit == "" || unit == "b") mult = 1;
    else if (unit == "k" || unit == "kb") mult = 1e3;
    else if (unit == "kib") mult = 1024;
    else if (unit == "m" || unit == "mb") mult = 1e6;
    else if (unit == "mib") mult = 1ull << 20;
    else if (unit == "g" || unit == "gb") mult = 1e9;
    else if (unit == "gib") mult = 1ull << 30;
    else throw std::invalid_argument("unknown capacity unit: " + unit);
    double bytes = value * mult;
    if (bytes <= 0 || bytes > double(8ull << 30))
        throw std::invalid_argument("capacity out of range: " + text);
    std::uint64_t rounded = static_cast<std::uint64_t>(bytes);
    return rounded - rounded % kBlockSize;
}

namespace {

bool parse_bool(const std::string& v) {
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw std::invalid_argument("expected a boolean, got: " + v);
}

} // namespace

void apply_config_line(GatewayConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "image") cfg.image_path = value;
    else if (key == "capacity") cfg.capacity_bytes = parse_capacity(value);
    else if (key == "nbd_port") cfg.nbd_port = static_cast<std::uint16_t>(std::stoi(value));
    else if (key == "http_port") cfg.http_port = static_cast<std::uint16_t>(std::stoi(value));
    else if (key == "bind") cfg.bind_host = value;
    else if (key == "pullups") cfg.dut_bus.explicit_pullups = parse_bool(value);
    else if (key == "cable_cm") cfg.dut_bus.cable_length_cm = std::stod(value);
    else if (key == "safe_layout") cfg.dut_bus.crosstalk_safe_layout = parse_bool(value);
    else if (key == "host_uhs") cfg.dut_bus.host_supports_uhs = parse_bool(value);
    else if (key == "seed") cfg.seed = std::stoull(value);
    else if (key == "default_holder") cfg.default_holder = port_from_name(value, 64);
    else if (key == "grant_hold_timeout_s") cfg.grant_hold_timeout_s = std::stod(value);
    else if (key == "export_name") cfg.export_name = value;
    else if (key == "log") cfg.log_path = value;
    else throw std::invalid_argument("unknown config key: " + key);
}

GatewayConfig load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path.string());
    GatewayConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            if (line.find_first_not_of(" \t\r") != std::string::npos)
                throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                                         ": expected key = value");
            continue;
        }
        auto trim = [](std::string s) {
            auto b = s.find_first_not_of(" \t\r");
            auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        apply_config_line(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

// --- block device over a granted session -----------------------------------

std::uint64_t SessionBlockDevice::block_count() const {
    return session_.capacity_bytes() / kBlockSize;
}

void SessionBlockDevice::read(std::uint64_t lba, std::span<std::uint8_t> out) {
    auto data = session_.read(lba, static_cast<std::uint32_t>(out.size() / kBlockSize),
                              chunk_bytes_);
    std::copy(data.begin(), data.end(), out.begin());
}

void SessionBlockDevice::write(std::uint64_t lba, std::span<const std::uint8_t> data) {
    session_.write(lba, data, chunk_bytes_);
}

// --- lease -------------------------------------------------------------------

bool Gateway::OwnerQueue::acquire_for(double seconds) {
    std::unique_lock lock(mutex_);
    std::uint64_t ticket = next_ticket_++;
    auto turn = [&] { return serving_ == ticket; };
    if (!cv_.wait_for(lock, std::chrono::duration<double>(seconds), turn)) {
        abandoned_.insert(ticket);
        skip_abandoned();
        cv_.notify_all();
        return false;
    }
    return true;
}

void Gateway::OwnerQueue::release() {
    std::lock_guard lock(mutex_);
    ++serving_;
    skip_abandoned();
    cv_.notify_all();
}

void Gateway::OwnerQueue::skip_abandoned() {
    while (abandoned_.erase(serving_)) ++serving_;
}

void Gateway::acquire_owner() {
    if (!owner_queue_.acquire_for(cfg_.rest_grant_wait_s)) throw GrantBusyError();
}

void Gateway::release_owner() { owner_queue_.release(); }

Gateway::CardLease::CardLease(Gateway& gw) : gw_(gw) {
    gw_.acquire_owner();
    try {
        gw_.arbiter().grant(kRagPort);
        HostSession::Options opts;
        opts.retry_limit = 8;
        session_ = std::make_unique<HostSession>(gw_.arbiter(), kRagPort, gw_.cfg_.rag_bus,
                                                 DeviceCaps{}, opts);
        session_->init(); // repower on grant means a fresh handshake every time
    } catch (...) {
        gw_.arbiter().release();
        gw_.release_owner();
        throw;
    }
}

Gateway::CardLease::~CardLease() {
    gw_.arbiter().release(); // back to the default holder
    gw_.release_owner();
}

// --- gateway ----------------------------------------------------------------

struct Gateway::HttpState {
    httplib::Server server;
    std::thread thread;
};

Gateway::Gateway(GatewayConfig cfg) : cfg_(std::move(cfg)) {
    SdSwitch::Config sw_cfg;
    sw_cfg.num_ports = 2;
    sw_cfg.default_holder = cfg_.default_holder;
    sw_cfg.max_hold_us = cfg_.grant_hold_timeout_s * 1e6;
    bed_ = std::make_unique<Testbed>(cfg_.image_path, cfg_.capacity_bytes, sw_cfg, cfg_.seed);

    if (cfg_.log_path == "-") {
        bed_->log.set_sink(&std::cout);
    } else if (!cfg_.log_path.empty()) {
        log_file_ = std::make_unique<std::ofstream>(cfg_.log_path, std::ios::app);
        bed_->log.set_sink(log_file_.get());
    }

    // The device under test holds the card whenever nobody else does.
    bed_->arbiter.release();
}

Gateway::~Gateway() { stop(); }

namespace {

int http_status_of(const fat::FsError& e) {
    switch (e.code()) {
    case fat::FsErrc::NotFound: return 404;
    case fat::FsErrc::NameInvalid: return 422;
    case fat::FsErrc::NoSpace: return 413;
    case fat::FsErrc::NotADirectory:
    case fat::FsErrc::IsADirectory: return 422;
    case fat::FsErrc::InvalidArgument: return 400;
    case fat::FsErrc::InvalidVolume:
    case fat::FsErrc::IoError: return 500;
    }
    return 500;
}

void reply_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(2) + "\n", "application/json");
}

void reply_error(httplib::Response& res, int status, const std::string& message) {
    reply_json(res, status, json{{"error", message}});
}

// Grant, mount, run, hand back: the request loop every file operation takes.
void with_volume(Gateway& gw, httplib::Response& res,
                 const std::function<void(fat::FatVolume&)>& fn) {
    try {
        Gateway::CardLease lease(gw);
        SessionBlockDevice dev(lease.session());
        fat::FatVolume vol = fat::FatVolume::mount(dev);
        fn(vol);
    } catch (const Gateway::GrantBusyError& e) {
        reply_error(res, 409, e.what());
    } catch (const fat::FsError& e) {
        reply_error(res, http_status_of(e), e.what());
    } catch (const std::exception& e) {
        reply_error(res, 500, e.what());
    }
}

json fault_to_json(const FaultSpec& spec) {
    json j;
    j["id"] = spec.id;
    j["status"] = std::string(fault_status_name(spec.status));
    j["kind"] = std::string(fault_kind_name(spec.kind));
    if (const auto* ld = std::get_if<LineDisconnectFault>(&spec.kind)) {
        j["port"] = port_name(ld->port);
        j["line"] = std::string(line_name(ld->line));
        j["duration_us"] = ld->duration_us;
    } else if (const auto* co = std::get_if<CorruptFault>(&spec.kind)) {
        j["direction"] = std::string(direction_name(co->direction));
        j["bit_flip_rate"] = co->bit_flip_rate;
        j["window_us"] = co->window_us;
    } else if (const auto* de = std::get_if<DelayFault>(&spec.kind)) {
        j["added_us"] = de->added_us;
        j["window_us"] = de->window_us;
    } else if (const auto* om = std::get_if<OmitFault>(&spec.kind)) {
        if (om->command_index) j["command"] = *om->command_index;
        if (om->direction) j["direction"] = std::string(direction_name(*om->direction));
        j["count"] = om->count;
    } else if (const auto* re = std::get_if<ReplayFault>(&spec.kind)) {
        j["capture_window_us"] = re->capture_window_us;
        j["inject_at_us"] = re->inject_at_us;
    }
    switch (spec.trigger.type) {
    case Trigger::Type::Immediate: j["trigger"] = {{"type", "immediate"}}; break;
    case Trigger::Type::AtTransactionCount:
        j["trigger"] = {{"type", "at_transaction_count"}, {"value", spec.trigger.transaction_count}};
        break;
    case Trigger::Type::AtSimTime:
        j["trigger"] = {{"type", "at_sim_time_us"}, {"value", spec.trigger.sim_time_us}};
        break;
    }
    return j;
}

Direction direction_from_json(const json& j) {
    std::string d = j.get<std::string>();
    if (d == "read") return Direction::Read;
    if (d == "write") return Direction::Write;
    throw std::invalid_argument("direction must be read or write");
}

std::pair<FaultKind, Trigger> fault_from_json(const json& j, int num_ports) {
    std::string kind = j.at("kind").get<std::string>();
    FaultKind fk;
    if (kind == "line_disconnect") {
        LineDisconnectFault f;
        f.port = port_from_name(j.at("port").get<std::string>(), num_ports);
        f.line = line_from_name(j.at("line").get<std::string>());
        f.duration_us = j.at("duration_us").get<double>();
        fk = f;
    } else if (kind == "corrupt") {
        CorruptFault f;
        f.direction = direction_from_json(j.at("direction"));
        f.bit_flip_rate = j.at("bit_flip_rate").get<double>();
        f.window_us = j.at("window_us").get<double>();
        fk = f;
    } else if (kind == "delay") {
        DelayFault f;
        f.added_us = j.at("added_us").get<double>();
        f.window_us = j.at("window_us").get<double>();
        fk = f;
    } else if (kind == "omit") {
        OmitFault f;
        if (j.contains("command")) f.command_index = j.at("command").get<std::uint8_t>();
        if (j.contains("direction")) f.direction = direction_from_json(j.at("direction"));
        if (j.contains("count")) f.count = j.at("count").get<std::uint32_t>();
        fk = f;
    } else if (kind == "replay") {
        ReplayFault f;
        f.capture_window_us = j.at("capture_window_us").get<double>();
        f.inject_at_us = j.at("inject_at_us").get<double>();
        fk = f;
    } else {
        throw std::invalid_argument("unknown fault kind: " + kind);
    }

    Trigger trig = Trigger::immediate();
    if (j.contains("trigger")) {
        const json& t = j.at("trigger");
        std::string type = t.at("type").get<std::string>();
        if (type == "immediate") trig = Trigger::immediate();
        else if (type == "at_transaction_count")
            trig = Trigger::at_transaction(t.at("value").get<std::uint64_t>());
        else if (type == "at_sim_time_us")
            trig = Trigger::at_sim_time(t.at("value").get<double>());
        else throw std::invalid_argument("unknown trigger type: " + type);
    }
    return {fk, trig};
}

} // namespace

void Gateway::start() {
    if (running_) return;

    http_ = std::make_unique<HttpState>();
    auto& svr = http_->server;
    svr.set_payload_max_length(256ull << 20);

    svr.Get("/api/v1/status", [this](const httplib::Request&, httplib::Response& res) {
        auto grant = arbiter().current_grant();
        json j;
        j["holder"] = grant.holder ? port_name(*grant.holder) : "none";
        j["default_holder"] = port_name(arbiter().default_holder());
        j["sim_time_us"] = arbiter().now_us();
        j["transactions"] = arbiter().transactions_executed();
        j["capacity_bytes"] = arbiter().card_capacity_bytes();
        j["nbd_active"] = nbd_session_active();
        j["image"] = cfg_.image_path.string();
        std::size_t pending = 0;
        for (const auto& f : arbiter().list_faults())
            if (f.status == FaultStatus::Armed || f.status == FaultStatus::Active) ++pending;
        j["faults_pending"] = pending;
        reply_json(res, 200, j);
    });

    svr.Post("/api/v1/switch", [this](const httplib::Request& req, httplib::Response& res) {
        try {
            json body = json::parse(req.body);
            PortId port = port_from_name(body.at("port").get<std::string>(),
                                         arbiter().num_ports());
            // Changes the resting default and applies it; per-request grants
            // still wrap every file and block operation.
            arbiter().set_default_holder(port);
            arbiter().release();
            reply_json(res, 200, json{{"holder", port_name(port)}});
        } catch (const std::exception& e) {
            reply_error(res, 400, e.what());
        }
    });

    svr.Post("/api/v1/power/cycle", [this](const httplib::Request&, httplib::Response& res) {
        try {
            acquire_owner();
            arbiter().power_cycle_holder();
            release_owner();
            reply_json(res, 200, json{{"power_cycled", true}});
        } catch (const GrantBusyError& e) {
            reply_error(res, 409, e.what());
        }
    });

    // File-level interface. Every request runs the grant loop: take the card,
    // do the work, hand it back.
    svr.Get("/api/v1/files", [this](const httplib::Request& req, httplib::Response& res) {
        std::string path = req.has_param("path") ? req.get_param_value("path") : "/";
        with_volume(*this, res, [&](fat::FatVolume& vol) {
            json entries = json::array();
            for (const auto& e : vol.list_dir(path))
                entries.push_back(json{{"name", e.name},
                                       {"size", e.size_bytes},
                                       {"dir", e.is_directory}});
            reply_json(res, 200, json{{"path", path}, {"entries", entries}});
        });
    });

    svr.Get(R"(/api/v1/files/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
        with_volume(*this, res, [&](fat::FatVolume& vol) {
            auto data = vol.read_file(req.matches[1].str());
            res.status = 200;
            res.set_content(std::string(data.begin(), data.end()), "application/octet-stream");
        });
    });

    svr.Put(R"(/api/v1/files/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
        with_volume(*this, res, [&](fat::FatVolume& vol) {
            std::string path = req.matches[1].str();
            bool existed = vol.stat(path).has_value();
            auto entry = vol.write_file(
                path, {reinterpret_cast<const std::uint8_t*>(req.body.data()), req.body.size()});
            reply_json(res, existed ? 200 : 201,
                       json{{"name", entry.name}, {"size", entry.size_bytes}});
        });
    });

    svr.Delete(R"(/api/v1/files/(.+))",
               [this](const httplib::Request& req, httplib::Response& res) {
                   with_volume(*this, res, [&](fat::FatVolume& vol) {
                       vol.delete_file(req.matches[1].str());
                       res.status = 204;
                   });
               });

    // Raw block window, for tooling and scripted tests.
    svr.Get(R"(/api/v1/blocks/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
        try {
            std::uint64_t lba = std::stoull(req.matches[1].str());
            std::uint32_t count = 1;
            if (req.has_param("count"))
                count = static_cast<std::uint32_t>(std::stoul(req.get_param_value("count")));
            if (count == 0 || count > 2048) {
                reply_error(res, 400, "count must be between 1 and 2048");
                return;
            }
            CardLease lease(*this);
            auto data = lease.session().read(lba, count, 64 * 1024);
            res.status = 200;
            res.set_content(std::string(data.begin(), data.end()), "application/octet-stream");
        } catch (const GrantBusyError& e) {
            reply_error(res, 409, e.what());
        } catch (const AddressError& e) {
            reply_error(res, 404, e.what());
        } catch (const std::exception& e) {
            reply_error(res, 500, e.what());
        }
    });

    svr.Put(R"(/api/v1/blocks/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
        try {
            std::uint64_t lba = std::stoull(req.matches[1].str());
            if (req.body.empty() || req.body.size() % kBlockSize != 0) {
                reply_error(res, 400, "body must be a positive multiple of 512 bytes");
                return;
            }
            CardLease lease(*this);
            lease.session().write(
                lba, {reinterpret_cast<const std::uint8_t*>(req.body.data()), req.body.size()},
                64 * 1024);
            reply_json(res, 200, json{{"written", req.body.size()}});
        } catch (const GrantBusyError& e) {
            reply_error(res, 409, e.what());
        } catch (const AddressError& e) {
            reply_error(res, 404, e.what());
        } catch (const std::exception& e) {
            reply_error(res, 500, e.what());
        }
    });

    // Fault scheduling.
    svr.Post("/api/v1/faults", [this](const httplib::Request& req, httplib::Response& res) {
        try {
            json body = json::parse(req.body);
            auto [kind, trigger] = fault_from_json(body, arbiter().num_ports());
            std::uint64_t id = arbiter().schedule_fault(std::move(kind), trigger);
            reply_json(res, 201, json{{"id", id}});
        } catch (const InvalidSpecError& e) {
            reply_error(res, 422, e.what());
        } catch (const std::exception& e) {
            reply_error(res, 400, e.what());
        }
    });

    svr.Get("/api/v1/faults", [this](const httplib::Request&, httplib::Response& res) {
        json list = json::array();
        for (const auto& f : arbiter().list_faults()) list.push_back(fault_to_json(f));
        reply_json(res, 200, json{{"faults", list}});
    });

    svr.Delete(R"(/api/v1/faults/(\d+))",
               [this](const httplib::Request& req, httplib::Response& res) {
                   try {
                       std::uint64_t id = std::stoull(req.matches[1].str());
                       FaultStatus status = arbiter().cancel_fault(id);
                       reply_json(res, 200,
                                  json{{"id", id}, {"status", std::string(fault_status_name(status))}});
                   } catch (const UnknownFaultError& e) {
                       reply_error(res, 404, e.what());
                   } catch (const std::exception& e) {
                       reply_error(res, 400, e.what());
                   }
               });

    if (cfg_.http_port == 0) {
        int port = svr.bind_to_any_port(cfg_.bind_host);
        if (port <= 0) throw std::runtime_error("cannot bind HTTP listener");
        http_port_ = static_cast<std::uint16_t>(port);
    } else {
        if (!svr.bind_to_port(cfg_.bind_host, cfg_.http_port))
            throw std::runtime_error("cannot bind HTTP port " + std::to_string(cfg_.http_port));
        http_port_ = cfg_.http_port;
    }
    http_->thread = std::thread([this] { http_->server.listen_after_bind(); });
    http_->server.wait_until_ready();

    nbd_ = std::make_unique<NbdServer>(*this, cfg_.bind_host, cfg_.nbd_port, cfg_.export_name);
    nbd_->start();
    nbd_port_ = nbd_->port();
    running_ = true;
}

void Gateway::stop() {
    if (!running_) return;
    running_ = false;
    if (nbd_) nbd_->stop();
    if (http_) {
        http_->server.stop();
        if (http_->thread.joinable()) http_->thread.join();
    }
}

} // namespace netsd
