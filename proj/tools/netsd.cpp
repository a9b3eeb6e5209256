// SPDX-License-Identifier: Apache-2.0
//
// netsd - emulated SD card testbed with remote access.
//
//   serve   run the gateway (NBD + REST) in front of an image
//   format  write a fresh FAT filesystem onto an image
//   bench   run the throughput matrix or refit the signal-path constants
//   dut     scripted host-side block operations against a local stack
//   fault   schedule/list/cancel faults on a running gateway

#include "netsd/bench.hpp"
#include "netsd/gateway.hpp"

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include <csignal>
#include <fstream>
#include <iostream>

using namespace netsd;
using nlohmann::json;

namespace {

std::atomic<bool> g_stop{false};

void handle_signal(int) { g_stop = true; }

struct CommonImageArgs {
    std::string image = "sd.img";
    std::string capacity = "64MiB";
};

// Local stack for offline subcommands: card granted to the DUT port.
struct LocalStack {
    Testbed bed;
    HostSession host;

    LocalStack(const std::string& image, std::uint64_t capacity, const BusConfig& bus,
               std::uint64_t seed, int retry_limit)
        : bed(image, capacity, {}, seed),
          host(bed.arbiter, kDutPort, bus, DeviceCaps{},
               HostSession::Options{retry_limit, true, true, 1000}) {
        bed.arbiter.release();
        host.init();
    }
};

int run_serve(const std::string& config_file, GatewayConfig cli_cfg,
              const std::vector<std::string>& set_keys) {
    GatewayConfig cfg;
    if (!config_file.empty()) cfg = load_config_file(config_file);
    // Flags win over the file.
    for (const auto& kv : set_keys) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw std::runtime_error("--set expects key=value");
        apply_config_line(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!cli_cfg.image_path.empty() && cli_cfg.image_path != "sd.img")
        cfg.image_path = cli_cfg.image_path;
    if (cli_cfg.capacity_bytes) cfg.capacity_bytes = cli_cfg.capacity_bytes;
    if (cli_cfg.nbd_port) cfg.nbd_port = cli_cfg.nbd_port;
    if (cli_cfg.http_port) cfg.http_port = cli_cfg.http_port;
    if (!cli_cfg.bind_host.empty()) cfg.bind_host = cli_cfg.bind_host;
    if (!cli_cfg.log_path.empty()) cfg.log_path = cli_cfg.log_path;

    Gateway gw(cfg);
    gw.start();
    std::cout << "serving image " << gw.config().image_path.string() << " ("
              << gw.config().capacity_bytes << " bytes)\n"
              << "  nbd:  " << gw.config().bind_host << ":" << gw.nbd_port() << " (export '"
              << gw.config().export_name << "')\n"
              << "  http: " << gw.config().bind_host << ":" << gw.http_port() << "/api/v1\n"
              << std::flush;

    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    std::cout << "shutting down\n";
    gw.stop();
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"emulated SD card testbed: multiplexed card with remote block/file access"};
    app.require_subcommand(1);

    // serve
    auto* serve = app.add_subcommand("serve", "run the remote access gateway");
    std::string config_file;
    GatewayConfig serve_cfg;
    serve_cfg.capacity_bytes = 0;
    serve_cfg.bind_host.clear();
    std::string serve_capacity;
    std::string serve_image = "sd.img";
    std::string serve_log;
    std::vector<std::string> set_keys;
    serve->add_option("--config", config_file, "key = value configuration file");
    serve->add_option("--image", serve_image, "backing image path");
    serve->add_option("--capacity", serve_capacity, "card capacity, e.g. 64MiB");
    serve->add_option("--nbd-port", serve_cfg.nbd_port, "NBD listen port (default 10809)");
    serve->add_option("--http-port", serve_cfg.http_port, "REST listen port (default 8080)");
    serve->add_option("--bind", serve_cfg.bind_host, "bind address (default 127.0.0.1)");
    serve->add_option("--log", serve_log, "event log sink: '-' for stdout or a file path");
    serve->add_option("--set", set_keys, "override any config key, key=value")->take_all();

    // format
    auto* format_cmd = app.add_subcommand("format", "write a FAT filesystem onto an image");
    CommonImageArgs fmt;
    std::string fmt_label = "NETSD";
    format_cmd->add_option("--image", fmt.image, "image path")->required();
    format_cmd->add_option("--capacity", fmt.capacity, "capacity, e.g. 64MiB");
    format_cmd->add_option("--label", fmt_label, "volume label");

    // bench
    auto* bench_cmd = app.add_subcommand("bench", "throughput matrix / model calibration");
    std::string bench_out = "results.csv";
    std::string bench_volume = "8MiB";
    std::string bench_capacity = "64MiB";
    std::uint64_t bench_seed = 1;
    int bench_retry = 64;
    unsigned bench_min_chunks = 0;
    bool bench_parallel = false;
    bool bench_calibrate = false;
    std::string bench_report;
    bench_cmd->add_option("--out", bench_out, "CSV output path");
    bench_cmd->add_option("--volume", bench_volume, "bytes moved per cell (default 8MiB)");
    bench_cmd->add_option("--capacity", bench_capacity, "emulated card capacity");
    bench_cmd->add_option("--seed", bench_seed, "deterministic seed");
    bench_cmd->add_option("--retry-limit", bench_retry, "per-chunk retry budget");
    bench_cmd->add_option("--min-chunks", bench_min_chunks,
                          "lift each cell to at least this many chunks");
    bench_cmd->add_flag("--parallel", bench_parallel, "run cells on all cores");
    bench_cmd->add_flag("--calibrate", bench_calibrate,
                        "grid-search the signal-path constants instead of running the matrix");
    bench_cmd->add_option("--report", bench_report, "calibration report path (default stdout)");

    // dut
    auto* dut = app.add_subcommand("dut", "scripted host operations on a local stack");
    dut->require_subcommand(1);
    dut->fallthrough();
    CommonImageArgs dut_img;
    std::uint64_t dut_lba = 0;
    std::uint32_t dut_blocks = 1;
    std::uint32_t dut_chunk_kib = 64;
    std::uint64_t dut_seed = 1;
    bool dut_pullups = false;
    double dut_cable = 48.0;
    std::string dut_file;
    int dut_retry = 8;
    for (auto* sub : {dut}) {
        sub->add_option("--image", dut_img.image, "image path");
        sub->add_option("--capacity", dut_img.capacity, "capacity if the image is new");
        sub->add_flag("--pullups", dut_pullups, "explicit 3.3V pull-ups on the path");
        sub->add_option("--cable-cm", dut_cable, "extension cable length");
        sub->add_option("--seed", dut_seed, "channel seed");
        sub->add_option("--retry-limit", dut_retry, "retry budget");
    }
    auto* dut_read = dut->add_subcommand("read", "read blocks to stdout or a file");
    dut_read->fallthrough();
    dut_read->add_option("--lba", dut_lba, "first block");
    dut_read->add_option("--blocks", dut_blocks, "block count");
    dut_read->add_option("--chunk-kib", dut_chunk_kib, "chunk size in KiB");
    dut_read->add_option("--out", dut_file, "output file (default stdout hexdump)");
    auto* dut_write = dut->add_subcommand("write", "write a file's bytes at an lba");
    dut_write->fallthrough();
    dut_write->add_option("--lba", dut_lba, "first block");
    dut_write->add_option("--in", dut_file, "input file (padded to whole blocks)")->required();
    dut_write->add_option("--chunk-kib", dut_chunk_kib, "chunk size in KiB");
    auto* dut_bench = dut->add_subcommand("bench", "single throughput measurement");
    dut_bench->fallthrough();
    std::string dut_dir = "read";
    std::string dut_total = "8MiB";
    dut_bench->add_option("--direction", dut_dir, "read or write");
    dut_bench->add_option("--volume", dut_total, "bytes to move");
    dut_bench->add_option("--chunk-kib", dut_chunk_kib, "chunk size in KiB");

    // fault
    auto* fault = app.add_subcommand("fault", "manage faults on a running gateway");
    fault->require_subcommand(1);
    fault->fallthrough();
    std::string server = "http://127.0.0.1:8080";
    fault->add_option("--server", server, "gateway base URL");
    auto* fault_add = fault->add_subcommand("add", "schedule a fault (JSON body)");
    fault_add->fallthrough();
    std::string fault_json;
    fault_add->add_option("json", fault_json, "fault spec as JSON")->required();
    auto* fault_list = fault->add_subcommand("list", "list faults");
    fault_list->fallthrough();
    auto* fault_cancel = fault->add_subcommand("cancel", "cancel a fault by id");
    fault_cancel->fallthrough();
    std::uint64_t fault_id = 0;
    fault_cancel->add_option("id", fault_id, "fault id")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (serve->parsed()) {
            GatewayConfig cli;
            cli.image_path = serve_image;
            cli.capacity_bytes = serve_capacity.empty() ? 0 : parse_capacity(serve_capacity);
            cli.nbd_port = serve_cfg.nbd_port;
            cli.http_port = serve_cfg.http_port;
            cli.bind_host = serve_cfg.bind_host;
            cli.log_path = serve_log;
            return run_serve(config_file, cli, set_keys);
        }

        if (format_cmd->parsed()) {
            std::uint64_t capacity = parse_capacity(fmt.capacity);
            Testbed bed(fmt.image, capacity);
            bed.arbiter.grant(kRagPort);
            BusConfig clean;
            clean.explicit_pullups = true;
            clean.cable_length_cm = 2.0;
            HostSession session(bed.arbiter, kRagPort, clean);
            session.init();
            SessionBlockDevice dev(session);
            fat::FormatOptions opts;
            opts.label = fmt_label;
            fat::format(dev, opts);
            fat::FatVolume vol = fat::FatVolume::mount(dev);
            std::cout << "formatted " << fmt.image << ": "
                      << (vol.variant() == fat::Variant::Fat32 ? "FAT32" : "FAT16") << ", "
                      << vol.total_clusters() << " clusters of " << vol.cluster_bytes()
                      << " bytes\n";
            bed.arbiter.release();
            return 0;
        }

        if (bench_cmd->parsed()) {
            if (bench_calibrate) {
                CalibrationResult fit = calibrate();
                if (bench_report.empty()) {
                    std::cout << fit.report;
                } else {
                    std::ofstream out(bench_report);
                    out << fit.report;
                    std::cout << "calibration report written to " << bench_report << "\n";
                }
                return 0;
            }
            BenchConfig cfg;
            cfg.volume_bytes = parse_capacity(bench_volume);
            cfg.capacity_bytes = parse_capacity(bench_capacity);
            cfg.seed = bench_seed;
            cfg.retry_limit = bench_retry;
            cfg.min_chunks_per_cell = bench_min_chunks;
            cfg.parallel = bench_parallel;
            auto samples = run_matrix(cfg);
            std::ofstream out(bench_out);
            if (!out) throw std::runtime_error("cannot write " + bench_out);
            write_csv(samples, out);
            std::cout << "wrote " << samples.size() << " samples to " << bench_out << "\n";
            return 0;
        }

        if (dut->parsed()) {
            BusConfig bus;
            bus.explicit_pullups = dut_pullups;
            bus.cable_length_cm = dut_cable;
            LocalStack stack(dut_img.image, parse_capacity(dut_img.capacity), bus, dut_seed,
                             dut_retry);
            std::uint32_t chunk = dut_chunk_kib * 1024;

            if (dut_read->parsed()) {
                auto data = stack.host.read(dut_lba, dut_blocks, chunk);
                if (!dut_file.empty()) {
                    std::ofstream out(dut_file, std::ios::binary);
                    out.write(reinterpret_cast<const char*>(data.data()),
                              static_cast<std::streamsize>(data.size()));
                } else {
                    for (std::size_t i = 0; i < data.size(); i += 16) {
                        std::printf("%08zx ", i);
                        for (std::size_t j = i; j < i + 16 && j < data.size(); ++j)
                            std::printf("%02x ", data[j]);
                        std::printf("\n");
                    }
                }
            } else if (dut_write->parsed()) {
                std::ifstream in(dut_file, std::ios::binary);
                if (!in) throw std::runtime_error("cannot read " + dut_file);
                std::vector<std::uint8_t> data{std::istreambuf_iterator<char>(in),
                                               std::istreambuf_iterator<char>()};
                data.resize((data.size() + kBlockSize - 1) / kBlockSize * kBlockSize, 0);
                stack.host.write(dut_lba, data, chunk);
                std::cout << "wrote " << data.size() << " bytes at block " << dut_lba << "\n";
            } else if (dut_bench->parsed()) {
                Direction dir = dut_dir == "write" ? Direction::Write : Direction::Read;
                double mbps = stack.host.throughput_mbps(dir, parse_capacity(dut_total), chunk);
                std::cout << dut_dir << " " << dut_total << " at " << dut_chunk_kib
                          << " KiB chunks: " << mbps << " MByte/s (simulated), "
                          << stack.host.stats().retries << " retries\n";
            }
            return 0;
        }

        if (fault->parsed()) {
            httplib::Client http(server);
            http.set_read_timeout(10, 0);
            if (fault_add->parsed()) {
                auto res = http.Post("/api/v1/faults", fault_json, "application/json");
                if (!res) throw std::runtime_error("gateway unreachable at " + server);
                std::cout << res->body;
                return res->status < 300 ? 0 : 1;
            }
            if (fault_list->parsed()) {
                auto res = http.Get("/api/v1/faults");
                if (!res) throw std::runtime_error("gateway unreachable at " + server);
                std::cout << res->body;
                return 0;
            }
            if (fault_cancel->parsed()) {
                auto res = http.Delete("/api/v1/faults/" + std::to_string(fault_id));
                if (!res) throw std::runtime_error("gateway unreachable at " + server);
                std::cout << res->body;
                return res->status < 300 ? 0 : 1;
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
