#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <future>
#include <thread>

#include "coevo/config.hpp"
#include "coevo/error.hpp"
#include "coevo/transport.hpp"

using namespace coevo;
using namespace std::chrono_literals;

namespace {

std::string raw_frame(const std::string& body) {
    const auto n = static_cast<std::uint32_t>(body.size());
    std::string out{static_cast<char>(n >> 24), static_cast<char>((n >> 16) & 0xff), static_cast<char>((n >> 8) & 0xff),
                    static_cast<char>(n & 0xff)};
    return out + body;
}

TransportConfig loopback() {
    TransportConfig t;
    t.mode = TransportMode::tcp;
    t.bind = "127.0.0.1:0";
    t.accept_timeout_s = 10;
    t.worker_timeout_s = 10;
    return t;
}

std::future<int> spawn_worker(std::uint16_t port, const std::string& tag, WorkerOptions opts = {}) {
    opts.handshake_timeout = 5s;
    return std::async(std::launch::async, [=] {
        return worker_connect("127.0.0.1:" + std::to_string(port), BlockTag::parse(tag), opts);
    });
}

}  // namespace

TEST_CASE("frames round trip and carry a big-endian length") {
    auto env = make_envelope(MsgType::local_step_done, 3, "2", {{"step", 1}, {"proposals", 1}, {"fits", 1}, {"true_evals", 0}});
    const auto bytes = frame_encode(env);
    const auto body_len = bytes.size() - 4;
    CHECK(static_cast<unsigned char>(bytes[3]) == (body_len & 0xff));
    auto r = frame_decode(bytes);
    REQUIRE(r.envelope);
    CHECK(*r.envelope == env);
    CHECK(r.consumed == bytes.size());
    CHECK(frame_encode(*r.envelope) == bytes);

    const std::string ten = "0123456789";
    CHECK(raw_frame(ten).substr(0, 4) == std::string("\0\0\0\x0a", 4));
}

TEST_CASE("truncated frames ask for more bytes") {
    const auto bytes = frame_encode(make_envelope(MsgType::shutdown, 0, kCoordinatorTag));
    for (std::size_t cut = 0; cut < bytes.size(); ++cut) CHECK_FALSE(frame_decode(std::string_view(bytes).substr(0, cut)).envelope);
}

TEST_CASE("decoder rejects oversize, unknown types, bad versions and missing fields") {
    const std::string huge("\x01\x10\x00\x00", 4);  // 17 MiB
    CHECK_THROWS_AS(frame_decode(huge), ProtocolError);

    auto with = [](const std::string& type, int version, const std::string& payload) {
        return raw_frame(R"({"protocol_version":)" + std::to_string(version) + R"(,"type":")" + type +
                         R"(","generation":0,"worker_tag":"COORD","payload":)" + payload + "}");
    };
    CHECK_NOTHROW(frame_decode(with("Shutdown", 1, "{}")));
    CHECK_THROWS_AS(frame_decode(with("Explode", 1, "{}")), ProtocolError);
    CHECK_THROWS_AS(frame_decode(with("Shutdown", 2, "{}")), ProtocolError);
    CHECK_THROWS_AS(frame_decode(with("GlobalFeedback", 1, "{}")), ProtocolError);
    CHECK_NOTHROW(frame_decode(with("Error", 2, R"({"message":"version"})")));
    CHECK_THROWS_AS(frame_decode(raw_frame("not json")), ProtocolError);
    CHECK_THROWS_AS(frame_decode(raw_frame("[1,2]")), ProtocolError);
}

TEST_CASE("frame reader reassembles a byte-by-byte stream") {
    std::string stream;
    std::vector<Envelope> sent;
    for (int g = 0; g < 5; ++g) {
        sent.push_back(make_envelope(MsgType::request_elites, g, kCoordinatorTag));
        stream += frame_encode(sent.back());
    }
    FrameReader reader;
    std::vector<Envelope> got;
    for (char c : stream) {
        reader.feed(std::string_view(&c, 1));
        while (auto env = reader.next()) got.push_back(*env);
    }
    CHECK(got == sent);
    CHECK(reader.buffered() == 0);
}

TEST_CASE("host:port parsing") {
    auto hp = parse_host_port("127.0.0.1:7321");
    CHECK(hp.host == "127.0.0.1");
    CHECK(hp.port == 7321);
    CHECK_THROWS_AS(parse_host_port("nohost"), ConfigError);
    CHECK_THROWS_AS(parse_host_port("h:99999"), ConfigError);
}

TEST_CASE("coordinator rejects a duplicate tag and shuts workers down cleanly") {
    auto space = presets::desk_space();
    auto cfg = desk_experiment();
    TcpCoordinator coord(space, cfg.run.madts, cfg.run.evaluator, loopback());
    const auto port = coord.port();
    auto first = spawn_worker(port, "1");
    std::this_thread::sleep_for(100ms);
    auto duplicate = spawn_worker(port, "1");
    std::this_thread::sleep_for(100ms);
    auto second = spawn_worker(port, "2");
    auto fusion = spawn_worker(port, "fusion");
    coord.wait_for_workers();
    CHECK(duplicate.get() == 1);
    CHECK(coord.rejected_count() == 1);
    coord.shutdown();
    CHECK(first.get() == 0);
    CHECK(second.get() == 0);
    CHECK(fusion.get() == 0);
}

TEST_CASE("a worker announcing another protocol version is refused") {
    auto space = presets::desk_space();
    auto cfg = desk_experiment();
    auto t = loopback();
    t.accept_timeout_s = 1;
    TcpCoordinator coord(space, cfg.run.madts, cfg.run.evaluator, t);
    WorkerOptions opts;
    opts.protocol_version = 99;
    auto w = spawn_worker(coord.port(), "1", opts);
    CHECK_THROWS_AS(coord.wait_for_workers(), TransportError);
    CHECK(w.get() == 1);
    CHECK(coord.rejected_count() == 1);
}

TEST_CASE("idle workers exit after the timeout") {
    auto space = presets::desk_space();
    auto cfg = desk_experiment();
    TcpCoordinator coord(space, cfg.run.madts, cfg.run.evaluator, loopback());
    WorkerOptions opts;
    opts.idle_timeout = 300ms;
    std::vector<std::future<int>> workers;
    for (const char* tag : {"1", "2", "fusion"}) workers.push_back(spawn_worker(coord.port(), tag, opts));
    coord.wait_for_workers();
    const auto start = std::chrono::steady_clock::now();
    for (auto& w : workers) CHECK(w.get() == 1);
    CHECK(std::chrono::steady_clock::now() - start < 5s);
}

TEST_CASE("connection refused exhausts the retry budget") {
    std::uint16_t port = 0;
    {
        Listener probe(parse_host_port("127.0.0.1:0"));
        port = probe.port();
    }
    WorkerOptions opts;
    opts.initial_backoff = 10ms;
    const auto start = std::chrono::steady_clock::now();
    CHECK(worker_connect("127.0.0.1:" + std::to_string(port), BlockTag::modality(1), opts) == 1);
    CHECK(std::chrono::steady_clock::now() - start < 2s);
}
