#include "coevo/transport.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <cstring>
#include <future>
#include <thread>

#include <spdlog/spdlog.h>

#include "coevo/error.hpp"

namespace coevo {

using nlohmann::json;
using Clock = std::chrono::steady_clock;
using std::chrono::milliseconds;

namespace {

constexpr std::pair<MsgType, const char*> kTypeNames[] = {
    {MsgType::hello, "Hello"},
    {MsgType::dispatch_blocks, "DispatchBlocks"},
    {MsgType::local_step_done, "LocalStepDone"},
    {MsgType::request_elites, "RequestElites"},
    {MsgType::elites, "Elites"},
    {MsgType::global_feedback, "GlobalFeedback"},
    {MsgType::shutdown, "Shutdown"},
    {MsgType::error, "Error"},
};

std::vector<const char*> required_fields(MsgType type, bool from_coordinator) {
    switch (type) {
        case MsgType::hello:
            if (from_coordinator) return {"space", "madts", "evaluator"};
            return {};
        case MsgType::dispatch_blocks: return {"blocks", "incumbent", "local_steps", "elite_count", "state"};
        case MsgType::local_step_done: return {"step", "proposals", "fits", "true_evals"};
        case MsgType::elites: return {"elites", "state", "steps"};
        case MsgType::global_feedback: return {"feedback"};
        case MsgType::error: return {"message"};
        case MsgType::request_elites:
        case MsgType::shutdown: return {};
    }
    return {};
}

json envelope_json(const Envelope& env) {
    return {{"protocol_version", env.protocol_version},
            {"type", to_string(env.type)},
            {"generation", env.generation},
            {"worker_tag", env.worker_tag},
            {"payload", env.payload}};
}

Envelope envelope_from_json(const json& j) {
    if (!j.is_object()) throw ProtocolError("envelope must be a JSON object");
    static const char* const kKeys[] = {"protocol_version", "type", "generation", "worker_tag", "payload"};
    for (const char* k : kKeys)
        if (!j.contains(k)) throw ProtocolError(std::string("envelope missing field '") + k + "'");
    if (j.size() != std::size(kKeys)) throw ProtocolError("envelope has unknown fields");

    const auto& v = j["protocol_version"];
    const auto& t = j["type"];
    const auto& g = j["generation"];
    const auto& w = j["worker_tag"];
    const auto& p = j["payload"];
    if (!v.is_number_integer()) throw ProtocolError("protocol_version must be an integer");
    if (!t.is_string()) throw ProtocolError("type must be a string");
    if (!g.is_number_integer() || g.get<std::int64_t>() < 0 || g.get<std::int64_t>() > INT32_MAX)
        throw ProtocolError("generation must be a non-negative integer");
    if (!w.is_string()) throw ProtocolError("worker_tag must be a string");
    if (!p.is_object()) throw ProtocolError("payload must be an object");

    Envelope env;
    env.type = msg_type_from_string(t.get<std::string>());
    const auto version = v.get<std::int64_t>();
    // Error frames are accepted from any version so a mismatch can be reported.
    if (version != kProtocolVersion && env.type != MsgType::error)
        throw ProtocolError("protocol version mismatch: got " + std::to_string(version) + ", expected " +
                            std::to_string(kProtocolVersion));
    env.protocol_version = static_cast<int>(std::clamp<std::int64_t>(version, INT32_MIN, INT32_MAX));
    env.generation = g.get<int>();
    env.worker_tag = w.get<std::string>();
    const bool from_coordinator = env.worker_tag == kCoordinatorTag;
    if (!from_coordinator) {
        try {
            (void)BlockTag::parse(env.worker_tag);
        } catch (const Error&) {
            throw ProtocolError("invalid worker_tag '" + env.worker_tag + "'");
        }
    }
    env.payload = p;
    for (const char* field : required_fields(env.type, from_coordinator))
        if (!p.contains(field))
            throw ProtocolError(to_string(env.type) + " payload missing field '" + field + "'");
    return env;
}

[[noreturn]] void throw_errno(const std::string& what) {
    throw TransportError(what + ": " + std::strerror(errno));
}

struct AddrInfo {
    addrinfo* head = nullptr;
    ~AddrInfo() {
        if (head) freeaddrinfo(head);
    }
};

AddrInfo resolve(const HostPort& hp, bool passive) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    if (passive) hints.ai_flags = AI_PASSIVE;
    AddrInfo out;
    const std::string port = std::to_string(hp.port);
    const char* host = hp.host.empty() ? nullptr : hp.host.c_str();
    if (int rc = getaddrinfo(host, port.c_str(), &hints, &out.head); rc != 0)
        throw TransportError("cannot resolve " + hp.host + ":" + port + ": " + gai_strerror(rc));
    return out;
}

int poll_one(int fd, short events, milliseconds timeout) {
    pollfd p{fd, events, 0};
    for (;;) {
        const int rc = ::poll(&p, 1, static_cast<int>(std::max<std::int64_t>(0, timeout.count())));
        if (rc >= 0) return rc;
        if (errno != EINTR) throw_errno("poll");
    }
}

milliseconds remaining(Clock::time_point deadline) {
    return std::max(milliseconds(0), std::chrono::duration_cast<milliseconds>(deadline - Clock::now()));
}

json elites_json(const std::vector<EliteBlock>& elites) {
    json a = json::array();
    for (const auto& e : elites) a.push_back({{"alleles", e.block.alleles}, {"estimate", e.estimate}});
    return a;
}

json steps_json(const std::vector<StepReport>& steps) {
    json a = json::array();
    for (const auto& s : steps)
        a.push_back({{"step", s.step}, {"proposals", s.proposals}, {"fits", s.fits}, {"true_evals", s.true_evals}});
    return a;
}

StepReport step_from_json(const json& j) {
    return {j.at("step").get<int>(), j.at("proposals").get<std::uint64_t>(), j.at("fits").get<std::uint64_t>(),
            j.at("true_evals").get<std::uint64_t>()};
}

Block block_from(const SearchSpace& space, BlockTag tag, const json& alleles) {
    Block b{tag, alleles.get<std::vector<int>>()};
    check_block(space, b);
    return b;
}

// Payload parse failures from a peer are protocol errors.
template <class F>
auto guarded(const char* what, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const json::exception& e) {
        throw ProtocolError(std::string("malformed ") + what + " payload: " + e.what());
    } catch (const ProtocolError&) {
        throw;
    } catch (const Error& e) {
        throw ProtocolError(std::string("invalid ") + what + " payload: " + e.what());
    }
}

}  // namespace

std::string to_string(MsgType type) {
    for (const auto& [t, name] : kTypeNames)
        if (t == type) return name;
    return "Unknown";
}

MsgType msg_type_from_string(std::string_view name) {
    for (const auto& [t, n] : kTypeNames)
        if (name == n) return t;
    throw ProtocolError("unknown msg_type '" + std::string(name.substr(0, 64)) + "'");
}

Envelope make_envelope(MsgType type, int generation, std::string worker_tag, json payload) {
    Envelope env;
    env.type = type;
    env.generation = generation;
    env.worker_tag = std::move(worker_tag);
    env.payload = std::move(payload);
    return env;
}

std::string frame_encode(const Envelope& env) {
    const std::string body = envelope_json(env).dump();
    if (body.size() > kMaxFrameBytes) throw ProtocolError("frame body exceeds 16 MiB");
    const auto n = static_cast<std::uint32_t>(body.size());
    std::string out;
    out.reserve(4 + body.size());
    out.push_back(static_cast<char>((n >> 24) & 0xff));
    out.push_back(static_cast<char>((n >> 16) & 0xff));
    out.push_back(static_cast<char>((n >> 8) & 0xff));
    out.push_back(static_cast<char>(n & 0xff));
    out += body;
    return out;
}

DecodeResult frame_decode(std::string_view bytes) {
    if (bytes.size() < 4) return {};
    const auto* u = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::uint32_t n = (std::uint32_t{u[0]} << 24) | (std::uint32_t{u[1]} << 16) | (std::uint32_t{u[2]} << 8) |
                            std::uint32_t{u[3]};
    if (n > kMaxFrameBytes)
        throw ProtocolError("declared frame length " + std::to_string(n) + " exceeds 16 MiB");
    if (bytes.size() - 4 < n) return {};
    const std::string_view body = bytes.substr(4, n);
    json j = json::parse(body, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) throw ProtocolError("frame body is not valid UTF-8 JSON");
    return {envelope_from_json(j), 4 + static_cast<std::size_t>(n)};
}

void FrameReader::feed(std::string_view bytes) {
    if (offset_ > 0 && offset_ * 2 >= buffer_.size()) {
        buffer_.erase(0, offset_);
        offset_ = 0;
    }
    buffer_.append(bytes);
}

std::optional<Envelope> FrameReader::next() {
    auto r = frame_decode(std::string_view(buffer_).substr(offset_));
    if (!r.envelope) return std::nullopt;
    offset_ += r.consumed;
    return std::move(r.envelope);
}

// ---------------------------------------------------------------------------
// Payload codecs

json feedback_to_json(const std::vector<FeedbackEntry>& feedback) {
    json a = json::array();
    for (const auto& f : feedback) a.push_back({{"alleles", f.block.alleles}, {"score", f.global_score}});
    return a;
}

std::vector<FeedbackEntry> feedback_from_json(const SearchSpace& space, BlockTag tag, const json& j) {
    return guarded("feedback", [&] {
        std::vector<FeedbackEntry> out;
        for (const auto& f : j.get_ref<const json::array_t&>())
            out.push_back({block_from(space, tag, f.at("alleles")), f.at("score").get<double>()});
        return out;
    });
}

json dispatch_to_json(const Dispatch& d) {
    json blocks = json::array();
    for (const auto& b : d.blocks) blocks.push_back(b.alleles);
    return {{"blocks", blocks},
            {"incumbent", d.incumbent.alleles},
            {"local_steps", d.local_steps},
            {"elite_count", d.elite_count},
            {"state", worker_state_to_json(d.state)}};
}

Dispatch dispatch_from_json(const SearchSpace& space, BlockTag tag, int generation, const json& j) {
    return guarded("DispatchBlocks", [&] {
        Dispatch d;
        d.tag = tag;
        d.generation = generation;
        for (const auto& b : j.at("blocks").get_ref<const json::array_t&>()) d.blocks.push_back(block_from(space, tag, b));
        d.incumbent.alleles = j.at("incumbent").get<std::vector<int>>();
        check_chromosome(space, d.incumbent);
        d.local_steps = j.at("local_steps").get<int>();
        if (d.local_steps < 1) throw ProtocolError("local_steps must be >= 1");
        d.elite_count = j.at("elite_count").get<std::size_t>();
        d.state = worker_state_from_json(space, j.at("state"));
        if (d.state.tag != tag) throw ProtocolError("dispatched state belongs to another tag");
        return d;
    });
}

json result_to_json(const WorkerResult& r) {
    return {{"elites", elites_json(r.elites)}, {"state", worker_state_to_json(r.state)}, {"steps", steps_json(r.steps)}};
}

WorkerResult result_from_json(const SearchSpace& space, BlockTag tag, const json& j) {
    return guarded("Elites", [&] {
        WorkerResult r;
        r.tag = tag;
        for (const auto& e : j.at("elites").get_ref<const json::array_t&>())
            r.elites.push_back({block_from(space, tag, e.at("alleles")), e.at("estimate").get<double>()});
        r.state = worker_state_from_json(space, j.at("state"));
        if (r.state.tag != tag) throw ProtocolError("returned state belongs to another tag");
        for (const auto& s : j.at("steps").get_ref<const json::array_t&>()) r.steps.push_back(step_from_json(s));
        return r;
    });
}

// ---------------------------------------------------------------------------
// Sockets

HostPort parse_host_port(std::string_view text) {
    const auto colon = text.rfind(':');
    if (colon == std::string_view::npos) throw ConfigError({"address '" + std::string(text) + "': expected host:port"});
    HostPort hp;
    hp.host = std::string(text.substr(0, colon));
    if (hp.host.size() >= 2 && hp.host.front() == '[' && hp.host.back() == ']') hp.host = hp.host.substr(1, hp.host.size() - 2);
    const auto port = text.substr(colon + 1);
    unsigned value = 0;
    auto [ptr, ec] = std::from_chars(port.data(), port.data() + port.size(), value);
    if (port.empty() || ec != std::errc() || ptr != port.data() + port.size() || value > 65535)
        throw ConfigError({"address '" + std::string(text) + "': invalid port"});
    hp.port = static_cast<std::uint16_t>(value);
    return hp;
}

Connection::Connection(int fd) : fd_(fd) {}

Connection::~Connection() { close(); }

Connection::Connection(Connection&& other) noexcept
    : fd_(std::exchange(other.fd_, -1)), reader_(std::move(other.reader_)) {}

Connection& Connection::operator=(Connection&& other) noexcept {
    if (this != &other) {
        close();
        fd_ = std::exchange(other.fd_, -1);
        reader_ = std::move(other.reader_);
    }
    return *this;
}

void Connection::close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
    reader_ = FrameReader{};
}

Connection Connection::connect(const HostPort& address) {
    AddrInfo ai = resolve(address, false);
    int last_errno = 0;
    for (addrinfo* p = ai.head; p; p = p->ai_next) {
        const int fd = ::socket(p->ai_family, p->ai_socktype | SOCK_CLOEXEC, p->ai_protocol);
        if (fd < 0) {
            last_errno = errno;
            continue;
        }
        if (::connect(fd, p->ai_addr, p->ai_addrlen) == 0) {
            int one = 1;
            ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
            return Connection(fd);
        }
        last_errno = errno;
        ::close(fd);
    }
    throw TransportError("cannot connect to " + address.host + ":" + std::to_string(address.port) + ": " +
                         std::strerror(last_errno));
}

void Connection::send(const Envelope& env) {
    if (fd_ < 0) throw TransportError("send on a closed connection");
    const std::string bytes = frame_encode(env);
    std::size_t off = 0;
    while (off < bytes.size()) {
        const ssize_t n = ::send(fd_, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw_errno("send");
        }
        off += static_cast<std::size_t>(n);
    }
}

bool Connection::pump() {
    char buf[65536];
    for (;;) {
        const ssize_t n = ::recv(fd_, buf, sizeof buf, MSG_DONTWAIT);
        if (n > 0) {
            reader_.feed(std::string_view(buf, static_cast<std::size_t>(n)));
            if (static_cast<std::size_t>(n) < sizeof buf) return true;
            continue;
        }
        if (n == 0) return false;
        if (errno == EINTR) continue;
        if (errno == EAGAIN || errno == EWOULDBLOCK) return true;
        throw_errno("recv");
    }
}

std::optional<Envelope> Connection::receive(milliseconds timeout) {
    if (fd_ < 0) throw TransportError("receive on a closed connection");
    const auto deadline = Clock::now() + timeout;
    for (;;) {
        if (auto env = reader_.next()) return env;
        if (poll_one(fd_, POLLIN, remaining(deadline)) == 0) return std::nullopt;
        if (!pump()) {
            if (auto env = reader_.next()) return env;
            throw TransportError("peer closed the connection");
        }
    }
}

Listener::Listener(const HostPort& address) {
    AddrInfo ai = resolve(address, true);
    int last_errno = 0;
    for (addrinfo* p = ai.head; p; p = p->ai_next) {
        const int fd = ::socket(p->ai_family, p->ai_socktype | SOCK_CLOEXEC, p->ai_protocol);
        if (fd < 0) {
            last_errno = errno;
            continue;
        }
        int one = 1;
        ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        if (::bind(fd, p->ai_addr, p->ai_addrlen) == 0 && ::listen(fd, 16) == 0) {
            fd_ = fd;
            break;
        }
        last_errno = errno;
        ::close(fd);
    }
    if (fd_ < 0)
        throw TransportError("cannot bind " + address.host + ":" + std::to_string(address.port) + ": " +
                             std::strerror(last_errno));
    sockaddr_storage ss{};
    socklen_t len = sizeof ss;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&ss), &len);
    if (ss.ss_family == AF_INET) port_ = ntohs(reinterpret_cast<sockaddr_in*>(&ss)->sin_port);
    else if (ss.ss_family == AF_INET6) port_ = ntohs(reinterpret_cast<sockaddr_in6*>(&ss)->sin6_port);
}

Listener::~Listener() {
    if (fd_ >= 0) ::close(fd_);
}

std::optional<Connection> Listener::accept(milliseconds timeout) {
    if (poll_one(fd_, POLLIN, timeout) == 0) return std::nullopt;
    const int fd = ::accept4(fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) {
        if (errno == EINTR || errno == EAGAIN || errno == ECONNABORTED) return std::nullopt;
        throw_errno("accept");
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return Connection(fd);
}

// ---------------------------------------------------------------------------
// In-process pool

InProcessPool::InProcessPool(SearchSpace space, MadtsConfig cfg, const Evaluator& evaluator, bool parallel)
    : space_(std::move(space)), cfg_(std::move(cfg)), prototype_(evaluator.clone()), parallel_(parallel) {}

WorkerRuntime& InProcessPool::runtime(BlockTag tag) {
    auto& slot = runtimes_[tag];
    if (!slot) slot = std::make_unique<WorkerRuntime>(space_, cfg_, tag.is_fusion() ? nullptr : prototype_->clone());
    return *slot;
}

std::vector<WorkerResult> InProcessPool::run_generation(const std::vector<Dispatch>& dispatches) {
    std::vector<WorkerRuntime*> runtimes;
    for (const auto& d : dispatches) runtimes.push_back(&runtime(d.tag));
    std::vector<WorkerResult> out;
    out.reserve(dispatches.size());
    if (!parallel_) {
        for (std::size_t i = 0; i < dispatches.size(); ++i) out.push_back(runtimes[i]->run(dispatches[i]));
        return out;
    }
    std::vector<std::future<WorkerResult>> futures;
    for (std::size_t i = 0; i < dispatches.size(); ++i)
        futures.push_back(std::async(std::launch::async, [rt = runtimes[i], &d = dispatches[i]] { return rt->run(d); }));
    for (auto& f : futures) out.push_back(f.get());
    return out;
}

// ---------------------------------------------------------------------------
// TCP coordinator

namespace {

constexpr milliseconds kHelloTimeout{10'000};
constexpr milliseconds kShutdownGrace{5'000};

milliseconds seconds_ms(double s) { return milliseconds(static_cast<std::int64_t>(s * 1000.0)); }

void send_error(Connection& conn, int generation, const std::string& message) {
    try {
        conn.send(make_envelope(MsgType::error, generation, kCoordinatorTag, {{"message", message}}));
    } catch (const Error&) {
    }
}

}  // namespace

TcpCoordinator::TcpCoordinator(SearchSpace space, MadtsConfig madts, EvaluatorConfig evaluator,
                               const TransportConfig& cfg)
    : space_(std::move(space)),
      hello_payload_({{"space", space_to_json(space_)},
                      {"madts", madts_to_json(madts)},
                      {"evaluator", {{"kind", evaluator.kind}, {"parameters", evaluator.parameters}}}}),
      cfg_(cfg),
      listener_(parse_host_port(cfg.bind)) {}

TcpCoordinator::~TcpCoordinator() {
    try {
        shutdown();
    } catch (...) {
    }
}

void TcpCoordinator::register_one(Connection conn) {
    std::optional<Envelope> hello;
    try {
        hello = conn.receive(kHelloTimeout);
    } catch (const ProtocolError& e) {
        ++rejected_;
        spdlog::warn("rejecting connection: {}", e.what());
        send_error(conn, 0, e.what());
        return;
    } catch (const TransportError& e) {
        ++rejected_;
        spdlog::warn("connection dropped during handshake: {}", e.what());
        return;
    }
    if (!hello || hello->type != MsgType::hello) {
        ++rejected_;
        send_error(conn, 0, "expected Hello");
        return;
    }
    BlockTag tag;
    try {
        tag = BlockTag::parse(hello->worker_tag);
    } catch (const Error&) {
        ++rejected_;
        send_error(conn, 0, "invalid worker tag '" + hello->worker_tag + "'");
        return;
    }
    if (!space_.partition.count(tag)) {
        ++rejected_;
        send_error(conn, 0, "no block with tag " + tag.to_string());
        return;
    }
    if (sessions_.count(tag)) {
        ++rejected_;
        spdlog::warn("rejecting duplicate worker for tag {}", tag.to_string());
        send_error(conn, 0, "duplicate worker for tag " + tag.to_string());
        return;
    }
    try {
        conn.send(make_envelope(MsgType::hello, 0, kCoordinatorTag, hello_payload_));
    } catch (const TransportError&) {
        ++rejected_;
        return;
    }
    sessions_[tag] = Session{std::move(conn), -1};
    spdlog::info("worker registered for tag {}", tag.to_string());
    try {
        send_feedback(tag);
    } catch (const TransportError&) {
        drop(tag);
    }
}

void TcpCoordinator::wait_for_workers() {
    const auto deadline = Clock::now() + seconds_ms(cfg_.accept_timeout_s);
    while (sessions_.size() < space_.block_count()) {
        const auto left = remaining(deadline);
        if (left.count() == 0)
            throw TransportError("timed out waiting for workers: " + std::to_string(sessions_.size()) + " of " +
                                 std::to_string(space_.block_count()) + " registered");
        if (auto conn = listener_.accept(left)) register_one(std::move(*conn));
    }
}

void TcpCoordinator::drop(BlockTag tag) { sessions_.erase(tag); }

void TcpCoordinator::send_feedback(BlockTag tag) {
    auto fb = last_feedback_.find(tag);
    auto s = sessions_.find(tag);
    if (fb == last_feedback_.end() || s == sessions_.end()) return;
    if (s->second.feedback_generation == fb->second.first) return;
    s->second.conn.send(make_envelope(MsgType::global_feedback, fb->second.first, kCoordinatorTag,
                                      {{"feedback", feedback_to_json(fb->second.second)}}));
    s->second.feedback_generation = fb->second.first;
}

void TcpCoordinator::push_feedback(int generation, const std::map<BlockTag, std::vector<FeedbackEntry>>& feedback) {
    for (const auto& [tag, entries] : feedback) {
        last_feedback_[tag] = {generation, entries};
        try {
            send_feedback(tag);
        } catch (const TransportError& e) {
            spdlog::warn("lost worker {} while sending feedback: {}", tag.to_string(), e.what());
            drop(tag);
        }
    }
}

std::vector<WorkerResult> TcpCoordinator::attempt(const std::vector<Dispatch>& dispatches) {
    struct Progress {
        const Dispatch* dispatch;
        int steps = 0;
        bool requested = false;
        std::optional<WorkerResult> result;
    };
    std::map<BlockTag, Progress> progress;
    for (const auto& d : dispatches) {
        auto it = sessions_.find(d.tag);
        if (it == sessions_.end()) throw TransportError("no worker connected for tag " + d.tag.to_string());
        send_feedback(d.tag);
        it->second.conn.send(make_envelope(MsgType::dispatch_blocks, d.generation, kCoordinatorTag, dispatch_to_json(d)));
        progress[d.tag] = Progress{&d, 0, false, std::nullopt};
    }

    auto handle = [&](BlockTag tag, const Envelope& env) {
        auto& p = progress.at(tag);
        if (env.worker_tag != tag.to_string())
            throw ProtocolError("message on tag " + tag.to_string() + " connection claims tag " + env.worker_tag);
        if (env.generation != p.dispatch->generation)
            throw ProtocolError("worker " + tag.to_string() + " sent generation " + std::to_string(env.generation) +
                                " during generation " + std::to_string(p.dispatch->generation));
        switch (env.type) {
            case MsgType::local_step_done: {
                if (p.requested) throw ProtocolError("LocalStepDone after RequestElites");
                const int step = guarded("LocalStepDone", [&] { return step_from_json(env.payload).step; });
                if (step != p.steps + 1) throw ProtocolError("LocalStepDone out of order");
                ++p.steps;
                if (p.steps == p.dispatch->local_steps) {
                    sessions_.at(tag).conn.send(
                        make_envelope(MsgType::request_elites, p.dispatch->generation, kCoordinatorTag));
                    p.requested = true;
                }
                break;
            }
            case MsgType::elites:
                if (!p.requested) throw ProtocolError("Elites before RequestElites");
                p.result = result_from_json(space_, tag, env.payload);
                if (static_cast<int>(p.result->steps.size()) != p.dispatch->local_steps)
                    throw ProtocolError("Elites report the wrong number of steps");
                break;
            case MsgType::error:
                throw TransportError("worker " + tag.to_string() + " reported: " +
                                     env.payload.value("message", std::string("unknown error")));
            default:
                throw ProtocolError("unexpected " + to_string(env.type) + " from worker " + tag.to_string());
        }
    };

    const milliseconds silence = seconds_ms(cfg_.worker_timeout_s);
    for (;;) {
        std::vector<BlockTag> waiting;
        for (auto& [tag, p] : progress)
            if (!p.result) waiting.push_back(tag);
        if (waiting.empty()) break;

        // Drain frames that are already buffered before blocking.
        bool progressed = false;
        for (BlockTag tag : waiting) {
            while (auto env = sessions_.at(tag).conn.buffered_frame()) {
                handle(tag, *env);
                progressed = true;
            }
        }
        if (progressed) continue;

        std::vector<pollfd> fds;
        for (BlockTag tag : waiting) fds.push_back({sessions_.at(tag).conn.fd(), POLLIN, 0});
        int rc;
        do {
            rc = ::poll(fds.data(), fds.size(), static_cast<int>(silence.count()));
        } while (rc < 0 && errno == EINTR);
        if (rc < 0) throw_errno("poll");
        if (rc == 0) throw TransportError("workers silent for " + std::to_string(silence.count()) + " ms");
        for (std::size_t i = 0; i < fds.size(); ++i) {
            if (fds[i].revents == 0) continue;
            auto& conn = sessions_.at(waiting[i]).conn;
            if (!conn.pump()) {
                while (auto env = conn.buffered_frame()) handle(waiting[i], *env);
                if (!progress.at(waiting[i]).result)
                    throw TransportError("worker " + waiting[i].to_string() + " disconnected");
            }
        }
    }

    std::vector<WorkerResult> out;
    for (const auto& d : dispatches) out.push_back(std::move(*progress.at(d.tag).result));
    return out;
}

std::vector<WorkerResult> TcpCoordinator::run_generation(const std::vector<Dispatch>& dispatches) {
    for (int tries = 0;; ++tries) {
        try {
            if (sessions_.size() < space_.block_count()) wait_for_workers();
            return attempt(dispatches);
        } catch (const Error& e) {
            if (tries >= 1) throw TransportError(std::string("generation failed after retry: ") + e.what());
            spdlog::warn("generation {} failed ({}); reconnecting workers and retrying once",
                         dispatches.empty() ? 0 : dispatches.front().generation, e.what());
            // Workers are stateless between dispatches, so every session restarts.
            for (auto& [tag, s] : sessions_) send_error(s.conn, 0, "generation aborted; reconnect");
            sessions_.clear();
        }
    }
}

void TcpCoordinator::shutdown() {
    if (shut_down_) return;
    shut_down_ = true;
    for (auto& [tag, s] : sessions_) {
        try {
            s.conn.send(make_envelope(MsgType::shutdown, 0, kCoordinatorTag));
        } catch (const Error&) {
        }
    }
    const auto deadline = Clock::now() + kShutdownGrace;
    for (auto& [tag, s] : sessions_) {
        try {
            while (s.conn.receive(remaining(deadline))) {
            }
        } catch (const Error&) {
        }
    }
    sessions_.clear();
}

// ---------------------------------------------------------------------------
// Worker side

namespace {

enum class ServeOutcome { shutdown, fatal, lost };

ServeOutcome serve(Connection& conn, BlockTag tag, const WorkerOptions& opts, bool& registered) {
    const std::string me = tag.to_string();
    Envelope hello = make_envelope(MsgType::hello, 0, me);
    hello.protocol_version = opts.protocol_version;
    conn.send(hello);

    auto reply = conn.receive(opts.handshake_timeout);
    if (!reply) {
        spdlog::error("worker {}: no Hello reply from coordinator", me);
        return ServeOutcome::fatal;
    }
    if (reply->type == MsgType::error) {
        spdlog::error("worker {}: coordinator refused registration: {}", me,
                      reply->payload.value("message", std::string("unknown")));
        return ServeOutcome::fatal;
    }
    if (reply->type != MsgType::hello) {
        spdlog::error("worker {}: expected Hello, got {}", me, to_string(reply->type));
        return ServeOutcome::fatal;
    }
    registered = true;

    const auto [space, madts, evaluator_cfg] = guarded("Hello", [&] {
        SearchSpace s = space_from_json(reply->payload.at("space"));
        MadtsConfig m = madts_from_json(reply->payload.at("madts"));
        EvaluatorConfig e{reply->payload.at("evaluator").at("kind").get<std::string>(),
                          reply->payload.at("evaluator").at("parameters")};
        return std::tuple{std::move(s), std::move(m), std::move(e)};
    });
    if (!space.partition.count(tag)) {
        spdlog::error("worker {}: coordinator space has no such block", me);
        return ServeOutcome::fatal;
    }
    WorkerRuntime runtime(space, madts, tag.is_fusion() ? nullptr : make_evaluator(space, evaluator_cfg));

    std::optional<std::pair<int, std::vector<FeedbackEntry>>> pending;
    int active = -1;

    for (;;) {
        auto env = conn.receive(opts.idle_timeout);
        if (!env) {
            spdlog::error("worker {}: no coordinator traffic for {} ms; exiting", me, opts.idle_timeout.count());
            return ServeOutcome::fatal;
        }
        switch (env->type) {
            case MsgType::global_feedback:
                pending = std::pair{env->generation, feedback_from_json(space, tag, env->payload.at("feedback"))};
                break;
            case MsgType::dispatch_blocks: {
                Dispatch d = dispatch_from_json(space, tag, env->generation, env->payload);
                if (pending && pending->first == d.generation - 1) d.feedback = pending->second;
                const int steps = d.local_steps;
                const int gen = d.generation;
                try {
                    runtime.begin(std::move(d));
                    for (int i = 0; i < steps; ++i) {
                        const StepReport r = runtime.step();
                        conn.send(make_envelope(MsgType::local_step_done, gen, me,
                                                {{"step", r.step},
                                                 {"proposals", r.proposals},
                                                 {"fits", r.fits},
                                                 {"true_evals", r.true_evals}}));
                    }
                    active = gen;
                } catch (const TransportError&) {
                    throw;
                } catch (const Error& e) {
                    active = -1;
                    conn.send(make_envelope(MsgType::error, gen, me, {{"message", e.what()}}));
                }
                break;
            }
            case MsgType::request_elites:
                if (active < 0 || active != env->generation) {
                    conn.send(make_envelope(MsgType::error, env->generation, me,
                                            {{"message", "RequestElites without a matching dispatch"}}));
                    break;
                }
                conn.send(make_envelope(MsgType::elites, active, me, result_to_json(runtime.finish())));
                active = -1;
                break;
            case MsgType::shutdown:
                spdlog::info("worker {}: shutdown", me);
                return ServeOutcome::shutdown;
            case MsgType::error:
                spdlog::warn("worker {}: coordinator error: {}", me,
                             env->payload.value("message", std::string("unknown")));
                return ServeOutcome::lost;
            default:
                conn.send(make_envelope(MsgType::error, env->generation, me,
                                        {{"message", "unexpected " + to_string(env->type)}}));
        }
    }
}

}  // namespace

int worker_connect(const std::string& address, BlockTag tag, const WorkerOptions& opts) {
    const HostPort hp = parse_host_port(address);
    int failures = 0;
    auto backoff = opts.initial_backoff;
    for (;;) {
        Connection conn;
        bool registered = false;
        try {
            conn = Connection::connect(hp);
            const auto outcome = serve(conn, tag, opts, registered);
            if (outcome == ServeOutcome::shutdown) return 0;
            if (outcome == ServeOutcome::fatal) return 1;
        } catch (const ProtocolError& e) {
            spdlog::error("worker {}: protocol error: {}", tag.to_string(), e.what());
            return 1;
        } catch (const TransportError& e) {
            spdlog::warn("worker {}: {}", tag.to_string(), e.what());
        }
        if (registered) {
            failures = 0;
            backoff = opts.initial_backoff;
        }
        if (++failures >= opts.connect_attempts) {
            spdlog::error("worker {}: giving up after {} attempts", tag.to_string(), failures);
            return 1;
        }
        std::this_thread::sleep_for(backoff);
        backoff *= 2;
    }
}

}  // namespace coevo
