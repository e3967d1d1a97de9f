#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "coevo/config.hpp"
#include "coevo/madts.hpp"
#include "coevo/search_space.hpp"

namespace coevo {

inline constexpr int kProtocolVersion = 1;
inline constexpr std::uint32_t kMaxFrameBytes = 16u * 1024u * 1024u;
inline constexpr const char* kCoordinatorTag = "COORD";

enum class MsgType { hello, dispatch_blocks, local_step_done, request_elites, elites, global_feedback, shutdown, error };

/// Wire names: "Hello", "DispatchBlocks", ...
std::string to_string(MsgType type);
/// Throws ProtocolError on an unknown name.
MsgType msg_type_from_string(std::string_view name);

struct Envelope {
    int protocol_version = kProtocolVersion;
    MsgType type = MsgType::hello;
    int generation = 0;
    /// A block tag string or "COORD".
    std::string worker_tag = kCoordinatorTag;
    nlohmann::json payload = nlohmann::json::object();

    friend bool operator==(const Envelope&, const Envelope&) = default;
};

Envelope make_envelope(MsgType type, int generation, std::string worker_tag,
                       nlohmann::json payload = nlohmann::json::object());

/// 4-byte big-endian length followed by the JSON body.
std::string frame_encode(const Envelope& env);

struct DecodeResult {
    /// Empty when more bytes are needed.
    std::optional<Envelope> envelope;
    std::size_t consumed = 0;
};

/// Decodes the first frame of `bytes`. Throws ProtocolError on oversize
/// lengths, invalid JSON, version mismatch, unknown types or missing fields.
DecodeResult frame_decode(std::string_view bytes);

/// Accumulates stream bytes and yields complete envelopes.
class FrameReader {
public:
    void feed(std::string_view bytes);
    std::optional<Envelope> next();
    std::size_t buffered() const { return buffer_.size() - offset_; }

private:
    std::string buffer_;
    std::size_t offset_ = 0;
};

// ---------------------------------------------------------------------------
// Payload codecs shared by both ends.

nlohmann::json feedback_to_json(const std::vector<FeedbackEntry>& feedback);
std::vector<FeedbackEntry> feedback_from_json(const SearchSpace& space, BlockTag tag, const nlohmann::json& j);

/// Dispatch without its feedback; feedback travels as GlobalFeedback.
nlohmann::json dispatch_to_json(const Dispatch& d);
Dispatch dispatch_from_json(const SearchSpace& space, BlockTag tag, int generation, const nlohmann::json& j);

nlohmann::json result_to_json(const WorkerResult& r);
WorkerResult result_from_json(const SearchSpace& space, BlockTag tag, const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Sockets

struct HostPort {
    std::string host;
    std::uint16_t port = 0;
};

/// Parses "host:port"; throws ConfigError.
HostPort parse_host_port(std::string_view text);

/// A connected stream socket with frame buffering.
class Connection {
public:
    Connection() = default;
    explicit Connection(int fd);
    ~Connection();
    Connection(Connection&& other) noexcept;
    Connection& operator=(Connection&& other) noexcept;
    Connection(const Connection&) = delete;
    Connection& operator=(const Connection&) = delete;

    static Connection connect(const HostPort& address);

    bool is_open() const { return fd_ >= 0; }
    int fd() const { return fd_; }
    void close();

    /// Throws TransportError if the peer is gone.
    void send(const Envelope& env);
    /// Empty on timeout. Throws TransportError on EOF or reset and
    /// ProtocolError on a malformed frame.
    std::optional<Envelope> receive(std::chrono::milliseconds timeout);
    /// Parses any complete frame already buffered without touching the socket.
    std::optional<Envelope> buffered_frame() { return reader_.next(); }
    /// Reads whatever is available now into the buffer. False on EOF.
    bool pump();

private:
    int fd_ = -1;
    FrameReader reader_;
};

class Listener {
public:
    /// Port 0 binds an ephemeral port; see port().
    explicit Listener(const HostPort& address);
    ~Listener();
    Listener(const Listener&) = delete;
    Listener& operator=(const Listener&) = delete;

    std::uint16_t port() const { return port_; }
    /// Empty on timeout.
    std::optional<Connection> accept(std::chrono::milliseconds timeout);

private:
    int fd_ = -1;
    std::uint16_t port_ = 0;
};

// ---------------------------------------------------------------------------
// Worker pools

/// The coordinator's view of its workers for one generation barrier.
class WorkerPool {
public:
    virtual ~WorkerPool() = default;
    /// Results are returned in dispatch order.
    virtual std::vector<WorkerResult> run_generation(const std::vector<Dispatch>& dispatches) = 0;
    /// Global feedback for `generation`, to be applied before the next local steps.
    virtual void push_feedback(int generation, const std::map<BlockTag, std::vector<FeedbackEntry>>& feedback) {
        (void)generation;
        (void)feedback;
    }
    virtual void shutdown() {}
};

class InProcessPool final : public WorkerPool {
public:
    /// `evaluator` is cloned per modality worker.
    InProcessPool(SearchSpace space, MadtsConfig cfg, const Evaluator& evaluator, bool parallel = false);

    std::vector<WorkerResult> run_generation(const std::vector<Dispatch>& dispatches) override;

private:
    WorkerRuntime& runtime(BlockTag tag);

    SearchSpace space_;
    MadtsConfig cfg_;
    std::unique_ptr<Evaluator> prototype_;
    bool parallel_;
    std::map<BlockTag, std::unique_ptr<WorkerRuntime>> runtimes_;
};

/// Serves one TCP connection per block tag and drives the generation barrier.
class TcpCoordinator final : public WorkerPool {
public:
    TcpCoordinator(SearchSpace space, MadtsConfig madts, EvaluatorConfig evaluator, const TransportConfig& cfg);
    ~TcpCoordinator() override;

    std::uint16_t port() const { return listener_.port(); }

    /// Accepts connections until every tag has a registered worker.
    /// Throws TransportError after accept_timeout_s.
    void wait_for_workers();

    std::vector<WorkerResult> run_generation(const std::vector<Dispatch>& dispatches) override;
    void push_feedback(int generation, const std::map<BlockTag, std::vector<FeedbackEntry>>& feedback) override;
    /// Broadcasts Shutdown and waits up to the grace period for peers to close.
    void shutdown() override;

    /// Connections rejected during registration (duplicates, bad tags, bad versions).
    std::size_t rejected_count() const { return rejected_; }

private:
    struct Session {
        Connection conn;
        int feedback_generation = -1;
    };

    void register_one(Connection conn);
    void send_feedback(BlockTag tag);
    std::vector<WorkerResult> attempt(const std::vector<Dispatch>& dispatches);
    void drop(BlockTag tag);

    SearchSpace space_;
    nlohmann::json hello_payload_;
    TransportConfig cfg_;
    Listener listener_;
    std::map<BlockTag, Session> sessions_;
    std::map<BlockTag, std::pair<int, std::vector<FeedbackEntry>>> last_feedback_;
    std::size_t rejected_ = 0;
    bool shut_down_ = false;
};

struct WorkerOptions {
    std::chrono::milliseconds idle_timeout{120'000};
    int connect_attempts = 3;
    std::chrono::milliseconds initial_backoff{200};
    /// Waiting time for the coordinator's Hello reply.
    std::chrono::milliseconds handshake_timeout{30'000};
    /// Protocol version announced in Hello; only differs in tests.
    int protocol_version = kProtocolVersion;
};

/// Connects, registers `tag`, and serves dispatches until Shutdown.
/// Returns 0 after Shutdown, 1 on refused connections, idle timeout, or an
/// Error from the coordinator.
int worker_connect(const std::string& address, BlockTag tag, const WorkerOptions& opts = {});

}  // namespace coevo
