#pragma once

#include "popevo/fitness.hpp"
#include "popevo/genotype.hpp"

#include <chrono>
#include <cstdint>
#include <deque>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace popevo {

inline constexpr int kProtocolVersion = 1;
inline constexpr double kDefaultTimeoutSeconds = 300.0;

enum class WeightEncoding { B64Le, Inline };

std::string_view to_string(WeightEncoding e) noexcept;

struct EvalRequest {
    int protocol_version = kProtocolVersion;
    std::uint64_t request_id = 0;
    std::string task_id;
    Split split = Split::Validation;
    WeightEncoding encoding = WeightEncoding::B64Le;
    std::vector<double> weights;
    bool want_predictions = false;
};

struct EvalResponse {
    std::uint64_t request_id = 0;
    bool ok = false;
    double fitness = 0.0;
    std::optional<std::vector<Prediction>> predictions;
    /// Reference labels for the scored samples. Optional; lets the engine
    /// score ensembles of external predictions.
    std::optional<std::vector<Prediction>> labels;
    std::string error_message;
};

/// One line of JSON terminated by '\n'. Throws DimMismatch for an empty
/// weight vector.
std::string encode_request(const EvalRequest& req);
std::string encode_response(const EvalResponse& resp);

/// Accept a line with or without its trailing newline. Throw
/// ProtocolViolation on anything malformed.
EvalRequest decode_request(std::string_view line);
EvalResponse decode_response(std::string_view line);

std::string base64_encode_f64le(std::span<const double> values);
std::vector<double> base64_decode_f64le(std::string_view text);

// --- transports --------------------------------------------------------------

/// Newline-framed duplex byte stream to one evaluator.
class LineChannel {
public:
    virtual ~LineChannel() = default;
    virtual void write_line(std::string_view line) = 0;
    /// Next complete line without its newline; empty on timeout. Throws
    /// ExternalEvaluatorFailure when the peer has gone away.
    virtual std::optional<std::string> read_line(std::chrono::milliseconds timeout) = 0;
};

/// Child process speaking the protocol on its stdin/stdout.
class ChildProcessChannel final : public LineChannel {
public:
    explicit ChildProcessChannel(const std::vector<std::string>& argv);
    ~ChildProcessChannel() override;
    ChildProcessChannel(const ChildProcessChannel&) = delete;
    ChildProcessChannel& operator=(const ChildProcessChannel&) = delete;

    void write_line(std::string_view line) override;
    std::optional<std::string> read_line(std::chrono::milliseconds timeout) override;

private:
    int pid_ = -1;
    int to_child_ = -1;
    int from_child_ = -1;
    std::string buffer_;
};

/// Stream socket client.
class TcpChannel final : public LineChannel {
public:
    TcpChannel(const std::string& host, std::uint16_t port);
    ~TcpChannel() override;
    TcpChannel(const TcpChannel&) = delete;
    TcpChannel& operator=(const TcpChannel&) = delete;

    void write_line(std::string_view line) override;
    std::optional<std::string> read_line(std::chrono::milliseconds timeout) override;

private:
    int fd_ = -1;
    std::string buffer_;
};

/// Reference evaluator serving built-in tasks; the conformance oracle for any
/// external implementation.
class MockEvaluator {
public:
    explicit MockEvaluator(std::vector<TaskSpec> tasks);

    /// Handles one request line and returns the response line (with '\n').
    /// Malformed input yields a status=error response.
    std::string handle_line(std::string_view line) const;

    /// Serves until EOF on `in`.
    void serve(std::istream& in, std::ostream& out) const;

private:
    std::map<std::string, TaskSpec> tasks_;
};

/// In-process endpoint: requests go through the full codec into a
/// MockEvaluator and responses come back as lines.
class LoopbackChannel final : public LineChannel {
public:
    explicit LoopbackChannel(std::shared_ptr<const MockEvaluator> server) : server_(std::move(server)) {}

    void write_line(std::string_view line) override;
    std::optional<std::string> read_line(std::chrono::milliseconds timeout) override;

private:
    std::shared_ptr<const MockEvaluator> server_;
    std::deque<std::string> pending_;
};

/// MockEvaluator behind a loopback TCP listener, one thread per connection.
class MockTcpServer {
public:
    explicit MockTcpServer(std::shared_ptr<const MockEvaluator> server, std::uint16_t port = 0);
    ~MockTcpServer();
    MockTcpServer(const MockTcpServer&) = delete;
    MockTcpServer& operator=(const MockTcpServer&) = delete;

    std::uint16_t port() const noexcept { return port_; }

private:
    std::shared_ptr<const MockEvaluator> server_;
    int listen_fd_ = -1;
    std::uint16_t port_ = 0;
    std::mutex mu_;
    std::vector<std::jthread> connections_;
    std::jthread acceptor_;
};

// --- client ------------------------------------------------------------------

class ExternalClient final : public ExternalBackend {
public:
    explicit ExternalClient(std::unique_ptr<LineChannel> channel, double timeout_s = kDefaultTimeoutSeconds,
                            WeightEncoding encoding = WeightEncoding::B64Le);

    /// Sends one request and waits for its response, retrying once on timeout
    /// with the same request id.
    EvaluationOutcome evaluate(const WeightVector& weights, const TaskSpec& task, bool want_predictions) override;

private:
    std::optional<EvalResponse> await(std::uint64_t id);

    std::unique_ptr<LineChannel> channel_;
    std::chrono::milliseconds timeout_;
    WeightEncoding encoding_;
    std::uint64_t next_id_ = 1;
    std::set<std::uint64_t> retried_;
};

EvaluationOutcome external_evaluate(ExternalClient& client, const Genome& genome, const TaskSpec& task,
                                    bool want_predictions = false);

/// Parses `cmd:<argv...>` or `tcp:<host>:<port>`.
std::unique_ptr<LineChannel> open_endpoint(std::string_view spec);

} // namespace popevo
