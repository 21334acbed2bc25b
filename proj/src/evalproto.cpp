#include "popevo/evalproto.hpp"

#include "popevo/error.hpp"

#include "json.hpp"

#include <sodium.h>

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <bit>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <type_traits>

namespace popevo {

using nlohmann::json;

std::string_view to_string(WeightEncoding e) noexcept
{
    return e == WeightEncoding::B64Le ? "b64le" : "inline";
}

// --- codec -------------------------------------------------------------------

std::string base64_encode_f64le(std::span<const double> values)
{
    std::vector<unsigned char> bytes(values.size() * 8);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto bits = std::bit_cast<std::uint64_t>(values[i]);
        for (int b = 0; b < 8; ++b)
            bytes[i * 8 + b] = static_cast<unsigned char>(bits >> (8 * b));
    }
    const std::size_t len = sodium_base64_ENCODED_LEN(bytes.size(), sodium_base64_VARIANT_ORIGINAL);
    std::string out(len, '\0');
    sodium_bin2base64(out.data(), len, bytes.data(), bytes.size(), sodium_base64_VARIANT_ORIGINAL);
    out.resize(std::strlen(out.c_str()));
    return out;
}

std::vector<double> base64_decode_f64le(std::string_view text)
{
    std::vector<unsigned char> bytes(text.size());
    std::size_t n = 0;
    if (sodium_base642bin(bytes.data(), bytes.size(), text.data(), text.size(), nullptr, &n, nullptr,
                          sodium_base64_VARIANT_ORIGINAL) != 0)
        throw Error(ErrorCode::ProtocolViolation, "weights are not valid base64");
    if (n % 8 != 0)
        throw Error(ErrorCode::ProtocolViolation, "weight bytes are not a multiple of 8");
    std::vector<double> out(n / 8);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b)
            bits |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
        out[i] = std::bit_cast<double>(bits);
    }
    return out;
}

namespace {

json prediction_to_json(const Prediction& p)
{
    return std::visit([](const auto& v) { return json(v); }, p);
}

Prediction prediction_from_json(const json& v)
{
    if (v.is_number_integer())
        return Prediction{v.get<std::int64_t>()};
    if (v.is_number_float())
        return Prediction{v.get<double>()};
    if (v.is_string())
        return Prediction{v.get<std::string>()};
    throw Error(ErrorCode::ProtocolViolation, "prediction must be a number or a string");
}

std::vector<Prediction> predictions_from_json(const json& arr, const char* field)
{
    if (!arr.is_array())
        throw Error(ErrorCode::ProtocolViolation, std::string("'") + field + "' must be an array");
    std::vector<Prediction> out;
    out.reserve(arr.size());
    for (const json& v : arr)
        out.push_back(prediction_from_json(v));
    return out;
}

json parse_line(std::string_view line)
{
    if (!line.empty() && line.back() == '\n')
        line.remove_suffix(1);
    try {
        json doc = json::parse(line);
        if (!doc.is_object())
            throw Error(ErrorCode::ProtocolViolation, "message must be a JSON object");
        return doc;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ProtocolViolation, std::string("unparseable message: ") + e.what());
    }
}

template <typename T>
T field(const json& doc, const char* name)
{
    if (!doc.contains(name))
        throw Error(ErrorCode::ProtocolViolation, std::string("missing field '") + name + "'");
    if constexpr (std::is_same_v<T, std::uint64_t>) {
        // nlohmann would wrap a negative integer around silently.
        if (!doc.at(name).is_number_unsigned())
            throw Error(ErrorCode::ProtocolViolation, std::string("field '") + name + "' must be a non-negative integer");
    }
    try {
        return doc.at(name).get<T>();
    } catch (const json::exception&) {
        throw Error(ErrorCode::ProtocolViolation, std::string("bad type for field '") + name + "'");
    }
}

} // namespace

std::string encode_request(const EvalRequest& req)
{
    if (req.weights.empty())
        throw Error(ErrorCode::DimMismatch, "request must carry at least one weight");
    json doc;
    doc["protocol_version"] = req.protocol_version;
    doc["request_id"] = req.request_id;
    doc["task_id"] = req.task_id;
    doc["split"] = std::string(to_string(req.split));
    doc["dim"] = req.weights.size();
    doc["encoding"] = std::string(to_string(req.encoding));
    if (req.encoding == WeightEncoding::B64Le)
        doc["weights"] = base64_encode_f64le(req.weights);
    else
        doc["weights"] = req.weights;
    doc["want_predictions"] = req.want_predictions;
    return doc.dump() + "\n";
}

EvalRequest decode_request(std::string_view line)
{
    const json doc = parse_line(line);
    EvalRequest req;
    req.protocol_version = field<int>(doc, "protocol_version");
    if (req.protocol_version != kProtocolVersion)
        throw Error(ErrorCode::ProtocolViolation, "unsupported protocol_version " + std::to_string(req.protocol_version));
    req.request_id = field<std::uint64_t>(doc, "request_id");
    req.task_id = field<std::string>(doc, "task_id");
    try {
        req.split = split_from_string(field<std::string>(doc, "split"));
    } catch (const Error&) {
        throw Error(ErrorCode::ProtocolViolation, "split must be 'validation' or 'test'");
    }
    const auto dim = field<std::uint64_t>(doc, "dim");
    const auto enc = doc.contains("encoding") ? field<std::string>(doc, "encoding") : std::string("b64le");
    if (enc == "b64le") {
        req.encoding = WeightEncoding::B64Le;
        req.weights = base64_decode_f64le(field<std::string>(doc, "weights"));
    } else if (enc == "inline") {
        req.encoding = WeightEncoding::Inline;
        req.weights = field<std::vector<double>>(doc, "weights");
    } else {
        throw Error(ErrorCode::ProtocolViolation, "unknown encoding '" + enc + "'");
    }
    if (req.weights.size() != dim)
        throw Error(ErrorCode::ProtocolViolation, "decoded " + std::to_string(req.weights.size()) +
                                                      " weights but dim is " + std::to_string(dim));
    req.want_predictions = doc.contains("want_predictions") ? field<bool>(doc, "want_predictions") : false;
    return req;
}

std::string encode_response(const EvalResponse& resp)
{
    json doc;
    doc["request_id"] = resp.request_id;
    doc["status"] = resp.ok ? "ok" : "error";
    if (resp.ok) {
        doc["fitness"] = resp.fitness;
        if (resp.predictions) {
            json arr = json::array();
            for (const auto& p : *resp.predictions)
                arr.push_back(prediction_to_json(p));
            doc["predictions"] = std::move(arr);
        }
        if (resp.labels) {
            json arr = json::array();
            for (const auto& p : *resp.labels)
                arr.push_back(prediction_to_json(p));
            doc["labels"] = std::move(arr);
        }
    } else {
        doc["error_message"] = resp.error_message;
    }
    return doc.dump() + "\n";
}

EvalResponse decode_response(std::string_view line)
{
    const json doc = parse_line(line);
    EvalResponse resp;
    resp.request_id = field<std::uint64_t>(doc, "request_id");
    const auto status = field<std::string>(doc, "status");
    if (status == "ok") {
        resp.ok = true;
        resp.fitness = field<double>(doc, "fitness");
        if (!std::isfinite(resp.fitness))
            throw Error(ErrorCode::ProtocolViolation, "fitness must be finite");
        if (doc.contains("predictions"))
            resp.predictions = predictions_from_json(doc.at("predictions"), "predictions");
        if (doc.contains("labels"))
            resp.labels = predictions_from_json(doc.at("labels"), "labels");
    } else if (status == "error") {
        resp.ok = false;
        resp.error_message = doc.contains("error_message") ? field<std::string>(doc, "error_message") : "";
    } else {
        throw Error(ErrorCode::ProtocolViolation, "status must be 'ok' or 'error'");
    }
    return resp;
}

// --- fd helpers --------------------------------------------------------------

namespace {

void ignore_sigpipe()
{
    static const bool once = [] {
        ::signal(SIGPIPE, SIG_IGN);
        return true;
    }();
    (void)once;
}

void write_all(int fd, std::string_view data)
{
    while (!data.empty()) {
        const ssize_t n = ::write(fd, data.data(), data.size());
        if (n < 0) {
            if (errno == EINTR)
                continue;
            throw Error(ErrorCode::ExternalEvaluatorFailure, std::string("write failed: ") + std::strerror(errno));
        }
        data.remove_prefix(static_cast<std::size_t>(n));
    }
}

std::optional<std::string> read_line_fd(int fd, std::string& buffer, std::chrono::milliseconds timeout)
{
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
        if (auto nl = buffer.find('\n'); nl != std::string::npos) {
            std::string line = buffer.substr(0, nl);
            buffer.erase(0, nl + 1);
            return line;
        }
        const auto remaining =
            std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (remaining.count() <= 0)
            return std::nullopt;
        pollfd pfd{fd, POLLIN, 0};
        const int rc = ::poll(&pfd, 1, static_cast<int>(remaining.count()));
        if (rc < 0) {
            if (errno == EINTR)
                continue;
            throw Error(ErrorCode::ExternalEvaluatorFailure, std::string("poll failed: ") + std::strerror(errno));
        }
        if (rc == 0)
            return std::nullopt;
        char chunk[65536];
        const ssize_t n = ::read(fd, chunk, sizeof(chunk));
        if (n < 0) {
            if (errno == EINTR)
                continue;
            throw Error(ErrorCode::ExternalEvaluatorFailure, std::string("read failed: ") + std::strerror(errno));
        }
        if (n == 0)
            throw Error(ErrorCode::ExternalEvaluatorFailure, "evaluator closed the connection");
        buffer.append(chunk, static_cast<std::size_t>(n));
    }
}

} // namespace

// --- child process -------------------------------------------------------------

ChildProcessChannel::ChildProcessChannel(const std::vector<std::string>& argv)
{
    if (argv.empty())
        throw Error(ErrorCode::Usage, "evaluator command is empty");
    ignore_sigpipe();
    int in_pipe[2];
    int out_pipe[2];
    if (::pipe(in_pipe) != 0 || ::pipe(out_pipe) != 0)
        throw Error(ErrorCode::ExternalEvaluatorFailure, "pipe() failed");

    std::vector<char*> args;
    for (const auto& a : argv)
        args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);

    pid_ = ::fork();
    if (pid_ < 0)
        throw Error(ErrorCode::ExternalEvaluatorFailure, "fork() failed");
    if (pid_ == 0) {
        ::dup2(in_pipe[0], STDIN_FILENO);
        ::dup2(out_pipe[1], STDOUT_FILENO);
        ::close(in_pipe[0]);
        ::close(in_pipe[1]);
        ::close(out_pipe[0]);
        ::close(out_pipe[1]);
        ::execvp(args[0], args.data());
        ::_exit(127);
    }
    ::close(in_pipe[0]);
    ::close(out_pipe[1]);
    to_child_ = in_pipe[1];
    from_child_ = out_pipe[0];
    ::fcntl(to_child_, F_SETFD, FD_CLOEXEC);
    ::fcntl(from_child_, F_SETFD, FD_CLOEXEC);
}

ChildProcessChannel::~ChildProcessChannel()
{
    if (to_child_ >= 0)
        ::close(to_child_);
    if (from_child_ >= 0)
        ::close(from_child_);
    if (pid_ > 0) {
        for (int i = 0; i < 20; ++i) {
            if (::waitpid(pid_, nullptr, WNOHANG) == pid_)
                return;
            ::usleep(10000);
        }
        ::kill(pid_, SIGKILL);
        ::waitpid(pid_, nullptr, 0);
    }
}

void ChildProcessChannel::write_line(std::string_view line)
{
    write_all(to_child_, line);
}

std::optional<std::string> ChildProcessChannel::read_line(std::chrono::milliseconds timeout)
{
    return read_line_fd(from_child_, buffer_, timeout);
}

// --- tcp -----------------------------------------------------------------------

TcpChannel::TcpChannel(const std::string& host, std::uint16_t port)
{
    ignore_sigpipe();
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const std::string service = std::to_string(port);
    if (::getaddrinfo(host.c_str(), service.c_str(), &hints, &res) != 0)
        throw Error(ErrorCode::ExternalEvaluatorFailure, "cannot resolve " + host);
    for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
        fd_ = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
        if (fd_ < 0)
            continue;
        if (::connect(fd_, ai->ai_addr, ai->ai_addrlen) == 0)
            break;
        ::close(fd_);
        fd_ = -1;
    }
    ::freeaddrinfo(res);
    if (fd_ < 0)
        throw Error(ErrorCode::ExternalEvaluatorFailure, "cannot connect to " + host + ":" + service);
}

TcpChannel::~TcpChannel()
{
    if (fd_ >= 0)
        ::close(fd_);
}

void TcpChannel::write_line(std::string_view line)
{
    write_all(fd_, line);
}

std::optional<std::string> TcpChannel::read_line(std::chrono::milliseconds timeout)
{
    return read_line_fd(fd_, buffer_, timeout);
}

// --- mock evaluator ------------------------------------------------------------

MockEvaluator::MockEvaluator(std::vector<TaskSpec> tasks)
{
    for (auto& t : tasks) {
        if (t.kind == TaskKind::External)
            throw Error(ErrorCode::InvalidTask, "mock evaluator serves built-in tasks only");
        const std::string id = t.task_id;
        tasks_.emplace(id, std::move(t));
    }
}

std::string MockEvaluator::handle_line(std::string_view line) const
{
    EvalResponse resp;
    try {
        // Echo the id when the line is at least valid JSON carrying one.
        try {
            std::string_view body = line;
            if (!body.empty() && body.back() == '\n')
                body.remove_suffix(1);
            const json doc = json::parse(body);
            if (doc.is_object() && doc.contains("request_id") && doc["request_id"].is_number_unsigned())
                resp.request_id = doc["request_id"].get<std::uint64_t>();
        } catch (const json::exception&) {
        }
        const EvalRequest req = decode_request(line);
        auto it = tasks_.find(req.task_id);
        if (it == tasks_.end())
            throw Error(ErrorCode::InvalidTask, "unknown task_id '" + req.task_id + "'");
        const EvaluationOutcome out =
            evaluate_builtin(WeightVector(req.weights), it->second.on(req.split), req.want_predictions);
        resp.ok = true;
        resp.fitness = out.fitness;
        if (req.want_predictions && it->second.kind == TaskKind::ToyClassifier) {
            resp.predictions = out.per_task.empty() ? std::vector<Prediction>{} : out.per_task.front().predictions;
            resp.labels = out.per_task.empty() ? std::vector<Prediction>{} : out.per_task.front().labels;
        }
    } catch (const std::exception& e) {
        resp.ok = false;
        resp.error_message = e.what();
    }
    return encode_response(resp);
}

void MockEvaluator::serve(std::istream& in, std::ostream& out) const
{
    std::string line;
    while (std::getline(in, line)) {
        out << handle_line(line);
        out.flush();
    }
}

void LoopbackChannel::write_line(std::string_view line)
{
    pending_.push_back(server_->handle_line(line));
}

std::optional<std::string> LoopbackChannel::read_line(std::chrono::milliseconds)
{
    if (pending_.empty())
        return std::nullopt;
    std::string line = std::move(pending_.front());
    pending_.pop_front();
    if (!line.empty() && line.back() == '\n')
        line.pop_back();
    return line;
}

MockTcpServer::MockTcpServer(std::shared_ptr<const MockEvaluator> server, std::uint16_t port)
    : server_(std::move(server))
{
    ignore_sigpipe();
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0)
        throw Error(ErrorCode::IoError, "socket() failed");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(port);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 || ::listen(listen_fd_, 8) != 0) {
        ::close(listen_fd_);
        throw Error(ErrorCode::IoError, "cannot listen on port " + std::to_string(port));
    }
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);

    acceptor_ = std::jthread([this](std::stop_token stop) {
        while (!stop.stop_requested()) {
            pollfd pfd{listen_fd_, POLLIN, 0};
            if (::poll(&pfd, 1, 50) <= 0)
                continue;
            const int conn = ::accept(listen_fd_, nullptr, nullptr);
            if (conn < 0)
                continue;
            std::lock_guard lock(mu_);
            connections_.emplace_back([this, conn](std::stop_token inner) {
                std::string buffer;
                while (!inner.stop_requested()) {
                    std::optional<std::string> line;
                    try {
                        line = read_line_fd(conn, buffer, std::chrono::milliseconds(50));
                    } catch (const Error&) {
                        break;
                    }
                    if (!line)
                        continue;
                    try {
                        write_all(conn, server_->handle_line(*line));
                    } catch (const Error&) {
                        break;
                    }
                }
                ::close(conn);
            });
        }
    });
}

MockTcpServer::~MockTcpServer()
{
    // The acceptor appends connection threads; stop it first.
    acceptor_.request_stop();
    acceptor_.join();
    {
        std::lock_guard lock(mu_);
        connections_.clear();
    }
    ::close(listen_fd_);
}

// --- client ------------------------------------------------------------------

ExternalClient::ExternalClient(std::unique_ptr<LineChannel> channel, double timeout_s, WeightEncoding encoding)
    : channel_(std::move(channel)),
      timeout_(std::chrono::milliseconds(static_cast<std::int64_t>(std::llround(timeout_s * 1000.0)))),
      encoding_(encoding)
{
}

std::optional<EvalResponse> ExternalClient::await(std::uint64_t id)
{
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    for (;;) {
        const auto remaining =
            std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (remaining.count() <= 0)
            return std::nullopt;
        auto line = channel_->read_line(remaining);
        if (!line)
            return std::nullopt;
        EvalResponse resp = decode_response(*line);
        if (resp.request_id == id)
            return resp;
        // A late answer to an earlier, already retried request.
        if (retried_.contains(resp.request_id))
            continue;
        throw Error(ErrorCode::ProtocolViolation, "response for request " + std::to_string(resp.request_id) +
                                                      " while awaiting " + std::to_string(id));
    }
}

EvaluationOutcome ExternalClient::evaluate(const WeightVector& weights, const TaskSpec& task, bool want_predictions)
{
    const auto started = std::chrono::steady_clock::now();
    EvalRequest req;
    req.request_id = next_id_++;
    req.task_id = task.task_id;
    req.split = task.split;
    req.encoding = encoding_;
    req.weights.assign(weights.values().begin(), weights.values().end());
    req.want_predictions = want_predictions;
    const std::string line = encode_request(req);

    channel_->write_line(line);
    std::optional<EvalResponse> resp = await(req.request_id);
    if (!resp) {
        retried_.insert(req.request_id);
        channel_->write_line(line);
        resp = await(req.request_id);
    }
    if (!resp)
        throw Error(ErrorCode::Timeout, "no response to request " + std::to_string(req.request_id) + " after retry");
    if (!resp->ok)
        throw Error(ErrorCode::EvaluatorError, "evaluator reported: " + resp->error_message);

    EvaluationOutcome out;
    out.fitness = resp->fitness;
    if (want_predictions && resp->predictions) {
        TaskPredictions preds;
        preds.task_id = task.task_id;
        preds.predictions = std::move(*resp->predictions);
        if (resp->labels)
            preds.labels = std::move(*resp->labels);
        out.per_task.push_back(std::move(preds));
    }
    out.evaluation_cost = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return out;
}

EvaluationOutcome external_evaluate(ExternalClient& client, const Genome& genome, const TaskSpec& task,
                                    bool want_predictions)
{
    return client.evaluate(genome.weights, task, want_predictions);
}

std::unique_ptr<LineChannel> open_endpoint(std::string_view spec)
{
    if (spec.starts_with("cmd:")) {
        std::istringstream in{std::string(spec.substr(4))};
        std::vector<std::string> argv;
        std::string tok;
        while (in >> tok)
            argv.push_back(tok);
        return std::make_unique<ChildProcessChannel>(argv);
    }
    if (spec.starts_with("tcp:")) {
        const std::string rest(spec.substr(4));
        const auto colon = rest.rfind(':');
        if (colon == std::string::npos || colon == 0)
            throw Error(ErrorCode::Usage, "tcp endpoint must look like tcp:<host>:<port>");
        int port = 0;
        try {
            port = std::stoi(rest.substr(colon + 1));
        } catch (const std::exception&) {
            throw Error(ErrorCode::Usage, "bad port in '" + std::string(spec) + "'");
        }
        if (port <= 0 || port > 65535)
            throw Error(ErrorCode::Usage, "bad port in '" + std::string(spec) + "'");
        return std::make_unique<TcpChannel>(rest.substr(0, colon), static_cast<std::uint16_t>(port));
    }
    throw Error(ErrorCode::Usage, "evaluator must be cmd:<argv> or tcp:<host>:<port>");
}

} // namespace popevo
