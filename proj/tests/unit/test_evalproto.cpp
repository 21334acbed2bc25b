#include "doctest.h"
#include "support.hpp"

#include "popevo/error.hpp"
#include "popevo/evalproto.hpp"
#include "popevo/persistence.hpp"
#include "popevo/rng.hpp"
#include "popevo/workload.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

using namespace popevo;

namespace {

ErrorCode code_of(auto&& fn)
{
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an Error");
    return ErrorCode::Usage;
}

const std::string kGolden = std::string(POPEVO_SOURCE_DIR) + "/tests/golden/";

std::vector<std::string> read_lines(const std::string& path)
{
    std::ifstream in(path);
    REQUIRE(in);
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line))
        out.push_back(line);
    return out;
}

RunSpec golden_spec()
{
    return run_spec_from_json(nlohmann::json::parse(read_text_file(kGolden + "toy_config.json")));
}

std::string write_script(const testing::TempDir& dir, const std::string& name, const std::string& body)
{
    const auto path = dir.path() / name;
    write_text_file(path, "#!/bin/sh\n" + body);
    return path.string();
}

WeightVector random_weights(Rng& rng, std::size_t d)
{
    std::vector<double> w(d);
    for (auto& x : w)
        x = rng.normal();
    return WeightVector(std::move(w));
}

} // namespace

TEST_CASE("base64 little-endian packing")
{
    // 1.0 is 0x3FF0000000000000; little-endian bytes 00 .. 00 F0 3F.
    CHECK(base64_encode_f64le(std::vector<double>{1.0}) == "AAAAAAAA8D8=");
    CHECK(base64_decode_f64le("AAAAAAAA8D8=") == std::vector<double>{1.0});
    const std::vector<double> odd = {-0.0, 5e-324, std::numeric_limits<double>::max(), 0.1, -3.75};
    const auto back = base64_decode_f64le(base64_encode_f64le(odd));
    REQUIRE(back.size() == odd.size());
    for (std::size_t i = 0; i < odd.size(); ++i)
        CHECK(std::memcmp(&back[i], &odd[i], sizeof(double)) == 0);
    CHECK(code_of([] { base64_decode_f64le("AAAA"); }) == ErrorCode::ProtocolViolation);
    CHECK(code_of([] { base64_decode_f64le("!!!!"); }) == ErrorCode::ProtocolViolation);
}

TEST_CASE("request codec round trip")
{
    Rng rng(3);
    for (WeightEncoding enc : {WeightEncoding::B64Le, WeightEncoding::Inline}) {
        for (int trial = 0; trial < 50; ++trial) {
            EvalRequest req;
            req.request_id = rng.next_u64() >> 12;
            req.task_id = "task_" + std::to_string(trial);
            req.split = trial % 2 ? Split::Test : Split::Validation;
            req.encoding = enc;
            req.weights.resize(1 + rng.uniform_index(30));
            for (auto& w : req.weights)
                w = rng.normal(0.0, 100.0);
            req.want_predictions = trial % 3 == 0;
            const std::string line = encode_request(req);
            CHECK(line.back() == '\n');
            CHECK(std::count(line.begin(), line.end(), '\n') == 1);
            const EvalRequest back = decode_request(line);
            CHECK(back.request_id == req.request_id);
            CHECK(back.task_id == req.task_id);
            CHECK(back.split == req.split);
            CHECK(back.encoding == req.encoding);
            CHECK(back.want_predictions == req.want_predictions);
            REQUIRE(back.weights.size() == req.weights.size());
            for (std::size_t i = 0; i < req.weights.size(); ++i)
                CHECK(std::memcmp(&back.weights[i], &req.weights[i], sizeof(double)) == 0);
            CHECK(encode_request(back) == line);
        }
    }
    EvalRequest empty;
    empty.task_id = "x";
    CHECK(code_of([&] { encode_request(empty); }) == ErrorCode::DimMismatch);
}

TEST_CASE("inline weights decode exactly")
{
    const auto req = decode_request(
        R"({"protocol_version":1,"request_id":4,"task_id":"t","split":"validation","dim":1,"encoding":"inline","weights":[0.5]})");
    CHECK(req.weights == std::vector<double>{0.5});
    CHECK(req.encoding == WeightEncoding::Inline);
    CHECK_FALSE(req.want_predictions);
}

TEST_CASE("malformed requests are protocol violations")
{
    const std::vector<std::string> bad = {
        "",
        "[]",
        "{",
        R"({"request_id":1,"task_id":"t","split":"validation","dim":1,"weights":"AAAAAAAA8D8="})",
        R"({"protocol_version":2,"request_id":1,"task_id":"t","split":"validation","dim":1,"weights":"AAAAAAAA8D8="})",
        R"({"protocol_version":1,"request_id":-1,"task_id":"t","split":"validation","dim":1,"weights":"AAAAAAAA8D8="})",
        R"({"protocol_version":1,"request_id":1,"task_id":"t","split":"train","dim":1,"weights":"AAAAAAAA8D8="})",
        R"({"protocol_version":1,"request_id":1,"task_id":"t","split":"validation","dim":2,"weights":"AAAAAAAA8D8="})",
        R"({"protocol_version":1,"request_id":1,"task_id":"t","split":"validation","dim":1,"encoding":"hex","weights":"00"})",
        R"({"protocol_version":1,"request_id":1,"task_id":7,"split":"validation","dim":1,"weights":"AAAAAAAA8D8="})",
    };
    for (const auto& line : bad) {
        CAPTURE(line);
        CHECK(code_of([&] { decode_request(line); }) == ErrorCode::ProtocolViolation);
    }
    CHECK(code_of([] { decode_response(R"({"request_id":1,"status":"maybe"})"); }) == ErrorCode::ProtocolViolation);
    CHECK(code_of([] { decode_response(R"({"request_id":1,"status":"ok"})"); }) == ErrorCode::ProtocolViolation);
    CHECK(code_of([] { decode_response(R"({"request_id":1,"status":"ok","fitness":"high"})"); }) ==
          ErrorCode::ProtocolViolation);
}

TEST_CASE("response codec round trip")
{
    EvalResponse r;
    r.request_id = 12;
    r.ok = true;
    r.fitness = 0.1 + 0.2;
    r.predictions = std::vector<Prediction>{std::int64_t{2}, 0.25, std::string("text")};
    r.labels = std::vector<Prediction>{std::int64_t{1}, std::int64_t{0}, std::string("text")};
    const auto back = decode_response(encode_response(r));
    CHECK(back.ok);
    CHECK(back.fitness == r.fitness);
    CHECK(*back.predictions == *r.predictions);
    CHECK(*back.labels == *r.labels);

    EvalResponse err;
    err.request_id = 3;
    err.error_message = "boom";
    const auto eb = decode_response(encode_response(err));
    CHECK_FALSE(eb.ok);
    CHECK(eb.error_message == "boom");
    CHECK_FALSE(eb.predictions);
}

TEST_CASE("mock evaluator matches in-process scoring")
{
    const RunSpec spec = golden_spec();
    const auto tasks = build_tasks(spec.workload);
    MockEvaluator mock(tasks);
    Rng rng(11);
    for (int i = 0; i < 100; ++i) {
        const auto w = random_weights(rng, tasks[0].dim);
        EvalRequest req;
        req.request_id = static_cast<std::uint64_t>(i);
        req.task_id = tasks[0].task_id;
        req.split = i % 2 ? Split::Test : Split::Validation;
        req.weights.assign(w.values().begin(), w.values().end());
        req.want_predictions = i % 4 == 0;
        const auto resp = decode_response(mock.handle_line(encode_request(req)));
        REQUIRE(resp.ok);
        CHECK(resp.request_id == req.request_id);
        const auto local = evaluate_builtin(w, tasks[0].on(req.split), req.want_predictions);
        CHECK(resp.fitness == local.fitness);
        CHECK(resp.predictions.has_value() == req.want_predictions);
        if (req.want_predictions) {
            CHECK(*resp.predictions == local.per_task[0].predictions);
            CHECK(*resp.labels == local.per_task[0].labels);
        }
    }

    // Errors come back as responses, not exceptions.
    const auto unknown = decode_response(mock.handle_line(
        R"({"protocol_version":1,"request_id":5,"task_id":"nope","split":"validation","dim":1,"weights":"AAAAAAAA8D8="})"));
    CHECK_FALSE(unknown.ok);
    CHECK(unknown.request_id == 5);
    CHECK(unknown.error_message.find("nope") != std::string::npos);
    CHECK_FALSE(decode_response(mock.handle_line("garbage")).ok);
}

TEST_CASE("sphere predictions are omitted by the mock")
{
    MockEvaluator mock({sphere_inv_task(2, {0.0, 0.0}, "sphere")});
    const auto resp = decode_response(mock.handle_line(
        R"({"protocol_version":1,"request_id":1,"task_id":"sphere","split":"test","dim":2,"encoding":"inline","weights":[1.0,2.0],"want_predictions":true})"));
    REQUIRE(resp.ok);
    CHECK(resp.fitness == 1.0 / 6.0);
    CHECK_FALSE(resp.predictions);
}

TEST_CASE("golden transcript replays byte for byte")
{
    const auto requests = read_lines(kGolden + "toy_requests.ndjson");
    const auto responses = read_lines(kGolden + "toy_responses.ndjson");
    REQUIRE(requests.size() == responses.size());
    REQUIRE(requests.size() >= 10);

    const RunSpec spec = golden_spec();
    const auto tasks = build_tasks(spec.workload);
    MockEvaluator mock(tasks);

    std::stringstream in, out;
    for (const auto& r : requests)
        in << r << "\n";
    mock.serve(in, out);
    std::vector<std::string> served;
    std::string line;
    while (std::getline(out, line))
        served.push_back(line);
    CHECK(served == responses);

    // The recorded fitness values are the in-process ones.
    for (std::size_t i = 0; i < requests.size(); ++i) {
        EvalRequest req;
        try {
            req = decode_request(requests[i]);
        } catch (const Error&) {
            continue;
        }
        const auto resp = decode_response(responses[i]);
        CHECK(resp.request_id == req.request_id);
        if (!resp.ok)
            continue;
        const auto local = evaluate_builtin(WeightVector(req.weights), tasks[0].on(req.split), false);
        CHECK(resp.fitness == local.fitness);
    }

    const auto task = nlohmann::json::parse(read_text_file(kGolden + "toy_task.json"));
    CHECK(task.at("task_id") == tasks[0].task_id);
    CHECK(task.at("dim").get<std::size_t>() == tasks[0].dim);
    CHECK(task.at("dataset_seed").get<std::uint64_t>() == tasks[0].toy.dataset_seed);
    CHECK(task.at("validation_size").get<std::uint32_t>() == tasks[0].toy.validation_size);
}

TEST_CASE("loopback client is transparent")
{
    const RunSpec spec = golden_spec();
    const auto tasks = build_tasks(spec.workload);
    auto server = std::make_shared<const MockEvaluator>(tasks);
    for (WeightEncoding enc : {WeightEncoding::B64Le, WeightEncoding::Inline}) {
        auto client = std::make_shared<ExternalClient>(std::make_unique<LoopbackChannel>(server), 5.0, enc);
        Evaluator remote(as_external(tasks), client);
        Evaluator local(tasks);
        Rng rng(4);
        for (int i = 0; i < 20; ++i) {
            const auto w = random_weights(rng, tasks[0].dim);
            const Split split = i % 2 ? Split::Test : Split::Validation;
            const bool want = i % 3 == 0;
            const auto a = remote.evaluate(w, split, want);
            const auto b = local.evaluate(w, split, want);
            CHECK(a.fitness == b.fitness);
            if (want) {
                REQUIRE(a.per_task.size() == 1);
                CHECK(a.per_task[0].predictions == b.per_task[0].predictions);
                CHECK(a.per_task[0].labels == b.per_task[0].labels);
            }
        }
    }
}

TEST_CASE("evaluator error responses surface as EvaluatorError")
{
    auto server = std::make_shared<const MockEvaluator>(std::vector<TaskSpec>{sphere_inv_task(2, {0.0, 0.0}, "s")});
    ExternalClient client(std::make_unique<LoopbackChannel>(server), 1.0);
    CHECK(code_of([&] { client.evaluate(WeightVector(std::vector<double>{1.0}), external_task(1, "s"), false); }) ==
          ErrorCode::EvaluatorError);
    CHECK(code_of([&] { client.evaluate(WeightVector(std::vector<double>{1.0, 1.0}), external_task(2, "other"), false); }) ==
          ErrorCode::EvaluatorError);
    const auto ok = client.evaluate(WeightVector(std::vector<double>{1.0, 1.0}), external_task(2, "s"), false);
    CHECK(ok.fitness == 1.0 / 3.0);
}

TEST_CASE("child process transport")
{
    testing::TempDir dir("evalproto");

    SUBCASE("serve-mock as a child")
    {
        const RunSpec spec = golden_spec();
        const auto tasks = build_tasks(spec.workload);
        auto channel = open_endpoint(std::string("cmd:") + POPEVO_CLI_PATH + " serve-mock --config " + kGolden +
                                     "toy_config.json");
        ExternalClient client(std::move(channel), 10.0);
        Rng rng(8);
        for (int i = 0; i < 10; ++i) {
            const auto w = random_weights(rng, tasks[0].dim);
            const auto remote = client.evaluate(w, tasks[0], i % 2 == 0);
            const auto local = evaluate_builtin(w, tasks[0], i % 2 == 0);
            CHECK(remote.fitness == local.fitness);
            if (i % 2 == 0)
                CHECK(remote.per_task[0].predictions == local.per_task[0].predictions);
        }
    }

    SUBCASE("wrong request id")
    {
        const auto script = write_script(dir, "wrong_id.sh",
                                         "read line\necho '{\"request_id\":999,\"status\":\"ok\",\"fitness\":0.5}'\n"
                                         "sleep 5\n");
        ExternalClient client(open_endpoint("cmd:/bin/sh " + script), 5.0);
        CHECK(code_of([&] { client.evaluate(WeightVector(std::vector<double>{1.0}), external_task(1, "t"), false); }) ==
              ErrorCode::ProtocolViolation);
    }

    SUBCASE("silent peer times out after one retry")
    {
        const auto script = write_script(dir, "silent.sh", "while read line; do echo \"$line\" >> " +
                                                               (dir.path() / "seen.txt").string() + "; done\n");
        ExternalClient client(open_endpoint("cmd:/bin/sh " + script), 0.2);
        const auto started = std::chrono::steady_clock::now();
        CHECK(code_of([&] { client.evaluate(WeightVector(std::vector<double>{1.0}), external_task(1, "t"), false); }) ==
              ErrorCode::Timeout);
        const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        CHECK(elapsed >= 0.35);
        CHECK(elapsed < 5.0);
    }

    SUBCASE("a late first answer is accepted on retry")
    {
        const auto script = write_script(
            dir, "slow.sh", "read a\nread b\necho '{\"request_id\":1,\"status\":\"ok\",\"fitness\":0.25}'\nsleep 5\n");
        ExternalClient client(open_endpoint("cmd:/bin/sh " + script), 0.3);
        CHECK(client.evaluate(WeightVector(std::vector<double>{1.0}), external_task(1, "t"), false).fitness == 0.25);
    }

    SUBCASE("a dead child is an evaluator failure")
    {
        const auto script = write_script(dir, "dead.sh", "exit 0\n");
        ExternalClient client(open_endpoint("cmd:/bin/sh " + script), 2.0);
        CHECK(code_of([&] { client.evaluate(WeightVector(std::vector<double>{1.0}), external_task(1, "t"), false); }) ==
              ErrorCode::ExternalEvaluatorFailure);
    }
}

TEST_CASE("tcp transport")
{
    const RunSpec spec = golden_spec();
    const auto tasks = build_tasks(spec.workload);
    auto server = std::make_shared<const MockEvaluator>(tasks);
    MockTcpServer tcp(server);
    REQUIRE(tcp.port() != 0);
    auto client = std::make_shared<ExternalClient>(open_endpoint("tcp:127.0.0.1:" + std::to_string(tcp.port())), 5.0);
    Evaluator remote(as_external(tasks), client);
    Rng rng(5);
    for (int i = 0; i < 10; ++i) {
        const auto w = random_weights(rng, tasks[0].dim);
        CHECK(remote.evaluate(w, Split::Validation).fitness ==
              evaluate_builtin(w, tasks[0].on(Split::Validation), false).fitness);
    }
    // A second connection is served independently.
    ExternalClient other(open_endpoint("tcp:127.0.0.1:" + std::to_string(tcp.port())), 5.0);
    const auto w = WeightVector::zeros(tasks[0].dim);
    CHECK(other.evaluate(w, tasks[0], false).fitness == evaluate_builtin(w, tasks[0], false).fitness);
}

TEST_CASE("endpoint specs")
{
    CHECK(code_of([] { open_endpoint("udp:1.2.3.4:5"); }) == ErrorCode::Usage);
    CHECK(code_of([] { open_endpoint("tcp:localhost"); }) == ErrorCode::Usage);
    CHECK(code_of([] { open_endpoint("tcp:localhost:0"); }) == ErrorCode::Usage);
    CHECK(code_of([] { open_endpoint("tcp:localhost:http"); }) == ErrorCode::Usage);
}
