#include <doctest.h>

#include <sstream>

#include "fixtures.hpp"
#include "symdiff/error.hpp"
#include "symdiff/mask_pattern.hpp"
#include "symdiff_tools/base64.hpp"
#include "symdiff_tools/service.hpp"

// After Eigen: <resolv.h> defines a _res macro that clashes with Eigen internals.
#include <httplib.h>

using namespace symdiff;
using namespace symdiff::tools;
using nlohmann::json;

namespace {

ModelEntry small_model(const std::string& name, int tracks, int steps, int timesteps) {
  DenoiserConfig c;
  c.tracks = tracks;
  c.steps = steps;
  c.embed_dim = 8;
  c.summary_dim = 16;
  c.layers = 1;
  c.heads = 2;
  ModelEntry m;
  m.name = name;
  m.net = std::make_shared<const Denoiser>(c, 3);
  m.schedule.timesteps = timesteps;
  return m;
}

std::string b64(const TokenSequence& seq) { return base64_encode(encode_tokens(std::span<const TokenSequence>(&seq, 1))); }

TokenSequence unb64(const std::string& s) { return decode_tokens(base64_decode(s)).at(0); }

std::vector<json> lines(const std::string& body) {
  std::vector<json> out;
  std::istringstream in(body);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

struct Fixture {
  Service service;
  int port;
  httplib::Client client;

  explicit Fixture(std::vector<ModelEntry> models)
      : service(ServiceOptions{std::move(models), {}, 4}), port(service.start_background()), client("127.0.0.1", port) {
    client.set_read_timeout(600, 0);
  }

  json post(const std::string& path, const json& body, int expect) {
    auto res = client.Post(path, body.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == expect);
    return json::parse(res->body);
  }
  json get(const std::string& path, int expect) {
    auto res = client.Get(path);
    REQUIRE(res);
    CHECK(res->status == expect);
    return json::parse(res->body);
  }
  std::vector<json> stream(const std::string& id) {
    auto res = client.Get("/jobs/" + id + "/stream");
    REQUIRE(res);
    CHECK(res->status == 200);
    return lines(res->body);
  }
};

}  // namespace

TEST_CASE("models and piece storage") {
  Fixture f({small_model("melody", 1, 64, 64), small_model("trio", 3, 64, 64)});
  const auto models = f.get("/models", 200)["models"];
  REQUIRE(models.size() == 2);
  CHECK(models[1]["tracks"] == 3);
  CHECK(models[0]["timesteps"] == 64);
  CHECK(models[0]["guidance"] == false);

  const auto melody = testing::varied_melodies(1, 4, 2).front();
  const auto ids = f.post("/pieces", {{"tokens", b64(melody)}}, 201)["ids"];
  REQUIRE(ids.size() == 1);
  const auto piece = f.get("/pieces/" + ids[0].get<std::string>(), 200);
  CHECK(unb64(piece["tokens"]) == melody);
  CHECK(piece["steps"] == 64);

  const auto midi = testing::messy_midi(5, true, 8);
  const auto trio_ids = f.post("/pieces", {{"midi", base64_encode(midi)}, {"mode", "trio"}, {"steps", 64}}, 201)["ids"];
  CHECK(f.get("/pieces/" + trio_ids[0].get<std::string>(), 200)["tracks"] == 3);

  auto exported = f.client.Get("/pieces/" + ids[0].get<std::string>() + "/midi");
  REQUIRE(exported);
  CHECK(exported->status == 200);
  CHECK(exported->body.substr(0, 4) == "MThd");

  // Four bars make a single window; evaluation needs at least one adjacent pair.
  const auto longer = f.post("/pieces", {{"tokens", b64(testing::varied_melodies(1, 8, 2).front())}}, 201)["ids"];
  const auto report = f.post("/evaluate", {{"set", longer}, {"ground_truth", longer}}, 200);
  CHECK(report["pitch"]["consistency"] == 1.0);
  CHECK(report["table"].get<std::string>().find("1.00") != std::string::npos);
}

TEST_CASE("sample job streams one message per step") {
  Fixture f({small_model("melody", 1, 64, 64)});
  const auto job = f.post("/jobs", {{"kind", "sample"}, {"steps", 16}, {"seed", 3}}, 202);
  const std::string id = job["id"];
  CHECK(job["status"] == "pending");
  f.service.wait(id);

  const auto msgs = f.stream(id);
  REQUIRE(msgs.size() == 18);
  CHECK(msgs.front()["type"] == "start");
  CHECK(msgs.front()["steps"] == 16);
  CHECK(msgs.back()["type"] == "done");
  TokenSequence rebuilt = unb64(msgs.front()["piece"]);
  for (int i = 1; i <= 16; ++i) {
    const auto& m = msgs[static_cast<std::size_t>(i)];
    CHECK(m["type"] == "step");
    CHECK(m["index"] == i);
    CHECK(m["t"] == 17 - i);
    for (const auto& d : m["deltas"]) rebuilt.set(d[0], d[1], static_cast<Token>(d[2].get<int>()));
    CHECK(rebuilt.count_masks() == m["remaining_masks"].get<std::size_t>());
    if (i % 4 == 0) CHECK(unb64(m["snapshot"]) == rebuilt);
  }
  const auto result = f.get("/jobs/" + id + "/result", 200);
  CHECK(unb64(result["tokens"]) == rebuilt);
  CHECK(f.get("/jobs/" + id, 200)["status"] == "done");
  CHECK(f.get("/jobs", 200)["jobs"].size() == 1);
}

TEST_CASE("infill keeps context and an all-false mask is a no-op") {
  Fixture f({small_model("trio", 3, 64, 64)});
  const auto trio = testing::random_trio(64, 4);
  MaskPattern mask = MaskPattern::span(64, 3, 16, 32, {0, 2});

  const auto job = f.post("/jobs", {{"kind", "infill"}, {"piece", {{"tokens", b64(trio)}}}, {"mask", mask_to_json(mask)}, {"steps", 8}}, 202);
  f.service.wait(job["id"]);
  const auto out = unb64(f.get("/jobs/" + job["id"].get<std::string>() + "/result", 200)["tokens"]);
  for (int s = 0; s < 64; ++s)
    for (int tr = 0; tr < 3; ++tr)
      if (!mask.at(s, tr)) CHECK(out.at(s, tr) == trio.at(s, tr));

  const auto none = f.post("/jobs", {{"kind", "infill"}, {"piece", {{"tokens", b64(trio)}}}, {"mask", mask_to_json(MaskPattern(64, 3))}}, 202);
  f.service.wait(none["id"]);
  const auto msgs = f.stream(none["id"]);
  REQUIRE(msgs.size() == 2);
  CHECK(msgs[0]["steps"] == 0);
  CHECK(msgs[1]["type"] == "done");
  CHECK(unb64(f.get("/jobs/" + none["id"].get<std::string>() + "/result", 200)["tokens"]) == trio);

  const auto acc = f.post("/jobs", {{"kind", "accompany"}, {"piece", {{"tokens", b64(trio)}}}, {"tracks", {1}}, {"steps", 4}}, 202);
  f.service.wait(acc["id"]);
  const auto accompanied = unb64(f.get("/jobs/" + acc["id"].get<std::string>() + "/result", 200)["tokens"]);
  for (int s = 0; s < 64; ++s) CHECK(accompanied.at(s, 0) == trio.at(s, 0));
}

TEST_CASE("cancellation keeps the partial trace") {
  Fixture f({small_model("long", 1, 1024, 1024)});
  const auto job = f.post("/jobs", {{"kind", "sample"}, {"steps", 1024}}, 202);
  const std::string id = job["id"];
  std::string body;
  bool cancelled = false;
  httplib::Client canceller("127.0.0.1", f.port);
  auto res = f.client.Get("/jobs/" + id + "/stream", [&](const char* data, std::size_t n) {
    body.append(data, n);
    if (!cancelled && body.find("\"type\":\"step\"") != std::string::npos) {
      auto c = canceller.Post("/jobs/" + id + "/cancel", "", "application/json");
      CHECK(c);
      CHECK(c->status == 202);
      cancelled = true;
    }
    return true;
  });
  REQUIRE(res);
  const auto msgs = lines(body);
  REQUIRE(msgs.size() >= 3);
  CHECK(msgs.back()["type"] == "failed");
  CHECK(msgs.back()["error"]["kind"] == "cancelled");
  const std::size_t steps = msgs.size() - 2;
  CHECK(steps < 1024);
  for (std::size_t i = 1; i <= steps; ++i) CHECK(msgs[i]["index"] == i);

  const auto desc = f.get("/jobs/" + id, 200);
  CHECK(desc["status"] == "failed");
  CHECK(desc["error"]["kind"] == "cancelled");
  CHECK(f.get("/jobs/" + id + "/result", 409)["error"]["kind"] == "cancelled");
  // The stream can be replayed after the fact.
  CHECK(f.stream(id).size() == msgs.size());
}

TEST_CASE("error responses") {
  Fixture f({small_model("melody", 1, 64, 64)});
  CHECK(f.post("/jobs", {{"kind", "dance"}}, 400)["error"]["kind"] == "invalid_argument");
  CHECK(f.post("/jobs", {{"kind", "sample"}, {"model", "nope"}}, 404)["error"]["kind"] == "not_found");
  CHECK(f.post("/jobs", {{"kind", "guide"}, {"density", {4}}}, 400)["error"]["kind"] == "invalid_argument");
  const auto melody = testing::varied_melodies(1, 4, 2).front();
  CHECK(f.post("/jobs", {{"kind", "infill"}, {"piece", {{"tokens", b64(melody)}}}, {"mask", mask_to_json(MaskPattern(32, 1))}}, 400)
            ["error"]["kind"] == "shape_mismatch");
  CHECK(f.post("/jobs", {{"kind", "infill"}, {"piece", {{"tokens", b64(melody)}}}, {"mask", {{"steps", 64}}}}, 400)
            ["error"].contains("kind"));
  CHECK(f.post("/jobs", {{"kind", "infill"}, {"piece", "piece-424242"}, {"mask", "central512"}}, 404)["error"]["kind"] ==
        "not_found");
  CHECK(f.get("/jobs/job-424242", 404)["error"]["kind"] == "not_found");
  CHECK(f.get("/jobs/job-424242/result", 404)["error"]["kind"] == "not_found");
  CHECK(f.get("/pieces/piece-424242", 404)["error"]["kind"] == "not_found");
  CHECK(f.post("/pieces", {{"tokens", "!!!"}}, 400)["error"]["kind"] == "parse_error");
  CHECK(f.post("/pieces", {{"nothing", 1}}, 400)["error"]["kind"] == "invalid_argument");

  auto res = f.client.Post("/pieces", "{not json", "application/json");
  REQUIRE(res);
  CHECK(res->status == 400);
  CHECK(json::parse(res->body)["error"]["kind"] == "parse_error");

  // Accompaniment of a melody piece fails inside the job.
  const auto job = f.post("/jobs", {{"kind", "accompany"}, {"piece", {{"tokens", b64(melody)}}}, {"tracks", {1}}}, 202);
  f.service.wait(job["id"]);
  const auto desc = f.get("/jobs/" + job["id"].get<std::string>(), 200);
  CHECK(desc["status"] == "failed");
  CHECK(desc["error"]["kind"] == "unsupported");
}

TEST_CASE("model specs") {
  CHECK_THROWS_AS(load_model_entry("no-equals-sign"), Error);
  CHECK_THROWS_AS(load_model_entry("x=/nonexistent.ckpt"), Error);
  CHECK_THROWS_AS(Service(ServiceOptions{}), Error);
  const auto line = step_message_json(3, 7, 10, {{1, 0, 42}});
  CHECK(line.dump() == R"({"deltas":[[1,0,42]],"index":3,"remaining_masks":10,"t":7,"type":"step"})");
}
