#include <doctest.h>

#include <fstream>

#include "fixtures.hpp"
#include "symdiff/error.hpp"
#include "symdiff/random.hpp"
#include "symdiff_tools/base64.hpp"
#include "symdiff_tools/job_store.hpp"

using namespace symdiff;
using namespace symdiff::tools;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an exception");
  return ErrorKind::kParse;
}

}  // namespace

TEST_CASE("base64 known vectors") {
  const auto enc = [](const std::string& s) {
    return base64_encode(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  };
  CHECK(enc("") == "");
  CHECK(enc("f") == "Zg==");
  CHECK(enc("fo") == "Zm8=");
  CHECK(enc("foo") == "Zm9v");
  CHECK(enc("foobar") == "Zm9vYmFy");
  const auto dec = base64_decode("Zm9vYg==");
  CHECK(std::string(dec.begin(), dec.end()) == "foob");
}

TEST_CASE("base64 round trips arbitrary bytes") {
  Rng rng(1);
  for (int n = 0; n < 70; ++n) {
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(n));
    for (auto& b : bytes) b = static_cast<std::uint8_t>(uniform_int(rng, 0, 255));
    CHECK(base64_decode(base64_encode(bytes)) == bytes);
  }
}

TEST_CASE("base64 rejects malformed text") {
  for (const char* bad : {"Zm9", "Zm9v!A==", "Z===", "=Zm9", "Zm=v"}) {
    CAPTURE(bad);
    CHECK(kind_of([&] { base64_decode(bad); }) == ErrorKind::kParse);
  }
}

TEST_CASE("job lifecycle") {
  JobStore store;
  const auto job = store.create("sample", {{"steps", 8}});
  CHECK(job.status == JobStatus::kPending);
  CHECK(job.id == "job-000001");
  CHECK(store.create("infill", {}).id == "job-000002");

  CHECK(kind_of([&] { store.transition(job.id, JobStatus::kDone); }) == ErrorKind::kInvalidArgument);
  store.transition(job.id, JobStatus::kRunning);
  CHECK(kind_of([&] { store.transition(job.id, JobStatus::kPending); }) == ErrorKind::kInvalidArgument);
  store.set_artifact(job.id, "result", "piece-000001");
  store.transition(job.id, JobStatus::kDone);
  CHECK(kind_of([&] { store.transition(job.id, JobStatus::kFailed); }) == ErrorKind::kInvalidArgument);

  const auto back = store.get(job.id);
  REQUIRE(back.has_value());
  CHECK(back->status == JobStatus::kDone);
  CHECK(back->artifacts.at("result") == "piece-000001");
  CHECK_FALSE(store.get("job-999999").has_value());
  CHECK(kind_of([&] { store.transition("job-999999", JobStatus::kRunning); }) == ErrorKind::kNotFound);
  CHECK(kind_of([&] { store.create("dance", {}); }) == ErrorKind::kInvalidArgument);
  CHECK(store.list().size() == 2);
}

TEST_CASE("descriptor json round trip") {
  JobDescriptor d;
  d.id = "job-000007";
  d.kind = "guide";
  d.params = {{"density", {4}}};
  d.status = JobStatus::kFailed;
  d.error_kind = "cancelled";
  d.error = "stopped";
  d.artifacts["log"] = "x";
  const auto j = to_json(d);
  CHECK(j["status"] == "failed");
  CHECK(j["error"]["kind"] == "cancelled");
  const auto back = job_from_json(j);
  CHECK(back.id == d.id);
  CHECK(back.params == d.params);
  CHECK(back.error == "stopped");
  CHECK(back.artifacts == d.artifacts);
  CHECK(kind_of([] { job_from_json({{"id", "x"}}); }) == ErrorKind::kParse);
  CHECK(kind_of([] { job_from_json({{"id", "x"}, {"kind", "sample"}, {"status", "sleeping"}}); }) == ErrorKind::kParse);
}

TEST_CASE("store reloads from disk and fails interrupted jobs") {
  testing::TempDir dir("jobs");
  const auto path = dir / "jobs.ndjson";
  std::string done_id, running_id;
  {
    JobStore store(path);
    done_id = store.create("sample", {}).id;
    store.transition(done_id, JobStatus::kRunning);
    store.transition(done_id, JobStatus::kDone);
    running_id = store.create("infill", {}).id;
    store.transition(running_id, JobStatus::kRunning);
  }
  {
    std::ofstream torn(path, std::ios::app);
    torn << "{\"id\": \"job-0000";
  }
  JobStore again(path);
  CHECK(again.get(done_id)->status == JobStatus::kDone);
  const auto interrupted = again.get(running_id);
  CHECK(interrupted->status == JobStatus::kFailed);
  CHECK(interrupted->error_kind == "interrupted");
  CHECK(again.create("sample", {}).id == "job-000003");
}
