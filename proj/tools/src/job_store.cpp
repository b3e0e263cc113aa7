#include "symdiff_tools/job_store.hpp"

#include <algorithm>
#include <array>
#include <cstdio>

#include "symdiff/error.hpp"

namespace symdiff::tools {
namespace {

JobStatus status_from_string(const std::string& s) {
  if (s == "pending") return JobStatus::kPending;
  if (s == "running") return JobStatus::kRunning;
  if (s == "done") return JobStatus::kDone;
  if (s == "failed") return JobStatus::kFailed;
  throw Error(ErrorKind::kParse, "unknown job status '" + s + "'");
}

std::string format_id(std::size_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "job-%06zu", n);
  return buf;
}

}  // namespace

std::string to_string(JobStatus status) {
  switch (status) {
    case JobStatus::kPending: return "pending";
    case JobStatus::kRunning: return "running";
    case JobStatus::kDone: return "done";
    case JobStatus::kFailed: return "failed";
  }
  return "unknown";
}

bool is_valid_kind(const std::string& kind) {
  static const std::array<std::string, 8> kinds = {"tokenize", "train", "sample", "infill",
                                                   "accompany", "guide", "evaluate", "confound"};
  return std::find(kinds.begin(), kinds.end(), kind) != kinds.end();
}

nlohmann::json to_json(const JobDescriptor& job) {
  nlohmann::json j = {{"id", job.id}, {"kind", job.kind}, {"params", job.params}, {"status", to_string(job.status)},
                      {"artifacts", job.artifacts}};
  if (job.status == JobStatus::kFailed) j["error"] = {{"kind", job.error_kind}, {"message", job.error}};
  return j;
}

JobDescriptor job_from_json(const nlohmann::json& j) {
  JobDescriptor job;
  try {
    job.id = j.at("id").get<std::string>();
    job.kind = j.at("kind").get<std::string>();
    job.params = j.value("params", nlohmann::json::object());
    job.status = status_from_string(j.at("status").get<std::string>());
    job.artifacts = j.value("artifacts", std::map<std::string, std::string>{});
    if (j.contains("error")) {
      job.error_kind = j["error"].value("kind", "");
      job.error = j["error"].value("message", "");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("malformed job record: ") + e.what());
  }
  return job;
}

JobStore::JobStore(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.empty()) return;
  if (std::filesystem::exists(path_)) {
    std::ifstream in(path_);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      JobDescriptor job;
      try {
        job = job_from_json(nlohmann::json::parse(line));
      } catch (const std::exception&) {
        continue;  // torn final line after a crash
      }
      jobs_[job.id] = job;
    }
    for (const auto& [id, job] : jobs_) {
      unsigned long n = 0;
      if (std::sscanf(id.c_str(), "job-%lu", &n) == 1) next_id_ = std::max<std::size_t>(next_id_, n + 1);
    }
  }
  bool torn_tail = false;
  if (std::filesystem::exists(path_) && std::filesystem::file_size(path_) > 0) {
    std::ifstream in(path_, std::ios::binary);
    in.seekg(-1, std::ios::end);
    torn_tail = in.get() != '\n';
  }
  log_.open(path_, std::ios::app);
  if (!log_) throw Error(ErrorKind::kIo, "cannot open job store " + path_.string());
  if (torn_tail) log_ << '\n';
  for (auto& [id, job] : jobs_) {
    if (job.status == JobStatus::kPending || job.status == JobStatus::kRunning) {
      job.status = JobStatus::kFailed;
      job.error_kind = "interrupted";
      job.error = "service stopped before the job finished";
      persist(job);
    }
  }
}

void JobStore::persist(const JobDescriptor& job) {
  if (!log_.is_open()) return;
  log_ << to_json(job).dump() << '\n';
  log_.flush();
}

JobDescriptor JobStore::create(const std::string& kind, nlohmann::json params) {
  if (!is_valid_kind(kind)) throw Error(ErrorKind::kInvalidArgument, "unknown job kind '" + kind + "'");
  std::lock_guard lock(mutex_);
  JobDescriptor job;
  job.id = format_id(next_id_++);
  job.kind = kind;
  job.params = std::move(params);
  jobs_[job.id] = job;
  persist(job);
  return job;
}

void JobStore::transition(const std::string& id, JobStatus to, const std::string& error_kind,
                          const std::string& error) {
  std::lock_guard lock(mutex_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) throw Error(ErrorKind::kNotFound, "no job " + id);
  JobDescriptor& job = it->second;
  const bool ok = (job.status == JobStatus::kPending && to == JobStatus::kRunning) ||
                  (job.status == JobStatus::kRunning && (to == JobStatus::kDone || to == JobStatus::kFailed));
  if (!ok)
    throw Error(ErrorKind::kInvalidArgument,
                "job " + id + " cannot go from " + to_string(job.status) + " to " + to_string(to));
  job.status = to;
  job.error_kind = error_kind;
  job.error = error;
  persist(job);
}

void JobStore::set_artifact(const std::string& id, const std::string& key, const std::string& value) {
  std::lock_guard lock(mutex_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) throw Error(ErrorKind::kNotFound, "no job " + id);
  it->second.artifacts[key] = value;
  persist(it->second);
}

std::optional<JobDescriptor> JobStore::get(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second;
}

std::vector<JobDescriptor> JobStore::list() const {
  std::lock_guard lock(mutex_);
  std::vector<JobDescriptor> out;
  for (const auto& [id, job] : jobs_) out.push_back(job);
  return out;
}

}  // namespace symdiff::tools
