#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace symdiff::tools {

enum class JobStatus { kPending, kRunning, kDone, kFailed };

std::string to_string(JobStatus status);

struct JobDescriptor {
  std::string id;
  std::string kind;  // tokenize | train | sample | infill | accompany | guide | evaluate | confound
  nlohmann::json params = nlohmann::json::object();
  JobStatus status = JobStatus::kPending;
  std::string error_kind;
  std::string error;
  std::map<std::string, std::string> artifacts;
};

nlohmann::json to_json(const JobDescriptor& job);
JobDescriptor job_from_json(const nlohmann::json& j);

bool is_valid_kind(const std::string& kind);

// Single-writer store persisted as line-delimited JSON: every state change
// appends the full descriptor, and reloading keeps the last line per id.
// Jobs that were pending or running when the previous process died come
// back as failed.
class JobStore {
 public:
  explicit JobStore(std::filesystem::path path = {});

  JobDescriptor create(const std::string& kind, nlohmann::json params);
  // Enforces pending -> running -> (done | failed); throws Error(kInvalidArgument)
  // on any other transition.
  void transition(const std::string& id, JobStatus to, const std::string& error_kind = {},
                  const std::string& error = {});
  void set_artifact(const std::string& id, const std::string& key, const std::string& value);
  std::optional<JobDescriptor> get(const std::string& id) const;
  std::vector<JobDescriptor> list() const;

 private:
  void persist(const JobDescriptor& job);

  std::filesystem::path path_;
  std::ofstream log_;
  mutable std::mutex mutex_;
  std::map<std::string, JobDescriptor> jobs_;
  std::size_t next_id_ = 1;
};

}  // namespace symdiff::tools
