#pragma once

#include <array>
#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "symdiff/denoiser.hpp"
#include "symdiff/diffusion.hpp"
#include "symdiff/guidance.hpp"
#include "symdiff/token_model.hpp"
#include "symdiff_tools/job_store.hpp"

namespace httplib {
class Server;
}

namespace symdiff::tools {

struct ModelEntry {
  std::string name;
  std::shared_ptr<const Denoiser> net;
  std::shared_ptr<const DensityClassifier> classifier;  // optional, enables guide jobs
  DiffusionSchedule schedule;
};

// Loads "name=checkpoint[,classifier=path]".
ModelEntry load_model_entry(const std::string& spec);

struct ServiceOptions {
  std::vector<ModelEntry> models;
  std::filesystem::path job_store;  // empty: in-memory only
  int snapshot_every = 32;
};

// One line of the step stream.
nlohmann::json step_message_json(int index, int t, std::size_t remaining, const std::vector<std::array<int, 3>>& deltas);

// HTTP+JSON front end over the sampler, metrics and piece storage.
// Endpoints are documented in docs/http_api.md.
class Service {
 public:
  explicit Service(ServiceOptions options);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Blocking.
  bool listen(const std::string& host, int port);
  // Binds an ephemeral port and serves from a background thread.
  int start_background(const std::string& host = "127.0.0.1");
  void stop();

  // Waits until the job reaches done or failed.
  void wait(const std::string& job_id);

 private:
  struct Job {
    std::mutex mutex;
    std::condition_variable changed;
    std::vector<std::string> stream;  // NDJSON lines
    bool finished = false;
    std::atomic<bool> cancel{false};
    std::thread worker;
  };

  void routes();
  void run_job(const std::string& id, nlohmann::json request);
  void publish(Job& job, const nlohmann::json& line, bool finish = false);
  std::shared_ptr<Job> find_job(const std::string& id);
  const ModelEntry& model(const std::string& name) const;
  std::string store_piece(TokenSequence seq);
  TokenSequence piece_from_request(const nlohmann::json& ref) const;

  ServiceOptions options_;
  std::unique_ptr<httplib::Server> server_;
  std::thread server_thread_;
  JobStore store_;
  mutable std::mutex pieces_mutex_;
  std::map<std::string, std::shared_ptr<const TokenSequence>> pieces_;
  std::size_t next_piece_ = 1;
  std::mutex jobs_mutex_;
  std::map<std::string, std::shared_ptr<Job>> jobs_;
};

}  // namespace symdiff::tools
