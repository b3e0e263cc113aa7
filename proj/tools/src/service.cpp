#include "symdiff_tools/service.hpp"

#include <httplib.h>

#include <chrono>
#include <cstdio>
#include <optional>

#include "symdiff/checkpoint.hpp"
#include "symdiff/error.hpp"
#include "symdiff/mask_pattern.hpp"
#include "symdiff/metrics.hpp"
#include "symdiff/midi.hpp"
#include "symdiff/sampler.hpp"
#include "symdiff_tools/base64.hpp"

namespace symdiff::tools {
namespace {

int http_status(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kNotFound: return 404;
    case ErrorKind::kCancelled: return 409;
    case ErrorKind::kIo:
    case ErrorKind::kDiverged: return 500;
    default: return 400;
  }
}

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& kind, const std::string& message) {
  send_json(res, status, {{"error", {{"kind", kind}, {"message", message}}}});
}

// Runs a handler and turns exceptions into structured error responses.
template <typename F>
void guarded(httplib::Response& res, F&& body) {
  try {
    body();
  } catch (const Error& e) {
    send_error(res, http_status(e.kind()), std::string(to_string(e.kind())), e.what());
  } catch (const nlohmann::json::exception& e) {
    send_error(res, 400, "parse", e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, "internal", e.what());
  }
}

nlohmann::json parse_body(const httplib::Request& req) {
  try {
    return nlohmann::json::parse(req.body);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("request body is not JSON: ") + e.what());
  }
}

std::string encode_piece(const TokenSequence& seq) {
  return base64_encode(encode_tokens(std::span<const TokenSequence>(&seq, 1)));
}

TokenSequence decode_single(const std::string& b64) {
  auto pieces = decode_tokens(base64_decode(b64));
  if (pieces.size() != 1) throw Error(ErrorKind::kInvalidArgument, "expected exactly one token record");
  return std::move(pieces.front());
}

}  // namespace

nlohmann::json step_message_json(int index, int t, std::size_t remaining, const std::vector<std::array<int, 3>>& deltas) {
  return {{"type", "step"}, {"index", index}, {"t", t}, {"remaining_masks", remaining}, {"deltas", deltas}};
}

ModelEntry load_model_entry(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0)
    throw Error(ErrorKind::kInvalidArgument, "model spec must look like name=checkpoint[,classifier=path]");
  ModelEntry entry;
  entry.name = spec.substr(0, eq);
  std::string rest = spec.substr(eq + 1);
  std::string classifier;
  if (const auto comma = rest.find(",classifier="); comma != std::string::npos) {
    classifier = rest.substr(comma + 12);
    rest = rest.substr(0, comma);
  }
  Checkpoint ckpt = load_checkpoint(rest);
  entry.schedule = ckpt.options.schedule;
  entry.net = std::make_shared<const Denoiser>(std::move(ckpt.model));
  if (!classifier.empty()) {
    const auto bytes = read_binary_file(classifier);
    entry.classifier = std::make_shared<const DensityClassifier>(
        DensityClassifier::from_json(nlohmann::json::parse(bytes.begin(), bytes.end())));
  }
  return entry;
}

Service::Service(ServiceOptions options)
    : options_(std::move(options)), server_(std::make_unique<httplib::Server>()), store_(options_.job_store) {
  if (options_.models.empty()) throw Error(ErrorKind::kInvalidArgument, "the service needs at least one model");
  routes();
}

Service::~Service() {
  stop();
  std::lock_guard lock(jobs_mutex_);
  for (auto& [id, job] : jobs_) {
    job->cancel = true;
    if (job->worker.joinable()) job->worker.join();
  }
}

bool Service::listen(const std::string& host, int port) { return server_->listen(host, port); }

int Service::start_background(const std::string& host) {
  const int port = server_->bind_to_any_port(host);
  if (port <= 0) throw Error(ErrorKind::kIo, "could not bind a port on " + host);
  server_thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port;
}

void Service::stop() {
  server_->stop();
  if (server_thread_.joinable()) server_thread_.join();
}

void Service::wait(const std::string& job_id) {
  auto job = find_job(job_id);
  std::unique_lock lock(job->mutex);
  job->changed.wait(lock, [&] { return job->finished; });
}

std::shared_ptr<Service::Job> Service::find_job(const std::string& id) {
  std::lock_guard lock(jobs_mutex_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) throw Error(ErrorKind::kNotFound, "no job " + id);
  return it->second;
}

const ModelEntry& Service::model(const std::string& name) const {
  for (const auto& m : options_.models)
    if (m.name == name) return m;
  throw Error(ErrorKind::kNotFound, "unknown model '" + name + "'");
}

std::string Service::store_piece(TokenSequence seq) {
  std::lock_guard lock(pieces_mutex_);
  char buf[32];
  std::snprintf(buf, sizeof buf, "piece-%06zu", next_piece_++);
  pieces_[buf] = std::make_shared<const TokenSequence>(std::move(seq));
  return buf;
}

TokenSequence Service::piece_from_request(const nlohmann::json& ref) const {
  if (ref.is_string()) {
    std::lock_guard lock(pieces_mutex_);
    auto it = pieces_.find(ref.get<std::string>());
    if (it == pieces_.end()) throw Error(ErrorKind::kNotFound, "unknown piece '" + ref.get<std::string>() + "'");
    return *it->second;
  }
  if (ref.is_object() && ref.contains("tokens")) return decode_single(ref.at("tokens").get<std::string>());
  throw Error(ErrorKind::kInvalidArgument, "a piece is referenced by id or as {\"tokens\": base64}");
}

void Service::publish(Job& job, const nlohmann::json& line, bool finish) {
  {
    std::lock_guard lock(job.mutex);
    job.stream.push_back(line.dump() + "\n");
    if (finish) job.finished = true;
  }
  job.changed.notify_all();
}

void Service::routes() {
  auto& s = *server_;

  s.Get("/models", [this](const httplib::Request&, httplib::Response& res) {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& m : options_.models)
      list.push_back({{"name", m.name},
                      {"tracks", m.net->config().tracks},
                      {"steps", m.net->config().steps},
                      {"timesteps", m.schedule.timesteps},
                      {"parameters", m.net->parameter_count()},
                      {"guidance", m.classifier != nullptr}});
    send_json(res, 200, {{"models", list}});
  });

  s.Post("/pieces", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = parse_body(req);
      std::vector<TokenSequence> pieces;
      if (body.contains("tokens")) {
        pieces = decode_tokens(base64_decode(body.at("tokens").get<std::string>()));
      } else if (body.contains("midi")) {
        const auto bytes = base64_decode(body.at("midi").get<std::string>());
        const ParsedMidi midi = parse_midi(bytes);
        const int steps = body.value("steps", 256);
        const int start = body.value("start_step", 0);
        if (body.value("mode", std::string("melody")) == "trio") {
          pieces.push_back(extract_trio(midi, ProgramMap::general_midi(), steps, start, nullptr));
        } else {
          pieces.push_back(extract_melody(midi.notes, steps, start, nullptr, midi.steps_per_bar));
        }
      } else {
        throw Error(ErrorKind::kInvalidArgument, "upload needs a 'tokens' or 'midi' field");
      }
      nlohmann::json ids = nlohmann::json::array();
      for (auto& p : pieces) {
        p.validate(true);
        ids.push_back(store_piece(std::move(p)));
      }
      send_json(res, 201, {{"ids", ids}});
    });
  });

  s.Get(R"(/pieces/([\w-]+))", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const TokenSequence p = piece_from_request(req.matches[1].str());
      send_json(res, 200, {{"id", req.matches[1].str()}, {"tracks", p.tracks()}, {"steps", p.steps()},
                           {"steps_per_bar", p.steps_per_bar()}, {"masks", p.count_masks()},
                           {"tokens", encode_piece(p)}});
    });
  });

  s.Get(R"(/pieces/([\w-]+)/midi)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const TokenSequence p = piece_from_request(req.matches[1].str());
      const auto bytes = export_midi(p, 120.0);
      res.status = 200;
      res.set_content(std::string(bytes.begin(), bytes.end()), "audio/midi");
    });
  });

  s.Post("/evaluate", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = parse_body(req);
      std::vector<TokenSequence> set, gt;
      for (const auto& r : body.at("set")) set.push_back(piece_from_request(r));
      for (const auto& r : body.at("ground_truth")) gt.push_back(piece_from_request(r));
      const auto report = evaluate(set, gt);
      nlohmann::json out = report_to_json(report);
      out["table"] = report_table({{"Set", report}});
      send_json(res, 200, out);
    });
  });

  s.Get("/jobs", [this](const httplib::Request&, httplib::Response& res) {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& j : store_.list()) list.push_back(to_json(j));
    send_json(res, 200, {{"jobs", list}});
  });

  s.Post("/jobs", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      nlohmann::json body = parse_body(req);
      const std::string kind = body.value("kind", "");
      if (kind != "sample" && kind != "infill" && kind != "accompany" && kind != "guide")
        throw Error(ErrorKind::kInvalidArgument, "service jobs are sample, infill, accompany or guide; got '" + kind + "'");
      const ModelEntry& m = model(body.value("model", options_.models.front().name));
      if (kind == "guide" && !m.classifier)
        throw Error(ErrorKind::kInvalidArgument, "model '" + m.name + "' has no density classifier");
      // Validate the request up front so malformed masks fail synchronously.
      if (kind == "infill") {
        const TokenSequence piece = piece_from_request(body.at("piece"));
        const auto& mask = body.at("mask");
        const MaskPattern pattern = mask.is_string() && mask == "central512"
                                        ? MaskPattern::central512(piece.steps(), piece.tracks())
                                        : mask_from_json(mask);
        if (!pattern.matches(piece)) throw Error(ErrorKind::kShapeMismatch, "mask does not match the piece");
      }
      nlohmann::json params = body;
      if (params.contains("piece") && params["piece"].is_object()) params["piece"] = "<inline>";
      const JobDescriptor desc = store_.create(kind, params);
      auto job = std::make_shared<Job>();
      {
        std::lock_guard lock(jobs_mutex_);
        jobs_[desc.id] = job;
      }
      job->worker = std::thread([this, id = desc.id, body] { run_job(id, body); });
      send_json(res, 202, to_json(desc));
    });
  });

  s.Get(R"(/jobs/([\w-]+))", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto job = store_.get(req.matches[1].str());
      if (!job) throw Error(ErrorKind::kNotFound, "no job " + req.matches[1].str());
      send_json(res, 200, to_json(*job));
    });
  });

  s.Post(R"(/jobs/([\w-]+)/cancel)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto job = find_job(req.matches[1].str());
      job->cancel = true;
      send_json(res, 202, to_json(*store_.get(req.matches[1].str())));
    });
  });

  s.Get(R"(/jobs/([\w-]+)/result)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto job = store_.get(req.matches[1].str());
      if (!job) throw Error(ErrorKind::kNotFound, "no job " + req.matches[1].str());
      if (job->status != JobStatus::kDone) {
        send_error(res, 409, job->status == JobStatus::kFailed ? job->error_kind : "not_ready",
                   "job " + job->id + " is " + to_string(job->status));
        return;
      }
      const std::string piece = job->artifacts.at("result");
      send_json(res, 200, {{"piece", piece}, {"tokens", encode_piece(piece_from_request(piece))}});
    });
  });

  s.Get(R"(/jobs/([\w-]+)/stream)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto job = find_job(req.matches[1].str());
      auto cursor = std::make_shared<std::size_t>(0);
      res.set_chunked_content_provider("application/x-ndjson", [job, cursor](std::size_t, httplib::DataSink& sink) {
        std::vector<std::string> batch;
        bool finished = false;
        {
          std::unique_lock lock(job->mutex);
          job->changed.wait_for(lock, std::chrono::milliseconds(200),
                                [&] { return job->finished || job->stream.size() > *cursor; });
          batch.assign(job->stream.begin() + static_cast<std::ptrdiff_t>(*cursor), job->stream.end());
          *cursor = job->stream.size();
          finished = job->finished;
        }
        for (const auto& line : batch)
          if (!sink.write(line.data(), line.size())) return false;
        if (finished) sink.done();
        return true;
      });
    });
  });
}

void Service::run_job(const std::string& id, nlohmann::json request) {
  auto job = find_job(id);
  store_.transition(id, JobStatus::kRunning);
  try {
    const std::string kind = request.at("kind").get<std::string>();
    const ModelEntry& m = model(request.value("model", options_.models.front().name));
    const NetworkModel net(*m.net);
    const int tracks = m.net->config().tracks;
    const int length = m.net->config().steps;
    Rng rng(request.value("seed", std::uint64_t{1}));

    TokenSequence source;
    MaskPattern pattern;
    std::optional<GuidanceSpec> guidance;
    if (kind == "sample" || kind == "guide") {
      source = TokenSequence(tracks, length);
      pattern = MaskPattern::all(length, tracks);
      if (kind == "guide") {
        std::vector<int> targets = request.at("density").get<std::vector<int>>();
        if (targets.size() == 1) targets.assign(static_cast<std::size_t>(source.bars()), targets.front());
        guidance = density_guidance(*m.classifier, targets, request.value("scale", 1.0));
      }
    } else {
      source = piece_from_request(request.at("piece"));
      source.validate(false);
      if (kind == "infill") {
        const auto& mask = request.at("mask");
        pattern = mask.is_string() && mask == "central512" ? MaskPattern::central512(source.steps(), source.tracks())
                                                           : mask_from_json(mask);
      } else {
        std::vector<int> which = request.at("tracks").get<std::vector<int>>();
        if (!source.is_trio() || tracks != 3)
          throw Error(ErrorKind::kUnsupported, "accompaniment needs a trio piece and a trio model");
        pattern = MaskPattern::whole_tracks(source.steps(), source.tracks(), which);
      }
    }
    if (!pattern.matches(source)) throw Error(ErrorKind::kShapeMismatch, "mask does not match the piece");
    const TokenSequence init = pattern.apply(source);

    SampleOptions opts;
    opts.steps = request.value("steps", m.schedule.timesteps);
    opts.cancel = &job->cancel;
    if (guidance) opts.guidance = &*guidance;
    const int snapshot_every = std::max(1, options_.snapshot_every);
    opts.on_step = [&](const StepMessage& msg, const TokenSequence& x) {
      std::vector<std::array<int, 3>> deltas;
      deltas.reserve(msg.deltas.size());
      for (const auto& d : msg.deltas) deltas.push_back({d.step, d.track, d.value});
      nlohmann::json line = step_message_json(msg.index, msg.t, msg.remaining_masks, deltas);
      if (msg.index % snapshot_every == 0) line["snapshot"] = encode_piece(x);
      publish(*job, line);
    };
    publish(*job, {{"type", "start"}, {"job", id}, {"steps", pattern.any() ? opts.steps : 0},
                   {"masks", pattern.count()}, {"piece", encode_piece(init)}});
    SampleStats stats;
    const TokenSequence out = sample(net, m.schedule, init, pattern, rng, opts, &stats);
    const std::string piece = store_piece(out);
    store_.set_artifact(id, "result", piece);
    store_.transition(id, JobStatus::kDone);
    publish(*job, {{"type", "done"}, {"result", piece}, {"guidance_fallbacks", stats.guidance_fallbacks}}, true);
  } catch (const Error& e) {
    const std::string kind = e.kind() == ErrorKind::kCancelled ? "cancelled" : std::string(to_string(e.kind()));
    store_.transition(id, JobStatus::kFailed, kind, e.what());
    publish(*job, {{"type", "failed"}, {"error", {{"kind", kind}, {"message", e.what()}}}}, true);
  } catch (const std::exception& e) {
    store_.transition(id, JobStatus::kFailed, "internal", e.what());
    publish(*job, {{"type", "failed"}, {"error", {{"kind", "internal"}, {"message", e.what()}}}}, true);
  }
}

}  // namespace symdiff::tools
