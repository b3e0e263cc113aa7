#include "symdiff/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "symdiff/error.hpp"
#include "symdiff/token_model.hpp"

namespace symdiff {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'S', 'D', 'C', 'K', 'P', 'T', '\0', '\0'};

template <typename T>
void put(std::vector<std::uint8_t>& out, const T& v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

void put_floats(std::vector<std::uint8_t>& out, std::span<const float> values) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
  out.insert(out.end(), p, p + values.size_bytes());
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::vector<float> floats(std::size_t n, const char* what) {
    need(n * sizeof(float), what);
    std::vector<float> v(n);
    std::memcpy(v.data(), bytes_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
    return v;
  }

  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (remaining() < n) throw ParseError(pos_, std::string("truncated checkpoint: ") + what);
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

nlohmann::json options_to_json(const TrainOptions& o) {
  return {{"timesteps", o.schedule.timesteps},
          {"weighting", o.weighting == LossWeighting::kUniform ? "uniform" : "reweighted"},
          {"batch_size", o.batch_size},
          {"learning_rate", o.learning_rate},
          {"beta1", o.beta1},
          {"beta2", o.beta2},
          {"epsilon", o.epsilon},
          {"augment_semitones", o.augment_semitones}};
}

TrainOptions options_from_json(const nlohmann::json& j) {
  TrainOptions o;
  o.schedule.timesteps = j.value("timesteps", o.schedule.timesteps);
  o.weighting = j.value("weighting", std::string("reweighted")) == "uniform" ? LossWeighting::kUniform
                                                                             : LossWeighting::kReweighted;
  o.batch_size = j.value("batch_size", o.batch_size);
  o.learning_rate = j.value("learning_rate", o.learning_rate);
  o.beta1 = j.value("beta1", o.beta1);
  o.beta2 = j.value("beta2", o.beta2);
  o.epsilon = j.value("epsilon", o.epsilon);
  o.augment_semitones = j.value("augment_semitones", o.augment_semitones);
  return o;
}

}  // namespace

Checkpoint make_checkpoint(const Trainer& trainer) {
  Checkpoint c;
  c.model = trainer.model();
  c.optimizer = trainer.optimizer();
  c.train_step = trainer.optimizer().step;
  c.rng_state = rng_state(trainer.rng());
  c.options = trainer.options();
  return c;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header;
  header["config"] = config_to_json(ckpt.model.config());
  header["dtype"] = "f32";
  header["train_step"] = ckpt.train_step;
  header["rng_state"] = ckpt.rng_state;
  header["options"] = options_to_json(ckpt.options);
  header["optimizer"] = ckpt.optimizer ? nlohmann::json{{"step", ckpt.optimizer->step}} : nlohmann::json(nullptr);
  auto& tensors = header["tensors"] = nlohmann::json::array();
  for (const auto& t : ckpt.model.tensors())
    tensors.push_back({{"name", t.name}, {"shape", {t.rows, t.cols}}, {"offset", t.offset}});
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put(out, kCheckpointVersion);
  put(out, static_cast<std::uint64_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  put_floats(out, ckpt.model.parameters());
  if (ckpt.optimizer) {
    put_floats(out, ckpt.optimizer->m);
    put_floats(out, ckpt.optimizer->v);
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const DenoiserConfig* expected) {
  Reader in(bytes);
  const std::string magic = in.text(8, "magic");
  if (std::memcmp(magic.data(), kMagic, 8) != 0) throw ParseError(0, "not a checkpoint file");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw Error(ErrorKind::kVersionMismatch, "checkpoint version " + std::to_string(version) + ", expected " +
                                                 std::to_string(kCheckpointVersion));
  const auto header_len = in.get<std::uint64_t>("header length");
  const std::size_t header_pos = in.pos();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.text(header_len, "header"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(header_pos, std::string("bad checkpoint header: ") + e.what());
  }

  Checkpoint c;
  DenoiserConfig config;
  std::vector<TensorInfo> tensors;
  try {
    if (header.at("dtype") != "f32") throw Error(ErrorKind::kUnsupported, "checkpoint dtype must be f32");
    config = config_from_json(header.at("config"));
    for (const auto& t : header.at("tensors"))
      tensors.push_back({t.at("name").get<std::string>(), t.at("offset").get<std::size_t>(),
                         t.at("shape").at(0).get<int>(), t.at("shape").at(1).get<int>()});
    c.train_step = header.value("train_step", std::int64_t{0});
    c.rng_state = header.value("rng_state", std::string());
    if (header.contains("options")) c.options = options_from_json(header.at("options"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(header_pos, std::string("bad checkpoint header: ") + e.what());
  }
  if (expected && !(*expected == config))
    throw Error(ErrorKind::kShapeMismatch, "checkpoint configuration " + config_to_json(config).dump() +
                                               " does not match the requested " + config_to_json(*expected).dump());

  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  c.model.adopt(config, tensors, in.floats(n, "parameters"));
  if (!header.at("optimizer").is_null()) {
    AdamState adam;
    adam.step = header.at("optimizer").value("step", std::int64_t{0});
    adam.m = in.floats(n, "optimizer first moments");
    adam.v = in.floats(n, "optimizer second moments");
    c.optimizer = std::move(adam);
  }
  if (in.remaining() != 0) throw ParseError(in.pos(), "trailing bytes after checkpoint body");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_binary_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const DenoiserConfig* expected) {
  return decode_checkpoint(read_binary_file(path), expected);
}

Trainer resume_trainer(const Checkpoint& ckpt) {
  Rng rng;
  if (!ckpt.rng_state.empty()) restore_rng_state(rng, ckpt.rng_state);
  return Trainer(ckpt.model, ckpt.options, ckpt.optimizer.value_or(AdamState{}), rng);
}

}  // namespace symdiff
