#include "symdiff_tools/cli.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <sstream>

#include "symdiff/checkpoint.hpp"
#include "symdiff/confounder.hpp"
#include "symdiff/corpus.hpp"
#include "symdiff/error.hpp"
#include "symdiff/guidance.hpp"
#include "symdiff/mask_pattern.hpp"
#include "symdiff/metrics.hpp"
#include "symdiff/midi.hpp"
#include "symdiff/sampler.hpp"
#include "symdiff/trainer.hpp"
#include "symdiff_tools/service.hpp"

namespace symdiff::tools {
namespace {

nlohmann::json read_json_file(const std::filesystem::path& path) {
  const auto bytes = read_binary_file(path);
  try {
    return nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParse, path.string() + ": " + e.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_binary_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

DenoiserConfig resolve_config(const std::string& name, int tracks, int steps) {
  DenoiserConfig c;
  if (name == "desk") {
    c = DenoiserConfig::desk(tracks);
  } else if (name == "full-melody") {
    c = DenoiserConfig::full_melody();
  } else if (name == "full-trio") {
    c = DenoiserConfig::full_trio();
  } else {
    c = config_from_json(read_json_file(name));
  }
  if (steps > 0) c.steps = steps;
  c.validate();
  return c;
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(ErrorKind::kInvalidArgument, "not an integer list: '" + text + "'");
    }
  }
  if (out.empty()) throw Error(ErrorKind::kInvalidArgument, "empty integer list");
  return out;
}

std::vector<int> parse_tracks(const std::string& text) {
  std::vector<int> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item == "melody" || item == "0") out.push_back(0);
    else if (item == "bass" || item == "1") out.push_back(1);
    else if (item == "drums" || item == "2") out.push_back(2);
    else throw Error(ErrorKind::kInvalidArgument, "unknown track '" + item + "' (melody, bass or drums)");
  }
  return out;
}

std::vector<std::uint8_t> notes_to_midi(const std::vector<NoteEvent>& notes, double bpm) {
  MidiWriter w(480);
  const int conductor = w.add_track();
  w.tempo(conductor, 0, bpm);
  w.time_signature(conductor, 0, 4, 4);
  const int track = w.add_track();
  w.program_change(track, 0, 0, 0);
  constexpr std::uint32_t kTicksPerStep = 120;
  for (const auto& n : notes) {
    w.note_on(track, static_cast<std::uint32_t>(n.onset_step) * kTicksPerStep, 0, n.pitch, 90);
    w.note_off(track, static_cast<std::uint32_t>(n.onset_step + n.duration_steps) * kTicksPerStep, 0, n.pitch);
  }
  return w.bytes();
}

struct Loaded {
  Denoiser net;
  DiffusionSchedule schedule;
};

Loaded load_model(const std::string& path) {
  Checkpoint c = load_checkpoint(path);
  return {std::move(c.model), c.options.schedule};
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Absorbing-state discrete diffusion for symbolic music", "symdiff"};
  app.require_subcommand(1);

  // tokenize
  std::string tok_dir, tok_mode = "melody", tok_out, tok_manifest;
  int tok_steps = 256, tok_min_bars = 16;
  auto* tokenize = app.add_subcommand("tokenize", "Tokenize a directory of MIDI files");
  tokenize->add_option("midi-dir", tok_dir, "Directory searched recursively for .mid/.midi")->required();
  tokenize->add_option("--mode", tok_mode, "melody or trio")->check(CLI::IsMember({"melody", "trio"}));
  tokenize->add_option("--out", tok_out, "Output token file")->required();
  tokenize->add_option("--steps", tok_steps, "Steps per piece");
  tokenize->add_option("--min-bars", tok_min_bars, "Minimum bars for a trailing partial window");
  tokenize->add_option("--manifest", tok_manifest, "Write the accept/reject manifest as JSON");

  // train
  std::string tr_config = "desk", tr_corpus, tr_out, tr_metrics, tr_resume, tr_weighting = "reweighted";
  std::int64_t tr_steps = 1000;
  std::uint64_t tr_seed = 1;
  int tr_tracks = 1, tr_batch = 16, tr_timesteps = 1024, tr_augment = 0, tr_save_every = 0;
  double tr_lr = 5e-4;
  auto* train = app.add_subcommand("train", "Train a denoiser");
  train->add_option("--config", tr_config, "desk, full-melody, full-trio or a JSON config file");
  train->add_option("--tracks", tr_tracks, "Tracks for the desk config (1 or 3)");
  train->add_option("--corpus", tr_corpus, "Token file")->required();
  train->add_option("--steps", tr_steps, "Optimizer steps");
  train->add_option("--seed", tr_seed, "Seed");
  train->add_option("--out", tr_out, "Checkpoint path")->required();
  train->add_option("--metrics", tr_metrics, "Line-delimited JSON training log");
  train->add_option("--batch", tr_batch, "Batch size");
  train->add_option("--lr", tr_lr, "Adam learning rate");
  train->add_option("--timesteps", tr_timesteps, "Diffusion steps T");
  train->add_option("--augment", tr_augment, "Random transposition range in semitones");
  train->add_option("--weighting", tr_weighting, "reweighted or uniform")->check(CLI::IsMember({"reweighted", "uniform"}));
  train->add_option("--resume", tr_resume, "Continue from a checkpoint");
  train->add_option("--save-every", tr_save_every, "Also checkpoint every N steps");

  // sample
  std::string sa_ckpt, sa_out;
  int sa_n = 1, sa_steps = 0;
  std::uint64_t sa_seed = 1;
  auto* sample_cmd = app.add_subcommand("sample", "Unconditional sampling");
  sample_cmd->add_option("--ckpt", sa_ckpt, "Checkpoint")->required();
  sample_cmd->add_option("--n", sa_n, "Number of pieces");
  sample_cmd->add_option("--steps", sa_steps, "Reverse steps (default T)");
  sample_cmd->add_option("--seed", sa_seed, "Seed");
  sample_cmd->add_option("--out", sa_out, "Output token file")->required();

  // infill
  std::string in_ckpt, in_in, in_mask, in_out;
  int in_steps = 0, in_index = 0;
  std::uint64_t in_seed = 1;
  auto* infill_cmd = app.add_subcommand("infill", "Regenerate masked positions of a piece");
  infill_cmd->add_option("--ckpt", in_ckpt, "Checkpoint")->required();
  infill_cmd->add_option("--in", in_in, "Token file")->required();
  infill_cmd->add_option("--index", in_index, "Piece index inside the token file");
  infill_cmd->add_option("--mask", in_mask, "Mask JSON file or 'central512'")->required();
  infill_cmd->add_option("--steps", in_steps, "Reverse steps (default T)");
  infill_cmd->add_option("--seed", in_seed, "Seed");
  infill_cmd->add_option("--out", in_out, "Output token file")->required();

  // accompany
  std::string ac_ckpt, ac_in, ac_tracks, ac_out;
  int ac_steps = 0, ac_index = 0;
  std::uint64_t ac_seed = 1;
  auto* accompany_cmd = app.add_subcommand("accompany", "Regenerate whole tracks of a trio");
  accompany_cmd->add_option("--ckpt", ac_ckpt, "Checkpoint")->required();
  accompany_cmd->add_option("--in", ac_in, "Token file")->required();
  accompany_cmd->add_option("--index", ac_index, "Piece index inside the token file");
  accompany_cmd->add_option("--tracks", ac_tracks, "Comma list of melody,bass,drums")->required();
  accompany_cmd->add_option("--steps", ac_steps, "Reverse steps (default T)");
  accompany_cmd->add_option("--seed", ac_seed, "Seed");
  accompany_cmd->add_option("--out", ac_out, "Output token file")->required();

  // guide
  std::string gu_ckpt, gu_density, gu_classifier, gu_clf_corpus, gu_save_clf, gu_out;
  double gu_scale = 4.0;
  int gu_n = 1, gu_steps = 64, gu_epochs = 3000;
  std::uint64_t gu_seed = 1;
  auto* guide = app.add_subcommand("guide", "Density-guided sampling");
  guide->add_option("--ckpt", gu_ckpt, "Checkpoint")->required();
  guide->add_option("--density", gu_density, "Onsets per measure: one value or one per bar")->required();
  guide->add_option("--scale", gu_scale, "Guidance scale s");
  guide->add_option("--classifier", gu_classifier, "Density classifier JSON");
  guide->add_option("--classifier-corpus", gu_clf_corpus, "Train the classifier on this token file (80/20 split)");
  guide->add_option("--classifier-epochs", gu_epochs, "Classifier training epochs");
  guide->add_option("--save-classifier", gu_save_clf, "Write the trained classifier");
  guide->add_option("--n", gu_n, "Number of pieces");
  guide->add_option("--steps", gu_steps, "Reverse steps");
  guide->add_option("--seed", gu_seed, "Seed");
  guide->add_option("--out", gu_out, "Output token file")->required();

  // evaluate
  std::string ev_set, ev_gt, ev_out;
  bool ev_table = false;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Consistency and Variance against a ground-truth set");
  evaluate_cmd->add_option("--set", ev_set, "Token file to score")->required();
  evaluate_cmd->add_option("--ground-truth", ev_gt, "Reference token file")->required();
  evaluate_cmd->add_option("--out", ev_out, "Also write the JSON report here");
  evaluate_cmd->add_flag("--table", ev_table, "Print the aligned table instead of JSON");

  // confound
  std::string co_image, co_reference, co_out_image, co_out_report, co_out_midi;
  int co_index = 0;
  double co_threshold = 0.5;
  AnnealerConfig co_cfg;
  auto* confound = app.add_subcommand("confound", "Anneal image-derived notes against a reference piece");
  confound->add_option("--image", co_image, "PNG or PGM image")->required();
  confound->add_option("--reference", co_reference, "Token file with the reference piece")->required();
  confound->add_option("--index", co_index, "Piece index inside the reference file");
  confound->add_option("--threshold", co_threshold, "Binarization threshold in [0, 1]");
  confound->add_option("--iterations", co_cfg.iterations, "Annealing budget");
  confound->add_option("--seed", co_cfg.seed, "Seed");
  confound->add_option("--tolerance", co_cfg.tolerance, "Stop when every normalized distance is below this");
  confound->add_option("--envelope-rows", co_cfg.envelope_rows, "Rows a note may move and still count as anchored");
  confound->add_option("--envelope-fraction", co_cfg.min_envelope_fraction, "Minimum fraction of anchored notes");
  confound->add_option("--out-image", co_out_image, "Comparison raster (PNG)");
  confound->add_option("--out-report", co_out_report, "JSON report");
  confound->add_option("--out-midi", co_out_midi, "Forged notes as MIDI");

  // midi export
  std::string mi_in, mi_dir;
  double mi_bpm = 120.0;
  auto* midi_cmd = app.add_subcommand("midi", "Export a token file to MIDI files");
  midi_cmd->add_option("--in", mi_in, "Token file")->required();
  midi_cmd->add_option("--out-dir", mi_dir, "Directory for piece-N.mid")->required();
  midi_cmd->add_option("--bpm", mi_bpm, "Tempo");

  // serve
  std::string se_host = "127.0.0.1", se_store;
  int se_port = 8080;
  std::vector<std::string> se_models;
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  serve->add_option("--port", se_port, "Port");
  serve->add_option("--host", se_host, "Bind address");
  serve->add_option("--model", se_models, "name=checkpoint[,classifier=path], repeatable")->required();
  serve->add_option("--store", se_store, "Append-only job log");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << nlohmann::json{{"error", {{"kind", "usage"}, {"message", e.what()}}}}.dump() << "\n";
    return 2;
  }

  try {
    nlohmann::json summary;
    if (*tokenize) {
      CorpusOptions opts;
      opts.mode = tok_mode == "trio" ? CorpusMode::kTrio : CorpusMode::kMelody;
      opts.steps = tok_steps;
      opts.min_bars = tok_min_bars;
      const auto files = find_midi_files(tok_dir);
      const Corpus corpus = tokenize_files(files, opts);
      write_token_file(tok_out, corpus.pieces);
      const nlohmann::json manifest = manifest_to_json(corpus.manifest, opts);
      if (!tok_manifest.empty()) write_text(tok_manifest, manifest.dump(2));
      std::size_t accepted = 0;
      for (const auto& m : corpus.manifest) accepted += m.accepted ? 1 : 0;
      summary = {{"command", "tokenize"}, {"files", files.size()}, {"accepted", accepted},
                 {"rejected", files.size() - accepted}, {"pieces", corpus.pieces.size()}, {"out", tok_out}};
    } else if (*train) {
      const auto corpus = read_token_file(tr_corpus);
      std::optional<Trainer> trainer;
      if (!tr_resume.empty()) {
        trainer.emplace(resume_trainer(load_checkpoint(tr_resume)));
      } else {
        TrainOptions opts;
        opts.schedule.timesteps = tr_timesteps;
        opts.batch_size = tr_batch;
        opts.learning_rate = tr_lr;
        opts.augment_semitones = tr_augment;
        opts.weighting = tr_weighting == "uniform" ? LossWeighting::kUniform : LossWeighting::kReweighted;
        const int steps = corpus.empty() ? 0 : corpus.front().steps();
        const int tracks = corpus.empty() ? tr_tracks : corpus.front().tracks();
        trainer.emplace(Denoiser(resolve_config(tr_config, tracks, steps), derive_seed(tr_seed, 0)), opts,
                        derive_seed(tr_seed, 1));
      }
      std::ofstream metrics;
      if (!tr_metrics.empty()) {
        metrics.open(tr_metrics, std::ios::app);
        if (!metrics) throw Error(ErrorKind::kIo, "cannot open " + tr_metrics);
      }
      TrainMetric last;
      for (std::int64_t i = 0; i < tr_steps; ++i) {
        last = trainer->step(corpus);
        if (metrics.is_open()) metrics << metric_to_json(last).dump() << '\n';
        if (tr_save_every > 0 && last.step % tr_save_every == 0) save_checkpoint(tr_out, make_checkpoint(*trainer));
      }
      save_checkpoint(tr_out, make_checkpoint(*trainer));
      summary = {{"command", "train"}, {"step", trainer->optimizer().step}, {"loss", last.loss},
                 {"parameters", trainer->model().parameter_count()}, {"out", tr_out}};
    } else if (*sample_cmd) {
      const Loaded m = load_model(sa_ckpt);
      const NetworkModel net(m.net);
      SampleOptions opts;
      opts.steps = sa_steps;
      std::vector<TokenSequence> pieces;
      for (int i = 0; i < sa_n; ++i) {
        Rng rng(derive_seed(sa_seed, static_cast<std::uint64_t>(i)));
        pieces.push_back(sample_unconditional(net, m.schedule, rng, opts));
      }
      write_token_file(sa_out, pieces);
      summary = {{"command", "sample"}, {"pieces", pieces.size()}, {"out", sa_out}};
    } else if (*infill_cmd) {
      const Loaded m = load_model(in_ckpt);
      const auto pieces = read_token_file(in_in);
      const TokenSequence& seq = pieces.at(static_cast<std::size_t>(in_index));
      const MaskPattern pattern = in_mask == "central512" ? MaskPattern::central512(seq.steps(), seq.tracks())
                                                          : mask_from_json(read_json_file(in_mask));
      SampleOptions opts;
      opts.steps = in_steps;
      Rng rng(in_seed);
      const TokenSequence result = infill(NetworkModel(m.net), m.schedule, seq, pattern, rng, opts);
      write_token_file(in_out, std::span<const TokenSequence>(&result, 1));
      summary = {{"command", "infill"}, {"masked", pattern.count()}, {"out", in_out}};
    } else if (*accompany_cmd) {
      const Loaded m = load_model(ac_ckpt);
      const auto pieces = read_token_file(ac_in);
      const TokenSequence& seq = pieces.at(static_cast<std::size_t>(ac_index));
      SampleOptions opts;
      opts.steps = ac_steps;
      Rng rng(ac_seed);
      const TokenSequence result = accompany(NetworkModel(m.net), m.schedule, seq, parse_tracks(ac_tracks), rng, opts);
      write_token_file(ac_out, std::span<const TokenSequence>(&result, 1));
      summary = {{"command", "accompany"}, {"tracks", parse_tracks(ac_tracks)}, {"out", ac_out}};
    } else if (*guide) {
      const Loaded m = load_model(gu_ckpt);
      DensityClassifier clf;
      if (!gu_classifier.empty()) {
        clf = DensityClassifier::from_json(read_json_file(gu_classifier));
      } else if (!gu_clf_corpus.empty()) {
        const auto data = read_token_file(gu_clf_corpus);
        const std::size_t cut = data.size() * 4 / 5;
        const std::vector<TokenSequence> fit(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(cut));
        const std::vector<TokenSequence> held(data.begin() + static_cast<std::ptrdiff_t>(cut), data.end());
        if (fit.empty() || held.empty()) throw Error(ErrorKind::kInvalidArgument, "classifier corpus is too small to split");
        clf = DensityClassifier(derive_seed(gu_seed, 7));
        clf.train(fit, gu_epochs, 1e-2);
        clf.validate(held);
        if (!gu_save_clf.empty()) write_text(gu_save_clf, clf.to_json().dump());
      } else {
        throw Error(ErrorKind::kInvalidArgument, "guide needs --classifier or --classifier-corpus");
      }
      std::vector<int> targets = parse_int_list(gu_density);
      const int bars = m.net.config().steps / kStepsPerBar;
      if (targets.size() == 1) targets.assign(static_cast<std::size_t>(bars), targets.front());
      const GuidanceSpec spec = density_guidance(clf, targets, gu_scale);
      const NetworkModel net(m.net);
      std::vector<TokenSequence> pieces;
      std::size_t fallbacks = 0;
      for (int i = 0; i < gu_n; ++i) {
        Rng rng(derive_seed(gu_seed, static_cast<std::uint64_t>(i)));
        SampleStats stats;
        pieces.push_back(guided_sample(net, m.schedule, spec, gu_steps, rng, &stats));
        fallbacks += stats.guidance_fallbacks;
      }
      write_token_file(gu_out, pieces);
      summary = {{"command", "guide"}, {"pieces", pieces.size()}, {"classifier_accuracy", clf.validation_accuracy()},
                 {"guidance_fallbacks", fallbacks}, {"out", gu_out}};
    } else if (*evaluate_cmd) {
      const auto report = evaluate(read_token_file(ev_set), read_token_file(ev_gt));
      summary = report_to_json(report);
      if (!ev_out.empty()) write_text(ev_out, summary.dump(2));
      if (ev_table) {
        out << report_table({{"Set", report}});
        return 0;
      }
    } else if (*confound) {
      const GrayImage image = read_image(co_image);
      const auto refs = read_token_file(co_reference);
      const TokenSequence& reference = refs.at(static_cast<std::size_t>(co_index));
      Rng rng(derive_seed(co_cfg.seed, 99));
      const ImageScore score = image_to_notes(image, co_threshold, rng);
      const AnnealResult result = anneal(score, reference, co_cfg);
      const auto notes = forged_events(result.notes, result.base_pitch, result.height);
      OaSamples forged = note_oa_samples(notes, result.bars);
      const SelfSimilarityReport report = evaluate(forged, oa_samples({reference}));
      const nlohmann::json rep = anneal_report(result, report);
      if (!co_out_report.empty()) write_text(co_out_report, rep.dump(2));
      if (!co_out_image.empty()) write_png(co_out_image, render_comparison(image, notes, result.bars, reference, report));
      if (!co_out_midi.empty()) write_binary_file(co_out_midi, notes_to_midi(notes, 120.0));
      summary = rep;
      summary.erase("trace");
    } else if (*midi_cmd) {
      const auto pieces = read_token_file(mi_in);
      std::filesystem::create_directories(mi_dir);
      for (std::size_t i = 0; i < pieces.size(); ++i)
        write_binary_file(std::filesystem::path(mi_dir) / ("piece-" + std::to_string(i) + ".mid"),
                          export_midi(pieces[i], mi_bpm));
      summary = {{"command", "midi"}, {"pieces", pieces.size()}, {"out_dir", mi_dir}};
    } else if (*serve) {
      ServiceOptions opts;
      for (const auto& spec : se_models) opts.models.push_back(load_model_entry(spec));
      opts.job_store = se_store;
      Service service(std::move(opts));
      err << nlohmann::json{{"listening", se_host + ":" + std::to_string(se_port)}}.dump() << std::endl;
      if (!service.listen(se_host, se_port)) throw Error(ErrorKind::kIo, "cannot listen on port " + std::to_string(se_port));
      return 0;
    }
    out << summary.dump() << "\n";
    return 0;
  } catch (const Error& e) {
    err << nlohmann::json{{"error", {{"kind", std::string(to_string(e.kind())) }, {"message", e.what()}}}}.dump() << "\n";
    return 1;
  } catch (const std::out_of_range& e) {
    err << nlohmann::json{{"error", {{"kind", "out_of_range"}, {"message", e.what()}}}}.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << nlohmann::json{{"error", {{"kind", "internal"}, {"message", e.what()}}}}.dump() << "\n";
    return 1;
  }
}

}  // namespace symdiff::tools
