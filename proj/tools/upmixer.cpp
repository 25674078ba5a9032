// upmixer: corpus synthesis, training, upmixing, evaluation and latent analysis.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "upmix/audio_io.hpp"
#include "upmix/dataset.hpp"
#include "upmix/latent.hpp"
#include "upmix/metrics.hpp"
#include "upmix/parallel.hpp"
#include "upmix/train.hpp"
#include "upmix/upmix.hpp"
#include "upmix/vae.hpp"

namespace fs = std::filesystem;
using namespace upmix;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  int threads = 1;
  bool verbose = false;
};

Globals g;

void info(const std::string& msg) {
  if (g.verbose) std::cerr << msg << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path with_suffix(const fs::path& p, const std::string& suffix) {
  fs::path out = p;
  out += suffix;
  return out;
}

// --------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string stems_dir;
  bool tiny = false;
  int tiny_songs = 4;
  double tiny_seconds = 10.0;
  std::string out;
  std::size_t segments = 8;
  std::string split = "0.7,0.1,0.2";
  std::string profile = "full";
  double silence_floor_db = kDefaultSilenceFloorDb;
};

void cmd_synth(const SynthArgs& a, const std::string& resolved) {
  const SplitFractions split = SplitFractions::parse(a.split);
  std::vector<StemSong> songs = a.tiny ? make_tiny_corpus(g.seed, {a.tiny_songs, a.tiny_seconds, kCanonicalSampleRate})
                                       : load_stem_songs(a.stems_dir);
  CorpusOptions opts;
  opts.profile = AnalysisProfile::by_name(a.profile);
  opts.split = split;
  opts.segments_per_song = a.segments;
  opts.seed = g.seed;
  opts.silence_floor_db = a.silence_floor_db;
  opts.threads = g.threads;
  info("synthesizing from " + std::to_string(songs.size()) + " songs");
  const CorpusManifest m = build_corpus(songs, opts, a.out);
  write_text(fs::path(a.out) / "config.toml", resolved);
  std::cout << "wrote " << m.entries.size() << " examples to " << a.out << '\n';
}

// --------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string corpus;
  std::string out_ckpt;
  int epochs = 50;
  double beta = 1.0;
  double lr = 0.005;
  std::string arch = "toy";
  int latent_dims = 0;
  int growth = 0;
  int batch = 8;
  int patience = 10;
  double grad_clip = 0.0;
  std::string lr_schedule = "constant";
  int warmup_steps = 0;
  double final_lr_fraction = 0.0;
  bool resume = false;
};

ArchConfig arch_for(const TrainArgs& a, const AnalysisProfile& profile) {
  ArchConfig arch = a.arch == "full" ? ArchConfig::full() : ArchConfig::toy(profile.bins(), profile.frames(), 16, 8);
  arch.freq_bins = profile.bins();
  arch.frames = profile.frames();
  if (a.latent_dims > 0) arch.latent_dims = a.latent_dims;
  if (a.growth > 0) arch.growth = a.growth;
  arch.validate();
  return arch;
}

void cmd_train(const TrainArgs& a, const std::string& resolved) {
  const CorpusManifest manifest = read_manifest(a.corpus);
  const Corpus train_split = load_corpus(a.corpus, "train");
  const Corpus val_split = load_corpus(a.corpus, "val");
  if (train_split.examples.empty()) throw std::runtime_error("corpus has no training examples");
  const AnalysisProfile profile = manifest.profile;

  TrainConfig cfg;
  cfg.adam.lr = a.lr;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch;
  cfg.beta = a.beta;
  cfg.patience = a.patience;
  cfg.grad_clip = a.grad_clip;
  cfg.schedule = lr_schedule_from_name(a.lr_schedule);
  cfg.warmup_steps = a.warmup_steps;
  cfg.final_lr_fraction = a.final_lr_fraction;
  cfg.seed = g.seed;
  cfg.threads = g.threads;
  cfg.checkpoint = a.out_ckpt;
  cfg.log = [](const std::string& s) { info(s); };

  TrainState state;
  if (a.resume && fs::exists(a.out_ckpt)) {
    AnalysisProfile stored;
    state = load_checkpoint(a.out_ckpt, &stored);
    if (!(stored == profile)) throw std::runtime_error("checkpoint was trained on a different analysis profile");
    if (!(state.params.arch == arch_for(a, profile))) throw std::runtime_error("checkpoint architecture differs from --arch");
    info("resuming at epoch " + std::to_string(state.next_epoch));
  } else {
    Rng rng = make_rng(g.seed, "init");
    state = start_training(init_params<float>(arch_for(a, profile), rng));
  }
  info("training " + state.params.arch.fingerprint() + " on " + std::to_string(train_split.examples.size()) +
       " examples");
  write_text(with_suffix(a.out_ckpt, ".config.toml"), resolved);
  train(state, to_net_examples(train_split.examples), to_net_examples(val_split.examples), cfg, profile);
  if (state.history.empty()) save_checkpoint(a.out_ckpt, state, profile);

  std::string csv = "epoch,train_loss,train_recon,train_kl,val_loss\n";
  for (const auto& r : state.history) {
    char line[160];
    std::snprintf(line, sizeof line, "%d,%.10g,%.10g,%.10g,", r.epoch, r.train_loss, r.train_recon, r.train_kl);
    csv += line;
    if (r.val_loss) {
      std::snprintf(line, sizeof line, "%.10g", *r.val_loss);
      csv += line;
    }
    csv += "\n";
  }
  write_text(with_suffix(a.out_ckpt, ".history.csv"), csv);
  std::cout << "trained " << state.history.size() << " epochs; checkpoint " << a.out_ckpt << '\n';
}

// --------------------------------------------------------------------------
// transfer / blind / baseline

struct UpmixArgs {
  std::string stereo;
  std::string style_ref;
  std::string ckpt;
  std::string out;
  std::string bit_depth = "32f";
};

void cmd_upmix(UpmixMode mode, const UpmixArgs& a, const std::string& resolved) {
  UpmixJob job;
  job.mode = mode;
  job.stereo_in = read_wav(a.stereo);
  require_canonical_rate(job.stereo_in, "stereo input");
  job.seed = g.seed;
  job.threads = g.threads;
  std::optional<UpmixModel> model;
  if (mode != UpmixMode::Baseline) {
    model = load_model(a.ckpt);
    job.model = &*model;
  }
  if (mode == UpmixMode::StyleTransfer) job.style_ref = read_wav(a.style_ref);
  const MultichannelAudio out = run_upmix(job);
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  write_wav(a.out, out, parse_bit_depth(a.bit_depth));
  write_text(with_suffix(a.out, ".config.toml"), resolved);
  info("wrote " + a.out);
}

// --------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string ref;
  std::string est;
  std::string stems_dir;
  std::string ref_config;
  std::string out_report;
};

PanningConfig panning_from_json(const nlohmann::json& j) {
  PanningConfig p;
  if (j.is_array()) {
    p.direction_deg = j.get<std::vector<double>>();
  } else {
    for (const char* name : kStemNames) p.direction_deg.push_back(j.at(name).get<double>());
  }
  if (p.size() != kStemCount) throw std::runtime_error("reference config needs 4 directions");
  return p;
}

std::optional<std::vector<MultichannelAudio>> load_stems(const fs::path& dir) {
  std::vector<MultichannelAudio> stems;
  for (const char* name : kStemNames) {
    const fs::path p = dir / (std::string(name) + ".wav");
    if (!fs::exists(p)) {
      std::cerr << "warning: " << p.string() << " missing; angle differences are left empty\n";
      return std::nullopt;
    }
    stems.push_back(to_mono(read_wav(p)));
  }
  return stems;
}

void cmd_eval(const EvalArgs& a, const std::string& resolved) {
  struct Item {
    std::string id;
    fs::path ref, est, stems;
  };
  std::vector<Item> items;
  const bool dir_mode = fs::is_directory(a.ref);
  if (dir_mode) {
    if (!fs::is_directory(a.est)) throw std::runtime_error("--ref is a directory, so --est must be one too");
    std::vector<fs::path> refs;
    for (const auto& e : fs::directory_iterator(a.ref)) {
      if (e.path().extension() == ".wav") refs.push_back(e.path());
    }
    std::sort(refs.begin(), refs.end());
    for (const auto& r : refs) {
      const std::string id = r.stem().string();
      items.push_back({id, r, fs::path(a.est) / r.filename(), a.stems_dir.empty() ? fs::path() : fs::path(a.stems_dir) / id});
    }
    if (items.empty()) throw std::runtime_error("no .wav files in " + a.ref);
  } else {
    items.push_back({fs::path(a.est).stem().string(), a.ref, a.est, a.stems_dir});
  }

  std::optional<nlohmann::json> ref_json;
  if (!a.ref_config.empty()) ref_json = nlohmann::json::parse(read_text(a.ref_config));

  std::vector<MetricReport> reports(items.size());
  parallel_for(items.size(), g.threads, [&](std::size_t i) {
    const Item& it = items[i];
    const MultichannelAudio ref = read_wav(it.ref);
    const MultichannelAudio est = read_wav(it.est);
    std::optional<std::vector<MultichannelAudio>> stems;
    if (!it.stems.empty()) stems = load_stems(it.stems);
    std::optional<PanningConfig> truth;
    if (ref_json) {
      const bool keyed = dir_mode && ref_json->is_object() && ref_json->contains(it.id);
      truth = panning_from_json(keyed ? ref_json->at(it.id) : *ref_json);
    }
    reports[i] = evaluate(it.id, ref, est, stems ? &*stems : nullptr, truth ? &*truth : nullptr);
    reports[i].ref_file = it.ref.string();
    reports[i].est_file = it.est.string();
  });

  std::string json_lines, csv = metric_csv_header() + "\n";
  for (const auto& r : reports) {
    json_lines += r.to_json() + "\n";
    csv += metric_csv_row(r) + "\n";
  }
  write_text(with_suffix(a.out_report, ".json"), json_lines);
  write_text(with_suffix(a.out_report, ".csv"), csv);
  write_text(with_suffix(a.out_report, ".config.toml"), resolved);
  std::cout << csv;
}

// --------------------------------------------------------------------------
// analyze

struct AnalyzeArgs {
  std::string ckpt;
  std::string study_config;
  std::string out_dir;
};

void cmd_analyze(const AnalyzeArgs& a, const std::string& resolved) {
  const UpmixModel model = load_model(a.ckpt);
  StudyConfig cfg = a.study_config.empty() ? StudyConfig{} : StudyConfig::from_json_file(a.study_config);
  if (a.study_config.empty()) cfg.seed = g.seed;
  const std::vector<StemSong> songs =
      cfg.stems_dir.empty() ? make_tiny_corpus(cfg.seed, {cfg.songs, cfg.tiny_seconds, kCanonicalSampleRate})
                            : load_stem_songs(cfg.stems_dir);
  const StudyResult study = run_study(model, songs, cfg, g.threads);
  export_plot_data(study, a.out_dir);
  write_text(fs::path(a.out_dir) / "config.toml", resolved);
  std::printf("spread by song %.6g, by panning %.6g, ratio %.6g\n", study.by_song.mean, study.by_panning.mean,
              study.spread_ratio());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stereo to 5-channel upmixing workbench"};
  app.set_config("--config", "", "TOML file with option values; command-line flags take precedence");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.add_option("--seed", g.seed, "Master seed for every random stream")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads; results do not depend on this")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_flag("--verbose,-v", g.verbose, "Progress messages on stderr");
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Render a training corpus from stems");
  s->fallthrough();
  auto* src = s->add_option_group("source", "Where the stems come from");
  src->add_option("--stems-dir", synth.stems_dir, "Directory of song folders with vocals/drums/bass/other.wav")
      ->check(CLI::ExistingDirectory);
  src->add_flag("--tiny", synth.tiny, "Use the procedural tiny corpus");
  src->require_option(1);
  s->add_option("--tiny-songs", synth.tiny_songs, "Songs in the tiny corpus")->capture_default_str();
  s->add_option("--tiny-seconds", synth.tiny_seconds, "Length of each tiny song")->capture_default_str();
  s->add_option("--out", synth.out, "Output corpus directory")->required();
  s->add_option("--segments", synth.segments, "Segments per song")->capture_default_str();
  s->add_option("--split", synth.split, "train,val,test fractions by song")
      ->check(CLI::Validator(
          [](std::string& v) {
            try {
              SplitFractions::parse(v);
            } catch (const std::invalid_argument& e) {
              return std::string(e.what());
            }
            return std::string();
          },
          "FRACTIONS"))
      ->capture_default_str();
  s->add_option("--profile", synth.profile, "Analysis profile")
      ->check(CLI::IsMember({"full", "toy"}))
      ->capture_default_str();
  s->add_option("--silence-floor-db", synth.silence_floor_db, "Segments quieter than this are skipped")
      ->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train the VAE on a corpus");
  t->fallthrough();
  t->add_option("--corpus", tr.corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  t->add_option("--out-ckpt", tr.out_ckpt, "Checkpoint path, rewritten every epoch")->required();
  t->add_option("--epochs", tr.epochs)->capture_default_str();
  t->add_option("--beta", tr.beta, "KL weight")->capture_default_str()->check(CLI::NonNegativeNumber);
  t->add_option("--lr", tr.lr, "Adam learning rate")->capture_default_str()->check(CLI::NonNegativeNumber);
  t->add_option("--arch", tr.arch, "toy: J=16, C=8; full: J=50, C=20")
      ->check(CLI::IsMember({"toy", "full"}))
      ->capture_default_str();
  t->add_option("--latent-dims", tr.latent_dims, "Override J")->check(CLI::PositiveNumber);
  t->add_option("--growth", tr.growth, "Override C")->check(CLI::PositiveNumber);
  t->add_option("--batch", tr.batch)->capture_default_str()->check(CLI::PositiveNumber);
  t->add_option("--patience", tr.patience, "Early-stopping patience in epochs (0 disables)")->capture_default_str();
  t->add_option("--grad-clip", tr.grad_clip, "Global gradient norm clip (0 disables)")->capture_default_str();
  t->add_option("--lr-schedule", tr.lr_schedule, "Learning-rate schedule after warmup")
      ->check(CLI::IsMember({"constant", "cosine"}))
      ->capture_default_str();
  t->add_option("--warmup-steps", tr.warmup_steps, "Linear warmup length in optimizer steps")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  t->add_option("--final-lr-fraction", tr.final_lr_fraction, "Cosine floor as a fraction of --lr")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  t->add_flag("--resume", tr.resume, "Continue from --out-ckpt if it exists");

  UpmixArgs st, bl, base;
  auto* x = app.add_subcommand("transfer", "Upmix with the spatial style of a 5-channel reference");
  x->fallthrough();
  x->add_option("--stereo", st.stereo)->required()->check(CLI::ExistingFile);
  x->add_option("--style-ref", st.style_ref, "5-channel reference")->required()->check(CLI::ExistingFile);
  x->add_option("--ckpt", st.ckpt)->required()->check(CLI::ExistingFile);
  x->add_option("--out", st.out)->required();
  x->add_option("--bit-depth", st.bit_depth)->check(CLI::IsMember({"16i", "24i", "32f"}))->capture_default_str();

  auto* b = app.add_subcommand("blind", "Upmix with a random latent drawn from --seed");
  b->fallthrough();
  b->add_option("--stereo", bl.stereo)->required()->check(CLI::ExistingFile);
  b->add_option("--ckpt", bl.ckpt)->required()->check(CLI::ExistingFile);
  b->add_option("--out", bl.out)->required();
  b->add_option("--bit-depth", bl.bit_depth)->check(CLI::IsMember({"16i", "24i", "32f"}))->capture_default_str();

  auto* bs = app.add_subcommand("baseline", "Spread each stereo side to its front and rear speakers");
  bs->fallthrough();
  bs->add_option("--stereo", base.stereo)->required()->check(CLI::ExistingFile);
  bs->add_option("--out", base.out)->required();
  bs->add_option("--bit-depth", base.bit_depth)->check(CLI::IsMember({"16i", "24i", "32f"}))->capture_default_str();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "SD-SDR, WILD and angle differences");
  e->fallthrough();
  e->add_option("--ref", ev.ref, "Reference 5-channel WAV or directory")->required()->check(CLI::ExistingPath);
  e->add_option("--est", ev.est, "Estimate 5-channel WAV or directory")->required()->check(CLI::ExistingPath);
  e->add_option("--stems-dir", ev.stems_dir, "Stems for the angle metric (per-id subfolders in directory mode)");
  e->add_option("--ref-config", ev.ref_config, "JSON directions of the reference panning")->check(CLI::ExistingFile);
  e->add_option("--out-report", ev.out_report, "Report path prefix (.json and .csv are appended)")->required();

  AnalyzeArgs an;
  auto* a = app.add_subcommand("analyze", "Latent-space study and plot data");
  a->fallthrough();
  a->add_option("--ckpt", an.ckpt)->required()->check(CLI::ExistingFile);
  a->add_option("--study-config", an.study_config, "JSON: songs, pannings, segments_per_cell, seed, stems_dir")
      ->check(CLI::ExistingFile);
  a->add_option("--out-dir", an.out_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForVersion& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return 2;
  }

  const std::string resolved = app.config_to_str(true, false);
  try {
    if (s->parsed()) cmd_synth(synth, resolved);
    if (t->parsed()) cmd_train(tr, resolved);
    if (x->parsed()) cmd_upmix(UpmixMode::StyleTransfer, st, resolved);
    if (b->parsed()) cmd_upmix(UpmixMode::Blind, bl, resolved);
    if (bs->parsed()) cmd_upmix(UpmixMode::Baseline, base, resolved);
    if (e->parsed()) cmd_eval(ev, resolved);
    if (a->parsed()) cmd_analyze(an, resolved);
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 0;
}
