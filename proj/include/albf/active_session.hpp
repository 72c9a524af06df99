#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "albf/beamformers.hpp"
#include "albf/config.hpp"
#include "albf/geometry_delay.hpp"
#include "albf/neural/checkpoint.hpp"
#include "albf/neural/head.hpp"
#include "albf/phantom_sim.hpp"
#include "albf/postprocess.hpp"
#include "albf/rfbin.hpp"

namespace albf {

/// Checklist shown next to the candidates, in display order.
inline const std::vector<std::string>& selection_criteria_text() {
  static const std::vector<std::string> items = {
      "Determine regions of high intensity and compare for axial/lateral resolution.",
      "Determine regions of homogeneous speckle and compare for speckle resolution.",
      "Determine regions of contrast difference (e.g. cyst) and compare for contrast resolution.",
  };
  return items;
}

struct SessionConfig {
  ProbeConfig probe;
  ImageGrid grid = make_grid(ProbeConfig{});
  nn::UNetConfig network = nn::UNetConfig::desk_scale();
  std::uint64_t model_seed = 1;
  nn::TrainConfig train;
  nn::LossOptions loss;
  std::size_t epochs_per_frame = 1;
  std::size_t warmup_rounds = 5;
  BeamformerSettings beamformers{MvdrConfig::for_channels(16), GcfConfig{}};
  std::uint64_t session_seed = 7;
  bool retain_frames = false;
  std::string frames_dir;       // where retained frames go
  std::string checkpoint_path;  // latest checkpoint, rewritten each round when set
  std::string log_path;         // newline-delimited JSON session log when set

  void validate() const {
    probe.validate();
    grid.validate();
    network.validate();
    train.validate();
    require(network.in_channels == probe.num_channels, ErrorKind::Configuration,
            "network input channels must equal probe channels");
    require(grid.channels == probe.num_channels, ErrorKind::Configuration, "grid laid out for a different probe");
    require(grid.divisible_by(8), ErrorKind::Configuration, "grid depth and lateral size must be divisible by 8");
    require(epochs_per_frame >= 1, ErrorKind::Configuration, "epochs_per_frame must be >= 1");
    beamformers.mvdr.validate(probe.num_channels);
    beamformers.gcf.validate(probe.num_channels);
  }
};

inline json session_config_to_json(const SessionConfig& c) {
  return json{{"probe", c.probe},
              {"grid", c.grid},
              {"network", {{"in_channels", c.network.in_channels}, {"stem_channels", c.network.stem_channels}}},
              {"model_seed", c.model_seed},
              {"train",
               {{"learning_rate", c.train.learning_rate},
                {"beta1", c.train.beta1},
                {"beta2", c.train.beta2},
                {"eps", c.train.eps},
                {"epochs_per_frame", c.epochs_per_frame},
                {"loss_domain", c.loss.domain == nn::LossDomain::BMode ? "bmode" : "rf"},
                {"soft_knee", c.loss.soft_knee}}},
              {"dynamic_range_db", c.loss.dynamic_range},
              {"warmup_rounds", c.warmup_rounds},
              {"mvdr", c.beamformers.mvdr},
              {"gcf", c.beamformers.gcf},
              {"session_seed", c.session_seed},
              {"retain_frames", c.retain_frames}};
}

/// Reads a session configuration; unspecified values take the desk-scale defaults.
inline SessionConfig session_config_from_json(const json& j) {
  SessionConfig c;
  if (j.contains("probe")) c.probe = j.at("probe").get<ProbeConfig>();
  c.grid = j.contains("grid") ? grid_from_json(j.at("grid"), c.probe) : make_grid(c.probe);
  c.network.in_channels = c.probe.num_channels;
  if (j.contains("network")) {
    read_opt(j.at("network"), "in_channels", c.network.in_channels);
    read_opt(j.at("network"), "stem_channels", c.network.stem_channels);
  }
  read_opt(j, "model_seed", c.model_seed);
  if (j.contains("train")) {
    const auto& t = j.at("train");
    read_opt(t, "learning_rate", c.train.learning_rate);
    read_opt(t, "beta1", c.train.beta1);
    read_opt(t, "beta2", c.train.beta2);
    read_opt(t, "eps", c.train.eps);
    read_opt(t, "epochs_per_frame", c.epochs_per_frame);
    read_opt(t, "soft_knee", c.loss.soft_knee);
    std::string domain = "bmode";
    read_opt(t, "loss_domain", domain);
    require(domain == "bmode" || domain == "rf", ErrorKind::Configuration, "loss_domain must be bmode or rf");
    c.loss.domain = domain == "rf" ? nn::LossDomain::Rf : nn::LossDomain::BMode;
  }
  read_opt(j, "dynamic_range_db", c.loss.dynamic_range);
  read_opt(j, "warmup_rounds", c.warmup_rounds);
  c.beamformers.mvdr = MvdrConfig::for_channels(c.probe.num_channels);
  if (j.contains("mvdr")) c.beamformers.mvdr = j.at("mvdr").get<MvdrConfig>();
  if (j.contains("gcf")) c.beamformers.gcf = j.at("gcf").get<GcfConfig>();
  read_opt(j, "session_seed", c.session_seed);
  read_opt(j, "retain_frames", c.retain_frames);
  read_opt(j, "frames_dir", c.frames_dir);
  read_opt(j, "checkpoint_path", c.checkpoint_path);
  read_opt(j, "log_path", c.log_path);
  return c;
}

/// A frame plus a description sufficient to regenerate it ({"source": "phantom"|"rfbin", ...}).
struct SourcedFrame {
  RFFrame frame;
  json origin;
};

inline SourcedFrame simulate_sourced(const PhantomSpec& phantom, const ProbeConfig& probe) {
  return {synthesize_frame(phantom, probe), json{{"source", "phantom"}, {"phantom", phantom}, {"probe", probe}}};
}

/// Regenerates a frame from its recorded origin.
inline RFFrame frame_from_origin(const json& origin) {
  const auto source = origin.value("source", std::string{});
  if (source == "phantom") {
    return synthesize_frame(origin.at("phantom").get<PhantomSpec>(), origin.at("probe").get<ProbeConfig>());
  }
  if (source == "rfbin") return read_frame(origin.at("path").get<std::string>());
  fail(ErrorKind::Configuration, "frame origin '" + source + "' cannot be regenerated");
}

enum class RoundState { Idle, AwaitingSelection };

inline const char* to_string(RoundState s) { return s == RoundState::Idle ? "idle" : "awaiting_selection"; }

struct Candidate {
  std::string id;  // opaque 128-bit token, hex
  Method method;
  BModeImage image;
  std::optional<Array2> beamformed;  // kept for the RF-domain loss
  std::vector<std::uint8_t> png;
};

struct CandidateSet {
  std::uint64_t round_id = 0;
  std::uint64_t permutation_seed = 0;
  std::vector<Candidate> candidates;  // display order

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    for (const auto& c : candidates) out.push_back(c.id);
    return out;
  }
  const Candidate* find(const std::string& id) const {
    for (const auto& c : candidates)
      if (c.id == id) return &c;
    return nullptr;
  }
};

struct SessionRecord {
  std::uint64_t round_id = 0;
  std::uint64_t frame_digest = 0;
  json frame_origin;
  std::uint64_t permutation_seed = 0;
  std::vector<std::pair<std::string, Method>> shown;
  std::string selected_id;
  Method selected_method = Method::DAS;
  std::optional<double> loss;
  bool step_skipped = false;
  std::string checkpoint_id;
  double duration_s = 0;
  double train_seconds = 0;
  std::string timestamp;
  std::string note;
  std::string retained_frame;
};

inline json record_to_json(const SessionRecord& r) {
  json shown = json::array();
  for (const auto& [id, m] : r.shown) shown.push_back({{"id", id}, {"method", to_string(m)}});
  json j{{"type", "round"},
         {"round_id", r.round_id},
         {"frame_digest", hex64(r.frame_digest)},
         {"frame_origin", r.frame_origin},
         {"permutation_seed", r.permutation_seed},
         {"shown", shown},
         {"selected_id", r.selected_id},
         {"selected_method", to_string(r.selected_method)},
         {"loss", r.loss ? json(*r.loss) : json(nullptr)},
         {"step_skipped", r.step_skipped},
         {"checkpoint_id", r.checkpoint_id},
         {"duration_s", r.duration_s},
         {"train_seconds", r.train_seconds},
         {"timestamp", r.timestamp}};
  if (!r.note.empty()) j["note"] = r.note;
  if (!r.retained_frame.empty()) j["retained_frame"] = r.retained_frame;
  return j;
}

inline SessionRecord record_from_json(const json& j) {
  SessionRecord r;
  r.round_id = j.at("round_id").get<std::uint64_t>();
  r.frame_digest = std::stoull(j.at("frame_digest").get<std::string>(), nullptr, 16);
  r.frame_origin = j.at("frame_origin");
  r.permutation_seed = j.at("permutation_seed").get<std::uint64_t>();
  for (const auto& s : j.at("shown")) {
    auto m = parse_method(s.at("method").get<std::string>());
    require(m.has_value(), ErrorKind::Integrity, "unknown method in session log");
    r.shown.emplace_back(s.at("id").get<std::string>(), *m);
  }
  r.selected_id = j.at("selected_id").get<std::string>();
  auto m = parse_method(j.at("selected_method").get<std::string>());
  require(m.has_value(), ErrorKind::Integrity, "unknown selected method in session log");
  r.selected_method = *m;
  if (!j.at("loss").is_null()) r.loss = j.at("loss").get<double>();
  r.step_skipped = j.at("step_skipped").get<bool>();
  r.checkpoint_id = j.at("checkpoint_id").get<std::string>();
  read_opt(j, "duration_s", r.duration_s);
  read_opt(j, "train_seconds", r.train_seconds);
  read_opt(j, "timestamp", r.timestamp);
  read_opt(j, "note", r.note);
  read_opt(j, "retained_frame", r.retained_frame);
  return r;
}

struct SessionStats {
  std::map<Method, std::size_t> counts;
  std::size_t rounds = 0;

  double percentage(Method m) const {
    auto it = counts.find(m);
    return rounds && it != counts.end() ? 100.0 * static_cast<double>(it->second) / static_cast<double>(rounds) : 0.0;
  }

  void add(Method m) {
    ++counts[m];
    ++rounds;
  }

  static SessionStats from_records(const std::vector<SessionRecord>& log) {
    SessionStats s;
    for (const auto& r : log) s.add(r.selected_method);
    return s;
  }
};

struct SelectionOutcome {
  std::optional<double> loss;  // empty when the model's own image was chosen
  bool step_skipped = false;
  SessionStats stats;
  SessionRecord record;
};

struct LossPoint {
  std::uint64_t round_id;
  double loss;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::string random_token() {
  static thread_local std::random_device rd;
  std::uint64_t a = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  std::uint64_t b = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  return hex64(a) + hex64(b);
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace detail

/// Display order of a round's candidates: a uniform shuffle driven only by the seed.
template <typename T>
void shuffle_display_order(std::vector<T>& items, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::shuffle(items.begin(), items.end(), rng);
}

/// The model plus its optimizer state and training configuration; shared by live sessions
/// and replay so both take identical steps.
class Trainer {
 public:
  explicit Trainer(const SessionConfig& cfg)
      : cfg_(cfg), model_(std::make_unique<nn::UNet<double>>(cfg.network, cfg.model_seed)) {
    opt_.bind(model_->parameters());
  }

  /// Runs epochs_per_frame steps; returns the loss of the first step.
  nn::StepResult train(const DelayedTensor& t, const nn::TrainTarget& target) {
    nn::StepResult first;
    double seconds = 0;
    for (std::size_t e = 0; e < cfg_.epochs_per_frame; ++e) {
      auto r = nn::train_step(t, target, *model_, opt_, cfg_.train, cfg_.loss);
      seconds += r.seconds;
      if (e == 0) first = r;
      if (!r.applied) break;
    }
    first.seconds = seconds;
    return first;
  }

  BModeImage predict(const DelayedTensor& t) { return nn::predict_bmode(t, *model_, cfg_.loss.dynamic_range); }

  std::vector<std::uint8_t> checkpoint_bytes() { return nn::serialize_checkpoint(*model_, opt_); }
  std::uint64_t checksum() { return nn::checkpoint_checksum(checkpoint_bytes()); }

  nn::UNet<double>& model() { return *model_; }
  nn::AdamState<double>& optimizer() { return opt_; }

 private:
  SessionConfig cfg_;
  std::unique_ptr<nn::UNet<double>> model_;
  nn::AdamState<double> opt_;
};

/// Builds the training target for a conventional method on a delay-compensated frame.
inline nn::TrainTarget method_target(const DelayedTensor& t, Method m, const SessionConfig& cfg) {
  auto b = beamform(t, m, cfg.beamformers);
  nn::TrainTarget target{to_bmode(b, cfg.loss.dynamic_range), std::nullopt};
  if (cfg.loss.domain == nn::LossDomain::Rf) target.beamformed = std::move(b.values);
  return target;
}

/// One clinician, one round at a time: candidates out, selection in, one training step.
class Session {
 public:
  explicit Session(SessionConfig cfg) : cfg_(std::move(cfg)), trainer_(cfg_) {
    cfg_.validate();
    if (!cfg_.log_path.empty()) {
      log_.open(cfg_.log_path, std::ios::out | std::ios::trunc);
      require(static_cast<bool>(log_), ErrorKind::Io, "cannot open session log " + cfg_.log_path);
      json header{{"type", "session"},
                  {"version", 1},
                  {"config", session_config_to_json(cfg_)},
                  {"initial_checkpoint_id", hex64(trainer_.checksum())},
                  {"timestamp", detail::utc_timestamp()}};
      log_ << header.dump() << '\n';
      log_.flush();
    }
  }

  const SessionConfig& config() const { return cfg_; }
  RoundState state() const { return state_; }
  std::uint64_t rounds_started() const { return next_round_ - 1; }
  const CandidateSet* current() const { return state_ == RoundState::AwaitingSelection ? &current_ : nullptr; }
  const std::vector<SessionRecord>& records() const { return records_; }
  const std::vector<LossPoint>& loss_history() const { return losses_; }
  SessionStats stats() const { return stats_; }
  Trainer& trainer() { return trainer_; }

  std::uint64_t default_permutation_seed(std::uint64_t round_id) const {
    return detail::splitmix64(cfg_.session_seed ^ detail::splitmix64(round_id));
  }

  /// Beamforms the frame every way, shuffles and anonymizes the candidates, and waits for a pick.
  const CandidateSet& run_round(SourcedFrame input, std::optional<std::uint64_t> permutation_seed = std::nullopt) {
    require(state_ != RoundState::AwaitingSelection, ErrorKind::Sequencing,
            "round " + std::to_string(current_.round_id) + " is still awaiting a selection");
    const auto start = std::chrono::steady_clock::now();
    const std::uint64_t round_id = next_round_;

    frame_ = std::make_unique<SourcedFrame>(std::move(input));
    delayed_ = std::make_unique<DelayedTensor>(delay_compensate(frame_->frame, cfg_.grid));

    CandidateSet set;
    set.round_id = round_id;
    set.permutation_seed = permutation_seed.value_or(default_permutation_seed(round_id));
    for (auto m : kConventionalMethods) {
      auto b = beamform(*delayed_, m, cfg_.beamformers);
      Candidate c{detail::random_token(), m, to_bmode(b, cfg_.loss.dynamic_range), std::nullopt, {}};
      if (cfg_.loss.domain == nn::LossDomain::Rf) c.beamformed = std::move(b.values);
      set.candidates.push_back(std::move(c));
    }
    if (round_id > cfg_.warmup_rounds) {
      set.candidates.push_back({detail::random_token(), Method::MODEL, trainer_.predict(*delayed_), std::nullopt, {}});
    }
    shuffle_display_order(set.candidates, set.permutation_seed);
    for (auto& c : set.candidates) c.png = render_png(c.image);

    current_ = std::move(set);
    ++next_round_;
    state_ = RoundState::AwaitingSelection;
    round_started_ = start;
    return current_;
  }

  std::optional<std::vector<std::uint8_t>> image_png(const std::string& id) const {
    if (state_ != RoundState::AwaitingSelection) return std::nullopt;
    if (const auto* c = current_.find(id)) return c->png;
    return std::nullopt;
  }

  SelectionOutcome submit_selection(std::uint64_t round_id, const std::string& candidate_id) {
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      if (it->round_id == round_id) {
        fail(ErrorKind::Sequencing, "round " + std::to_string(round_id) + " already has a selection");
      }
    }
    if (state_ != RoundState::AwaitingSelection) {
      if (next_round_ == 1) fail(ErrorKind::Sequencing, "no round has been started");
      fail(ErrorKind::BadRound, "round " + std::to_string(round_id) + " is not open");
    }
    if (round_id != current_.round_id) {
      fail(ErrorKind::BadRound, "round " + std::to_string(round_id) + " is stale; open round is " +
                                    std::to_string(current_.round_id));
    }
    const Candidate* chosen = current_.find(candidate_id);
    if (!chosen) fail(ErrorKind::UnknownCandidate, "no candidate '" + candidate_id + "' in this round");

    SessionRecord rec;
    rec.round_id = round_id;
    rec.frame_digest = frame_->frame.digest();
    rec.frame_origin = frame_->origin;
    rec.permutation_seed = current_.permutation_seed;
    for (const auto& c : current_.candidates) rec.shown.emplace_back(c.id, c.method);
    rec.selected_id = candidate_id;
    rec.selected_method = chosen->method;
    rec.timestamp = detail::utc_timestamp();

    SelectionOutcome out;
    if (chosen->method == Method::MODEL) {
      rec.step_skipped = true;
      rec.note = "model-selected, step skipped";
    } else {
      nn::TrainTarget target{chosen->image, chosen->beamformed};
      auto step = trainer_.train(*delayed_, target);
      rec.train_seconds = step.seconds;
      if (step.applied) {
        rec.loss = step.loss;
        losses_.push_back({round_id, step.loss});
      } else {
        rec.note = step.diagnostic;
      }
    }

    const auto bytes = trainer_.checkpoint_bytes();
    rec.checkpoint_id = hex64(nn::checkpoint_checksum(bytes));
    if (!cfg_.checkpoint_path.empty()) write_file(cfg_.checkpoint_path, bytes);
    if (cfg_.retain_frames && !cfg_.frames_dir.empty()) {
      rec.retained_frame = cfg_.frames_dir + "/round_" + std::to_string(round_id) + ".rfbin";
      write_frame(rec.retained_frame, frame_->frame);
    }
    rec.duration_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - round_started_).count();

    stats_.add(rec.selected_method);
    records_.push_back(rec);
    if (log_.is_open()) {
      log_ << record_to_json(rec).dump() << '\n';
      log_.flush();
    }

    // Only the current acquisition is ever held.
    frame_.reset();
    delayed_.reset();
    state_ = RoundState::Idle;

    out.loss = rec.loss;
    out.step_skipped = rec.step_skipped;
    out.stats = stats_;
    out.record = std::move(rec);
    return out;
  }

 private:
  SessionConfig cfg_;
  Trainer trainer_;
  RoundState state_ = RoundState::Idle;
  std::uint64_t next_round_ = 1;
  CandidateSet current_;
  std::unique_ptr<SourcedFrame> frame_;
  std::unique_ptr<DelayedTensor> delayed_;
  std::chrono::steady_clock::time_point round_started_;
  std::vector<SessionRecord> records_;
  std::vector<LossPoint> losses_;
  SessionStats stats_;
  std::ofstream log_;
};

struct SessionLog {
  SessionConfig config;
  std::string initial_checkpoint_id;
  std::vector<SessionRecord> rounds;
};

inline SessionLog read_session_log(const std::string& path) {
  std::ifstream f(path);
  require(static_cast<bool>(f), ErrorKind::Io, "cannot open session log " + path);
  SessionLog log;
  std::string line;
  bool have_header = false;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail(ErrorKind::Integrity, "malformed session log line: " + std::string(e.what()));
    }
    const auto type = j.value("type", std::string{});
    if (type == "session") {
      log.config = session_config_from_json(j.at("config"));
      log.initial_checkpoint_id = j.value("initial_checkpoint_id", std::string{});
      have_header = true;
    } else if (type == "round") {
      log.rounds.push_back(record_from_json(j));
    }
  }
  require(have_header, ErrorKind::Integrity, "session log has no header record");
  return log;
}

struct ReplayResult {
  std::size_t rounds = 0;
  std::size_t steps = 0;
  std::string final_checkpoint_id;
  std::string recorded_checkpoint_id;
  std::vector<std::uint64_t> diverged_rounds;

  bool matches() const { return diverged_rounds.empty() && final_checkpoint_id == recorded_checkpoint_id; }
};

/// Re-runs every recorded selection against regenerated frames and compares checkpoints.
inline ReplayResult replay_session(const SessionLog& log) {
  SessionConfig cfg = log.config;
  cfg.log_path.clear();
  cfg.checkpoint_path.clear();
  cfg.validate();
  Trainer trainer(cfg);
  ReplayResult res;
  res.recorded_checkpoint_id = log.rounds.empty() ? log.initial_checkpoint_id : log.rounds.back().checkpoint_id;
  for (const auto& r : log.rounds) {
    const RFFrame frame = r.retained_frame.empty() ? frame_from_origin(r.frame_origin) : read_frame(r.retained_frame);
    require(frame.digest() == r.frame_digest, ErrorKind::Integrity,
            "frame for round " + std::to_string(r.round_id) + " does not match its recorded digest");
    if (!r.step_skipped) {
      const auto delayed = delay_compensate(frame, cfg.grid);
      trainer.train(delayed, method_target(delayed, r.selected_method, cfg));
      ++res.steps;
    }
    const auto id = hex64(trainer.checksum());
    if (id != r.checkpoint_id) res.diverged_rounds.push_back(r.round_id);
    res.final_checkpoint_id = id;
    ++res.rounds;
  }
  if (log.rounds.empty()) res.final_checkpoint_id = hex64(trainer.checksum());
  return res;
}

/// Desk-scale training phantoms laid out around a grid: point targets, an anechoic cyst in
/// speckle, and a mixed scene.
inline std::vector<PhantomSpec> default_phantoms(const ImageGrid& g) {
  const double zc = 0.5 * (g.z_min + g.z_max);
  const double half_w = 0.5 * (g.x_max - g.x_min);
  Box box{-2.0 * half_w, 2.0 * half_w, g.z_min - 0.5e-3, g.z_max + 0.5e-3};

  PhantomSpec points;
  points.point_targets = {{0.0, zc, 1.0}, {-0.45 * half_w, zc - 0.9e-3, 0.8}, {0.45 * half_w, zc + 0.9e-3, 0.8}};
  points.speckle_density = 5;
  points.speckle_region = box;
  points.rng_seed = 101;

  PhantomSpec cyst;
  cyst.cyst_regions = {{0.0, zc, 0.6e-3, 0.0}};
  cyst.speckle_density = 50;
  cyst.speckle_region = box;
  cyst.rng_seed = 202;

  PhantomSpec mixed;
  mixed.point_targets = {{0.3 * half_w, zc - 0.8e-3, 1.0}};
  mixed.cyst_regions = {{-0.3 * half_w, zc + 0.5e-3, 0.5e-3, 0.0}};
  mixed.speckle_density = 30;
  mixed.speckle_region = box;
  mixed.rng_seed = 303;
  return {points, cyst, mixed};
}

/// Cycles through phantom templates, reseeding speckle each round.
class PhantomFrameSource {
 public:
  PhantomFrameSource(std::vector<PhantomSpec> templates, ProbeConfig probe, bool reseed = true)
      : templates_(std::move(templates)), probe_(probe), reseed_(reseed) {
    require(!templates_.empty(), ErrorKind::Configuration, "frame source needs at least one phantom");
  }

  SourcedFrame next() {
    PhantomSpec ph = templates_[count_ % templates_.size()];
    if (reseed_) ph.rng_seed += count_ / templates_.size();
    ++count_;
    return simulate_sourced(ph, probe_);
  }

 private:
  std::vector<PhantomSpec> templates_;
  ProbeConfig probe_;
  bool reseed_;
  std::size_t count_ = 0;
};

}  // namespace albf
