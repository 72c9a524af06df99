// albf command line: simulate, beamform, metrics, serve, replay, train-offline.
#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <cstdio>
#include <iostream>

#include "albf/active_session.hpp"
#include "albf/metrics.hpp"
#include "albf/service.hpp"

namespace {

using namespace albf;

SessionConfig load_config(const std::string& path) {
  return path.empty() ? session_config_from_json(json::object()) : session_config_from_json(read_json_file(path));
}

PhantomSpec preset_phantom(const std::string& name, const ImageGrid& g) {
  const auto all = default_phantoms(g);
  if (name == "point") return all[0];
  if (name == "cyst") return all[1];
  if (name == "mixed") return all[2];
  fail(ErrorKind::Configuration, "unknown phantom preset '" + name + "' (point, cyst, mixed)");
}

std::vector<double> parse_numbers(const std::string& s, std::size_t expected, const char* what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      fail(ErrorKind::Configuration, std::string(what) + ": '" + item + "' is not a number");
    }
  }
  require(out.size() == expected, ErrorKind::Configuration,
          std::string(what) + " expects " + std::to_string(expected) + " comma-separated values");
  return out;
}

// x_mm,z_mm,radius_mm -> pixel circle on the grid
Circle circle_from_mm(const std::string& s, const ImageGrid& g, const char* what) {
  const auto v = parse_numbers(s, 3, what);
  const double dz = g.dz(), dx = g.dx();
  require(dz > 0 && dx > 0, ErrorKind::Configuration, "grid too small for contrast regions");
  Circle c;
  c.row = (v[1] * 1e-3 - g.z_min) / dz;
  c.col = (v[0] * 1e-3 - g.x_min) / dx;
  c.radius = v[2] * 1e-3 / std::max(dz, dx);
  return c;
}

BeamformedData run_method(const DelayedTensor& t, Method m, const SessionConfig& cfg, const std::string& checkpoint) {
  if (m != Method::MODEL) return beamform(t, m, cfg.beamformers);
  require(!checkpoint.empty(), ErrorKind::Configuration, "--method model needs --checkpoint");
  auto loaded = nn::load_checkpoint<double>(checkpoint);
  return nn::model_beamformed(t, nn::unet_forward(t, *loaded.model, nn::Mode::Eval));
}

RFFrame load_frame(const std::string& path, const SessionConfig& cfg) {
  RFFrame f = read_frame(path);
  require(f.probe.num_channels == cfg.grid.channels, ErrorKind::Configuration,
          "frame has " + std::to_string(f.probe.num_channels) + " channels, grid expects " +
              std::to_string(cfg.grid.channels));
  return f;
}

std::atomic<httplib::Server*> g_server{nullptr};

void on_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Active-learning ultrasound beamforming tools"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON file with probe/grid/training parameters");

  // simulate
  auto* sim = app.add_subcommand("simulate", "Synthesize an RF frame from a phantom and write it as rfbin");
  std::string sim_phantom, sim_preset = "point", sim_out;
  sim->add_option("--phantom", sim_phantom, "Phantom description (JSON)");
  sim->add_option("--preset", sim_preset, "Built-in phantom: point, cyst, mixed")
      ->check(CLI::IsMember({"point", "cyst", "mixed"}));
  sim->add_option("--out", sim_out, "Output rfbin path")->required();

  // beamform
  auto* bf = app.add_subcommand("beamform", "Beamform an rfbin frame and write a B-mode PNG");
  std::string bf_in, bf_out, bf_method, bf_ckpt;
  double bf_dr = kDefaultDynamicRange;
  bf->add_option("--in", bf_in, "Input rfbin frame")->required();
  bf->add_option("--method", bf_method, "das | fdmas | mvdr | gcf | model")
      ->required()
      ->check(CLI::IsMember({"das", "fdmas", "mvdr", "gcf", "model"}, CLI::ignore_case));
  bf->add_option("--out", bf_out, "Output PNG path")->required();
  bf->add_option("--checkpoint", bf_ckpt, "Model checkpoint (method model)");
  bf->add_option("--dynamic-range", bf_dr, "Display dynamic range in dB")->check(CLI::PositiveNumber);

  // metrics
  auto* mt = app.add_subcommand("metrics", "Report CR, CNR and FWHM for each method");
  std::string mt_in, mt_ckpt, mt_point, mt_target, mt_background;
  std::vector<std::string> mt_methods;
  mt->add_option("--in", mt_in, "Input rfbin frame")->required();
  mt->add_option("--methods", mt_methods, "Methods to report (default: the four conventional ones)")
      ->check(CLI::IsMember({"das", "fdmas", "mvdr", "gcf", "model"}, CLI::ignore_case));
  mt->add_option("--checkpoint", mt_ckpt, "Model checkpoint (method model)");
  mt->add_option("--point", mt_point, "Point target x_mm,z_mm for FWHM");
  mt->add_option("--target", mt_target, "Contrast target circle x_mm,z_mm,r_mm");
  mt->add_option("--background", mt_background, "Contrast background circle x_mm,z_mm,r_mm");

  // serve
  auto* sv = app.add_subcommand("serve", "Run the selection HTTP API (ALBF_PORT overrides --port)");
  int sv_port = 8080;
  std::string sv_host = "127.0.0.1", sv_log = "session.ndjson", sv_ckpt = "checkpoint.albf", sv_frames_dir;
  std::vector<std::string> sv_frames;
  bool sv_retain = false;
  sv->add_option("--port", sv_port, "TCP port")->check(CLI::Range(1, 65535));
  sv->add_option("--host", sv_host, "Bind address");
  sv->add_option("--log", sv_log, "Session log path");
  sv->add_option("--checkpoint", sv_ckpt, "Checkpoint path, rewritten after every selection");
  sv->add_option("--frames", sv_frames, "rfbin frames to cycle through (default: simulated phantoms)");
  sv->add_flag("--retain-frames", sv_retain, "Keep every round's frame on disk");
  sv->add_option("--frames-dir", sv_frames_dir, "Directory for retained frames");

  // replay
  auto* rp = app.add_subcommand("replay", "Re-run a session log and compare checkpoint checksums");
  std::string rp_log;
  rp->add_option("--log", rp_log, "Session log")->required()->check(CLI::ExistingFile);

  // train-offline
  auto* tr = app.add_subcommand("train-offline", "Scripted session that always selects one method");
  std::string tr_method = "fdmas", tr_log, tr_ckpt;
  std::size_t tr_rounds = 50;
  tr->add_option("--select", tr_method, "Method the scripted user always picks")
      ->check(CLI::IsMember({"das", "fdmas", "mvdr", "gcf"}, CLI::ignore_case));
  tr->add_option("--rounds", tr_rounds, "Number of rounds")->check(CLI::PositiveNumber);
  tr->add_option("--log", tr_log, "Session log path");
  tr->add_option("--checkpoint", tr_ckpt, "Final checkpoint path");

  CLI11_PARSE(app, argc, argv);

  try {
    SessionConfig cfg = load_config(config_path);

    if (*sim) {
      const PhantomSpec ph = sim_phantom.empty() ? preset_phantom(sim_preset, cfg.grid)
                                                 : read_json_file(sim_phantom).get<PhantomSpec>();
      const auto frame = synthesize_frame(ph, cfg.probe);
      write_frame(sim_out, frame);
      std::cout << "wrote " << sim_out << " samples=" << frame.samples.extent(0)
                << " channels=" << frame.samples.extent(1) << " digest=" << hex64(frame.digest()) << '\n';
    } else if (*bf) {
      const auto frame = load_frame(bf_in, cfg);
      const auto t = delay_compensate(frame, cfg.grid);
      const auto b = run_method(t, *parse_method(bf_method), cfg, bf_ckpt);
      write_file(bf_out, render_png(to_bmode(b, bf_dr)));
      std::cout << "wrote " << bf_out << '\n';
    } else if (*mt) {
      const auto frame = load_frame(mt_in, cfg);
      const auto t = delay_compensate(frame, cfg.grid);
      std::vector<Method> methods(std::begin(kConventionalMethods), std::end(kConventionalMethods));
      if (!mt_methods.empty()) {
        methods.clear();
        for (const auto& s : mt_methods) methods.push_back(*parse_method(s));
      }
      std::optional<RegionSpec> regions;
      if (!mt_target.empty() || !mt_background.empty()) {
        require(!mt_target.empty() && !mt_background.empty(), ErrorKind::Configuration,
                "--target and --background go together");
        regions = RegionSpec{circle_from_mm(mt_target, cfg.grid, "--target"),
                             circle_from_mm(mt_background, cfg.grid, "--background")};
        regions->validate(cfg.grid.depth_px, cfg.grid.lateral_px);
      }
      std::optional<PixelIndex> hint;
      if (!mt_point.empty()) {
        const auto v = parse_numbers(mt_point, 2, "--point");
        hint = pixel_of(cfg.grid, v[0] * 1e-3, v[1] * 1e-3);
      }
      for (auto m : methods) {
        const auto env = envelope(run_method(t, m, cfg, mt_ckpt));
        MetricsReport r;
        r.method = m;
        if (regions) {
          const auto c = contrast_metrics(env, *regions);
          r.cr = c.cr;
          r.cnr_db = c.cnr_db;
          if (!c.flag.empty()) r.note = c.flag;
        }
        if (hint) {
          try {
            r.axial_fwhm_mm = fwhm(env, *hint, Axis::Axial, cfg.grid);
            r.lateral_fwhm_mm = fwhm(env, *hint, Axis::Lateral, cfg.grid);
          } catch (const Error& e) {
            if (e.kind() != ErrorKind::UnboundedFwhm) throw;
            r.note = e.what();
          }
        }
        std::cout << format_report(r) << '\n';
      }
    } else if (*sv) {
      const int port = resolve_port(sv_port);
      cfg.log_path = sv_log;
      cfg.checkpoint_path = sv_ckpt;
      cfg.retain_frames = sv_retain;
      cfg.frames_dir = sv_frames_dir;
      require(!sv_retain || !sv_frames_dir.empty(), ErrorKind::Configuration, "--retain-frames needs --frames-dir");
      SessionService::FrameSource source;
      if (sv_frames.empty()) {
        auto src = std::make_shared<PhantomFrameSource>(default_phantoms(cfg.grid), cfg.probe);
        source = [src] { return src->next(); };
      } else {
        auto k = std::make_shared<std::size_t>(0);
        source = [sv_frames, k] {
          const auto& path = sv_frames[(*k)++ % sv_frames.size()];
          return SourcedFrame{read_frame(path), json{{"source", "rfbin"}, {"path", path}}};
        };
      }
      SessionService service(std::make_unique<Session>(cfg), source);
      service.ensure_round();
      httplib::Server srv;
      service.mount(srv);
      g_server = &srv;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "listening on http://" << sv_host << ':' << port << std::endl;
      if (!srv.listen(sv_host, port)) fail(ErrorKind::Io, "cannot listen on port " + std::to_string(port));
      g_server = nullptr;
    } else if (*rp) {
      const auto log = read_session_log(rp_log);
      const auto res = replay_session(log);
      std::cout << "rounds=" << res.rounds << " steps=" << res.steps << " final_checkpoint=" << res.final_checkpoint_id
                << " recorded_checkpoint=" << res.recorded_checkpoint_id
                << " match=" << (res.matches() ? "yes" : "no") << '\n';
      for (auto r : res.diverged_rounds) std::cerr << "diverged at round " << r << '\n';
      return res.matches() ? 0 : 3;
    } else if (*tr) {
      cfg.log_path = tr_log;
      cfg.checkpoint_path = tr_ckpt;
      const Method want = *parse_method(tr_method);
      Session session(cfg);
      PhantomFrameSource source(default_phantoms(cfg.grid), cfg.probe);
      for (std::size_t k = 0; k < tr_rounds; ++k) {
        const auto& set = session.run_round(source.next());
        std::string pick;
        for (const auto& c : set.candidates)
          if (c.method == want) pick = c.id;
        const auto out = session.submit_selection(set.round_id, pick);
        std::cout << "round=" << set.round_id << " loss=" << (out.loss ? decimal(*out.loss) : std::string("na"))
                  << " train_s=" << out.record.train_seconds << " checkpoint=" << out.record.checkpoint_id << '\n';
      }
    }
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
