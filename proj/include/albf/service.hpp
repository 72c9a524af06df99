#pragma once

#include <charconv>
#include <functional>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>

#include "albf/active_session.hpp"

// After Eigen: glibc <resolv.h>, pulled in by httplib, defines a `_res` macro that Eigen uses as a name.
#include <httplib.h>

// HTTP binding for a single active-learning session. Numeric fields are sent as decimal
// strings. Every non-2xx response body is {"error": {"code": ..., "message": ...}}.
namespace albf {

struct HttpReply {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;

  json as_json() const { return json::parse(body); }
};

/// Shortest decimal string that reads back to the same double.
inline std::string decimal(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string decimal(std::uint64_t v) { return std::to_string(v); }

inline const char* api_error_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::BadRound: return "BAD_ROUND";
    case ErrorKind::UnknownCandidate: return "UNKNOWN_CANDIDATE";
    case ErrorKind::Sequencing: return "SEQUENCING";
    default: return "INTERNAL";
  }
}

inline int api_error_status(ErrorKind k) {
  switch (k) {
    case ErrorKind::BadRound:
    case ErrorKind::Sequencing: return 409;
    case ErrorKind::UnknownCandidate: return 404;
    default: return 500;
  }
}

inline HttpReply error_reply(int status, const std::string& code, const std::string& message) {
  return {status, "application/json", json{{"error", {{"code", code}, {"message", message}}}}.dump()};
}

inline json stats_to_json(const SessionStats& s) {
  json counts = json::object(), pct = json::object();
  for (auto m : kAllMethods) {
    const auto it = s.counts.find(m);
    counts[to_string(m)] = decimal(static_cast<std::uint64_t>(it == s.counts.end() ? 0 : it->second));
    pct[to_string(m)] = decimal(s.percentage(m));
  }
  return {{"rounds", decimal(static_cast<std::uint64_t>(s.rounds))}, {"counts", counts}, {"percentages", pct}};
}

class SessionService {
 public:
  using FrameSource = std::function<SourcedFrame()>;

  /// Without a session, every session endpoint answers 409.
  SessionService() = default;
  SessionService(std::unique_ptr<Session> session, FrameSource source)
      : session_(std::move(session)), source_(std::move(source)) {}

  Session* session() { return session_.get(); }

  /// Starts the next round if none is open.
  void ensure_round() {
    std::lock_guard lock(mu_);
    ensure_round_locked();
  }

  HttpReply get_round() {
    std::lock_guard lock(mu_);
    return guarded([&] {
      ensure_round_locked();
      const auto* set = session_->current();
      json cands = json::array();
      for (const auto& c : set->candidates) cands.push_back({{"id", c.id}, {"image_url", "/api/image/" + c.id}});
      return HttpReply{200, "application/json",
                       json{{"round_id", decimal(set->round_id)},
                            {"state", to_string(session_->state())},
                            {"candidates", cands},
                            {"criteria", selection_criteria_text()}}
                           .dump()};
    });
  }

  HttpReply post_select(const std::string& body) {
    std::lock_guard lock(mu_);
    return guarded([&] {
      json req;
      try {
        req = json::parse(body);
      } catch (const json::exception& e) {
        return error_reply(400, "INTERNAL", std::string("malformed request body: ") + e.what());
      }
      if (!req.contains("round_id") || !req.contains("candidate_id") || !req.at("candidate_id").is_string()) {
        return error_reply(400, "INTERNAL", "request needs round_id and candidate_id");
      }
      std::uint64_t round_id = 0;
      const auto& r = req.at("round_id");
      if (r.is_string()) {
        try {
          std::size_t used = 0;
          round_id = std::stoull(r.get<std::string>(), &used);
          if (used != r.get<std::string>().size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
          return error_reply(400, "BAD_ROUND", "round_id is not a decimal integer");
        }
      } else if (r.is_number_unsigned()) {
        round_id = r.get<std::uint64_t>();
      } else {
        return error_reply(400, "BAD_ROUND", "round_id is not a decimal integer");
      }

      const auto* open = session_->current();
      std::vector<std::pair<std::string, Method>> shown;
      if (open) {
        for (const auto& c : open->candidates) shown.emplace_back(c.id, c.method);
      }
      auto out = session_->submit_selection(round_id, req.at("candidate_id").get<std::string>());
      json revealed = json::array();
      for (const auto& [id, m] : shown) revealed.push_back({{"id", id}, {"method", to_string(m)}});
      json resp{{"round_id", decimal(round_id)},
                {"loss", out.loss ? json(decimal(*out.loss)) : json(nullptr)},
                {"step_skipped", out.step_skipped},
                {"note", out.record.note},
                {"stats", stats_to_json(out.stats)},
                {"revealed", revealed}};
      ensure_round_locked();
      return HttpReply{200, "application/json", resp.dump()};
    });
  }

  HttpReply get_stats() {
    std::lock_guard lock(mu_);
    return guarded([&] {
      json hist = json::array();
      for (const auto& p : session_->loss_history())
        hist.push_back({{"round_id", decimal(p.round_id)}, {"loss", decimal(p.loss)}});
      json j = stats_to_json(session_->stats());
      j["loss_history"] = hist;
      return HttpReply{200, "application/json", j.dump()};
    });
  }

  HttpReply get_image(const std::string& id) {
    std::lock_guard lock(mu_);
    return guarded([&] {
      auto png = session_->image_png(id);
      if (!png) return error_reply(404, "UNKNOWN_CANDIDATE", "no image '" + id + "' in the open round");
      return HttpReply{200, "image/png", std::string(png->begin(), png->end())};
    });
  }

  void mount(httplib::Server& srv) {
    auto send = [](httplib::Response& res, const HttpReply& r) {
      res.status = r.status;
      res.set_content(r.body, r.content_type);
    };
    srv.Get("/api/session/round", [this, send](const httplib::Request&, httplib::Response& res) { send(res, get_round()); });
    srv.Post("/api/session/select",
             [this, send](const httplib::Request& req, httplib::Response& res) { send(res, post_select(req.body)); });
    srv.Get("/api/session/stats", [this, send](const httplib::Request&, httplib::Response& res) { send(res, get_stats()); });
    srv.Get(R"(/api/image/([0-9a-f]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, get_image(req.matches[1]));
    });
  }

 private:
  template <typename F>
  HttpReply guarded(F&& body) {
    if (!session_) return error_reply(409, "SEQUENCING", "no active session");
    try {
      return body();
    } catch (const Error& e) {
      return error_reply(api_error_status(e.kind()), api_error_code(e.kind()), e.what());
    } catch (const std::exception& e) {
      return error_reply(500, "INTERNAL", e.what());
    }
  }

  void ensure_round_locked() {
    if (session_ && session_->state() == RoundState::Idle && source_) session_->run_round(source_());
  }

  std::mutex mu_;
  std::unique_ptr<Session> session_;
  FrameSource source_;
};

/// Port from the environment when set, else the given default.
inline int resolve_port(int cli_port, const char* env_name = "ALBF_PORT") {
  if (const char* v = std::getenv(env_name); v && *v) {
    try {
      std::size_t used = 0;
      const int p = std::stoi(v, &used);
      if (used == std::strlen(v) && p > 0 && p < 65536) return p;
    } catch (const std::exception&) {
    }
    fail(ErrorKind::Configuration, std::string(env_name) + " is not a valid port: " + v);
  }
  return cli_port;
}

}  // namespace albf
