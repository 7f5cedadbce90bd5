#pragma once

// Human-in-the-loop oracle behind an HTTP API. The AL loop runs on a worker
// thread and blocks in HumanOracle::label until every issued pair has an
// answer; answers are appended to a durable label log before they are
// acknowledged, and a state snapshot is written at every iteration
// boundary so a killed server can resume.

#include <fcntl.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <regex>
#include <string>
#include <thread>
#include <vector>

#include "anneal/al_engine.hpp"
#include "anneal/data_pool.hpp"
#include "anneal/error.hpp"
#include "anneal/retrieval.hpp"
#include "anneal/similarity_model.hpp"
#include "httplib.h"
#include "json.hpp"

namespace anneal::service {

namespace fs = std::filesystem;
using nlohmann::json;

inline const char* label_name(int label) { return label == kSimilar ? "similar" : "dissimilar"; }

inline std::optional<int> label_from_name(std::string_view s) {
  if (s == "similar") return kSimilar;
  if (s == "dissimilar") return kDissimilar;
  return std::nullopt;
}

// --- label log -------------------------------------------------------------------

/// Append-only CSV `timestamp,pair_id,image_a,image_b,label`, fsync'd per
/// record.
class LabelLog {
 public:
  static constexpr const char* kHeader = "timestamp,pair_id,image_a,image_b,label";

  explicit LabelLog(const std::string& path) : path_(path) {
    if (fs::exists(path)) drop_torn_tail(path);
    const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
    fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0) throw Error("cannot open label log '" + path + "'");
    if (fresh) write_line(std::string(kHeader) + "\n");
  }
  LabelLog(const LabelLog&) = delete;
  LabelLog& operator=(const LabelLog&) = delete;
  ~LabelLog() {
    if (fd_ >= 0) ::close(fd_);
  }

  void append(const Pair& p, int label) {
    const auto now = std::chrono::duration_cast<std::chrono::milliseconds>(
                         std::chrono::system_clock::now().time_since_epoch())
                         .count();
    write_line(std::to_string(now) + "," + pair_id(p) + "," + std::to_string(p.a) + "," +
               std::to_string(p.b) + "," + label_name(label) + "\n");
  }

  const std::string& path() const noexcept { return path_; }

 private:
  // A crash mid-append leaves a line without its newline; cut it off so the
  // next record starts on a fresh line.
  static void drop_torn_tail(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (content.empty() || content.back() == '\n') return;
    const auto nl = content.rfind('\n');
    fs::resize_file(path, nl == std::string::npos ? 0 : nl + 1);
  }

  void write_line(const std::string& line) {
    const char* data = line.data();
    std::size_t left = line.size();
    while (left > 0) {
      const ssize_t n = ::write(fd_, data, left);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw Error("label log write failed");
      }
      data += n;
      left -= static_cast<std::size_t>(n);
    }
    if (::fsync(fd_) != 0) throw Error("label log fsync failed");
  }

  std::string path_;
  int fd_ = -1;
};

/// Human-provenance pairs recorded in a label log, first answer per pair,
/// in canonical key order. A torn final line (no newline) is ignored.
inline std::vector<LabeledPair> replay_label_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) return {};
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::map<Pair, LabeledPair> seen;
  std::size_t pos = 0, line_no = 0;
  while (pos < content.size()) {
    const auto nl = content.find('\n', pos);
    if (nl == std::string::npos) break;
    const std::string_view line(content.data() + pos, nl - pos);
    pos = nl + 1;
    if (++line_no == 1) {
      if (line != LabelLog::kHeader) throw ParseError("unexpected label log header", 1);
      continue;
    }
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 5) throw ParseError("label log row needs 5 columns", line_no);
    const auto p = parse_pair_id(cells[1]);
    const auto l = label_from_name(cells[4]);
    if (!p || !l) throw ParseError("malformed label log row", line_no);
    seen.emplace(*p, LabeledPair{*p, *l, Provenance::human});
  }
  std::vector<LabeledPair> out;
  for (auto& kv : seen) out.push_back(kv.second);
  return out;
}

// --- queue -------------------------------------------------------------------------

enum class AnswerStatus { accepted, conflict, not_found };

inline const char* to_string(AnswerStatus s) {
  switch (s) {
    case AnswerStatus::accepted: return "accepted";
    case AnswerStatus::conflict: return "conflict";
    case AnswerStatus::not_found: return "not_found";
  }
  return "?";
}

/// Pending pair queries for the current iteration. All mutation happens
/// under one mutex; readers get copies.
class AnnotationQueue {
 public:
  explicit AnnotationQueue(LabelLog* log = nullptr) : log_(log) {}

  /// Opens a new round. `prefilled` answers (e.g. replayed from the log)
  /// count as already answered.
  void issue(std::span<const Pair> pairs, const std::map<Pair, int>& prefilled = {}) {
    std::lock_guard lock(mu_);
    issued_.assign(pairs.begin(), pairs.end());
    answered_.clear();
    active_ = true;
    for (const auto& p : issued_)
      if (auto it = prefilled.find(p); it != prefilled.end()) answered_[p] = it->second;
    cv_.notify_all();
  }

  AnswerStatus answer(const Pair& p, int label) {
    std::lock_guard lock(mu_);
    if (!active_ || std::find(issued_.begin(), issued_.end(), p) == issued_.end())
      return AnswerStatus::not_found;
    if (answered_.count(p)) return AnswerStatus::conflict;
    if (log_) log_->append(p, label);
    answered_[p] = label;
    if (answered_.size() == issued_.size()) cv_.notify_all();
    return AnswerStatus::accepted;
  }

  /// Blocks until every issued pair is answered. A zero timeout waits
  /// forever. Throws OracleError on timeout or cancellation.
  std::vector<int> wait_complete(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    auto done = [&] { return cancelled_ || answered_.size() == issued_.size(); };
    if (timeout.count() > 0) {
      if (!cv_.wait_for(lock, timeout, done)) {
        active_ = false;
        throw OracleError("annotation timed out with " +
                          std::to_string(issued_.size() - answered_.size()) + " pairs pending");
      }
    } else {
      cv_.wait(lock, done);
    }
    if (cancelled_ && answered_.size() != issued_.size()) {
      active_ = false;
      throw OracleError("annotation cancelled");
    }
    std::vector<int> labels;
    for (const auto& p : issued_) labels.push_back(answered_.at(p));
    active_ = false;
    return labels;
  }

  /// Sticky: every later wait fails too.
  void cancel() {
    std::lock_guard lock(mu_);
    cancelled_ = true;
    cv_.notify_all();
  }

  bool active() const {
    std::lock_guard lock(mu_);
    return active_;
  }

  std::vector<Pair> pending() const {
    std::lock_guard lock(mu_);
    std::vector<Pair> out;
    if (!active_) return out;
    for (const auto& p : issued_)
      if (!answered_.count(p)) out.push_back(p);
    return out;
  }

  std::size_t answered_count() const {
    std::lock_guard lock(mu_);
    return active_ ? answered_.size() : 0;
  }

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  LabelLog* log_;
  std::vector<Pair> issued_;
  std::map<Pair, int> answered_;
  bool active_ = false;
  bool cancelled_ = false;
};

class HumanOracle final : public Oracle {
 public:
  HumanOracle(AnnotationQueue& queue, std::chrono::milliseconds timeout,
              std::map<Pair, int> prefilled = {})
      : queue_(queue), timeout_(timeout), prefilled_(std::move(prefilled)) {}

  std::vector<int> label(std::span<const Pair> pairs) override {
    queue_.issue(pairs, prefilled_);
    return queue_.wait_complete(timeout_);
  }
  Provenance provenance() const override { return Provenance::human; }

 private:
  AnnotationQueue& queue_;
  std::chrono::milliseconds timeout_;
  std::map<Pair, int> prefilled_;
};

// --- session -----------------------------------------------------------------------

struct SessionOptions {
  std::string output_dir;
  std::string asset_root;  // empty: assets unavailable
  std::chrono::milliseconds timeout{0};
  std::string config_fingerprint;  // must match on resume
};

/// Owns the AL loop for one human-annotated experiment.
class AnnotationSession {
 public:
  AnnotationSession(const Dataset& data, ALConfig cfg, SessionOptions opts)
      : data_(data),
        cfg_(std::move(cfg)),
        opts_(std::move(opts)),
        log_((fs::create_directories(opts_.output_dir), log_path())),
        queue_(&log_) {
    std::random_device rd;
    char buf[20];
    std::snprintf(buf, sizeof buf, "%08x%08x", rd(), rd());
    session_id_ = buf;
  }
  AnnotationSession(const AnnotationSession&) = delete;
  AnnotationSession& operator=(const AnnotationSession&) = delete;
  ~AnnotationSession() { stop(); }

  std::string log_path() const { return (fs::path(opts_.output_dir) / "labels.csv").string(); }
  std::string snapshot_path() const { return (fs::path(opts_.output_dir) / "snapshot.json").string(); }
  std::string checkpoint_path() const { return (fs::path(opts_.output_dir) / "model.ckpt").string(); }
  std::string results_path() const { return (fs::path(opts_.output_dir) / "results.csv").string(); }

  void start() {
    worker_ = std::thread([this] { loop(); });
  }

  void stop() {
    stopping_ = true;
    queue_.cancel();
    if (worker_.joinable()) worker_.join();
  }

  /// Blocks until the loop thread leaves (finished, aborted or failed).
  void join() {
    if (worker_.joinable()) worker_.join();
  }

  json status() const {
    std::lock_guard lock(mu_);
    json j;
    j["session_id"] = session_id_;
    j["state"] = phase_ == "selecting" && queue_.active() ? "awaiting_labels" : phase_;
    j["iteration"] = iteration_;
    j["bits_spent"] = bits_spent_;
    j["budget_bits"] = cfg_.budget_bits;
    j["k"] = cfg_.k;
    j["strategy"] = to_string(cfg_.strategy);
    j["pending_count"] = queue_.pending().size();
    j["answered_count"] = queue_.answered_count();
    auto& h = j["history"] = json::array();
    for (const auto& r : history_)
      h.push_back({{"iteration", r.iteration},
                   {"bits", r.bits},
                   {"map_at_5", r.map_at_5},
                   {"labeled_pairs", r.labeled_pairs},
                   {"transitive_pairs", r.transitive_pairs}});
    if (!error_.empty()) j["error"] = error_;
    return j;
  }

  json queries(std::size_t limit, std::size_t offset) const {
    const auto pending = queue_.pending();
    json j;
    j["active"] = queue_.active();
    j["total_pending"] = pending.size();
    auto& q = j["queries"] = json::array();
    for (std::size_t i = offset; i < pending.size() && q.size() < limit; ++i) {
      const auto& p = pending[i];
      q.push_back({{"pair_id", pair_id(p)}, {"image_a", image_json(p.a)}, {"image_b", image_json(p.b)}});
    }
    j["next_offset"] = std::min(pending.size(), offset + q.size());
    return j;
  }

  AnswerStatus answer(std::string_view id, int label) {
    const auto p = parse_pair_id(id);
    if (!p) return AnswerStatus::not_found;
    return queue_.answer(*p, label);
  }

  const std::string& asset_root() const { return opts_.asset_root; }
  const std::string& session_id() const { return session_id_; }

  /// Current labeled set (copy), for inspection and tests.
  LabeledSet labeled() const {
    std::lock_guard lock(mu_);
    return labeled_;
  }

  std::string phase() const {
    std::lock_guard lock(mu_);
    return phase_;
  }

 private:
  json image_json(ImageId id) const {
    json j{{"id", id}};
    if (!opts_.asset_root.empty()) j["asset_uri"] = "/api/assets/" + std::to_string(id);
    return j;
  }

  void publish(const ALState& s, const std::string& phase) {
    std::lock_guard lock(mu_);
    iteration_ = s.iteration;
    bits_spent_ = s.bits_spent;
    history_ = s.history;
    labeled_ = s.labeled;
    phase_ = phase;
  }

  void set_phase(const std::string& phase, const std::string& error = {}) {
    std::lock_guard lock(mu_);
    phase_ = phase;
    if (!error.empty()) error_ = error;
  }

  void save(const ALState& s) {
    save_checkpoint(checkpoint_path(), s.model);
    auto j = state_to_json(s);
    j["config_fingerprint"] = opts_.config_fingerprint;
    const std::string tmp = snapshot_path() + ".tmp";
    {
      std::ofstream os(tmp, std::ios::trunc);
      os << j.dump(1) << '\n';
      if (!os) throw Error("cannot write snapshot");
    }
    fs::rename(tmp, snapshot_path());
    export_curve(s.history, results_path());
  }

  std::optional<ALState> try_resume() {
    if (!fs::exists(snapshot_path()) || !fs::exists(checkpoint_path())) return std::nullopt;
    std::ifstream in(snapshot_path());
    const auto j = json::parse(in);
    if (j.value("config_fingerprint", std::string()) != opts_.config_fingerprint)
      throw Error("snapshot in '" + opts_.output_dir + "' was produced with a different config");
    return state_from_json(j, load_checkpoint(checkpoint_path()));
  }

  void loop() {
    try {
      set_phase("training");
      auto resumed = try_resume();
      ALState state = resumed ? std::move(*resumed) : initialize_state(data_, cfg_);
      if (!resumed) save(state);
      publish(state, "training");

      std::map<Pair, int> replayed;
      for (const auto& lp : replay_label_log(log_path()))
        if (!state.labeled.contains(lp.pair) ||
            state.labeled.find(lp.pair)->provenance == Provenance::transitive)
          replayed[lp.pair] = lp.label;

      while (!stopping_ && should_continue(state, cfg_)) {
        Rng backup = state.rng;
        try {
          const auto queries = select_queries(state, data_, cfg_);
          publish(state, "selecting");
          HumanOracle oracle(queue_, opts_.timeout, replayed);
          const auto labels = oracle.label(queries);
          set_phase("retraining");
          complete_iteration(state, data_, cfg_, queries, labels, Provenance::human);
        } catch (const OracleError& e) {
          state.rng = backup;
          publish(state, stopping_ ? "stopped" : "aborted");
          set_phase(stopping_ ? "stopped" : "aborted", e.what());
          return;
        }
        save(state);
        publish(state, "training");
      }
      publish(state, "finished");
    } catch (const std::exception& e) {
      set_phase("failed", e.what());
      log::warn(std::string("annotation session failed: ") + e.what());
    }
  }

  const Dataset& data_;
  ALConfig cfg_;
  SessionOptions opts_;
  LabelLog log_;
  AnnotationQueue queue_;
  std::string session_id_;
  std::thread worker_;
  std::atomic<bool> stopping_{false};

  mutable std::mutex mu_;
  std::string phase_ = "starting";
  std::string error_;
  std::size_t iteration_ = 0;
  double bits_spent_ = 0.0;
  std::vector<HistoryRow> history_;
  LabeledSet labeled_;
};

// --- HTTP ----------------------------------------------------------------------------

inline bool valid_asset_id(const std::string& id) {
  static const std::regex ok("^[A-Za-z0-9_-]{1,64}$");
  return std::regex_match(id, ok);
}

inline std::optional<fs::path> find_asset(const std::string& root, const std::string& id) {
  static const char* exts[] = {".png", ".jpg", ".jpeg", ".gif", ".webp", ".bmp", ".tif", ".tiff"};
  for (const char* e : exts) {
    fs::path p = fs::path(root) / (id + e);
    std::error_code ec;
    if (fs::is_regular_file(p, ec)) return p;
  }
  return std::nullopt;
}

inline const char* content_type_for(const fs::path& p) {
  const auto e = p.extension().string();
  if (e == ".png") return "image/png";
  if (e == ".jpg" || e == ".jpeg") return "image/jpeg";
  if (e == ".gif") return "image/gif";
  if (e == ".webp") return "image/webp";
  if (e == ".bmp") return "image/bmp";
  return "image/tiff";
}

inline constexpr const char* kFallbackPage = R"(<!doctype html>
<html><head><meta charset="utf-8"><title>annotation service</title></head>
<body><h1>Annotation service</h1>
<p>No UI bundle is installed. Start <code>serve</code> with <code>--ui DIR</code> to serve one.</p>
<ul><li>GET /api/session</li><li>GET /api/queries?limit=L&amp;offset=O</li>
<li>POST /api/labels</li><li>GET /api/assets/{image_id}</li></ul></body></html>
)";

inline void reply_json(httplib::Response& res, const json& j, int status = 200) {
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

/// Registers the API routes (and the UI bundle, if any) on `server`.
inline void install_routes(httplib::Server& server, AnnotationSession& session,
                           const std::string& ui_dir = {}) {
  server.Get("/api/session", [&](const httplib::Request&, httplib::Response& res) {
    reply_json(res, session.status());
  });

  server.Get("/api/queries", [&](const httplib::Request& req, httplib::Response& res) {
    std::size_t limit = 50, offset = 0;
    auto parse = [&](const char* name, std::size_t& out) {
      if (!req.has_param(name)) return true;
      return detail::parse_int(req.get_param_value(name), out);
    };
    if (!parse("limit", limit) || !parse("offset", offset))
      return reply_json(res, {{"error", "limit and offset must be non-negative integers"}}, 400);
    reply_json(res, session.queries(limit, offset));
  });

  server.Post("/api/labels", [&](const httplib::Request& req, httplib::Response& res) {
    json body = json::parse(req.body, nullptr, false);
    if (body.is_discarded()) return reply_json(res, {{"error", "body is not valid JSON"}}, 400);
    if (body.is_object() && body.contains("labels")) body = body["labels"];
    if (!body.is_array()) return reply_json(res, {{"error", "expected a list of labels"}}, 400);
    for (const auto& item : body)
      if (!item.is_object() || !item.contains("pair_id") || !item.contains("label") ||
          !item["pair_id"].is_string() || !item["label"].is_string())
        return reply_json(res, {{"error", "each item needs string pair_id and label"}}, 400);
    json results = json::array();
    std::size_t accepted = 0;
    for (const auto& item : body) {
      const auto id = item["pair_id"].get<std::string>();
      const auto label = label_from_name(item["label"].get<std::string>());
      std::string status;
      if (!label) {
        status = "invalid_label";
      } else {
        const auto s = session.answer(id, *label);
        status = to_string(s);
        if (s == AnswerStatus::accepted) ++accepted;
      }
      results.push_back({{"pair_id", id}, {"status", status}});
    }
    reply_json(res, {{"accepted", accepted}, {"rejected", body.size() - accepted}, {"results", results}});
  });

  server.Get(R"(/api/assets/(.*))", [&](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    if (!valid_asset_id(id)) return reply_json(res, {{"error", "invalid image id"}}, 400);
    if (session.asset_root().empty()) return reply_json(res, {{"error", "no asset root"}}, 404);
    const auto path = find_asset(session.asset_root(), id);
    if (!path) return reply_json(res, {{"error", "asset not found"}}, 404);
    std::ifstream in(*path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    res.status = 200;
    res.set_content(std::move(bytes), content_type_for(*path));
  });

  if (!ui_dir.empty()) {
    if (!server.set_mount_point("/", ui_dir)) throw Error("cannot serve UI bundle from '" + ui_dir + "'");
  } else {
    server.Get("/", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(kFallbackPage, "text/html; charset=utf-8");
    });
  }
}

}  // namespace anneal::service
