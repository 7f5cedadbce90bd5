#pragma once

// Drives the anneal CLI binary as a child process.

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <thread>

#include "httplib.h"
#include "json.hpp"

namespace proc {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace std::chrono_literals;

inline const std::string kCli = ANNEAL_CLI_PATH;

/// Scratch directory removed on destruction.
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("anneal_" + name + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& s) const { return (path / s).string(); }
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

struct Result {
  int code = -1;
  std::string out;  // stdout and stderr
};

inline Result cli(const std::string& args) {
  const auto log = fs::temp_directory_path() / ("anneal_cli_out_" + std::to_string(::getpid()));
  const int status = std::system((kCli + " " + args + " > " + log.string() + " 2>&1").c_str());
  Result r{WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log.string())};
  fs::remove(log);
  return r;
}

/// `anneal serve --port 0` in the background; the bound port is read back
/// from its stdout.
class Server {
 public:
  Server(const std::string& config, const std::string& out, const std::string& stdout_path) {
    pid_ = ::fork();
    if (pid_ == 0) {
      if (!std::freopen(stdout_path.c_str(), "w", stdout) || !std::freopen("/dev/null", "w", stderr))
        std::_Exit(126);
      ::execl(kCli.c_str(), kCli.c_str(), "-q", "serve", "--config", config.c_str(), "--out", out.c_str(),
              "--port", "0", static_cast<char*>(nullptr));
      std::_Exit(127);
    }
    const auto end = std::chrono::steady_clock::now() + 20s;
    while (std::chrono::steady_clock::now() < end && port_ == 0) {
      const auto text = slurp(stdout_path);
      if (auto at = text.find("127.0.0.1:"); at != std::string::npos && text.find('\n', at) != std::string::npos)
        port_ = std::stoi(text.substr(at + 10));
      std::this_thread::sleep_for(10ms);
    }
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
  }
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;
  ~Server() { kill(SIGKILL); }

  int port() const { return port_; }

  json get(const std::string& path) {
    auto r = client_->Get(path);
    return r ? json::parse(r->body, nullptr, false) : json();
  }

  json post_labels(const json& labels) {
    auto r = client_->Post("/api/labels", labels.dump(), "application/json");
    return r ? json::parse(r->body, nullptr, false) : json();
  }

  template <class F>
  bool wait_until(F cond, std::chrono::milliseconds limit = 60s) {
    const auto end = std::chrono::steady_clock::now() + limit;
    while (std::chrono::steady_clock::now() < end) {
      if (cond(get("/api/session"))) return true;
      std::this_thread::sleep_for(20ms);
    }
    return false;
  }

  bool wait_state(const std::string& state) {
    return wait_until([&](const json& s) { return s.is_object() && s.value("state", "") == state; });
  }

  /// Sends `sig` and reaps the child; returns the wait status.
  int kill(int sig) {
    if (pid_ <= 0) return -1;
    ::kill(pid_, sig);
    int status = 0;
    ::waitpid(pid_, &status, 0);
    pid_ = -1;
    return status;
  }

 private:
  pid_t pid_ = -1;
  int port_ = 0;
  std::unique_ptr<httplib::Client> client_;
};

}  // namespace proc
