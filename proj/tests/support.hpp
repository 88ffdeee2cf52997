// Shared fixtures for the unit and acceptance tests.
#pragma once

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <csignal>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ctox/backend.hpp"
#include "ctox/core.hpp"

namespace ctox::test {

inline std::filesystem::path fixture(const std::string& rel) {
  return std::filesystem::path(CTOX_FIXTURE_DIR) / rel;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            ("ctox-test-" + std::to_string(stamp) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
}

inline TokenSequence seq_of(const std::vector<std::string>& words) {
  std::vector<Token> tokens;
  for (const auto& w : words) tokens.emplace_back(w);
  TokenSequence s(std::move(tokens), {});
  return TokenSequence(s.tokens(), s.joined());
}

// The worked example: "Gender1 people are stupid" scores 0.92; two
// replacements for each of "gender1" and "stupid", unweighted.
inline const std::vector<std::string>& worked_sentence() {
  static const std::vector<std::string> s = {"gender1", "people", "are", "stupid"};
  return s;
}

inline std::shared_ptr<TableClassifier> worked_classifier() {
  TableClassifier::Table table = {
      {"gender1 people are stupid", {{"toxicity", 0.92}}},
      {"gender2 people are stupid", {{"toxicity", 0.90}}},
      {"many people are stupid", {{"toxicity", 0.86}}},
      {"gender1 people are smart", {{"toxicity", 0.04}}},
      {"gender1 people are beautiful", {{"toxicity", 0.06}}},
  };
  return std::make_shared<TableClassifier>("worked-example", std::vector<AttributeId>{"toxicity"},
                                           table, 0.92);
}

inline std::shared_ptr<StubMaskFill> worked_mask_fill() {
  auto mf = std::make_shared<StubMaskFill>("worked-example");
  mf->add_context("gender1 people are stupid", 0,
                  {{Token("gender2"), 1.0}, {Token("many"), 1.0}});
  mf->add_context("gender1 people are stupid", 3,
                  {{Token("smart"), 1.0}, {Token("beautiful"), 1.0}});
  mf->set_fallback({{Token("some"), 1.0}});
  return mf;
}

// Reads a whole file; empty string when it does not exist.
inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}


// Runs `ctox serve ...` as a child process and reads the URL it prints.
class ServeProcess {
 public:
  explicit ServeProcess(std::vector<std::string> args) {
    int fds[2];
    if (::pipe(fds) != 0) throw std::runtime_error("pipe failed");
    pid_ = ::fork();
    if (pid_ < 0) throw std::runtime_error("fork failed");
    if (pid_ == 0) {
      ::dup2(fds[1], STDOUT_FILENO);
      ::close(fds[0]);
      ::close(fds[1]);
      std::vector<std::string> full = {CTOX_TOOL_PATH, "serve"};
      full.insert(full.end(), args.begin(), args.end());
      std::vector<char*> argv;
      for (auto& s : full) argv.push_back(s.data());
      argv.push_back(nullptr);
      ::execv(argv[0], argv.data());
      ::_exit(127);
    }
    ::close(fds[1]);
    std::string line;
    char ch;
    while (::read(fds[0], &ch, 1) == 1 && ch != '\n') line += ch;
    ::close(fds[0]);
    const auto pos = line.find("http://");
    if (pos == std::string::npos) {
      stop();
      throw std::runtime_error("serve did not start: " + line);
    }
    url_ = line.substr(pos);
  }
  ~ServeProcess() { stop(); }
  ServeProcess(const ServeProcess&) = delete;
  ServeProcess& operator=(const ServeProcess&) = delete;

  const std::string& url() const { return url_; }

  void stop() {
    if (pid_ > 0) {
      ::kill(pid_, SIGTERM);
      int status = 0;
      ::waitpid(pid_, &status, 0);
      pid_ = -1;
    }
  }

 private:
  pid_t pid_ = -1;
  std::string url_;
};

}  // namespace ctox::test
