#pragma once

// Child process with piped standard streams, read line-by-line with a
// deadline. POSIX only.

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "flnas/errors.hpp"

extern char** environ;

namespace flnas {

class SpawnError : public Error {
 public:
  using Error::Error;
};

class Subprocess {
 public:
  using Clock = std::chrono::steady_clock;

  // Runs `command` through /bin/sh -c.
  static Subprocess spawn(const std::string& command) {
    // A trainer that exits early must not kill us when we write its stdin.
    ::signal(SIGPIPE, SIG_IGN);

    int in[2], out[2], err[2];
    if (::pipe(in) != 0) throw SpawnError(std::string("pipe: ") + std::strerror(errno));
    if (::pipe(out) != 0) {
      close_pair(in);
      throw SpawnError(std::string("pipe: ") + std::strerror(errno));
    }
    if (::pipe(err) != 0) {
      close_pair(in);
      close_pair(out);
      throw SpawnError(std::string("pipe: ") + std::strerror(errno));
    }

    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, in[0], STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&actions, out[1], STDOUT_FILENO);
    posix_spawn_file_actions_adddup2(&actions, err[1], STDERR_FILENO);
    for (int fd : {in[0], in[1], out[0], out[1], err[0], err[1]}) posix_spawn_file_actions_addclose(&actions, fd);

    const char* argv[] = {"/bin/sh", "-c", command.c_str(), nullptr};
    pid_t pid = -1;
    const int rc = ::posix_spawn(&pid, "/bin/sh", &actions, nullptr, const_cast<char* const*>(argv), environ);
    posix_spawn_file_actions_destroy(&actions);
    ::close(in[0]);
    ::close(out[1]);
    ::close(err[1]);
    if (rc != 0) {
      ::close(in[1]);
      ::close(out[0]);
      ::close(err[0]);
      throw SpawnError("cannot spawn '" + command + "': " + std::strerror(rc));
    }
    Subprocess p;
    p.pid_ = pid;
    p.stdin_ = in[1];
    p.stdout_ = out[0];
    p.stderr_ = err[0];
    return p;
  }

  Subprocess(Subprocess&& o) noexcept { *this = std::move(o); }
  Subprocess& operator=(Subprocess&& o) noexcept {
    if (this != &o) {
      cleanup();
      pid_ = std::exchange(o.pid_, -1);
      stdin_ = std::exchange(o.stdin_, -1);
      stdout_ = std::exchange(o.stdout_, -1);
      stderr_ = std::exchange(o.stderr_, -1);
      pending_ = std::move(o.pending_);
      err_tail_ = std::move(o.err_tail_);
      exit_code_ = o.exit_code_;
      stdout_eof_ = o.stdout_eof_;
    }
    return *this;
  }
  Subprocess(const Subprocess&) = delete;
  Subprocess& operator=(const Subprocess&) = delete;
  ~Subprocess() { cleanup(); }

  // Writes all of `data` then closes the child's stdin. Returns false when
  // the child closed its end first.
  bool write_and_close_stdin(std::string_view data) {
    bool ok = true;
    while (!data.empty()) {
      const auto n = ::write(stdin_, data.data(), data.size());
      if (n < 0) {
        if (errno == EINTR) continue;
        ok = false;
        break;
      }
      data.remove_prefix(static_cast<std::size_t>(n));
    }
    ::close(stdin_);
    stdin_ = -1;
    return ok;
  }

  // Next stdout line without its newline; nullopt at end of stream, or with
  // `timed_out` set once the deadline passes.
  std::optional<std::string> read_line(Clock::time_point deadline, bool& timed_out) {
    timed_out = false;
    while (true) {
      if (const auto nl = pending_.find('\n'); nl != std::string::npos) {
        std::string line = pending_.substr(0, nl);
        pending_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      if (stdout_eof_) {
        if (pending_.empty()) return std::nullopt;
        return std::exchange(pending_, std::string());
      }
      const auto now = Clock::now();
      if (now >= deadline) {
        timed_out = true;
        return std::nullopt;
      }
      const auto wait_ms = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count();
      pollfd fds[2] = {{stdout_, POLLIN, 0}, {stderr_, POLLIN, 0}};
      const nfds_t nfds = stderr_ >= 0 ? 2 : 1;
      const int rc = ::poll(fds, nfds, static_cast<int>(std::min<long long>(wait_ms + 1, 1000)));
      if (rc < 0 && errno != EINTR) throw Error(std::string("poll: ") + std::strerror(errno));
      if (rc <= 0) continue;
      if (nfds == 2 && (fds[1].revents & (POLLIN | POLLHUP))) drain_stderr();
      if (fds[0].revents & (POLLIN | POLLHUP)) {
        char buf[4096];
        const auto n = ::read(stdout_, buf, sizeof buf);
        if (n > 0) pending_.append(buf, static_cast<std::size_t>(n));
        else if (n == 0) stdout_eof_ = true;
      }
    }
  }

  // Blocks until exit (stderr is drained meanwhile); returns the exit code,
  // or 128 + signal for signalled children.
  int wait() {
    if (exit_code_) return *exit_code_;
    while (stderr_ >= 0) {
      pollfd fd{stderr_, POLLIN, 0};
      if (::poll(&fd, 1, 1000) > 0) drain_stderr();
      else break;
    }
    int status = 0;
    while (::waitpid(pid_, &status, 0) < 0 && errno == EINTR) {
    }
    pid_ = -1;
    exit_code_ = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
    return *exit_code_;
  }

  void kill() {
    if (pid_ > 0 && !exit_code_) {
      ::kill(pid_, SIGKILL);
      wait();
    }
  }

  // Last few KiB of the child's stderr.
  const std::string& stderr_tail() const noexcept { return err_tail_; }

 private:
  Subprocess() = default;

  static void close_pair(int p[2]) {
    ::close(p[0]);
    ::close(p[1]);
  }

  void drain_stderr() {
    char buf[4096];
    const auto n = ::read(stderr_, buf, sizeof buf);
    if (n > 0) {
      err_tail_.append(buf, static_cast<std::size_t>(n));
      if (err_tail_.size() > kTailBytes) err_tail_.erase(0, err_tail_.size() - kTailBytes);
    } else if (n == 0) {
      ::close(stderr_);
      stderr_ = -1;
    }
  }

  void cleanup() {
    if (stdin_ >= 0) ::close(stdin_);
    if (pid_ > 0 && !exit_code_) {
      ::kill(pid_, SIGKILL);
      int status = 0;
      ::waitpid(pid_, &status, 0);
    }
    if (stdout_ >= 0) ::close(stdout_);
    if (stderr_ >= 0) ::close(stderr_);
    stdin_ = stdout_ = stderr_ = -1;
    pid_ = -1;
  }

  static constexpr std::size_t kTailBytes = 4096;

  pid_t pid_ = -1;
  int stdin_ = -1;
  int stdout_ = -1;
  int stderr_ = -1;
  std::string pending_;
  std::string err_tail_;
  std::optional<int> exit_code_;
  bool stdout_eof_ = false;
};

}  // namespace flnas
