#pragma once

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "sobolmd/errors.hpp"
#include "sobolmd/models.hpp"

namespace sobolmd {

// Evaluates an external model through a line protocol over the child's
// stdin/stdout. Handshake, then one request line per call:
//   parent: "SOBOL-MIRROR-PROTO 1 <p>\n"            child: "OK\n"
//   parent: p space-separated %.17g values "\n"     child: "<y>\n"
// The child stays alive for the lifetime of this object; each worker owns
// its own child. Constructing one ignores SIGPIPE process-wide so a dying
// child surfaces as an EvaluationError instead of killing the parent.
class SubprocessEvaluator final : public Evaluator {
 public:
  SubprocessEvaluator(std::vector<std::string> argv, int p, double timeout_seconds = 30.0)
      : argv_(std::move(argv)), p_(p), timeout_(timeout_seconds) {
    if (argv_.empty())
      throw std::invalid_argument("SubprocessEvaluator: empty command line");
    if (p_ < 1)
      throw std::invalid_argument("SubprocessEvaluator: p must be at least 1");
    if (!(timeout_ > 0.0))
      throw std::invalid_argument("SubprocessEvaluator: timeout must be positive");
    ::signal(SIGPIPE, SIG_IGN);
    spawn();
    handshake();
  }

  ~SubprocessEvaluator() override { shutdown(); }

  SubprocessEvaluator(const SubprocessEvaluator&) = delete;
  SubprocessEvaluator& operator=(const SubprocessEvaluator&) = delete;

  double evaluate(std::span<const double> x) override {
    if (x.size() != static_cast<std::size_t>(p_))
      throw std::invalid_argument("SubprocessEvaluator: input arity mismatch");
    std::string req;
    char buf[40];
    for (std::size_t i = 0; i < x.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", x[i]);
      if (i) req += ' ';
      req += buf;
    }
    req += '\n';
    write_all(req);
    const std::string line = read_line();
    char* end = nullptr;
    errno = 0;
    const double y = std::strtod(line.c_str(), &end);
    if (end == line.c_str() || errno == ERANGE)
      throw EvaluationError("external model sent an unparsable response '" + line +
                            "' to request: " + req);
    while (end && (*end == ' ' || *end == '\t' || *end == '\r')) ++end;
    if (end && *end != '\0')
      throw EvaluationError("external model sent trailing garbage in response '" + line +
                            "' to request: " + req);
    if (!std::isfinite(y))
      throw EvaluationError("external model returned a non-finite value for request: " + req);
    return y;
  }

 private:
  void spawn() {
    int to_child[2], from_child[2];
    if (::pipe(to_child) != 0 || ::pipe(from_child) != 0)
      throw EvaluationError("SubprocessEvaluator: pipe() failed");
    pid_ = ::fork();
    if (pid_ < 0)
      throw EvaluationError("SubprocessEvaluator: fork() failed");
    if (pid_ == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::close(to_child[0]);
      ::close(to_child[1]);
      ::close(from_child[0]);
      ::close(from_child[1]);
      std::vector<char*> cargv;
      cargv.reserve(argv_.size() + 1);
      for (std::string& a : argv_) cargv.push_back(a.data());
      cargv.push_back(nullptr);
      ::execvp(cargv[0], cargv.data());
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
  }

  void handshake() {
    write_all("SOBOL-MIRROR-PROTO 1 " + std::to_string(p_) + "\n");
    const std::string line = read_line();
    if (line != "OK")
      throw EvaluationError("external model rejected the handshake (got '" + line + "')");
  }

  void write_all(const std::string& s) {
    std::size_t off = 0;
    while (off < s.size()) {
      const ssize_t k = ::write(write_fd_, s.data() + off, s.size() - off);
      if (k < 0) {
        if (errno == EINTR) continue;
        throw EvaluationError(std::string("external model pipe write failed: ") +
                              std::strerror(errno));
      }
      off += static_cast<std::size_t>(k);
    }
  }

  // One LF-terminated line, trailing CR stripped, bounded by the timeout.
  std::string read_line() {
    const auto deadline = std::chrono::steady_clock::now() +
                          std::chrono::duration<double>(timeout_);
    for (;;) {
      const std::size_t nl = buf_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buf_.substr(0, nl);
        buf_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      const auto now = std::chrono::steady_clock::now();
      if (now >= deadline) {
        ::kill(pid_, SIGKILL);
        throw EvaluationError("external model timed out after " +
                              std::to_string(timeout_) + " s");
      }
      const auto remaining =
          std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now);
      struct pollfd pfd{read_fd_, POLLIN, 0};
      const int pr = ::poll(&pfd, 1, static_cast<int>(remaining.count()) + 1);
      if (pr < 0) {
        if (errno == EINTR) continue;
        throw EvaluationError(std::string("external model pipe poll failed: ") +
                              std::strerror(errno));
      }
      if (pr == 0) continue;  // loop re-checks the deadline
      char chunk[4096];
      const ssize_t k = ::read(read_fd_, chunk, sizeof chunk);
      if (k < 0) {
        if (errno == EINTR) continue;
        throw EvaluationError(std::string("external model pipe read failed: ") +
                              std::strerror(errno));
      }
      if (k == 0)
        throw EvaluationError("external model exited before answering");
      buf_.append(chunk, static_cast<std::size_t>(k));
    }
  }

  void shutdown() {
    if (write_fd_ >= 0) ::close(write_fd_);
    if (read_fd_ >= 0) ::close(read_fd_);
    write_fd_ = read_fd_ = -1;
    if (pid_ > 0) {
      // EOF on stdin is the child's exit signal; give it a moment, then kill
      for (int i = 0; i < 20; ++i) {
        if (::waitpid(pid_, nullptr, WNOHANG) != 0) {
          pid_ = -1;
          return;
        }
        ::usleep(10000);
      }
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, nullptr, 0);
      pid_ = -1;
    }
  }

  std::vector<std::string> argv_;
  int p_;
  double timeout_;
  pid_t pid_ = -1;
  int write_fd_ = -1;
  int read_fd_ = -1;
  std::string buf_;
};

// Evaluator for a model spec: builtin dispatch or a fresh child process.
inline std::unique_ptr<Evaluator> make_evaluator(const ModelSpec& spec,
                                                 double timeout_seconds = 30.0) {
  if (spec.is_external())
    return std::make_unique<SubprocessEvaluator>(spec.external_command, spec.p,
                                                 timeout_seconds);
  return make_builtin_evaluator(spec);
}

}  // namespace sobolmd
