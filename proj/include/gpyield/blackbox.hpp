#pragma once

// External-solver adapter. Wire protocol: newline-delimited JSON over the child's
// stdin/stdout, one response line per request line.
//   request:  {"id": <int>, "params": [<float>...], "freq_rad_s": [<float>...]}
//   response: {"id": <int>, "s_real": [<float>...], "s_imag": [<float>...]}

#include "gpyield/oracle.hpp"

#include <json.hpp>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <csignal>
#include <cstdint>
#include <cstring>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <fcntl.h>
#include <poll.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

namespace gpyield {

class BlackboxError : public Error {
 public:
  using Error::Error;
};

/// The child could not be started, died, or closed its pipes.
class ProcessFailure : public BlackboxError {
 public:
  using BlackboxError::BlackboxError;
};

/// The child answered with something that is not a valid response to the request.
class ProtocolError : public BlackboxError {
 public:
  using BlackboxError::BlackboxError;
};

class TimeoutError : public BlackboxError {
 public:
  using BlackboxError::BlackboxError;
};

struct BlackboxEndpoint {
  std::vector<std::string> command;
  std::string working_dir;
  double timeout_s = 60.0;
  /// Upper bound on concurrently running child processes.
  std::size_t pool_size = 1;
};

namespace protocol {

struct Request {
  std::int64_t id = 0;
  std::vector<double> params;
  std::vector<double> freq_rad_s;
};

inline std::string encode_request(std::int64_t id, const Vector& params, const std::vector<double>& freqs) {
  nlohmann::json j = {{"id", id}, {"params", to_std(params)}, {"freq_rad_s", freqs}};
  return j.dump() + "\n";
}

inline Request decode_request(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
    return {j.at("id").get<std::int64_t>(), j.at("params").get<std::vector<double>>(),
            j.at("freq_rad_s").get<std::vector<double>>()};
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("malformed request: ") + e.what());
  }
}

inline std::string encode_response(std::int64_t id, const SParamSample& s) {
  std::vector<double> re(s.size());
  std::vector<double> im(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    re[i] = s[i].real();
    im[i] = s[i].imag();
  }
  nlohmann::json j = {{"id", id}, {"s_real", re}, {"s_imag", im}};
  return j.dump() + "\n";
}

/// Validates a response line against the request it answers.
inline SParamSample decode_response(const std::string& line, std::int64_t expected_id, std::size_t expected_len) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError("response is not JSON: " + std::string(e.what()) + " (line: " + line.substr(0, 200) + ")");
  }
  if (!j.is_object()) throw ProtocolError("response is not a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (key != "id" && key != "s_real" && key != "s_imag") throw ProtocolError("response has unknown key '" + key + "'");
  }
  std::vector<double> re;
  std::vector<double> im;
  std::int64_t id = 0;
  try {
    id = j.at("id").get<std::int64_t>();
    re = j.at("s_real").get<std::vector<double>>();
    im = j.at("s_imag").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("response is missing or mistypes a field: ") + e.what());
  }
  if (id != expected_id) {
    throw ProtocolError("response id " + std::to_string(id) + " does not match request id " +
                        std::to_string(expected_id));
  }
  if (re.size() != expected_len || im.size() != expected_len) {
    throw ProtocolError("response arrays have length " + std::to_string(re.size()) + "/" + std::to_string(im.size()) +
                        ", expected " + std::to_string(expected_len));
  }
  SParamSample out(expected_len);
  for (std::size_t i = 0; i < expected_len; ++i) {
    if (!std::isfinite(re[i]) || !std::isfinite(im[i])) throw ProtocolError("response contains non-finite values");
    out[i] = {re[i], im[i]};
  }
  return out;
}

}  // namespace protocol

/// One persistent child process speaking the line protocol on its stdin/stdout.
class ChildProcess {
 public:
  explicit ChildProcess(const BlackboxEndpoint& endpoint) {
    if (endpoint.command.empty()) throw ProcessFailure("blackbox endpoint has an empty command");
    ignore_sigpipe();

    int to_child[2];
    int from_child[2];
    if (::pipe(to_child) != 0) throw ProcessFailure(std::string("pipe: ") + std::strerror(errno));
    if (::pipe(from_child) != 0) {
      ::close(to_child[0]);
      ::close(to_child[1]);
      throw ProcessFailure(std::string("pipe: ") + std::strerror(errno));
    }
    // argv must be prepared before fork: only async-signal-safe calls in the child.
    std::vector<std::string> args = endpoint.command;
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);
    const std::string dir = endpoint.working_dir;

    pid_ = ::fork();
    if (pid_ < 0) {
      for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) ::close(fd);
      throw ProcessFailure(std::string("fork: ") + std::strerror(errno));
    }
    if (pid_ == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) ::close(fd);
      if (!dir.empty() && ::chdir(dir.c_str()) != 0) ::_exit(126);
      ::execvp(argv[0], argv.data());
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    in_ = to_child[1];
    out_ = from_child[0];
    ::fcntl(in_, F_SETFD, FD_CLOEXEC);
    ::fcntl(out_, F_SETFD, FD_CLOEXEC);
  }

  ChildProcess(const ChildProcess&) = delete;
  ChildProcess& operator=(const ChildProcess&) = delete;

  ~ChildProcess() { shutdown(); }

  pid_t pid() const { return pid_; }

  /// Sends one request line and returns exactly one response line.
  std::string round_trip(const std::string& request, double timeout_s) {
    write_all(request);
    std::string line = read_line(timeout_s);
    if (!buffer_.empty()) {
      throw ProtocolError("child wrote extra output after the response line: " + buffer_.substr(0, 200));
    }
    return line;
  }

  void kill() {
    if (pid_ > 0) ::kill(pid_, SIGKILL);
  }

 private:
  static void ignore_sigpipe() {
    static std::once_flag once;
    std::call_once(once, [] { std::signal(SIGPIPE, SIG_IGN); });
  }

  std::string exit_description() {
    if (pid_ <= 0) return "not running";
    int status = 0;
    const pid_t r = ::waitpid(pid_, &status, WNOHANG);
    if (r == pid_) {
      pid_ = -1;
      if (WIFEXITED(status)) return "exited with status " + std::to_string(WEXITSTATUS(status));
      if (WIFSIGNALED(status)) return "killed by signal " + std::to_string(WTERMSIG(status));
    }
    return "closed its output";
  }

  void write_all(const std::string& data) {
    std::size_t done = 0;
    while (done < data.size()) {
      const ssize_t n = ::write(in_, data.data() + done, data.size() - done);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw ProcessFailure(std::string("blackbox child: write failed (") + std::strerror(errno) + "), child " +
                             exit_description());
      }
      done += static_cast<std::size_t>(n);
    }
  }

  std::string read_line(double timeout_s) {
    using clock = std::chrono::steady_clock;
    const auto deadline = clock::now() + std::chrono::duration<double>(timeout_s);
    char chunk[4096];
    for (;;) {
      const auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - clock::now()).count();
      if (remaining <= 0) {
        kill();
        throw TimeoutError("blackbox child did not answer within " + std::to_string(timeout_s) + " s");
      }
      pollfd pfd{out_, POLLIN, 0};
      const int r = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(remaining, 1'000'000)));
      if (r < 0) {
        if (errno == EINTR) continue;
        throw ProcessFailure(std::string("poll: ") + std::strerror(errno));
      }
      if (r == 0) continue;
      const ssize_t n = ::read(out_, chunk, sizeof(chunk));
      if (n < 0) {
        if (errno == EINTR) continue;
        throw ProcessFailure(std::string("blackbox child: read failed: ") + std::strerror(errno));
      }
      if (n == 0) {
        // Give a dying child a moment so the exit status can be reported.
        for (int i = 0; i < 50 && pid_ > 0; ++i) {
          int status = 0;
          if (::waitpid(pid_, &status, WNOHANG) != 0) {
            const std::string what = WIFSIGNALED(status) ? "killed by signal " + std::to_string(WTERMSIG(status))
                                                         : "exited with status " + std::to_string(WEXITSTATUS(status));
            pid_ = -1;
            throw ProcessFailure("blackbox child " + what + " before answering");
          }
          ::usleep(2000);
        }
        throw ProcessFailure("blackbox child closed its output before answering");
      }
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  void shutdown() {
    if (in_ >= 0) ::close(in_);
    if (out_ >= 0) ::close(out_);
    in_ = out_ = -1;
    if (pid_ <= 0) return;
    for (int i = 0; i < 100; ++i) {
      int status = 0;
      if (::waitpid(pid_, &status, WNOHANG) != 0) {
        pid_ = -1;
        return;
      }
      ::usleep(1000);
    }
    ::kill(pid_, SIGKILL);
    int status = 0;
    ::waitpid(pid_, &status, 0);
    pid_ = -1;
  }

  pid_t pid_ = -1;
  int in_ = -1;
  int out_ = -1;
  std::string buffer_;
};

/// Oracle delegating to an external solver. One call returns every grid frequency,
/// so this oracle always accounts cost per call. Children are pooled up to
/// endpoint.pool_size; a child that fails in any way is discarded.
class BlackboxOracle final : public Oracle {
 public:
  BlackboxOracle(BlackboxEndpoint endpoint, FrequencyGrid grid, std::size_t dimension)
      : endpoint_(std::move(endpoint)), grid_(std::move(grid)), dimension_(dimension) {
    if (endpoint_.command.empty()) throw InvalidArgument("BlackboxOracle: empty command");
    if (!(endpoint_.timeout_s > 0.0)) throw InvalidArgument("BlackboxOracle: timeout must be positive");
    endpoint_.pool_size = std::max<std::size_t>(1, endpoint_.pool_size);
  }

  const FrequencyGrid& grid() const override { return grid_; }
  std::size_t dimension() const override { return dimension_; }
  CostModel cost_model() const override { return CostModel::per_call; }
  bool thread_safe() const override { return true; }

  /// Successful calls so far.
  std::size_t calls() const { return calls_.load(); }

  Complex evaluate_at(const Vector& p, std::size_t j) override { return evaluate_all(p).at(j); }

  SParamSample evaluate_all(const Vector& p) override {
    require_dimension(p.size(), static_cast<Eigen::Index>(dimension_), "BlackboxOracle parameters");
    const std::int64_t id = next_id_.fetch_add(1);
    const std::string request = protocol::encode_request(id, p, grid_.points());
    std::unique_ptr<ChildProcess> child = acquire();
    SParamSample result;
    try {
      const std::string line = child->round_trip(request, endpoint_.timeout_s);
      result = protocol::decode_response(line, id, grid_.size());
    } catch (...) {
      child->kill();
      child.reset();
      release(nullptr);
      throw;
    }
    release(std::move(child));
    calls_.fetch_add(1);
    return result;
  }

 private:
  std::unique_ptr<ChildProcess> acquire() {
    std::unique_lock lock(mutex_);
    available_.wait(lock, [&] { return !idle_.empty() || running_ < endpoint_.pool_size; });
    if (!idle_.empty()) {
      auto c = std::move(idle_.back());
      idle_.pop_back();
      return c;
    }
    ++running_;
    lock.unlock();
    try {
      return std::make_unique<ChildProcess>(endpoint_);
    } catch (...) {
      release(nullptr);
      throw;
    }
  }

  void release(std::unique_ptr<ChildProcess> child) {
    {
      std::lock_guard lock(mutex_);
      if (child) {
        idle_.push_back(std::move(child));
      } else {
        --running_;
      }
    }
    available_.notify_one();
  }

  BlackboxEndpoint endpoint_;
  FrequencyGrid grid_;
  std::size_t dimension_;
  std::atomic<std::int64_t> next_id_{1};
  std::atomic<std::size_t> calls_{0};
  std::mutex mutex_;
  std::condition_variable available_;
  std::vector<std::unique_ptr<ChildProcess>> idle_;
  std::size_t running_ = 0;
};

}  // namespace gpyield
