#include "cdk/external_model.hpp"

#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>

#include <json.hpp>

#include "cdk/errors.hpp"

namespace cdk {

Endpoint Endpoint::parse(std::string_view text) {
  Endpoint e;
  if (text.starts_with("stdio:")) {
    e.kind = Kind::Stdio;
    e.command = std::string(text.substr(6));
    if (e.command.empty()) throw DomainError("stdio endpoint needs a command");
    return e;
  }
  if (text.starts_with("tcp:")) {
    e.kind = Kind::Tcp;
    const auto rest = text.substr(4);
    const auto colon = rest.rfind(':');
    if (colon == std::string_view::npos || colon == 0) {
      throw DomainError("tcp endpoint must be tcp:<host>:<port>");
    }
    e.host = std::string(rest.substr(0, colon));
    const auto port = std::string(rest.substr(colon + 1));
    char* end = nullptr;
    const long v = std::strtol(port.c_str(), &end, 10);
    if (port.empty() || *end != '\0' || v <= 0 || v > 65535) {
      throw DomainError("bad tcp port '" + port + "'");
    }
    e.port = static_cast<std::uint16_t>(v);
    return e;
  }
  throw DomainError("endpoint must start with stdio: or tcp:");
}

std::string encode_request(std::span<const TokenId> prefix, double temperature) {
  nlohmann::json j;
  j["prefix"] = std::vector<TokenId>(prefix.begin(), prefix.end());
  j["temperature"] = temperature;
  return j.dump();
}

TokenDistribution decode_response(std::string_view line, std::uint32_t vocab_size) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("malformed response: ") + e.what());
  }
  if (!j.is_object() || !j.contains("probs") || !j.contains("eok") || !j["probs"].is_array() ||
      !j["eok"].is_number()) {
    throw ProtocolError("response must be {\"probs\":[...],\"eok\":x}");
  }
  const auto& probs = j["probs"];
  if (probs.size() != vocab_size) {
    throw InvalidDistributionError("response has " + std::to_string(probs.size()) +
                                   " probabilities, expected " + std::to_string(vocab_size));
  }
  TokenDistribution d;
  d.probs.reserve(vocab_size);
  for (const auto& p : probs) {
    if (!p.is_number()) throw ProtocolError("non-numeric probability in response");
    d.probs.push_back(p.get<double>());
  }
  d.eok = j["eok"].get<double>();
  d.validate(ExternalModelClient::kMassTolerance);
  const double total = d.total();
  if (total != 1.0) {
    for (double& p : d.probs) p /= total;
    d.eok /= total;
  }
  return d;
}

// ---------------------------------------------------------------------------

class ExternalModelClient::Channel {
 public:
  explicit Channel(const Endpoint& e) {
    ::signal(SIGPIPE, SIG_IGN);
    if (e.kind == Endpoint::Kind::Stdio) {
      spawn(e.command);
    } else {
      connect_tcp(e.host, e.port);
    }
  }

  ~Channel() {
    if (write_fd_ >= 0) ::close(write_fd_);
    if (read_fd_ >= 0 && read_fd_ != write_fd_) ::close(read_fd_);
    if (child_ > 0) {
      int status = 0;
      for (int i = 0; i < 50; ++i) {
        if (::waitpid(child_, &status, WNOHANG) != 0) return;
        ::usleep(10000);
      }
      ::kill(child_, SIGKILL);
      ::waitpid(child_, &status, 0);
    }
  }

  void write_line(const std::string& line) {
    std::string data = line + '\n';
    std::size_t off = 0;
    while (off < data.size()) {
      const ssize_t n = ::write(write_fd_, data.data() + off, data.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError(std::string("write to model failed: ") + std::strerror(errno));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  std::string read_line(std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      if (const auto nl = buf_.find('\n'); nl != std::string::npos) {
        std::string line = buf_.substr(0, nl);
        buf_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) throw TransportError("model response timed out");
      pollfd pfd{read_fd_, POLLIN, 0};
      const int r = ::poll(&pfd, 1, static_cast<int>(left.count()));
      if (r < 0) {
        if (errno == EINTR) continue;
        throw TransportError(std::string("poll failed: ") + std::strerror(errno));
      }
      if (r == 0) throw TransportError("model response timed out");
      char chunk[4096];
      const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError(std::string("read from model failed: ") + std::strerror(errno));
      }
      if (n == 0) throw TransportError("model closed the connection");
      buf_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  void spawn(const std::string& command) {
    int to_child[2];
    int from_child[2];
    if (::pipe(to_child) != 0) throw TransportError("pipe failed");
    if (::pipe(from_child) != 0) {
      ::close(to_child[0]);
      ::close(to_child[1]);
      throw TransportError("pipe failed");
    }
    const pid_t pid = ::fork();
    if (pid < 0) throw TransportError("fork failed");
    if (pid == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::close(to_child[0]);
      ::close(to_child[1]);
      ::close(from_child[0]);
      ::close(from_child[1]);
      ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    ::fcntl(to_child[1], F_SETFD, FD_CLOEXEC);
    ::fcntl(from_child[0], F_SETFD, FD_CLOEXEC);
    child_ = pid;
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
  }

  void connect_tcp(const std::string& host, std::uint16_t port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const auto service = std::to_string(port);
    if (int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res); rc != 0) {
      throw TransportError("cannot resolve " + host + ": " + ::gai_strerror(rc));
    }
    int fd = -1;
    for (addrinfo* a = res; a; a = a->ai_next) {
      fd = ::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC, a->ai_protocol);
      if (fd < 0) continue;
      if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) break;
      ::close(fd);
      fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd < 0) throw TransportError("cannot connect to " + host + ":" + service);
    write_fd_ = fd;
    read_fd_ = fd;
  }

  int write_fd_ = -1;
  int read_fd_ = -1;
  pid_t child_ = -1;
  std::string buf_;
};

ExternalModelClient::ExternalModelClient(Endpoint endpoint, std::uint32_t vocab_size,
                                         std::size_t max_len, std::chrono::milliseconds timeout)
    : vocab_size_(vocab_size),
      max_len_(max_len),
      timeout_(timeout),
      channel_(std::make_unique<Channel>(endpoint)) {
  if (vocab_size == 0) throw DomainError("vocabulary size must be positive");
}

ExternalModelClient::~ExternalModelClient() = default;

TokenDistribution ExternalModelClient::next_distribution(std::span<const TokenId> prefix,
                                                         double temperature) const {
  check_query(prefix, temperature);
  std::lock_guard lock(mu_);
  channel_->write_line(encode_request(prefix, temperature));
  return decode_response(channel_->read_line(timeout_), vocab_size_);
}

TokenDistribution ExternalModelClient::base_distribution(std::span<const TokenId> prefix) const {
  return next_distribution(prefix, 1.0);
}

}  // namespace cdk
