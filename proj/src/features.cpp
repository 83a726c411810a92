#include "boxhunt/features.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <csignal>
#include <cstdlib>
#include <cstring>
#include <regex>

#include <netdb.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

namespace boxhunt {

using nlohmann::json;
using Kind = FeatureServerError::Kind;

namespace {

struct AxisWeights {
  int first = 0;               // first source pixel touched by the cell
  std::vector<double> weight;  // weights for pixels first, first+1, ...
};

// For each of `cells` equal cells covering [lo, hi), the fraction of the cell
// covered by each unit pixel.
std::vector<AxisWeights> axis_weights(double lo, double hi, int cells) {
  const double cell = (hi - lo) / cells;
  std::vector<AxisWeights> out(cells);
  for (int j = 0; j < cells; ++j) {
    const double a = lo + j * cell;
    const double b = (j + 1 == cells) ? hi : lo + (j + 1) * cell;
    const int p0 = static_cast<int>(std::floor(a));
    const int p1 = static_cast<int>(std::ceil(b));
    out[j].first = p0;
    for (int p = p0; p < p1; ++p) {
      const double overlap = std::min(b, p + 1.0) - std::max(a, double(p));
      out[j].weight.push_back(std::max(0.0, overlap) / (b - a));
    }
  }
  return out;
}

}  // namespace

std::vector<double> crop_resize(const Scene& scene, const Box& b, int grid) {
  if (grid < 1) throw std::invalid_argument("grid must be positive");
  const Box crop{std::max(b.x1, 0.0), std::max(b.y1, 0.0), std::min(b.x2, double(scene.width)),
                 std::min(b.y2, double(scene.height))};
  if (!crop.valid()) {
    throw std::invalid_argument("box " + to_string(b) + " does not overlap scene " + scene.id);
  }

  const auto wx = axis_weights(crop.x1, crop.x2, grid);
  const auto wy = axis_weights(crop.y1, crop.y2, grid);
  const int col0 = wx.front().first;
  const int col1 = wx.back().first + static_cast<int>(wx.back().weight.size());

  // Pool rows first into a grid x (col1 - col0) buffer, then columns.
  const int span = col1 - col0;
  std::vector<double> rows(static_cast<std::size_t>(grid) * span, 0.0);
  for (int r = 0; r < grid; ++r) {
    double* dst = &rows[static_cast<std::size_t>(r) * span];
    for (std::size_t k = 0; k < wy[r].weight.size(); ++k) {
      const double w = wy[r].weight[k];
      if (w == 0.0) continue;
      const double* src = &scene.pixels[static_cast<std::size_t>(wy[r].first + k) * scene.width];
      for (int c = 0; c < span; ++c) dst[c] += w * src[col0 + c];
    }
  }

  std::vector<double> out(static_cast<std::size_t>(grid) * grid, 0.0);
  for (int r = 0; r < grid; ++r) {
    const double* src = &rows[static_cast<std::size_t>(r) * span];
    for (int c = 0; c < grid; ++c) {
      double acc = 0.0;
      const int off = wx[c].first - col0;
      for (std::size_t k = 0; k < wx[c].weight.size(); ++k) acc += wx[c].weight[k] * src[off + k];
      out[static_cast<std::size_t>(r) * grid + c] = std::clamp(acc, 0.0, 1.0);
    }
  }
  return out;
}

GridExtractor::GridExtractor(int grid) : grid_(grid) {
  if (grid < 2) throw std::invalid_argument("feature grid must be at least 2");
}

FeatureVector GridExtractor::extract(const Scene& scene, const Box& b) {
  return crop_resize(scene, b, grid_);
}

// ---------------------------------------------------------------------------
// Channels

namespace {

// Buffered reader over a file descriptor with poll()-based timeouts.
class FdLineReader {
 public:
  explicit FdLineReader(int fd) : fd_(fd) {}

  std::string read_line(std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      const auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) throw FeatureServerError(Kind::kTimeout, "feature server timed out");
      pollfd pfd{fd_, POLLIN, 0};
      const int rc = ::poll(&pfd, 1, static_cast<int>(left.count()));
      if (rc < 0) {
        if (errno == EINTR) continue;
        throw FeatureServerError(Kind::kUnreachable, std::string("poll: ") + std::strerror(errno));
      }
      if (rc == 0) throw FeatureServerError(Kind::kTimeout, "feature server timed out");
      char chunk[65536];
      const ssize_t n = ::read(fd_, chunk, sizeof chunk);
      if (n < 0) {
        if (errno == EINTR || errno == EAGAIN) continue;
        throw FeatureServerError(Kind::kUnreachable, std::string("read: ") + std::strerror(errno));
      }
      if (n == 0) throw FeatureServerError(Kind::kUnreachable, "feature server closed the connection");
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  int fd_;
  std::string buffer_;
};

void write_all(int fd, std::string_view data, int flags, bool socket) {
  while (!data.empty()) {
    const ssize_t n = socket ? ::send(fd, data.data(), data.size(), flags)
                             : ::write(fd, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      throw FeatureServerError(Kind::kUnreachable, std::string("write: ") + std::strerror(errno));
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

class ProcessChannel final : public LineChannel {
 public:
  explicit ProcessChannel(const std::string& command) {
    // A dead server must surface as EPIPE, not kill the engine.
    std::signal(SIGPIPE, SIG_IGN);
    int to_child[2];
    int from_child[2];
    if (::pipe(to_child) != 0 || ::pipe(from_child) != 0) {
      throw FeatureServerError(Kind::kUnreachable, "pipe() failed");
    }
    pid_ = ::fork();
    if (pid_ < 0) throw FeatureServerError(Kind::kUnreachable, "fork() failed");
    if (pid_ == 0) {
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
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
    reader_.emplace(read_fd_);
  }

  ~ProcessChannel() override {
    if (write_fd_ >= 0) ::close(write_fd_);
    if (read_fd_ >= 0) ::close(read_fd_);
    if (pid_ > 0) {
      int status = 0;
      // Give the server a moment to exit on EOF before terminating it.
      for (int i = 0; i < 50; ++i) {
        if (::waitpid(pid_, &status, WNOHANG) == pid_) return;
        ::usleep(2000);
      }
      ::kill(pid_, SIGTERM);
      ::waitpid(pid_, &status, 0);
    }
  }

  void write_line(std::string_view line) override {
    std::string buf(line);
    buf.push_back('\n');
    write_all(write_fd_, buf, 0, false);
  }

  std::string read_line(std::chrono::milliseconds timeout) override {
    return reader_->read_line(timeout);
  }

 private:
  pid_t pid_ = -1;
  int write_fd_ = -1;
  int read_fd_ = -1;
  std::optional<FdLineReader> reader_;
};

class TcpChannel final : public LineChannel {
 public:
  TcpChannel(const std::string& host, std::uint16_t port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const std::string service = std::to_string(port);
    if (::getaddrinfo(host.c_str(), service.c_str(), &hints, &res) != 0) {
      throw FeatureServerError(Kind::kUnreachable, "cannot resolve " + host);
    }
    for (addrinfo* p = res; p != nullptr; p = p->ai_next) {
      fd_ = ::socket(p->ai_family, p->ai_socktype, p->ai_protocol);
      if (fd_ < 0) continue;
      if (::connect(fd_, p->ai_addr, p->ai_addrlen) == 0) break;
      ::close(fd_);
      fd_ = -1;
    }
    ::freeaddrinfo(res);
    if (fd_ < 0) {
      throw FeatureServerError(Kind::kUnreachable,
                               "cannot connect to " + host + ":" + service);
    }
    reader_.emplace(fd_);
  }

  ~TcpChannel() override {
    if (fd_ >= 0) ::close(fd_);
  }

  void write_line(std::string_view line) override {
    std::string buf(line);
    buf.push_back('\n');
    write_all(fd_, buf, MSG_NOSIGNAL, true);
  }

  std::string read_line(std::chrono::milliseconds timeout) override {
    return reader_->read_line(timeout);
  }

 private:
  int fd_ = -1;
  std::optional<FdLineReader> reader_;
};

}  // namespace

std::unique_ptr<LineChannel> spawn_process_channel(const std::string& command) {
  return std::make_unique<ProcessChannel>(command);
}

std::unique_ptr<LineChannel> connect_tcp_channel(const std::string& host, std::uint16_t port) {
  return std::make_unique<TcpChannel>(host, port);
}

std::unique_ptr<LineChannel> open_feature_channel(const std::string& target) {
  static const std::regex host_port(R"(^([A-Za-z0-9_.\-]+):([0-9]{1,5})$)");
  std::smatch m;
  if (std::regex_match(target, m, host_port)) {
    const int port = std::stoi(m[2].str());
    if (port > 0 && port < 65536) {
      return connect_tcp_channel(m[1].str(), static_cast<std::uint16_t>(port));
    }
  }
  return spawn_process_channel(target);
}

// ---------------------------------------------------------------------------
// Client

FeatureServerClient::FeatureServerClient(std::unique_ptr<LineChannel> channel,
                                         std::chrono::milliseconds timeout)
    : channel_(std::move(channel)), timeout_(timeout) {}

std::size_t FeatureServerClient::handshake() {
  const std::string line = channel_->read_line(timeout_);
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception&) {
    throw FeatureServerError(Kind::kProtocol, "protocol violation: handshake is not JSON");
  }
  if (!j.is_object() || !j.contains("proto") || !j.contains("dim") ||
      !j["proto"].is_number_integer() || !j["dim"].is_number_integer()) {
    throw FeatureServerError(Kind::kProtocol, "protocol violation: expected {\"proto\", \"dim\"}");
  }
  const auto proto = j["proto"].get<std::int64_t>();
  if (proto != kFeatureProtocolVersion) {
    throw FeatureServerError(Kind::kVersion, "protocol version mismatch: server speaks " +
                                                 std::to_string(proto) + ", client speaks " +
                                                 std::to_string(kFeatureProtocolVersion));
  }
  const auto dim = j["dim"].get<std::int64_t>();
  if (dim <= 0) {
    throw FeatureServerError(Kind::kProtocol,
                             "protocol violation: advertised dim " + std::to_string(dim));
  }
  dim_ = static_cast<std::size_t>(dim);
  return dim_;
}

FeatureVector FeatureServerClient::request(const std::string& scene_id, const Box& b) {
  if (dim_ == 0) throw FeatureServerError(Kind::kProtocol, "request before handshake");
  const std::int64_t id = next_id_++;
  json req = {{"id", id}, {"scene", scene_id}, {"box", {b.x1, b.y1, b.x2, b.y2}}};
  channel_->write_line(req.dump());

  const std::string line = channel_->read_line(timeout_);
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception&) {
    throw FeatureServerError(Kind::kProtocol, "protocol violation: response is not JSON");
  }
  if (!j.is_object() || !j.contains("id") || !j["id"].is_number_integer()) {
    throw FeatureServerError(Kind::kProtocol, "protocol violation: response without id");
  }
  if (j["id"].get<std::int64_t>() != id) {
    throw FeatureServerError(Kind::kProtocol, "protocol violation: response id " +
                                                  j["id"].dump() + " for request " +
                                                  std::to_string(id));
  }
  if (j.contains("error")) {
    throw FeatureServerError(Kind::kServer, "feature server error for scene " + scene_id + ": " +
                                                j["error"].dump());
  }
  if (!j.contains("features") || !j["features"].is_array()) {
    throw FeatureServerError(Kind::kProtocol, "protocol violation: response without features");
  }
  const auto& arr = j["features"];
  if (arr.size() != dim_) {
    throw FeatureServerError(Kind::kDimMismatch, "feature server returned " +
                                                     std::to_string(arr.size()) +
                                                     " values, handshake declared " +
                                                     std::to_string(dim_));
  }
  FeatureVector out(dim_);
  for (std::size_t i = 0; i < dim_; ++i) {
    if (!arr[i].is_number()) {
      throw FeatureServerError(Kind::kProtocol, "protocol violation: non-numeric feature");
    }
    out[i] = arr[i].get<double>();
    if (!std::isfinite(out[i])) {
      throw FeatureServerError(Kind::kProtocol, "protocol violation: non-finite feature");
    }
  }
  return out;
}

RemoteExtractor::RemoteExtractor(std::unique_ptr<LineChannel> channel, std::size_t declared_dim,
                                 std::chrono::milliseconds timeout)
    : client_(std::move(channel), timeout) {
  const std::size_t got = client_.handshake();
  if (declared_dim != 0 && got != declared_dim) {
    throw FeatureServerError(Kind::kDimMismatch, "feature server advertises dim " +
                                                     std::to_string(got) + ", expected " +
                                                     std::to_string(declared_dim));
  }
}

FeatureVector RemoteExtractor::extract(const Scene& scene, const Box& b) {
  return client_.request(scene.id, b);
}

void ExtractorConfig::validate() const {
  if (kind == Kind::kBuiltin && grid < 2) throw std::invalid_argument("feature grid must be >= 2");
  if (kind == Kind::kExternal && server.empty()) {
    throw std::invalid_argument("external extractor needs a server command or host:port");
  }
}

ExtractorConfig extractor_config_from_env(int grid) {
  ExtractorConfig cfg;
  cfg.grid = grid;
  if (const char* v = std::getenv(kFeatureServerEnv); v != nullptr && *v != '\0') {
    cfg.kind = ExtractorConfig::Kind::kExternal;
    cfg.server = v;
  }
  return cfg;
}

std::unique_ptr<FeatureExtractor> make_extractor(const ExtractorConfig& cfg) {
  cfg.validate();
  if (cfg.kind == ExtractorConfig::Kind::kBuiltin) return std::make_unique<GridExtractor>(cfg.grid);
  return std::make_unique<RemoteExtractor>(open_feature_channel(cfg.server), cfg.declared_dim);
}

}  // namespace boxhunt
