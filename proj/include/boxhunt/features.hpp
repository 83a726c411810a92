#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "boxhunt/geometry.hpp"
#include "boxhunt/scene.hpp"

namespace boxhunt {

using FeatureVector = std::vector<double>;

/// Area-weighted average pooling of the part of `b` inside the image onto a
/// grid x grid raster, row-major. Throws std::invalid_argument when `b` does
/// not overlap the image.
std::vector<double> crop_resize(const Scene& scene, const Box& b, int grid);

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;

  /// Constant for the lifetime of the extractor.
  virtual std::size_t dim() const = 0;

  virtual FeatureVector extract(const Scene& scene, const Box& b) = 0;
};

/// Downsampled-intensity features, dim = grid^2, values in [0, 1].
class GridExtractor final : public FeatureExtractor {
 public:
  explicit GridExtractor(int grid = 16);

  std::size_t dim() const override { return static_cast<std::size_t>(grid_) * grid_; }
  FeatureVector extract(const Scene& scene, const Box& b) override;

 private:
  int grid_;
};

// ---------------------------------------------------------------------------
// Feature-server protocol (JSON lines):
//   server -> client  {"proto": 1, "dim": N}                     first line
//   client -> server  {"id": K, "scene": "...", "box": [x1,y1,x2,y2]}
//   server -> client  {"id": K, "features": [...]}  or  {"id": K, "error": "..."}

inline constexpr int kFeatureProtocolVersion = 1;

class FeatureServerError : public std::runtime_error {
 public:
  enum class Kind { kUnreachable, kTimeout, kProtocol, kVersion, kDimMismatch, kServer };

  FeatureServerError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// A bidirectional line-oriented byte stream.
class LineChannel {
 public:
  virtual ~LineChannel() = default;
  virtual void write_line(std::string_view line) = 0;
  /// Blocks up to `timeout`; throws FeatureServerError on timeout or EOF.
  virtual std::string read_line(std::chrono::milliseconds timeout) = 0;
};

/// Spawns `/bin/sh -c command` and talks to its stdin/stdout.
std::unique_ptr<LineChannel> spawn_process_channel(const std::string& command);

/// Connects to host:port over TCP.
std::unique_ptr<LineChannel> connect_tcp_channel(const std::string& host, std::uint16_t port);

/// Either of the above, chosen by the shape of `target`: `host:port` opens a
/// TCP connection, anything else is run as a shell command.
std::unique_ptr<LineChannel> open_feature_channel(const std::string& target);

class FeatureServerClient {
 public:
  explicit FeatureServerClient(std::unique_ptr<LineChannel> channel,
                               std::chrono::milliseconds timeout = std::chrono::seconds(30));

  /// Reads the server's greeting and caches its dimension.
  std::size_t handshake();

  std::size_t dim() const { return dim_; }

  FeatureVector request(const std::string& scene_id, const Box& b);

 private:
  std::unique_ptr<LineChannel> channel_;
  std::chrono::milliseconds timeout_;
  std::size_t dim_ = 0;
  std::int64_t next_id_ = 1;
};

class RemoteExtractor final : public FeatureExtractor {
 public:
  /// Performs the handshake immediately. A non-zero `declared_dim` must match
  /// what the server advertises.
  RemoteExtractor(std::unique_ptr<LineChannel> channel, std::size_t declared_dim = 0,
                  std::chrono::milliseconds timeout = std::chrono::seconds(30));

  std::size_t dim() const override { return client_.dim(); }
  FeatureVector extract(const Scene& scene, const Box& b) override;

 private:
  FeatureServerClient client_;
};

struct ExtractorConfig {
  enum class Kind { kBuiltin, kExternal };

  Kind kind = Kind::kBuiltin;
  int grid = 16;
  std::size_t declared_dim = 0;
  /// Command line or host:port, used for kExternal.
  std::string server;

  void validate() const;
};

/// Environment variable that switches extraction to an external server.
inline constexpr const char* kFeatureServerEnv = "BOXHUNT_FEATURE_SERVER";

/// Builtin config unless the environment variable is set.
ExtractorConfig extractor_config_from_env(int grid = 16);

std::unique_ptr<FeatureExtractor> make_extractor(const ExtractorConfig& cfg);

}  // namespace boxhunt
