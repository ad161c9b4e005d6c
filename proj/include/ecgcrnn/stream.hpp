#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecgcrnn/dsp.hpp"
#include "ecgcrnn/nn.hpp"
#include "ecgcrnn/pipeline.hpp"

namespace ecgcrnn::stream {

inline constexpr std::size_t kMaxFrameSamples = 4096;

struct TelemetryFrame {
  std::string session;
  std::uint64_t seq = 0;
  double fs = 300.0;
  std::int64_t t0_ms = 0;
  std::vector<std::int16_t> samples;
};

struct RhythmPrediction {
  std::string session;
  std::uint64_t group = 0;
  std::int64_t t_start_ms = 0;
  std::int64_t t_end_ms = 0;
  std::vector<double> probs;
  std::size_t cls = 0;
};

struct StreamConfig {
  std::size_t group_windows = 25;
  pipeline::WindowConfig window;
  dsp::PreprocessConfig preprocess;
  /// Raw samples held per session before the oldest are dropped.
  std::size_t capacity = 1 << 16;
  std::int64_t expiry_ms = 120000;
};

void validate(const StreamConfig& cfg);

/// Raw-rate sample spans of one classification group.
struct GroupSpan {
  std::size_t start = 0;  // in raw samples from the segment start
  std::size_t length = 0;
};

/// Group g covers windows [g*G, (g+1)*G) at the target rate; returns its raw
/// span for input rate fs. Throws RateMismatch if fs does not map windows
/// onto whole raw samples.
GroupSpan group_span(std::size_t group, double fs, const StreamConfig& cfg);

/// One session's state. Not thread-safe; the engine serializes access.
class StreamSession {
 public:
  StreamSession(std::string id, StreamConfig cfg);

  const std::string& id() const noexcept { return id_; }
  std::optional<double> fs() const noexcept { return fs_; }
  std::uint64_t groups_emitted() const noexcept { return groups_emitted_; }
  std::uint64_t last_seq() const noexcept { return last_seq_; }
  std::int64_t last_activity_ms() const noexcept { return last_activity_ms_; }
  /// Raw samples currently buffered.
  std::size_t buffered() const noexcept { return buffer_.size(); }
  /// Gap markers inserted so far (sequence gaps plus overflow drops).
  std::size_t gaps() const noexcept { return gaps_; }

  /// Appends a frame. OutOfOrder and RateMismatch leave the state unchanged.
  void ingest(const TelemetryFrame& frame, std::int64_t now_ms);

  /// Classifies every complete group not yet classified.
  std::vector<RhythmPrediction> maybe_classify(const nn::ModelParams* params);

  /// Raw samples waiting for the next group (those that would be lost on expiry).
  std::size_t pending_samples() const noexcept;

 private:
  void reanchor(std::int64_t t0_ms);

  std::string id_;
  StreamConfig cfg_;
  std::optional<double> fs_;
  std::uint64_t last_seq_ = 0;
  bool started_ = false;
  std::int64_t last_activity_ms_ = 0;
  std::size_t gaps_ = 0;

  // Current gap-free segment: raw samples from segment offset base_ onwards.
  std::vector<double> buffer_;
  std::size_t base_ = 0;
  std::int64_t anchor_ms_ = 0;
  std::uint64_t segment_group_ = 0;  // next group index within the segment
  std::uint64_t groups_emitted_ = 0;
};

nlohmann::ordered_json prediction_json(const RhythmPrediction& p);
std::string prediction_payload(const RhythmPrediction& p);

TelemetryFrame frame_from_json(const nlohmann::json& j);
nlohmann::ordered_json frame_json(const TelemetryFrame& f);

/// 4-byte big-endian length followed by the payload.
std::string encode_message(std::string_view payload);

/// Incremental decoder for the length-prefixed stream.
class FrameDecoder {
 public:
  explicit FrameDecoder(std::size_t max_payload = 1 << 20) : max_(max_payload) {}
  void feed(std::string_view bytes);
  /// Next complete payload, if any. Throws Protocol on an oversized length.
  std::optional<std::string> next();

 private:
  std::string buf_;
  std::size_t max_;
};

/// Sessions keyed by id, shared by the TCP server and replay. Each session
/// is processed under its own lock so sessions proceed independently.
class StreamEngine {
 public:
  using Publish = std::function<void(const std::string& topic, const std::string& payload)>;

  StreamEngine(StreamConfig cfg, std::shared_ptr<const nn::ModelParams> params);

  void set_publisher(Publish publish) { publish_ = std::move(publish); }
  /// Each prediction payload is appended as one line (NDJSON).
  void set_prediction_log(const std::filesystem::path& path);

  /// Ingests and classifies; returns the predictions in order and publishes
  /// them on ecg/<session>/rhythm (raw frames go to ecg/<session>/raw).
  std::vector<RhythmPrediction> handle(const TelemetryFrame& frame, std::int64_t now_ms);

  /// Closes sessions idle for longer than the expiry and publishes an
  /// "incomplete" notice for each. Returns the closed session ids.
  std::vector<std::string> expire(std::int64_t now_ms);
  /// Closes every session (end of replay).
  std::vector<std::string> close_all();

  std::size_t session_count() const;

 private:
  struct Slot {
    std::mutex mu;
    StreamSession session;
    Slot(std::string id, StreamConfig cfg) : session(std::move(id), std::move(cfg)) {}
  };
  std::shared_ptr<Slot> slot(const std::string& id);
  void emit(const std::string& topic, const std::string& payload);
  void notify_incomplete(StreamSession& s);

  StreamConfig cfg_;
  std::shared_ptr<const nn::ModelParams> params_;
  Publish publish_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Slot>> sessions_;
  std::mutex log_mu_;
  std::optional<std::filesystem::path> log_path_;
};

/// Replay input: a MAT record (fs given by the caller) or raw little-endian
/// int16 preceded by one text line "fs=<Hz>".
struct ReplaySignal {
  double fs = 300.0;
  std::vector<std::int16_t> samples;
};

ReplaySignal load_replay_input(const std::filesystem::path& path, double mat_fs = 300.0);

std::vector<TelemetryFrame> frames_from_signal(const ReplaySignal& signal, const std::string& session,
                                               std::size_t frame_size, std::int64_t t0_ms = 0);

/// Feeds the frames through a fresh engine and returns the NDJSON prediction
/// log text (also written to log_path when given).
std::string replay(std::span<const TelemetryFrame> frames, const StreamConfig& cfg,
                   std::shared_ptr<const nn::ModelParams> params,
                   const std::optional<std::filesystem::path>& log_path = std::nullopt);

struct ServerConfig {
  std::string host = "127.0.0.1";
  std::uint16_t port = 7200;  // 0 picks an ephemeral port
  StreamConfig stream;
  std::optional<std::filesystem::path> prediction_log;
};

/// Framed TCP pub/sub server. Every connection may publish data frames and
/// subscribe to topics; malformed input closes only that connection.
class Server {
 public:
  Server(ServerConfig cfg, std::shared_ptr<const nn::ModelParams> params);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds and listens; returns the bound port.
  std::uint16_t start();
  /// Accept loop; returns after stop().
  void run();
  void stop();
  std::uint16_t port() const noexcept { return port_; }

 private:
  struct Conn;
  void serve_connection(std::shared_ptr<Conn> conn);
  void publish(const std::string& topic, const std::string& payload);
  void reap_loop();

  ServerConfig cfg_;
  StreamEngine engine_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> running_{false};
  std::mutex conns_mu_;
  std::vector<std::shared_ptr<Conn>> conns_;
  std::vector<std::thread> threads_;
  std::thread reaper_;
};

/// Minimal blocking client used by tests and tools.
class Client {
 public:
  Client(const std::string& host, std::uint16_t port);
  ~Client();
  Client(const Client&) = delete;
  Client& operator=(const Client&) = delete;

  void send(const nlohmann::json& message);
  /// Blocks up to timeout_ms for the next message; empty on timeout or close.
  std::optional<nlohmann::json> receive(int timeout_ms = 5000);

 private:
  int fd_ = -1;
  FrameDecoder decoder_;
};

}  // namespace ecgcrnn::stream
