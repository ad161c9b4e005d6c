#include "ecgcrnn/stream.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "ecgcrnn/error.hpp"
#include "ecgcrnn/log.hpp"
#include "ecgcrnn/record_io.hpp"

namespace ecgcrnn::stream {

namespace {

std::int64_t wall_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

// n target-rate samples expressed at rate fs; must be a whole number.
std::size_t to_raw(std::size_t n, double fs, double target) {
  const double v = static_cast<double>(n) * fs / target;
  const double r = std::round(v);
  if (std::abs(v - r) > 1e-9 * std::max(1.0, v))
    throw Error(Errc::BadRate, "rate " + std::to_string(fs) + " Hz does not map windows onto whole samples");
  return static_cast<std::size_t>(r);
}

std::string rhythm_topic(const std::string& s) { return "ecg/" + s + "/rhythm"; }
std::string raw_topic(const std::string& s) { return "ecg/" + s + "/raw"; }

}  // namespace

void validate(const StreamConfig& cfg) {
  if (cfg.group_windows == 0) throw Error(Errc::BadConfig, "group size must be positive");
  pipeline::validate(cfg.window);
  if (!(cfg.preprocess.target_fs > 0.0)) throw Error(Errc::BadConfig, "target rate must be positive");
  if (cfg.expiry_ms <= 0) throw Error(Errc::BadConfig, "session expiry must be positive");
}

GroupSpan group_span(std::size_t group, double fs, const StreamConfig& cfg) {
  const std::size_t step = cfg.group_windows * cfg.window.stride;
  const std::size_t len = (cfg.group_windows - 1) * cfg.window.stride + cfg.window.window_len;
  const double target = cfg.preprocess.target_fs;
  return {group * to_raw(step, fs, target), to_raw(len, fs, target)};
}

StreamSession::StreamSession(std::string id, StreamConfig cfg) : id_(std::move(id)), cfg_(std::move(cfg)) {
  validate(cfg_);
}

void StreamSession::reanchor(std::int64_t t0_ms) {
  buffer_.clear();
  base_ = 0;
  anchor_ms_ = t0_ms;
  segment_group_ = 0;
}

void StreamSession::ingest(const TelemetryFrame& frame, std::int64_t now_ms) {
  if (frame.session != id_) throw Error(Errc::SessionMismatch, "frame for '" + frame.session + "' sent to '" + id_ + "'");
  if (frame.samples.empty() || frame.samples.size() > kMaxFrameSamples)
    throw Error(Errc::BadSize, "frame holds " + std::to_string(frame.samples.size()) + " samples");
  if (started_ && frame.seq <= last_seq_)
    throw Error(Errc::OutOfOrder, "sequence " + std::to_string(frame.seq) + " after " + std::to_string(last_seq_));
  if (fs_ && frame.fs != *fs_)
    throw Error(Errc::RateMismatch, "rate changed from " + std::to_string(*fs_) + " to " + std::to_string(frame.fs));
  if (!fs_) {
    const GroupSpan span = group_span(0, frame.fs, cfg_);
    if (cfg_.capacity < span.length + kMaxFrameSamples)
      throw Error(Errc::BadConfig, "capacity smaller than one group plus one frame");
    fs_ = frame.fs;
  }

  if (!started_) {
    reanchor(frame.t0_ms);
  } else if (frame.seq != last_seq_ + 1) {
    ++gaps_;
    log::warn("session " + id_ + ": gap after sequence " + std::to_string(last_seq_) + ", " +
              std::to_string(buffer_.size()) + " buffered samples discarded");
    reanchor(frame.t0_ms);
  }
  started_ = true;
  last_seq_ = frame.seq;
  last_activity_ms_ = now_ms;
  for (std::int16_t v : frame.samples) buffer_.push_back(static_cast<double>(v));

  if (buffer_.size() > cfg_.capacity) {
    const std::size_t drop = buffer_.size() - cfg_.capacity;
    ++gaps_;
    log::warn("session " + id_ + ": buffer overflow, " + std::to_string(drop) + " oldest samples dropped");
    const std::int64_t t = anchor_ms_ + std::llround(static_cast<double>(base_ + drop) * 1000.0 / *fs_);
    std::vector<double> keep(buffer_.begin() + static_cast<std::ptrdiff_t>(drop), buffer_.end());
    reanchor(t);
    buffer_ = std::move(keep);
  }
}

std::size_t StreamSession::pending_samples() const noexcept { return buffer_.size(); }

std::vector<RhythmPrediction> StreamSession::maybe_classify(const nn::ModelParams* params) {
  if (params == nullptr) throw Error(Errc::ModelNotLoaded, "no model loaded");
  std::vector<RhythmPrediction> out;
  if (!fs_) return out;
  const double fs = *fs_;
  while (true) {
    const GroupSpan span = group_span(segment_group_, fs, cfg_);
    const std::size_t end = span.start + span.length;
    if (base_ + buffer_.size() < end) break;

    const auto first = buffer_.begin() + static_cast<std::ptrdiff_t>(span.start - base_);
    const std::vector<double> raw(first, first + static_cast<std::ptrdiff_t>(span.length));
    const std::uint64_t group = groups_emitted_++;
    try {
      const auto pre = dsp::standardize_per_signal(dsp::preprocess(raw, fs, cfg_.preprocess));
      const auto windows = pipeline::extract_windows(pre, 0, cfg_.window, id_);
      if (windows.nw != cfg_.group_windows)
        throw Error(Errc::ShapeMismatch, "group produced " + std::to_string(windows.nw) + " windows");
      const auto fwd = nn::model_forward(windows, *params, nn::Mode::Eval);
      RhythmPrediction p;
      p.session = id_;
      p.group = group;
      p.t_start_ms = anchor_ms_ + std::llround(static_cast<double>(span.start) * 1000.0 / fs);
      p.t_end_ms = anchor_ms_ + std::llround(static_cast<double>(end) * 1000.0 / fs);
      p.probs = fwd.probs;
      p.cls = nn::argmax(fwd.probs);
      out.push_back(std::move(p));
    } catch (const Error& e) {
      if (e.code() != Errc::ZeroVariance) throw;
      log::warn("session " + id_ + ": group " + std::to_string(group) + " is flat, not classified");
    }

    ++segment_group_;
    const std::size_t next = group_span(segment_group_, fs, cfg_).start;
    buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(next - base_));
    base_ = next;
  }
  return out;
}

nlohmann::ordered_json prediction_json(const RhythmPrediction& p) {
  nlohmann::ordered_json j;
  j["type"] = "predict";
  j["session"] = p.session;
  j["group"] = p.group;
  j["t_start_ms"] = p.t_start_ms;
  j["t_end_ms"] = p.t_end_ms;
  j["probs"] = p.probs;
  j["class"] = std::string(1, class_token(class_at(p.cls)));
  return j;
}

std::string prediction_payload(const RhythmPrediction& p) { return prediction_json(p).dump(); }

TelemetryFrame frame_from_json(const nlohmann::json& j) {
  try {
    TelemetryFrame f;
    f.session = j.at("session").get<std::string>();
    f.seq = j.at("seq").get<std::uint64_t>();
    f.fs = j.at("fs").get<double>();
    f.t0_ms = j.at("t0_ms").get<std::int64_t>();
    const auto& s = j.at("samples");
    if (!s.is_array()) throw Error(Errc::Protocol, "samples must be an array");
    f.samples.reserve(s.size());
    for (const auto& v : s) {
      if (!v.is_number_integer()) throw Error(Errc::Protocol, "samples must be integers");
      const auto x = v.get<std::int64_t>();
      if (x < -32768 || x > 32767) throw Error(Errc::Protocol, "sample outside int16 range");
      f.samples.push_back(static_cast<std::int16_t>(x));
    }
    if (f.session.empty()) throw Error(Errc::Protocol, "empty session id");
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::Protocol, std::string("bad data frame: ") + e.what());
  }
}

nlohmann::ordered_json frame_json(const TelemetryFrame& f) {
  nlohmann::ordered_json j;
  j["type"] = "data";
  j["session"] = f.session;
  j["seq"] = f.seq;
  j["fs"] = f.fs;
  j["t0_ms"] = f.t0_ms;
  j["samples"] = f.samples;
  return j;
}

std::string encode_message(std::string_view payload) {
  const auto n = static_cast<std::uint32_t>(payload.size());
  std::string out(4, '\0');
  out[0] = static_cast<char>((n >> 24) & 0xFF);
  out[1] = static_cast<char>((n >> 16) & 0xFF);
  out[2] = static_cast<char>((n >> 8) & 0xFF);
  out[3] = static_cast<char>(n & 0xFF);
  out.append(payload);
  return out;
}

void FrameDecoder::feed(std::string_view bytes) { buf_.append(bytes); }

std::optional<std::string> FrameDecoder::next() {
  if (buf_.size() < 4) return std::nullopt;
  const auto b = [&](std::size_t i) { return static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[i])); };
  const std::size_t n = (b(0) << 24) | (b(1) << 16) | (b(2) << 8) | b(3);
  if (n > max_) throw Error(Errc::Protocol, "message of " + std::to_string(n) + " bytes exceeds limit");
  if (buf_.size() < 4 + n) return std::nullopt;
  std::string payload = buf_.substr(4, n);
  buf_.erase(0, 4 + n);
  return payload;
}

// --- engine ------------------------------------------------------------

StreamEngine::StreamEngine(StreamConfig cfg, std::shared_ptr<const nn::ModelParams> params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  validate(cfg_);
  if (params_ && params_->arch().window_len != cfg_.window.window_len)
    throw Error(Errc::BadConfig, "model window length differs from the stream window length");
}

void StreamEngine::set_prediction_log(const std::filesystem::path& path) {
  std::lock_guard lock(log_mu_);
  log_path_ = path;
}

std::shared_ptr<StreamEngine::Slot> StreamEngine::slot(const std::string& id) {
  std::lock_guard lock(mu_);
  auto& s = sessions_[id];
  if (!s) s = std::make_shared<Slot>(id, cfg_);
  return s;
}

void StreamEngine::emit(const std::string& topic, const std::string& payload) {
  if (publish_) publish_(topic, payload);
}

std::vector<RhythmPrediction> StreamEngine::handle(const TelemetryFrame& frame, std::int64_t now_ms) {
  if (!params_) throw Error(Errc::ModelNotLoaded, "no model loaded");
  auto s = slot(frame.session);
  std::lock_guard lock(s->mu);
  s->session.ingest(frame, now_ms);
  emit(raw_topic(frame.session), frame_json(frame).dump());
  auto preds = s->session.maybe_classify(params_.get());
  for (const auto& p : preds) {
    const std::string payload = prediction_payload(p);
    {
      std::lock_guard log_lock(log_mu_);
      if (log_path_) {
        std::ofstream out(*log_path_, std::ios::app | std::ios::binary);
        if (!out) throw Error(Errc::Io, "cannot append to " + log_path_->string());
        out << payload << '\n';
      }
    }
    emit(rhythm_topic(p.session), payload);
  }
  return preds;
}

void StreamEngine::notify_incomplete(StreamSession& s) {
  nlohmann::ordered_json j;
  j["type"] = "incomplete";
  j["session"] = s.id();
  j["groups"] = s.groups_emitted();
  j["pending_samples"] = s.pending_samples();
  log::info("session " + s.id() + " closed with " + std::to_string(s.pending_samples()) + " unclassified samples");
  emit(rhythm_topic(s.id()), j.dump());
}

std::vector<std::string> StreamEngine::expire(std::int64_t now_ms) {
  std::vector<std::shared_ptr<Slot>> closed;
  {
    std::lock_guard lock(mu_);
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      std::unique_lock slot_lock(it->second->mu, std::try_to_lock);
      if (slot_lock.owns_lock() && now_ms - it->second->session.last_activity_ms() > cfg_.expiry_ms) {
        closed.push_back(it->second);
        it = sessions_.erase(it);
      } else {
        ++it;
      }
    }
  }
  std::vector<std::string> ids;
  for (auto& s : closed) {
    std::lock_guard lock(s->mu);
    notify_incomplete(s->session);
    ids.push_back(s->session.id());
  }
  return ids;
}

std::vector<std::string> StreamEngine::close_all() {
  std::map<std::string, std::shared_ptr<Slot>> all;
  {
    std::lock_guard lock(mu_);
    all.swap(sessions_);
  }
  std::vector<std::string> ids;
  for (auto& [id, s] : all) {
    std::lock_guard lock(s->mu);
    notify_incomplete(s->session);
    ids.push_back(id);
  }
  return ids;
}

std::size_t StreamEngine::session_count() const {
  std::lock_guard lock(mu_);
  return sessions_.size();
}

// --- replay ------------------------------------------------------------

ReplaySignal load_replay_input(const std::filesystem::path& path, double mat_fs) {
  const auto bytes = read_file_bytes(path);
  ReplaySignal sig;
  const std::string_view view(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  if (view.rfind("fs=", 0) == 0) {
    const std::size_t nl = view.find('\n');
    if (nl == std::string_view::npos) throw Error(Errc::TruncatedFile, "raw replay header has no newline");
    try {
      sig.fs = std::stod(std::string(view.substr(3, nl - 3)));
    } catch (const std::exception&) {
      throw Error(Errc::BadRate, "unreadable rate in raw replay header");
    }
    const std::size_t body = nl + 1;
    if ((bytes.size() - body) % 2 != 0) throw Error(Errc::TruncatedFile, "odd byte count in raw int16 body");
    sig.samples.resize((bytes.size() - body) / 2);
    for (std::size_t i = 0; i < sig.samples.size(); ++i) {
      const auto lo = static_cast<std::uint16_t>(bytes[body + 2 * i]);
      const auto hi = static_cast<std::uint16_t>(bytes[body + 2 * i + 1]);
      sig.samples[i] = static_cast<std::int16_t>(static_cast<std::uint16_t>(lo | (hi << 8)));
    }
  } else {
    sig.fs = mat_fs;
    for (double v : parse_mat4(bytes)) {
      if (v < -32768.0 || v > 32767.0 || v != std::round(v))
        throw Error(Errc::UnsupportedType, "MAT values are not int16 samples");
      sig.samples.push_back(static_cast<std::int16_t>(v));
    }
  }
  if (!(sig.fs > 0.0)) throw Error(Errc::BadRate, "replay rate must be positive");
  return sig;
}

std::vector<TelemetryFrame> frames_from_signal(const ReplaySignal& signal, const std::string& session,
                                               std::size_t frame_size, std::int64_t t0_ms) {
  if (frame_size == 0 || frame_size > kMaxFrameSamples)
    throw Error(Errc::BadConfig, "frame size must be in [1, " + std::to_string(kMaxFrameSamples) + "]");
  std::vector<TelemetryFrame> frames;
  std::uint64_t seq = 1;
  for (std::size_t off = 0; off < signal.samples.size(); off += frame_size) {
    TelemetryFrame f;
    f.session = session;
    f.seq = seq++;
    f.fs = signal.fs;
    f.t0_ms = t0_ms + std::llround(static_cast<double>(off) * 1000.0 / signal.fs);
    const std::size_t n = std::min(frame_size, signal.samples.size() - off);
    f.samples.assign(signal.samples.begin() + static_cast<std::ptrdiff_t>(off),
                     signal.samples.begin() + static_cast<std::ptrdiff_t>(off + n));
    frames.push_back(std::move(f));
  }
  return frames;
}

std::string replay(std::span<const TelemetryFrame> frames, const StreamConfig& cfg,
                   std::shared_ptr<const nn::ModelParams> params,
                   const std::optional<std::filesystem::path>& log_path) {
  StreamEngine engine(cfg, std::move(params));
  if (log_path) {
    std::ofstream truncate(*log_path, std::ios::trunc | std::ios::binary);
    if (!truncate) throw Error(Errc::Io, "cannot write " + log_path->string());
    engine.set_prediction_log(*log_path);
  }
  std::string out;
  for (const auto& f : frames)
    for (const auto& p : engine.handle(f, f.t0_ms)) out += prediction_payload(p) + '\n';
  engine.close_all();
  return out;
}

// --- TCP ---------------------------------------------------------------

namespace {

void send_all(int fd, std::string_view data) {
  while (!data.empty()) {
    const ssize_t n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(Errc::Io, std::string("send failed: ") + std::strerror(errno));
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

}  // namespace

struct Server::Conn {
  int fd = -1;
  std::mutex write_mu;
  std::mutex topics_mu;
  std::set<std::string> topics;
  std::atomic<bool> open{true};

  void write(const std::string& payload) {
    std::lock_guard lock(write_mu);
    if (!open) return;
    try {
      send_all(fd, encode_message(payload));
    } catch (const Error&) {
      open = false;
    }
  }
  bool subscribed(const std::string& topic) {
    std::lock_guard lock(topics_mu);
    return topics.count(topic) > 0;
  }
};

Server::Server(ServerConfig cfg, std::shared_ptr<const nn::ModelParams> params)
    : cfg_(std::move(cfg)), engine_(cfg_.stream, std::move(params)) {
  engine_.set_publisher([this](const std::string& t, const std::string& p) { publish(t, p); });
  if (cfg_.prediction_log) engine_.set_prediction_log(*cfg_.prediction_log);
}

Server::~Server() { stop(); }

std::uint16_t Server::start() {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(cfg_.port);
  if (::getaddrinfo(cfg_.host.c_str(), port.c_str(), &hints, &res) != 0 || res == nullptr)
    throw Error(Errc::Io, "cannot resolve " + cfg_.host);
  listen_fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  const int rc = listen_fd_ < 0 ? -1 : ::bind(listen_fd_, res->ai_addr, res->ai_addrlen);
  ::freeaddrinfo(res);
  if (rc != 0 || ::listen(listen_fd_, 64) != 0) {
    const std::string why = std::strerror(errno);
    if (listen_fd_ >= 0) ::close(listen_fd_);
    listen_fd_ = -1;
    throw Error(Errc::Io, "cannot listen on " + cfg_.host + ":" + port + ": " + why);
  }
  sockaddr_in addr{};
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  running_ = true;
  reaper_ = std::thread([this] { reap_loop(); });
  log::info("listening on " + cfg_.host + ":" + std::to_string(port_));
  return port_;
}

void Server::reap_loop() {
  while (running_) {
    std::this_thread::sleep_for(std::chrono::milliseconds(200));
    engine_.expire(wall_ms());
  }
}

void Server::run() {
  while (running_) {
    pollfd p{listen_fd_, POLLIN, 0};
    const int rc = ::poll(&p, 1, 200);
    if (rc <= 0 || !running_) continue;
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    auto conn = std::make_shared<Conn>();
    conn->fd = fd;
    std::lock_guard lock(conns_mu_);
    conns_.push_back(conn);
    threads_.emplace_back([this, conn] { serve_connection(conn); });
  }
}

void Server::stop() {
  if (!running_.exchange(false)) return;
  if (listen_fd_ >= 0) {
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
  std::vector<std::thread> threads;
  {
    std::lock_guard lock(conns_mu_);
    for (auto& c : conns_) ::shutdown(c->fd, SHUT_RDWR);
    threads.swap(threads_);
  }
  for (auto& t : threads) t.join();
  if (reaper_.joinable()) reaper_.join();
}

void Server::publish(const std::string& topic, const std::string& payload) {
  std::vector<std::shared_ptr<Conn>> targets;
  {
    std::lock_guard lock(conns_mu_);
    for (auto& c : conns_)
      if (c->open && c->subscribed(topic)) targets.push_back(c);
  }
  for (auto& c : targets) c->write(payload);
}

void Server::serve_connection(std::shared_ptr<Conn> conn) {
  FrameDecoder decoder;
  auto reply_error = [&](Errc code, const std::string& message) {
    nlohmann::ordered_json j;
    j["type"] = "error";
    j["code"] = errc_name(code);
    j["message"] = message;
    conn->write(j.dump());
  };
  char buf[65536];
  bool alive = true;
  while (alive && running_ && conn->open) {
    pollfd p{conn->fd, POLLIN, 0};
    if (::poll(&p, 1, 200) <= 0) continue;
    const ssize_t n = ::recv(conn->fd, buf, sizeof buf, 0);
    if (n <= 0) break;
    decoder.feed(std::string_view(buf, static_cast<std::size_t>(n)));
    try {
      while (auto payload = decoder.next()) {
        nlohmann::json msg;
        try {
          msg = nlohmann::json::parse(*payload);
        } catch (const nlohmann::json::exception&) {
          throw Error(Errc::Protocol, "payload is not JSON");
        }
        if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string())
          throw Error(Errc::Protocol, "message without a type");
        const std::string type = msg["type"];
        if (type == "data") {
          const TelemetryFrame frame = frame_from_json(msg);
          try {
            engine_.handle(frame, wall_ms());
          } catch (const Error& e) {
            if (e.code() == Errc::Protocol) throw;
            reply_error(e.code(), e.what());
          }
        } else if (type == "subscribe" || type == "unsubscribe") {
          if (!msg.contains("topic") || !msg["topic"].is_string()) throw Error(Errc::Protocol, "subscribe without topic");
          const std::string topic = msg["topic"];
          {
            std::lock_guard lock(conn->topics_mu);
            if (type == "subscribe") conn->topics.insert(topic);
            else conn->topics.erase(topic);
          }
          nlohmann::ordered_json ack;
          ack["type"] = type == "subscribe" ? "subscribed" : "unsubscribed";
          ack["topic"] = topic;
          conn->write(ack.dump());
        } else {
          throw Error(Errc::Protocol, "unknown message type '" + type + "'");
        }
      }
    } catch (const Error& e) {
      log::warn(std::string("closing connection: ") + e.what());
      reply_error(e.code(), e.what());
      alive = false;
    }
  }
  {
    std::lock_guard lock(conn->write_mu);
    conn->open = false;
  }
  ::shutdown(conn->fd, SHUT_RDWR);
  std::lock_guard lock(conns_mu_);
  ::close(conn->fd);
  conns_.erase(std::remove(conns_.begin(), conns_.end(), conn), conns_.end());
}

Client::Client(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 || res == nullptr)
    throw Error(Errc::Io, "cannot resolve " + host);
  fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  const int rc = fd_ < 0 ? -1 : ::connect(fd_, res->ai_addr, res->ai_addrlen);
  ::freeaddrinfo(res);
  if (rc != 0) {
    if (fd_ >= 0) ::close(fd_);
    throw Error(Errc::Io, "cannot connect to " + host + ":" + std::to_string(port));
  }
  int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

Client::~Client() {
  if (fd_ >= 0) ::close(fd_);
}

void Client::send(const nlohmann::json& message) { send_all(fd_, encode_message(message.dump())); }

std::optional<nlohmann::json> Client::receive(int timeout_ms) {
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  char buf[65536];
  while (true) {
    if (auto payload = decoder_.next()) return nlohmann::json::parse(*payload);
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) return std::nullopt;
    pollfd p{fd_, POLLIN, 0};
    if (::poll(&p, 1, static_cast<int>(left.count())) <= 0) return std::nullopt;
    const ssize_t n = ::recv(fd_, buf, sizeof buf, 0);
    if (n <= 0) return std::nullopt;
    decoder_.feed(std::string_view(buf, static_cast<std::size_t>(n)));
  }
}

}  // namespace ecgcrnn::stream
