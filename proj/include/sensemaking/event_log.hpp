#pragma once

// Append-only JSON-lines log, one file per session. The first line is the
// session header; each further line is one applied InterventionEvent.
// Every append is fsync'd before it returns.

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "sensemaking/data_io.hpp"
#include "sensemaking/domain.hpp"
#include "sensemaking/engine.hpp"

namespace sensemaking {

struct SessionHeader {
  std::string session_id;
  std::string case_id;
  std::string schema_hash;
  SessionConfig config;
};

inline Json header_to_json(const SessionHeader& h) {
  return Json{{"type", "session"},
              {"format", 1},
              {"session_id", h.session_id},
              {"case_id", h.case_id},
              {"schema_hash", h.schema_hash},
              {"config", Json{{"delta", h.config.delta},
                              {"tau_e", h.config.tau_e},
                              {"neutral_band", h.config.neutral_band}}}};
}

inline SessionHeader header_from_json(const Json& j) {
  if (j.value("type", "") != "session") throw Error(ErrorCode::CorruptLog, "first log line is not a session header");
  SessionHeader h;
  h.session_id = j.at("session_id").get<std::string>();
  h.case_id = j.at("case_id").get<std::string>();
  h.schema_hash = j.at("schema_hash").get<std::string>();
  const auto& c = j.at("config");
  h.config.delta = c.at("delta").get<double>();
  h.config.tau_e = c.at("tau_e").get<double>();
  h.config.neutral_band = c.at("neutral_band").get<double>();
  return h;
}

struct SessionLog {
  SessionHeader header;
  std::vector<InterventionEvent> events;
  // Byte length of the intact prefix; anything after it is a torn write.
  std::uintmax_t valid_bytes = 0;
  bool torn_tail = false;
};

// A final line without its newline is an unacknowledged write and is
// dropped. Damage anywhere else is CorruptLog.
inline SessionLog parse_session_log(std::string_view text) {
  SessionLog log;
  std::size_t pos = 0;
  bool have_header = false;
  while (pos < text.size()) {
    const std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) {
      log.torn_tail = true;
      break;
    }
    const std::string_view line = text.substr(pos, end - pos);
    try {
      const Json j = Json::parse(line);
      if (!have_header) {
        log.header = header_from_json(j);
        have_header = true;
      } else {
        if (j.value("type", "") != "event") throw Error(ErrorCode::CorruptLog, "unexpected record type");
        log.events.push_back(j.at("event").get<InterventionEvent>());
      }
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::CorruptLog, std::string("unreadable log line: ") + e.what());
    } catch (const Error& e) {
      if (e.code() == ErrorCode::CorruptLog) throw;
      throw Error(ErrorCode::CorruptLog, e.what());
    }
    pos = end + 1;
    log.valid_bytes = pos;
  }
  if (!have_header) throw Error(ErrorCode::CorruptLog, "log has no session header");
  for (std::size_t i = 0; i < log.events.size(); ++i) {
    if (log.events[i].seq != static_cast<std::int64_t>(i + 1)) {
      throw Error(ErrorCode::OutOfOrderEvent, "log seq " + std::to_string(log.events[i].seq) + " at position " +
                                                  std::to_string(i + 1));
    }
  }
  return log;
}

inline SessionLog read_session_log(const fs::path& path) { return parse_session_log(read_file(path)); }

class EventLogWriter {
 public:
  EventLogWriter() = default;

  // Opens for append, truncating a torn tail first when valid_bytes is given.
  explicit EventLogWriter(const fs::path& path, std::optional<std::uintmax_t> valid_bytes = std::nullopt)
      : path_(path) {
    fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0) throw Error(ErrorCode::IoError, "open " + path.string() + ": " + std::strerror(errno));
    if (valid_bytes && ::ftruncate(fd_, static_cast<off_t>(*valid_bytes)) != 0) {
      const int err = errno;
      ::close(fd_);
      fd_ = -1;
      throw Error(ErrorCode::IoError, "truncate " + path.string() + ": " + std::strerror(err));
    }
  }

  EventLogWriter(const EventLogWriter&) = delete;
  EventLogWriter& operator=(const EventLogWriter&) = delete;
  EventLogWriter(EventLogWriter&& other) noexcept : path_(std::move(other.path_)), fd_(std::exchange(other.fd_, -1)) {}
  EventLogWriter& operator=(EventLogWriter&& other) noexcept {
    if (this != &other) {
      close();
      path_ = std::move(other.path_);
      fd_ = std::exchange(other.fd_, -1);
    }
    return *this;
  }
  ~EventLogWriter() { close(); }

  void append_header(const SessionHeader& header) { append_line(header_to_json(header).dump()); }

  void append_event(const InterventionEvent& event) {
    append_line(Json{{"type", "event"}, {"event", event}}.dump());
  }

  const fs::path& path() const { return path_; }

 private:
  void append_line(std::string line) {
    line.push_back('\n');
    const char* data = line.data();
    std::size_t left = line.size();
    while (left > 0) {
      const ssize_t n = ::write(fd_, data, left);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw Error(ErrorCode::IoError, "write " + path_.string() + ": " + std::strerror(errno));
      }
      data += n;
      left -= static_cast<std::size_t>(n);
    }
    if (::fsync(fd_) != 0) throw Error(ErrorCode::IoError, "fsync " + path_.string() + ": " + std::strerror(errno));
  }

  void close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

  fs::path path_;
  int fd_ = -1;
};

}  // namespace sensemaking
