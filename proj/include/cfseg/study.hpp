#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "cfseg/errors.hpp"
#include "cfseg/io.hpp"
#include "cfseg/results.hpp"

// Blinded pairwise preference study: sessions, side randomisation, choices, aggregation.
namespace cfseg::study {

enum class Choice { Left, Right };
std::string to_string(Choice c);
Choice choice_from_string(const std::string& s);

inline constexpr const char* kHealthyGroup = "NF";
inline constexpr const char* kDiseasedGroup = "diseased";

struct Trial {
  int index = 0;
  std::string sample_id;
  std::string group;  // kHealthyGroup or kDiseasedGroup
  std::string image_path;
  std::string mask_a_path;  // method A
  std::string mask_b_path;  // method B
  bool a_left = true;       // side assignment, fixed at creation
  std::optional<Choice> choice;
  std::optional<std::string> answered_at;

  bool answered() const noexcept { return choice.has_value(); }
};

struct StudySession {
  std::string id;
  std::string rater;
  std::string method_a;
  std::string method_b;
  std::uint64_t seed = 0;
  std::string created_at;
  std::vector<Trial> trials;

  int answered() const;
  std::optional<int> next_unanswered() const;
};

io::Json to_json(const Trial& t);
Trial trial_from_json(const io::Json& j);
io::Json to_json(const StudySession& s);
StudySession session_from_json(const io::Json& j);

struct SessionSpec {
  std::string rater = "rater";
  int n_healthy = 150;   // -1 takes every available image of the group
  int n_diseased = 150;
  std::string method_a = "direct";
  std::string method_b = "cfseg";
  std::uint64_t seed = 0;
  std::vector<std::string> sample_ids;  // explicit image set; overrides the counts when non-empty
};

io::Json to_json(const SessionSpec& s);
SessionSpec session_spec_from_json(const io::Json& j);

class MissingMasksError : public DataError {
 public:
  explicit MissingMasksError(std::vector<std::string> ids);
  const std::vector<std::string>& ids() const noexcept { return ids_; }

 private:
  std::vector<std::string> ids_;
};

// Draws the image set, shuffles the trial order and flips a fair coin per trial for the
// side of method A. Deterministic given spec.seed; paths are made absolute.
StudySession create_session(const pipeline::ResultsManifest& results, const SessionSpec& spec,
                            const std::string& session_id);

// Method credited for a choice under the trial's side assignment.
const std::string& credited_method(const StudySession& s, const Trial& t);

// Throws NotFoundError for a bad index and ConflictError if already answered.
const Trial& record_choice(StudySession& s, int index, Choice choice, const std::string& timestamp);

struct GroupSummary {
  int answered = 0;
  int unanswered = 0;
  std::map<std::string, int> counts;       // method -> count
  std::map<std::string, double> percent;   // method -> percent of answered
};

struct PreferenceSummary {
  std::map<std::string, GroupSummary> groups;
  int total_trials = 0;
  int answered = 0;
  bool partial = false;        // some trials unanswered
  bool empty_warning = false;  // nothing answered
  io::Json to_json() const;
};

PreferenceSummary summarize(const StudySession& s);

std::string now_iso8601();

// Sessions persisted as an append-only event log <root>/<id>.events.jsonl: a "created"
// event carrying the session, then one "choice" event per answer.
class SessionStore {
 public:
  SessionStore(std::filesystem::path root, std::optional<pipeline::ResultsManifest> results = std::nullopt);

  StudySession create(const SessionSpec& spec);
  StudySession get(const std::string& id) const;
  Trial choose(const std::string& id, int index, Choice choice);
  PreferenceSummary summary(const std::string& id) const;
  std::vector<std::string> ids() const;
  const std::filesystem::path& root() const noexcept { return root_; }

 private:
  struct Entry {
    mutable std::shared_mutex mutex;
    StudySession session;
  };
  std::shared_ptr<Entry> entry(const std::string& id) const;
  std::filesystem::path log_path(const std::string& id) const;
  void load_existing();

  std::filesystem::path root_;
  std::optional<pipeline::ResultsManifest> results_;
  mutable std::mutex map_mutex_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::uint64_t counter_ = 0;
};

// Rebuilds a session from its event log.
StudySession replay(const std::filesystem::path& log);

// Trial payload for the client: base64 PNGs for the image and the left/right overlays.
// Never carries method names or mask paths.
io::Json trial_payload(const StudySession& s, const Trial& t);

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
};

class StudyServer {
 public:
  explicit StudyServer(SessionStore& store);
  ~StudyServer();
  StudyServer(const StudyServer&) = delete;
  StudyServer& operator=(const StudyServer&) = delete;

  // Binds to the port (0 = any free port) and returns the bound port.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  bool listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace cfseg::study
