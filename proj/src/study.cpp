#include "cfseg/study.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>

namespace cfseg::study {

namespace fs = std::filesystem;

std::string to_string(Choice c) { return c == Choice::Left ? "left" : "right"; }

Choice choice_from_string(const std::string& s) {
  if (s == "left") return Choice::Left;
  if (s == "right") return Choice::Right;
  throw ArgumentError("choice must be 'left' or 'right'");
}

int StudySession::answered() const {
  return static_cast<int>(std::count_if(trials.begin(), trials.end(), [](const Trial& t) { return t.answered(); }));
}

std::optional<int> StudySession::next_unanswered() const {
  for (const auto& t : trials)
    if (!t.answered()) return t.index;
  return std::nullopt;
}

io::Json to_json(const Trial& t) {
  io::Json j{{"index", t.index},           {"sample_id", t.sample_id},     {"group", t.group},
             {"image_path", t.image_path}, {"mask_a_path", t.mask_a_path}, {"mask_b_path", t.mask_b_path},
             {"a_left", t.a_left}};
  if (t.choice) j["choice"] = to_string(*t.choice);
  if (t.answered_at) j["answered_at"] = *t.answered_at;
  return j;
}

Trial trial_from_json(const io::Json& j) {
  Trial t;
  t.index = j.at("index").get<int>();
  t.sample_id = j.at("sample_id").get<std::string>();
  t.group = j.at("group").get<std::string>();
  t.image_path = j.at("image_path").get<std::string>();
  t.mask_a_path = j.at("mask_a_path").get<std::string>();
  t.mask_b_path = j.at("mask_b_path").get<std::string>();
  t.a_left = j.at("a_left").get<bool>();
  if (j.contains("choice")) t.choice = choice_from_string(j.at("choice").get<std::string>());
  if (j.contains("answered_at")) t.answered_at = j.at("answered_at").get<std::string>();
  return t;
}

io::Json to_json(const StudySession& s) {
  io::Json trials = io::Json::array();
  for (const auto& t : s.trials) trials.push_back(to_json(t));
  return {{"id", s.id},         {"rater", s.rater}, {"method_a", s.method_a},     {"method_b", s.method_b},
          {"seed", s.seed},     {"created_at", s.created_at}, {"trials", trials}};
}

StudySession session_from_json(const io::Json& j) {
  StudySession s;
  try {
    s.id = j.at("id").get<std::string>();
    s.rater = j.at("rater").get<std::string>();
    s.method_a = j.at("method_a").get<std::string>();
    s.method_b = j.at("method_b").get<std::string>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.created_at = j.value("created_at", std::string{});
    for (const auto& t : j.at("trials")) s.trials.push_back(trial_from_json(t));
  } catch (const io::Json::exception& e) {
    throw ValidationError(std::string("session: ") + e.what());
  }
  return s;
}

io::Json to_json(const SessionSpec& s) {
  return {{"rater", s.rater},       {"n_healthy", s.n_healthy}, {"n_diseased", s.n_diseased},
          {"method_a", s.method_a}, {"method_b", s.method_b},   {"seed", s.seed},
          {"sample_ids", s.sample_ids}};
}

SessionSpec session_spec_from_json(const io::Json& j) {
  SessionSpec s;
  if (!j.is_object()) throw ArgumentError("session spec must be a JSON object");
  static const std::set<std::string> known{"rater", "n_healthy", "n_diseased", "method_a", "method_b", "seed",
                                           "sample_ids"};
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) throw ArgumentError("session spec: unknown field '" + k + "'");
  try {
    s.rater = j.value("rater", s.rater);
    s.n_healthy = j.value("n_healthy", s.n_healthy);
    s.n_diseased = j.value("n_diseased", s.n_diseased);
    s.method_a = j.value("method_a", s.method_a);
    s.method_b = j.value("method_b", s.method_b);
    s.seed = j.value("seed", s.seed);
    s.sample_ids = j.value("sample_ids", s.sample_ids);
  } catch (const io::Json::exception& e) {
    throw ArgumentError(std::string("session spec: ") + e.what());
  }
  if (s.rater.empty()) throw ArgumentError("session spec: rater must be non-empty");
  if (s.n_healthy < -1 || s.n_diseased < -1) throw ArgumentError("session spec: counts must be >= -1");
  if (s.method_a == s.method_b) throw ArgumentError("session spec: the two methods must differ");
  return s;
}

namespace {

std::string join(const std::vector<std::string>& ids) {
  std::string out;
  for (const auto& id : ids) out += (out.empty() ? "" : ", ") + id;
  return out;
}

template <class T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace

MissingMasksError::MissingMasksError(std::vector<std::string> ids)
    : DataError("missing masks for: " + join(ids)), ids_(std::move(ids)) {}

StudySession create_session(const pipeline::ResultsManifest& results, const SessionSpec& spec,
                            const std::string& session_id) {
  if (spec.method_a == spec.method_b) throw ArgumentError("the two methods must differ");
  const auto arm_a = pipeline::arm_from_string(spec.method_a);
  const auto arm_b = pipeline::arm_from_string(spec.method_b);

  struct Sample {
    const synth::ManifestRecord* record = nullptr;
    const pipeline::ResultRecord* a = nullptr;
    const pipeline::ResultRecord* b = nullptr;
  };
  std::map<std::string, Sample> samples;
  std::vector<std::string> order;
  for (const auto& r : results.records) {
    auto [it, fresh] = samples.try_emplace(r.id());
    if (fresh) order.push_back(r.id());
    it->second.record = &r.sample;
    if (r.arm == arm_a) it->second.a = &r;
    if (r.arm == arm_b) it->second.b = &r;
  }

  std::mt19937_64 rng(spec.seed);
  std::vector<std::string> chosen;
  if (!spec.sample_ids.empty()) {
    for (const auto& id : spec.sample_ids)
      if (!samples.contains(id)) throw NotFoundError("unknown sample id '" + id + "'");
    chosen = spec.sample_ids;
  } else {
    std::vector<std::string> healthy, diseased;
    for (const auto& id : order) (samples.at(id).record->attributes.disease ? diseased : healthy).push_back(id);
    auto draw = [&](std::vector<std::string> pool, int n, const char* group) {
      if (n < 0) n = static_cast<int>(pool.size());
      if (n > static_cast<int>(pool.size()))
        throw ArgumentError(std::string("requested ") + std::to_string(n) + " " + group + " images, only " +
                            std::to_string(pool.size()) + " available");
      shuffle(pool, rng);
      pool.resize(static_cast<std::size_t>(n));
      std::sort(pool.begin(), pool.end());
      chosen.insert(chosen.end(), pool.begin(), pool.end());
    };
    draw(healthy, spec.n_healthy, kHealthyGroup);
    draw(diseased, spec.n_diseased, kDiseasedGroup);
  }

  std::vector<std::string> missing;
  auto usable = [&](const pipeline::ResultRecord* r) {
    return r && r->ok() && !r->pred_mask_path.empty() && fs::exists(results.path_of(r->pred_mask_path));
  };
  for (const auto& id : chosen) {
    const auto& s = samples.at(id);
    if (!usable(s.a) || !usable(s.b)) missing.push_back(id);
  }
  if (!missing.empty()) throw MissingMasksError(std::move(missing));

  shuffle(chosen, rng);
  StudySession session;
  session.id = session_id;
  session.rater = spec.rater;
  session.method_a = spec.method_a;
  session.method_b = spec.method_b;
  session.seed = spec.seed;
  session.created_at = now_iso8601();
  std::bernoulli_distribution coin(0.5);
  auto absolute = [&](const std::string& p) { return fs::absolute(results.path_of(p)).lexically_normal().string(); };
  for (const auto& id : chosen) {
    const auto& s = samples.at(id);
    Trial t;
    t.index = static_cast<int>(session.trials.size());
    t.sample_id = id;
    t.group = s.record->attributes.disease ? kDiseasedGroup : kHealthyGroup;
    t.image_path = absolute(s.record->image_path);
    t.mask_a_path = absolute(s.a->pred_mask_path);
    t.mask_b_path = absolute(s.b->pred_mask_path);
    t.a_left = coin(rng);
    session.trials.push_back(std::move(t));
  }
  return session;
}

const std::string& credited_method(const StudySession& s, const Trial& t) {
  if (!t.choice) throw ArgumentError("trial " + std::to_string(t.index) + " is unanswered");
  const bool a_chosen = (*t.choice == Choice::Left) == t.a_left;
  return a_chosen ? s.method_a : s.method_b;
}

const Trial& record_choice(StudySession& s, int index, Choice choice, const std::string& timestamp) {
  if (index < 0 || index >= static_cast<int>(s.trials.size()))
    throw NotFoundError("trial " + std::to_string(index) + " does not exist");
  auto& t = s.trials[static_cast<std::size_t>(index)];
  if (t.answered()) throw ConflictError("trial " + std::to_string(index) + " is already answered");
  t.choice = choice;
  t.answered_at = timestamp;
  return t;
}

io::Json PreferenceSummary::to_json() const {
  io::Json g = io::Json::object();
  for (const auto& [name, s] : groups)
    g[name] = {{"answered", s.answered}, {"unanswered", s.unanswered}, {"counts", s.counts}, {"percent", s.percent}};
  return {{"groups", g},
          {"total_trials", total_trials},
          {"answered", answered},
          {"partial", partial},
          {"warning", empty_warning ? io::Json("no trials answered") : io::Json(nullptr)}};
}

PreferenceSummary summarize(const StudySession& s) {
  PreferenceSummary out;
  out.total_trials = static_cast<int>(s.trials.size());
  for (const auto& t : s.trials) {
    if (!t.answered()) {
      ++out.groups[t.group].unanswered;
      continue;
    }
    auto& g = out.groups[t.group];
    ++g.answered;
    ++g.counts[credited_method(s, t)];
    ++out.answered;
  }
  for (auto& [name, g] : out.groups) {
    if (g.answered == 0) continue;
    for (const auto& m : {s.method_a, s.method_b}) {
      g.counts.try_emplace(m, 0);
      g.percent[m] = 100.0 * g.counts[m] / g.answered;
    }
  }
  out.partial = out.answered < out.total_trials;
  out.empty_warning = out.answered == 0;
  if (out.empty_warning) out.groups.clear();
  return out;
}

std::string now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%S") << '.' << std::setw(3) << std::setfill('0') << ms << 'Z';
  return os.str();
}

namespace {

void append_event(const fs::path& log, const io::Json& event) {
  std::ofstream out(log, std::ios::app);
  if (!out) throw IoError(log.string(), "cannot append to event log");
  out << event.dump() << '\n';
  out.flush();
  if (!out) throw IoError(log.string(), "write failed");
}

}  // namespace

StudySession replay(const fs::path& log) {
  const auto events = io::read_jsonl(log);
  if (events.empty() || events.front().value("type", "") != "created")
    throw ValidationError(log.string() + ": event log must start with a 'created' event");
  auto session = session_from_json(events.front().at("session"));
  for (std::size_t i = 1; i < events.size(); ++i) {
    const auto& e = events[i];
    if (e.value("type", "") != "choice") throw ValidationError(log.string() + ": unknown event type");
    record_choice(session, e.at("index").get<int>(), choice_from_string(e.at("choice").get<std::string>()),
                  e.value("at", std::string{}));
  }
  return session;
}

SessionStore::SessionStore(fs::path root, std::optional<pipeline::ResultsManifest> results)
    : root_(std::move(root)), results_(std::move(results)) {
  fs::create_directories(root_);
  load_existing();
}

fs::path SessionStore::log_path(const std::string& id) const { return root_ / (id + ".events.jsonl"); }

void SessionStore::load_existing() {
  for (const auto& entry : fs::directory_iterator(root_)) {
    const auto name = entry.path().filename().string();
    const std::string suffix = ".events.jsonl";
    if (name.size() <= suffix.size() || name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0)
      continue;
    auto e = std::make_shared<Entry>();
    e->session = replay(entry.path());
    sessions_[e->session.id] = e;
  }
  counter_ = sessions_.size();
}

StudySession SessionStore::create(const SessionSpec& spec) {
  if (!results_) throw ConfigError("session store has no results manifest to draw trials from");
  std::string id;
  {
    std::lock_guard lock(map_mutex_);
    do {
      id = "s" + io::sha256_hex(spec.rater + "|" + std::to_string(spec.seed) + "|" + now_iso8601() + "|" +
                                std::to_string(counter_++))
                     .substr(0, 12);
    } while (sessions_.contains(id));
  }
  auto e = std::make_shared<Entry>();
  e->session = create_session(*results_, spec, id);
  append_event(log_path(id), {{"type", "created"}, {"at", e->session.created_at}, {"session", to_json(e->session)}});
  std::lock_guard lock(map_mutex_);
  sessions_[id] = e;
  return e->session;
}

std::shared_ptr<SessionStore::Entry> SessionStore::entry(const std::string& id) const {
  std::lock_guard lock(map_mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFoundError("session '" + id + "' does not exist");
  return it->second;
}

StudySession SessionStore::get(const std::string& id) const {
  const auto e = entry(id);
  std::shared_lock lock(e->mutex);
  return e->session;
}

Trial SessionStore::choose(const std::string& id, int index, Choice choice) {
  const auto e = entry(id);
  std::unique_lock lock(e->mutex);
  auto copy = e->session;
  const auto& t = record_choice(copy, index, choice, now_iso8601());
  append_event(log_path(id), {{"type", "choice"}, {"index", index}, {"choice", to_string(choice)}, {"at", *t.answered_at}});
  e->session = std::move(copy);
  return e->session.trials[static_cast<std::size_t>(index)];
}

PreferenceSummary SessionStore::summary(const std::string& id) const {
  const auto e = entry(id);
  std::shared_lock lock(e->mutex);
  return summarize(e->session);
}

std::vector<std::string> SessionStore::ids() const {
  std::lock_guard lock(map_mutex_);
  std::vector<std::string> out;
  for (const auto& [id, _] : sessions_) out.push_back(id);
  return out;
}

io::Json trial_payload(const StudySession& s, const Trial& t) {
  const auto image = io::read_image_png(t.image_path);
  const auto mask_a = io::read_mask_png(t.mask_a_path);
  const auto mask_b = io::read_mask_png(t.mask_b_path);
  const auto& left = t.a_left ? mask_a : mask_b;
  const auto& right = t.a_left ? mask_b : mask_a;
  auto png = [](const io::RgbImage& rgb) { return io::base64_encode(io::encode_rgb_png(rgb)); };
  io::Json j{{"session_id", s.id},
             {"index", t.index},
             {"n_trials", s.trials.size()},
             {"answered", t.answered()},
             {"image_png", png(io::overlay(image, Mask(image.height(), image.width()), 0.0f))},
             {"left_png", png(io::overlay(image, left))},
             {"right_png", png(io::overlay(image, right))}};
  if (t.choice) j["choice"] = to_string(*t.choice);
  return j;
}

}  // namespace cfseg::study
