#include <httplib.h>

#include "cfseg/study.hpp"

namespace cfseg::study {

namespace {

void send_json(httplib::Response& res, int status, const io::Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& kind, const std::string& message) {
  send_json(res, status, {{"error", kind}, {"message", message}});
}

// Runs a handler and maps domain errors onto HTTP status codes.
template <class F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const NotFoundError& e) {
    send_error(res, 404, "not_found", e.what());
  } catch (const ConflictError& e) {
    send_error(res, 409, "conflict", e.what());
  } catch (const MissingMasksError& e) {
    send_json(res, 422, {{"error", "missing_masks"}, {"message", e.what()}, {"ids", e.ids()}});
  } catch (const ArgumentError& e) {
    send_error(res, 400, "bad_request", e.what());
  } catch (const io::Json::exception& e) {
    send_error(res, 400, "bad_request", e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, "internal", e.what());
  }
}

int parse_index(const std::string& s) {
  try {
    std::size_t used = 0;
    const int k = std::stoi(s, &used);
    if (used == s.size()) return k;
  } catch (const std::exception&) {
  }
  throw NotFoundError("trial '" + s + "' does not exist");
}

io::Json progress(const StudySession& s) {
  io::Json j{{"session_id", s.id},
             {"rater", s.rater},
             {"n_trials", s.trials.size()},
             {"answered", s.answered()},
             {"next_unanswered", nullptr}};
  if (const auto k = s.next_unanswered()) j["next_unanswered"] = *k;
  return j;
}

}  // namespace

struct StudyServer::Impl {
  SessionStore& store;
  httplib::Server server;
  explicit Impl(SessionStore& s) : store(s) {}
};

StudyServer::StudyServer(SessionStore& store) : impl_(std::make_unique<Impl>(store)) {
  auto& svr = impl_->server;
  auto& st = impl_->store;

  svr.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers", "Content-Type"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  svr.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  // Clients may pick the rater, seed and group sizes; the method pair is fixed server-side.
  svr.Post("/sessions", [&st](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = req.body.empty() ? io::Json::object() : io::Json::parse(req.body);
      if (!body.is_object()) throw ArgumentError("body must be a JSON object");
      for (const auto& key : {"method_a", "method_b"})
        if (body.contains(key)) throw ArgumentError("the method pair cannot be chosen by the client");
      const auto session = st.create(session_spec_from_json(body));
      send_json(res, 201, progress(session));
    });
  });

  svr.Get(R"(/sessions/([^/]+))", [&st](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, progress(st.get(req.matches[1]))); });
  });

  svr.Get(R"(/sessions/([^/]+)/trials/([^/]+))", [&st](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto session = st.get(req.matches[1]);
      const int k = parse_index(req.matches[2]);
      if (k < 0 || k >= static_cast<int>(session.trials.size()))
        throw NotFoundError("trial " + std::to_string(k) + " does not exist");
      send_json(res, 200, trial_payload(session, session.trials[static_cast<std::size_t>(k)]));
    });
  });

  svr.Post(R"(/sessions/([^/]+)/trials/([^/]+)/choice)", [&st](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = io::Json::parse(req.body);
      if (!body.is_object() || !body.contains("choice") || !body["choice"].is_string())
        throw ArgumentError("body must be {\"choice\": \"left\" | \"right\"}");
      const auto choice = choice_from_string(body["choice"].get<std::string>());
      const int k = parse_index(req.matches[2]);
      const auto t = st.choose(req.matches[1], k, choice);
      send_json(res, 200, {{"index", t.index}, {"choice", to_string(*t.choice)}, {"answered_at", *t.answered_at}});
    });
  });

  svr.Get(R"(/sessions/([^/]+)/summary)", [&st](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, st.summary(req.matches[1]).to_json()); });
  });
}

StudyServer::~StudyServer() { stop(); }

int StudyServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw IoError(host, "cannot bind");
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) throw IoError(host + ":" + std::to_string(port), "cannot bind");
  return port;
}

bool StudyServer::listen() { return impl_->server.listen_after_bind(); }

void StudyServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

}  // namespace cfseg::study
