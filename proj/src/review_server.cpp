#include "signline/review_server.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <sstream>

#include "httplib.h"
#include "signline/error.hpp"
#include "signline/pipeline.hpp"

namespace signline {

using nlohmann::json;

namespace {

std::string utc_now() {
	const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
	std::tm tm{};
	gmtime_r(&t, &tm);
	char buf[32];
	std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
	return buf;
}

bool valid_session_id(const std::string& id) {
	return !id.empty() && id.size() <= 64 && std::all_of(id.begin(), id.end(), [](unsigned char c) {
		return std::isalnum(c) != 0 || c == '-' || c == '_';
	});
}

} // namespace

ReviewService::ReviewService(Dataset dataset, Predictions predictions, std::filesystem::path image_root,
                             std::filesystem::path session_dir, std::string dataset_ref, std::string predictions_ref,
                             std::size_t max_suggestions)
    : dataset_(std::move(dataset)), predictions_(std::move(predictions)), image_root_(std::move(image_root)),
      session_dir_(std::move(session_dir)), dataset_ref_(std::move(dataset_ref)),
      predictions_ref_(std::move(predictions_ref)), max_suggestions_(max_suggestions) {
	template_ = signline::create_session("", dataset_, predictions_, max_suggestions_, dataset_ref_, predictions_ref_);
	std::filesystem::create_directories(session_dir_);
	std::vector<std::filesystem::path> logs;
	for (const auto& entry : std::filesystem::directory_iterator(session_dir_)) {
		if (entry.is_regular_file() && entry.path().extension() == ".ndjson") {
			logs.push_back(entry.path());
		}
	}
	std::sort(logs.begin(), logs.end());
	for (const auto& path : logs) {
		SessionLog log = SessionLog::open(path);
		const std::string id = log.state().session_id;
		sessions_.emplace(id, std::make_unique<Entry>(std::move(log)));
	}
}

json ReviewService::tablets() const {
	json out = json::array();
	for (const auto& t : dataset_.tablet_ids()) {
		std::size_t n = 0;
		for (const auto& img : dataset_.images) {
			n += img.tablet_id == t ? 1 : 0;
		}
		out.push_back({{"tablet_id", t}, {"images", n}});
	}
	return out;
}

json ReviewService::tablet_images(const std::string& tablet_id) const {
	json out = json::array();
	for (const auto& img : dataset_.images) {
		if (img.tablet_id == tablet_id) {
			out.push_back({{"image_id", img.image_id},
			               {"file_name", img.file_name},
			               {"width", img.width},
			               {"height", img.height}});
		}
	}
	if (out.empty()) {
		throw NotFoundError("unknown tablet " + tablet_id);
	}
	return out;
}

std::filesystem::path ReviewService::image_file(const std::string& image_id) const {
	const ImageRecord* img = dataset_.find_image(image_id);
	if (img == nullptr) {
		throw NotFoundError("unknown image " + image_id);
	}
	const auto path = image_root_ / img->file_name;
	if (!std::filesystem::is_regular_file(path)) {
		throw NotFoundError("image file missing for " + image_id);
	}
	return path;
}

std::string ReviewService::image_etag(const std::string& image_id) {
	const auto path = image_file(image_id);
	std::lock_guard lock(etag_mutex_);
	auto it = etags_.find(image_id);
	if (it == etags_.end()) {
		it = etags_.emplace(image_id, "\"" + sha256_file(path) + "\"").first;
	}
	return it->second;
}

json ReviewService::hotspots(const std::string& image_id, const std::optional<std::string>& session_id) const {
	if (dataset_.find_image(image_id) == nullptr) {
		throw NotFoundError("unknown image " + image_id);
	}
	json out = json::array();
	if (session_id) {
		Entry& e = entry(*session_id);
		std::shared_lock lock(e.mutex);
		for (const Hotspot* h : e.log.state().hotspots_of(image_id)) {
			out.push_back(hotspot_to_json(*h));
		}
	} else {
		for (const Hotspot* h : template_.hotspots_of(image_id)) {
			out.push_back(hotspot_to_json(*h));
		}
	}
	return out;
}

ReviewService::Entry& ReviewService::entry(const std::string& session_id) const {
	std::lock_guard lock(sessions_mutex_);
	auto it = sessions_.find(session_id);
	if (it == sessions_.end()) {
		throw NotFoundError("unknown session " + session_id);
	}
	return *it->second;
}

json ReviewService::create_session(const std::optional<std::string>& session_id) {
	std::lock_guard lock(sessions_mutex_);
	std::string id;
	if (session_id) {
		id = *session_id;
		if (!valid_session_id(id)) {
			throw ValidationError("session ids use letters, digits, '-' and '_' (max 64)");
		}
		if (sessions_.contains(id)) {
			throw ConflictError("session " + id + " already exists", 0);
		}
	} else {
		for (std::size_t n = sessions_.size() + 1;; ++n) {
			char buf[32];
			std::snprintf(buf, sizeof buf, "session-%04zu", n);
			if (!sessions_.contains(buf)) {
				id = buf;
				break;
			}
		}
	}
	ReviewSession initial = template_;
	initial.session_id = id;
	SessionLog log = SessionLog::create(session_dir_ / (id + ".ndjson"), initial);
	auto& e = *sessions_.emplace(id, std::make_unique<Entry>(std::move(log))).first->second;
	return session_to_json(e.log.state());
}

json ReviewService::session_state(const std::string& session_id) const {
	Entry& e = entry(session_id);
	std::shared_lock lock(e.mutex);
	return session_to_json(e.log.state());
}

json ReviewService::apply(Entry& e, EditEvent event) {
	if (event.timestamp.empty()) {
		event.timestamp = utc_now();
	}
	std::unique_lock lock(e.mutex);
	e.log.append(event);
	const ReviewSession& s = e.log.state();
	std::string target = event.target;
	if (event.kind == EditKind::create && target.empty()) {
		target = s.hotspots.back().hotspot_id;
	}
	const Hotspot* h = s.find(target);
	return {{"seq", s.last_seq}, {"hotspot", h != nullptr ? hotspot_to_json(*h) : json(nullptr)}};
}

json ReviewService::post_event(const std::string& session_id, const json& event) {
	Entry& e = entry(session_id);
	return apply(e, event_from_json(event));
}

json ReviewService::patch_hotspot(const std::string& session_id, const std::string& hotspot_id, const json& body) {
	Entry& e = entry(session_id);
	EditEvent ev;
	try {
		ev.seq = body.at("seq").get<long long>();
		ev.target = hotspot_id;
		ev.actor = body.value("actor", std::string());
		if (body.contains("bbox")) {
			const std::string kind = body.value("kind", std::string("resize"));
			if (kind != "move" && kind != "resize") {
				throw ParseError("bbox patches are 'move' or 'resize'");
			}
			ev.kind = edit_kind_from_string(kind);
			ev.bbox = body.at("bbox").get<BoundingBox>();
		} else if (body.contains("class_id")) {
			ev.kind = EditKind::choose_class;
			ev.class_id = body.at("class_id").get<int>();
		} else if (body.contains("status")) {
			const std::string status = body.at("status").get<std::string>();
			if (status == "confirmed") {
				ev.kind = EditKind::confirm;
			} else if (status == "rejected") {
				ev.kind = EditKind::reject;
			} else {
				throw ParseError("status must be 'confirmed' or 'rejected'");
			}
		} else {
			throw ParseError("patch needs bbox, class_id or status");
		}
	} catch (const json::exception& ex) {
		throw ParseError(std::string("patch body: ") + ex.what());
	}
	return apply(e, std::move(ev));
}

json ReviewService::export_session(const std::string& session_id) const {
	Entry& e = entry(session_id);
	std::shared_lock lock(e.mutex);
	return dataset_to_json(export_annotations(e.log.state()));
}

// HTTP ------------------------------------------------------------------------------------------

namespace {

void send_json(httplib::Response& res, const json& body, int status = 200) {
	res.status = status;
	res.set_content(body.dump(), "application/json");
}

template <typename F>
void guarded(httplib::Response& res, F&& fn) {
	try {
		fn();
	} catch (const ConflictError& e) {
		send_json(res, {{"error", e.what()}, {"expected_seq", e.expected_seq()}}, 409);
	} catch (const NotFoundError& e) {
		send_json(res, {{"error", e.what()}}, 404);
	} catch (const ParseError& e) {
		send_json(res, {{"error", e.what()}}, 400);
	} catch (const ValidationError& e) {
		send_json(res, {{"error", e.what()}}, 400);
	} catch (const json::exception& e) {
		send_json(res, {{"error", std::string("bad JSON: ") + e.what()}}, 400);
	} catch (const std::exception& e) {
		send_json(res, {{"error", e.what()}}, 500);
	}
}

json parse_body(const httplib::Request& req) {
	if (req.body.empty()) {
		return json::object();
	}
	try {
		return json::parse(req.body);
	} catch (const json::exception& e) {
		throw ParseError(std::string("request body is not JSON: ") + e.what());
	}
}

std::string content_type_for(const std::filesystem::path& p) {
	std::string ext = p.extension().string();
	std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
	if (ext == ".png") {
		return "image/png";
	}
	if (ext == ".jpg" || ext == ".jpeg") {
		return "image/jpeg";
	}
	if (ext == ".tif" || ext == ".tiff") {
		return "image/tiff";
	}
	return "application/octet-stream";
}

} // namespace

ReviewServer::ReviewServer(ReviewService& service, ReviewServerOptions options)
    : service_(service), options_(std::move(options)), server_(std::make_unique<httplib::Server>()) {
	auto& srv = *server_;
	const std::string token = options_.token;

	srv.set_pre_routing_handler([token](const httplib::Request& req, httplib::Response& res) {
		if (token.empty() || req.path.rfind("/api/", 0) != 0) {
			return httplib::Server::HandlerResponse::Unhandled;
		}
		if (req.get_header_value("Authorization") != "Bearer " + token) {
			send_json(res, {{"error", "missing or invalid bearer token"}}, 401);
			return httplib::Server::HandlerResponse::Handled;
		}
		return httplib::Server::HandlerResponse::Unhandled;
	});

	srv.Get("/api/tablets", [this](const httplib::Request&, httplib::Response& res) {
		guarded(res, [&] { send_json(res, service_.tablets()); });
	});
	srv.Get(R"(/api/tablets/([^/]+)/images)", [this](const httplib::Request& req, httplib::Response& res) {
		guarded(res, [&] { send_json(res, service_.tablet_images(req.matches[1])); });
	});
	srv.Get(R"(/api/images/([^/]+)/hotspots)", [this](const httplib::Request& req, httplib::Response& res) {
		guarded(res, [&] {
			std::optional<std::string> session;
			if (req.has_param("session")) {
				session = req.get_param_value("session");
			}
			send_json(res, service_.hotspots(req.matches[1], session));
		});
	});
	srv.Get(R"(/api/images/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
		guarded(res, [&] {
			const std::string id = req.matches[1];
			const std::string etag = service_.image_etag(id);
			res.set_header("ETag", etag);
			res.set_header("Cache-Control", "no-cache");
			if (req.get_header_value("If-None-Match") == etag) {
				res.status = 304;
				return;
			}
			const auto path = service_.image_file(id);
			std::ifstream in(path, std::ios::binary);
			std::ostringstream buf;
			buf << in.rdbuf();
			res.status = 200;
			res.set_content(buf.str(), content_type_for(path));
		});
	});
	srv.Post("/api/sessions", [this](const httplib::Request& req, httplib::Response& res) {
		guarded(res, [&] {
			const json body = parse_body(req);
			std::optional<std::string> id;
			if (body.contains("session_id")) {
				id = body.at("session_id").get<std::string>();
			}
			send_json(res, service_.create_session(id), 201);
		});
	});
	srv.Post(R"(/api/sessions/([^/]+)/events)", [this](const httplib::Request& req, httplib::Response& res) {
		guarded(res, [&] { send_json(res, service_.post_event(req.matches[1], parse_body(req))); });
	});
	srv.Patch(R"(/api/sessions/([^/]+)/hotspots/([^/]+))", [this](const httplib::Request& req,
	                                                               httplib::Response& res) {
		guarded(res, [&] { send_json(res, service_.patch_hotspot(req.matches[1], req.matches[2], parse_body(req))); });
	});
	srv.Get(R"(/api/sessions/([^/]+)/export)", [this](const httplib::Request& req, httplib::Response& res) {
		guarded(res, [&] { send_json(res, service_.export_session(req.matches[1])); });
	});
	srv.Get(R"(/api/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
		guarded(res, [&] { send_json(res, service_.session_state(req.matches[1])); });
	});

	if (!options_.static_dir.empty()) {
		if (!srv.set_mount_point("/", options_.static_dir.string())) {
			throw IoError("static directory " + options_.static_dir.string() + " does not exist");
		}
	}
}

ReviewServer::~ReviewServer() { stop(); }

int ReviewServer::bind() {
	if (options_.port == 0) {
		const int port = server_->bind_to_any_port(options_.host);
		if (port < 0) {
			throw IoError("cannot bind " + options_.host);
		}
		options_.port = port;
		return port;
	}
	if (!server_->bind_to_port(options_.host, options_.port)) {
		throw IoError("cannot bind " + options_.host + ":" + std::to_string(options_.port));
	}
	return options_.port;
}

void ReviewServer::listen() { server_->listen_after_bind(); }

void ReviewServer::stop() {
	if (server_ && server_->is_running()) {
		server_->stop();
	}
}

} // namespace signline
