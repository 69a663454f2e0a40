#include "signline/review.hpp"

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>

#include <fcntl.h>
#include <sys/file.h>
#include <sys/stat.h>
#include <unistd.h>

#include "signline/error.hpp"

namespace signline {

using nlohmann::json;

const Hotspot* ReviewSession::find(const std::string& hotspot_id) const {
	for (const auto& h : hotspots) {
		if (h.hotspot_id == hotspot_id) {
			return &h;
		}
	}
	return nullptr;
}

std::vector<const Hotspot*> ReviewSession::hotspots_of(const std::string& image_id) const {
	std::vector<const Hotspot*> out;
	for (const auto& h : hotspots) {
		if (h.image_id == image_id) {
			out.push_back(&h);
		}
	}
	return out;
}

std::string to_string(EditKind kind) {
	switch (kind) {
	case EditKind::move: return "move";
	case EditKind::resize: return "resize";
	case EditKind::create: return "create";
	case EditKind::remove: return "delete";
	case EditKind::choose_class: return "choose_class";
	case EditKind::confirm: return "confirm";
	case EditKind::reject: return "reject";
	}
	return "?";
}

EditKind edit_kind_from_string(const std::string& s) {
	static const std::pair<const char*, EditKind> kKinds[] = {
	    {"move", EditKind::move},       {"resize", EditKind::resize},
	    {"create", EditKind::create},   {"delete", EditKind::remove},
	    {"choose_class", EditKind::choose_class}, {"confirm", EditKind::confirm},
	    {"reject", EditKind::reject}};
	for (const auto& [name, kind] : kKinds) {
		if (s == name) {
			return kind;
		}
	}
	throw ParseError("unknown edit kind '" + s + "'");
}

std::string to_string(HotspotStatus status) {
	switch (status) {
	case HotspotStatus::unreviewed: return "unreviewed";
	case HotspotStatus::confirmed: return "confirmed";
	case HotspotStatus::rejected: return "rejected";
	}
	return "?";
}

namespace {

HotspotStatus status_from_string(const std::string& s) {
	if (s == "unreviewed") {
		return HotspotStatus::unreviewed;
	}
	if (s == "confirmed") {
		return HotspotStatus::confirmed;
	}
	if (s == "rejected") {
		return HotspotStatus::rejected;
	}
	throw ParseError("unknown hotspot status '" + s + "'");
}

} // namespace

json event_to_json(const EditEvent& e) {
	json payload = json::object();
	if (e.bbox) {
		payload["bbox"] = *e.bbox;
	}
	if (e.class_id) {
		payload["class_id"] = *e.class_id;
	}
	if (!e.image_id.empty()) {
		payload["image_id"] = e.image_id;
	}
	return {{"seq", e.seq},         {"kind", to_string(e.kind)}, {"target", e.target},
	        {"payload", payload},   {"actor", e.actor},          {"timestamp", e.timestamp}};
}

EditEvent event_from_json(const json& j) {
	EditEvent e;
	try {
		e.seq = j.at("seq").get<long long>();
		e.kind = edit_kind_from_string(j.at("kind").get<std::string>());
		e.target = j.value("target", std::string());
		e.actor = j.value("actor", std::string());
		e.timestamp = j.value("timestamp", std::string());
		const json payload = j.value("payload", json::object());
		if (!payload.is_object()) {
			throw ParseError("event payload must be an object");
		}
		if (payload.contains("bbox")) {
			e.bbox = payload.at("bbox").get<BoundingBox>();
		}
		if (payload.contains("class_id")) {
			e.class_id = payload.at("class_id").get<int>();
		}
		e.image_id = payload.value("image_id", std::string());
	} catch (const json::exception& ex) {
		throw ParseError(std::string("edit event: ") + ex.what());
	}
	const bool wants_box = e.kind == EditKind::move || e.kind == EditKind::resize || e.kind == EditKind::create;
	if (wants_box != e.bbox.has_value()) {
		throw ParseError("edit event '" + to_string(e.kind) + (wants_box ? "' needs a bbox" : "' takes no bbox"));
	}
	if (e.kind == EditKind::choose_class && !e.class_id) {
		throw ParseError("choose_class needs a class_id");
	}
	if (e.class_id && e.kind != EditKind::choose_class && e.kind != EditKind::confirm && e.kind != EditKind::create) {
		throw ParseError("edit event '" + to_string(e.kind) + "' takes no class_id");
	}
	if ((e.kind == EditKind::create) != !e.image_id.empty()) {
		throw ParseError(e.kind == EditKind::create ? "create needs an image_id" : "only create takes an image_id");
	}
	if (e.kind != EditKind::create && e.target.empty()) {
		throw ParseError("edit event needs a target hotspot");
	}
	return e;
}

json hotspot_to_json(const Hotspot& h) {
	json sug = json::array();
	for (const auto& s : h.suggestions) {
		sug.push_back({{"class_id", s.class_id}, {"score", s.score}});
	}
	return {{"hotspot_id", h.hotspot_id},
	        {"image_id", h.image_id},
	        {"bbox", h.bbox},
	        {"suggestions", sug},
	        {"chosen_class", h.chosen_class ? json(*h.chosen_class) : json(nullptr)},
	        {"status", to_string(h.status)}};
}

json session_to_json(const ReviewSession& s) {
	json catalog = json::array();
	for (const auto& c : s.catalog) {
		catalog.push_back({{"class_id", c.class_id}, {"name", c.name}});
	}
	json images = json::array();
	for (const auto& img : s.images) {
		images.push_back({{"image_id", img.image_id},
		                  {"tablet_id", img.tablet_id},
		                  {"file_name", img.file_name},
		                  {"width", img.width},
		                  {"height", img.height}});
	}
	json hotspots = json::array();
	for (const auto& h : s.hotspots) {
		hotspots.push_back(hotspot_to_json(h));
	}
	return {{"session_id", s.session_id}, {"dataset_ref", s.dataset_ref}, {"predictions_ref", s.predictions_ref},
	        {"last_seq", s.last_seq},     {"catalog", catalog},           {"images", images},
	        {"hotspots", hotspots}};
}

ReviewSession session_from_json(const json& j) {
	ReviewSession s;
	try {
		s.session_id = j.at("session_id").get<std::string>();
		s.dataset_ref = j.value("dataset_ref", std::string());
		s.predictions_ref = j.value("predictions_ref", std::string());
		s.last_seq = j.at("last_seq").get<long long>();
		for (const auto& c : j.at("catalog")) {
			s.catalog.push_back({c.at("class_id").get<int>(), c.at("name").get<std::string>()});
		}
		for (const auto& ji : j.at("images")) {
			ImageRecord img;
			img.image_id = ji.at("image_id").get<std::string>();
			img.tablet_id = ji.at("tablet_id").get<std::string>();
			img.file_name = ji.at("file_name").get<std::string>();
			img.width = ji.at("width").get<int>();
			img.height = ji.at("height").get<int>();
			s.images.push_back(std::move(img));
		}
		for (const auto& jh : j.at("hotspots")) {
			Hotspot h;
			h.hotspot_id = jh.at("hotspot_id").get<std::string>();
			h.image_id = jh.at("image_id").get<std::string>();
			h.bbox = jh.at("bbox").get<BoundingBox>();
			for (const auto& js : jh.at("suggestions")) {
				h.suggestions.push_back({js.at("class_id").get<int>(), js.at("score").get<double>()});
			}
			if (!jh.at("chosen_class").is_null()) {
				h.chosen_class = jh.at("chosen_class").get<int>();
			}
			h.status = status_from_string(jh.at("status").get<std::string>());
			s.hotspots.push_back(std::move(h));
		}
	} catch (const json::exception& e) {
		throw ParseError(std::string("session: ") + e.what());
	}
	return s;
}

ReviewSession create_session(const std::string& session_id, const Dataset& dataset, const Predictions& predictions,
                             std::size_t max_suggestions, const std::string& dataset_ref,
                             const std::string& predictions_ref) {
	ReviewSession s;
	s.session_id = session_id;
	s.dataset_ref = dataset_ref;
	s.predictions_ref = predictions_ref;
	s.catalog = dataset.catalog;
	for (const auto& img : dataset.images) {
		ImageRecord meta = img;
		meta.annotations.clear();
		s.images.push_back(std::move(meta));
	}
	for (const auto& ip : predictions.images) {
		if (dataset.find_image(ip.image_id) == nullptr) {
			throw NotFoundError("predictions reference image " + ip.image_id + " missing from the dataset");
		}
		for (std::size_t k = 0; k < ip.boxes.size(); ++k) {
			const PredictedBox& b = ip.boxes[k];
			Hotspot h;
			h.hotspot_id = b.box_id.value_or(ip.image_id + "#" + std::to_string(k));
			if (s.find(h.hotspot_id) != nullptr) {
				throw ValidationError("duplicate hotspot id " + h.hotspot_id);
			}
			h.image_id = ip.image_id;
			h.bbox = b.bbox;
			if (b.class_scores) {
				if (b.class_scores->size() != dataset.num_classes()) {
					throw ValidationError("class_scores of " + h.hotspot_id + " do not match the catalog size");
				}
				const auto ranking = rank_scores(*b.class_scores);
				const std::size_t n = std::min(max_suggestions, ranking.size());
				for (std::size_t r = 0; r < n; ++r) {
					h.suggestions.push_back({ranking[r], (*b.class_scores)[static_cast<std::size_t>(ranking[r])]});
				}
			}
			s.hotspots.push_back(std::move(h));
		}
	}
	return s;
}

namespace {

const ImageRecord& image_of(const ReviewSession& s, const std::string& image_id) {
	for (const auto& img : s.images) {
		if (img.image_id == image_id) {
			return img;
		}
	}
	throw NotFoundError("unknown image " + image_id);
}

void check_box(const ReviewSession& s, const std::string& image_id, const BoundingBox& b) {
	const ImageRecord& img = image_of(s, image_id);
	if (!(b.x_min < b.x_max && b.y_min < b.y_max)) {
		throw ValidationError("degenerate bbox");
	}
	if (b.x_min < 0.0 || b.y_min < 0.0 || b.x_max > img.width || b.y_max > img.height) {
		throw ValidationError("bbox outside image " + image_id);
	}
}

void check_class(const ReviewSession& s, int class_id) {
	if (class_id < 0 || static_cast<std::size_t>(class_id) >= s.catalog.size()) {
		throw ValidationError("unknown class id " + std::to_string(class_id));
	}
}

} // namespace

void apply_edit(ReviewSession& session, const EditEvent& e) {
	if (e.seq != session.last_seq + 1) {
		throw ConflictError("stale sequence number " + std::to_string(e.seq) + ", expected " +
		                        std::to_string(session.last_seq + 1),
		                    session.last_seq + 1);
	}
	auto target = std::find_if(session.hotspots.begin(), session.hotspots.end(),
	                           [&](const Hotspot& h) { return h.hotspot_id == e.target; });
	if (e.kind != EditKind::create && target == session.hotspots.end()) {
		throw NotFoundError("unknown hotspot " + e.target);
	}
	switch (e.kind) {
	case EditKind::move:
	case EditKind::resize:
		if (!e.bbox) {
			throw ValidationError(to_string(e.kind) + " needs a bbox");
		}
		check_box(session, target->image_id, *e.bbox);
		target->bbox = *e.bbox;
		break;
	case EditKind::create: {
		if (!e.bbox || e.image_id.empty()) {
			throw ValidationError("create needs an image_id and a bbox");
		}
		check_box(session, e.image_id, *e.bbox);
		if (e.class_id) {
			check_class(session, *e.class_id);
		}
		Hotspot h;
		h.hotspot_id = e.target.empty() ? e.image_id + "#new" + std::to_string(e.seq) : e.target;
		if (session.find(h.hotspot_id) != nullptr) {
			throw ValidationError("hotspot " + h.hotspot_id + " already exists");
		}
		h.image_id = e.image_id;
		h.bbox = *e.bbox;
		h.chosen_class = e.class_id;
		session.hotspots.push_back(std::move(h));
		break;
	}
	case EditKind::remove:
		session.hotspots.erase(target);
		break;
	case EditKind::choose_class:
		if (!e.class_id) {
			throw ValidationError("choose_class needs a class_id");
		}
		check_class(session, *e.class_id);
		target->chosen_class = *e.class_id;
		break;
	case EditKind::confirm: {
		std::optional<int> cls = e.class_id ? e.class_id : target->chosen_class;
		if (!cls && !target->suggestions.empty()) {
			cls = target->suggestions.front().class_id;
		}
		if (!cls) {
			throw ValidationError("hotspot " + target->hotspot_id + " has no class to confirm");
		}
		check_class(session, *cls);
		target->chosen_class = *cls;
		target->status = HotspotStatus::confirmed;
		break;
	}
	case EditKind::reject:
		target->status = HotspotStatus::rejected;
		break;
	}
	session.last_seq = e.seq;
}

Dataset export_annotations(const ReviewSession& session) {
	Dataset d;
	d.catalog = session.catalog;
	d.images = session.images;
	for (auto& img : d.images) {
		img.annotations.clear();
		for (const Hotspot* h : session.hotspots_of(img.image_id)) {
			if (h->status == HotspotStatus::confirmed && h->chosen_class) {
				img.annotations.push_back({h->hotspot_id, h->bbox, *h->chosen_class});
			}
		}
	}
	return d;
}

// Log ------------------------------------------------------------------------------------

namespace {

void write_all(int fd, const std::string& data) {
	std::size_t done = 0;
	while (done < data.size()) {
		const ssize_t n = ::write(fd, data.data() + done, data.size() - done);
		if (n < 0) {
			if (errno == EINTR) {
				continue;
			}
			throw IoError(std::string("log write failed: ") + std::strerror(errno));
		}
		done += static_cast<std::size_t>(n);
	}
}

int open_locked(const std::filesystem::path& path, int flags) {
	const int fd = ::open(path.c_str(), flags | O_CLOEXEC, 0644);
	if (fd < 0) {
		throw IoError("cannot open session log " + path.string() + ": " + std::strerror(errno));
	}
	if (::flock(fd, LOCK_EX | LOCK_NB) != 0) {
		::close(fd);
		throw IoError("session log " + path.string() + " is locked by another writer");
	}
	return fd;
}

std::string read_file(const std::filesystem::path& path) {
	std::ifstream in(path, std::ios::binary);
	if (!in) {
		throw IoError("cannot open " + path.string());
	}
	std::ostringstream buf;
	buf << in.rdbuf();
	return buf.str();
}

// Folds the complete lines of `content`; returns the byte length they cover.
std::size_t fold_log(const std::string& content, const std::string& where, ReviewSession& out) {
	std::size_t pos = 0;
	bool header = true;
	while (pos < content.size()) {
		const auto nl = content.find('\n', pos);
		if (nl == std::string::npos) {
			break; // torn tail
		}
		const std::string line = content.substr(pos, nl - pos);
		json j;
		try {
			j = json::parse(line);
		} catch (const json::exception& e) {
			throw ParseError(where + ": corrupt log line: " + e.what());
		}
		if (header) {
			out = session_from_json(j.at("session"));
			header = false;
		} else {
			apply_edit(out, event_from_json(j));
		}
		pos = nl + 1;
	}
	if (header) {
		throw ParseError(where + ": log has no session header");
	}
	return pos;
}

} // namespace

ReviewSession replay_log(const std::filesystem::path& path) {
	ReviewSession s;
	fold_log(read_file(path), path.string(), s);
	return s;
}

SessionLog SessionLog::create(const std::filesystem::path& path, const ReviewSession& initial) {
	const int fd = open_locked(path, O_WRONLY | O_CREAT | O_EXCL | O_APPEND);
	try {
		write_all(fd, json{{"session", session_to_json(initial)}}.dump() + "\n");
		if (::fsync(fd) != 0) {
			throw IoError(std::string("fsync failed: ") + std::strerror(errno));
		}
	} catch (...) {
		::close(fd);
		throw;
	}
	return SessionLog(path, fd, initial);
}

SessionLog SessionLog::open(const std::filesystem::path& path) {
	const int fd = open_locked(path, O_RDWR | O_APPEND);
	try {
		const std::string content = read_file(path);
		ReviewSession s;
		const std::size_t used = fold_log(content, path.string(), s);
		if (used < content.size()) {
			std::cerr << "warning: discarding torn final line of " << path.string() << '\n';
			if (::ftruncate(fd, static_cast<off_t>(used)) != 0) {
				throw IoError(std::string("cannot truncate torn log: ") + std::strerror(errno));
			}
		}
		return SessionLog(path, fd, std::move(s));
	} catch (...) {
		::close(fd);
		throw;
	}
}

SessionLog::SessionLog(SessionLog&& other) noexcept
    : path_(std::move(other.path_)), fd_(std::exchange(other.fd_, -1)), state_(std::move(other.state_)) {}

SessionLog& SessionLog::operator=(SessionLog&& other) noexcept {
	if (this != &other) {
		if (fd_ >= 0) {
			::close(fd_);
		}
		path_ = std::move(other.path_);
		fd_ = std::exchange(other.fd_, -1);
		state_ = std::move(other.state_);
	}
	return *this;
}

SessionLog::~SessionLog() {
	if (fd_ >= 0) {
		::close(fd_);
	}
}

void SessionLog::append(const EditEvent& event) {
	ReviewSession next = state_;
	apply_edit(next, event);
	struct stat st {};
	if (::fstat(fd_, &st) != 0) {
		throw IoError(std::string("fstat failed: ") + std::strerror(errno));
	}
	try {
		write_all(fd_, event_to_json(event).dump() + "\n");
		if (::fsync(fd_) != 0) {
			throw IoError(std::string("fsync failed: ") + std::strerror(errno));
		}
	} catch (...) {
		// Roll back a partial line so the log stays replayable.
		if (::ftruncate(fd_, st.st_size) != 0) {
			std::cerr << "warning: could not roll back " << path_.string() << '\n';
		}
		throw;
	}
	state_ = std::move(next);
}

} // namespace signline
