#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "signline/backends.hpp"
#include "signline/dataset.hpp"
#include "signline/pipeline.hpp"

namespace signline {

enum class HotspotStatus { unreviewed, confirmed, rejected };

struct Hotspot {
	std::string hotspot_id;
	std::string image_id;
	BoundingBox bbox;
	std::vector<Suggestion> suggestions; // backend ranking order
	std::optional<int> chosen_class;
	HotspotStatus status{HotspotStatus::unreviewed};
};

/// Review state of one dataset + predictions pair. Only apply_edit mutates it.
struct ReviewSession {
	std::string session_id;
	std::string dataset_ref;
	std::string predictions_ref;
	std::vector<SignClass> catalog;
	std::vector<ImageRecord> images; // metadata only, annotations empty
	std::vector<Hotspot> hotspots;
	long long last_seq{0};

	const Hotspot* find(const std::string& hotspot_id) const;
	std::vector<const Hotspot*> hotspots_of(const std::string& image_id) const;
};

enum class EditKind { move, resize, create, remove, choose_class, confirm, reject };

struct EditEvent {
	long long seq{0};
	EditKind kind{EditKind::move};
	std::string target;
	/// move / resize / create
	std::optional<BoundingBox> bbox;
	/// choose_class (required), confirm and create (optional)
	std::optional<int> class_id;
	/// create only
	std::string image_id;
	std::string actor;
	std::string timestamp;
};

std::string to_string(EditKind kind);
EditKind edit_kind_from_string(const std::string& s);
std::string to_string(HotspotStatus status);

nlohmann::json event_to_json(const EditEvent& event);
/// Throws ParseError when the payload shape does not match the kind.
EditEvent event_from_json(const nlohmann::json& j);

nlohmann::json session_to_json(const ReviewSession& session);
ReviewSession session_from_json(const nlohmann::json& j);
nlohmann::json hotspot_to_json(const Hotspot& h);

/// Every predicted box becomes an unreviewed hotspot. Hotspot ids are the
/// predictions' box ids when present, otherwise "<image_id>#<index>".
/// Throws NotFoundError for predictions naming an image missing from
/// `dataset`.
ReviewSession create_session(const std::string& session_id, const Dataset& dataset, const Predictions& predictions,
                             std::size_t max_suggestions = 5, const std::string& dataset_ref = "",
                             const std::string& predictions_ref = "");

/// Requires event.seq == last_seq + 1 (ConflictError otherwise). Confirming a
/// hotspot without a chosen class adopts its top suggestion. Bad boxes,
/// unknown classes and malformed payloads raise ValidationError; unknown
/// targets raise NotFoundError. The session is untouched on failure.
void apply_edit(ReviewSession& session, const EditEvent& event);

/// Confirmed hotspots as a dataset in the session's catalog; every image is
/// kept, annotations in hotspot order with the hotspot id as annotation id.
Dataset export_annotations(const ReviewSession& session);

/// Append-only newline-delimited JSON log. The first line holds the initial
/// session; every further line is one EditEvent. The file stays exclusively
/// locked while the object lives.
class SessionLog {
public:
	/// Starts a new log; fails if the file exists.
	static SessionLog create(const std::filesystem::path& path, const ReviewSession& initial);
	/// Replays an existing log. A torn final line (no newline, from a crash
	/// mid-write) is discarded and truncated away.
	static SessionLog open(const std::filesystem::path& path);

	SessionLog(SessionLog&& other) noexcept;
	SessionLog& operator=(SessionLog&& other) noexcept;
	SessionLog(const SessionLog&) = delete;
	SessionLog& operator=(const SessionLog&) = delete;
	~SessionLog();

	const ReviewSession& state() const { return state_; }
	const std::filesystem::path& path() const { return path_; }

	/// Validates against the current state, appends and fsyncs the event,
	/// then commits it to the in-memory state.
	void append(const EditEvent& event);

private:
	SessionLog(std::filesystem::path path, int fd, ReviewSession state)
	    : path_(std::move(path)), fd_(fd), state_(std::move(state)) {}

	std::filesystem::path path_;
	int fd_{-1};
	ReviewSession state_;
};

/// Replays a log file without locking it: initial state folded with every
/// complete event line.
ReviewSession replay_log(const std::filesystem::path& path);

} // namespace signline
