#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>

#include "json.hpp"
#include "signline/backends.hpp"
#include "signline/dataset.hpp"
#include "signline/review.hpp"

namespace httplib {
class Server;
}

namespace signline {

inline constexpr const char* kReviewTokenEnv = "SIGNLINE_REVIEW_TOKEN";

/// Transport-independent core of the review API. Each session owns one log
/// file in `session_dir`; existing logs are replayed on construction.
class ReviewService {
public:
	ReviewService(Dataset dataset, Predictions predictions, std::filesystem::path image_root,
	              std::filesystem::path session_dir, std::string dataset_ref = "", std::string predictions_ref = "",
	              std::size_t max_suggestions = 5);

	nlohmann::json tablets() const;
	nlohmann::json tablet_images(const std::string& tablet_id) const;
	std::filesystem::path image_file(const std::string& image_id) const;
	/// Quoted strong ETag (SHA-256 of the file), cached per image.
	std::string image_etag(const std::string& image_id);
	/// Predicted hotspots, or the session's current ones when a session is given.
	nlohmann::json hotspots(const std::string& image_id, const std::optional<std::string>& session_id) const;

	nlohmann::json create_session(const std::optional<std::string>& session_id);
	nlohmann::json session_state(const std::string& session_id) const;
	/// Applies one EditEvent document; returns {"seq": ..., "hotspot": ...}.
	nlohmann::json post_event(const std::string& session_id, const nlohmann::json& event);
	/// Shorthand edit of one hotspot: body carries "seq" plus one of "bbox"
	/// (resize, or move with "kind":"move"), "class_id" or "status".
	nlohmann::json patch_hotspot(const std::string& session_id, const std::string& hotspot_id,
	                             const nlohmann::json& body);
	nlohmann::json export_session(const std::string& session_id) const;

	const Dataset& dataset() const { return dataset_; }

private:
	struct Entry {
		SessionLog log;
		mutable std::shared_mutex mutex;
		explicit Entry(SessionLog l) : log(std::move(l)) {}
	};

	Entry& entry(const std::string& session_id) const;
	nlohmann::json apply(Entry& e, EditEvent event);

	Dataset dataset_;
	Predictions predictions_;
	std::filesystem::path image_root_;
	std::filesystem::path session_dir_;
	std::string dataset_ref_;
	std::string predictions_ref_;
	std::size_t max_suggestions_;
	ReviewSession template_;

	mutable std::mutex sessions_mutex_;
	std::map<std::string, std::unique_ptr<Entry>> sessions_;
	std::mutex etag_mutex_;
	std::map<std::string, std::string> etags_;
};

struct ReviewServerOptions {
	std::string host{"127.0.0.1"};
	int port{8080}; // 0 picks a free port
	/// Required bearer token; empty disables auth.
	std::string token;
	/// Served at "/" when set (the browser client bundle).
	std::filesystem::path static_dir;
};

/// HTTP front end. Errors map to status codes: ParseError/ValidationError
/// 400, NotFoundError 404, ConflictError 409 (body carries expected_seq),
/// missing/wrong token 401.
class ReviewServer {
public:
	ReviewServer(ReviewService& service, ReviewServerOptions options);
	~ReviewServer();
	ReviewServer(const ReviewServer&) = delete;
	ReviewServer& operator=(const ReviewServer&) = delete;

	/// Binds the socket; returns the bound port. Throws IoError on failure.
	int bind();
	/// Serves until stop(); call bind() first.
	void listen();
	void stop();

private:
	ReviewService& service_;
	ReviewServerOptions options_;
	std::unique_ptr<httplib::Server> server_;
};

} // namespace signline
