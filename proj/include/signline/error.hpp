#pragma once

#include <stdexcept>
#include <string>

namespace signline {

// Base for every error raised by the library. Subclasses let callers (CLI,
// HTTP layer) map failures onto exit codes and status codes.
class Error : public std::runtime_error {
public:
	using std::runtime_error::runtime_error;
};

class ParseError : public Error {
public:
	using Error::Error;
};

class ValidationError : public Error {
public:
	using Error::Error;
};

class IoError : public Error {
public:
	using Error::Error;
};

class NotFoundError : public Error {
public:
	using Error::Error;
};

// Raised by backends; the message is prefixed with the pipeline stage when
// propagated through the orchestrator.
class BackendError : public Error {
public:
	using Error::Error;
};

// Optimistic-locking failure on a review session.
class ConflictError : public Error {
public:
	ConflictError(const std::string& what, long long expected_seq)
	    : Error(what), expected_seq_(expected_seq) {}

	long long expected_seq() const noexcept { return expected_seq_; }

private:
	long long expected_seq_;
};

} // namespace signline
