#pragma once

#include <stdexcept>
#include <string>

namespace tokdet {

// Base class for all library errors. Everything thrown on a caller-visible
// failure path derives from this, so `catch (const tokdet::Error&)` at the
// CLI boundary is exhaustive.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Malformed arguments: negative extent, vocab too small, bad ranges.
class InvalidInputError : public Error {
public:
    explicit InvalidInputError(const std::string& what) : Error(what) {}
};

// A token id that does not fall inside the coordinate block.
class NotACoordinateError : public Error {
public:
    explicit NotACoordinateError(const std::string& what) : Error(what) {}
};

// A mask or polygon with no interior where one is required.
class EmptyMaskError : public Error {
public:
    explicit EmptyMaskError(const std::string& what) : Error(what) {}
};

// A coordinate group with too few values for its payload kind.
class GroupTooSmallError : public Error {
public:
    explicit GroupTooSmallError(const std::string& what) : Error(what) {}
};

// Recall requested with zero ground-truth objects.
class UndefinedRecallError : public Error {
public:
    explicit UndefinedRecallError(const std::string& what) : Error(what) {}
};

// Object-keypoint similarity requested with no visible keypoints or a
// degenerate scale box.
class UndefinedOksError : public Error {
public:
    explicit UndefinedOksError(const std::string& what) : Error(what) {}
};

// A structurally invalid record handed to the serializer.
class InvalidRecordError : public Error {
public:
    explicit InvalidRecordError(const std::string& what) : Error(what) {}
};

// File-level failures: unreadable path, invalid JSON, schema violations.
class LoadError : public Error {
public:
    explicit LoadError(const std::string& what) : Error(what) {}
};

} // namespace tokdet
