#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace ordermerge {

/// Base for every error the library raises. `code()` is a stable,
/// machine-readable identifier used by the CLI exit mapping and the HTTP
/// error bodies.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

/// Missing or mistyped field. `path()` is a JSON pointer to the offending node.
class SchemaError : public Error {
public:
    SchemaError(std::string path, const std::string& message)
        : Error("schema_error", path + ": " + message), path_(std::move(path)) {}

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

class DuplicateIdError : public Error {
public:
    explicit DuplicateIdError(const std::string& id)
        : Error("duplicate_id", "duplicate id '" + id + "'"), id_(id) {}

    const std::string& id() const noexcept { return id_; }

private:
    std::string id_;
};

class ValueError : public Error {
public:
    explicit ValueError(const std::string& message) : Error("value_error", message) {}
};

class EmptyMeshError : public Error {
public:
    EmptyMeshError() : Error("empty_mesh", "mesh has no triangles") {}
};

class DegenerateMeshError : public Error {
public:
    explicit DegenerateMeshError(const std::string& message) : Error("degenerate_mesh", message) {}
};

class NonFiniteError : public Error {
public:
    explicit NonFiniteError(const std::string& message) : Error("non_finite", message) {}
};

class MismatchedLayoutError : public Error {
public:
    explicit MismatchedLayoutError(const std::string& message)
        : Error("mismatched_layout", message) {}
};

class ParseError : public Error {
public:
    explicit ParseError(const std::string& message) : Error("parse_error", message) {}
};

class CountMismatchError : public Error {
public:
    CountMismatchError(std::size_t expected, std::size_t got)
        : Error("count_mismatch", "expected " + std::to_string(expected) + " positions, got " +
                                      std::to_string(got)) {}
};

class RejectedCaseError : public Error {
public:
    explicit RejectedCaseError(const std::string& message) : Error("rejected_case", message) {}
};

class StorageError : public Error {
public:
    explicit StorageError(const std::string& message) : Error("storage_error", message) {}
};

class PlannerTransportError : public Error {
public:
    explicit PlannerTransportError(const std::string& message)
        : Error("planner_transport", message) {}
};

class UnknownRunError : public Error {
public:
    explicit UnknownRunError(const std::string& run_id)
        : Error("unknown_run", "no run with id '" + run_id + "'") {}
};

class RunNotActiveError : public Error {
public:
    explicit RunNotActiveError(const std::string& run_id)
        : Error("run_not_active", "run '" + run_id + "' is not running") {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& message) : Error("config_error", message) {}
};

} // namespace ordermerge
