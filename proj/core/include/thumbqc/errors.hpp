#pragma once

#include <stdexcept>
#include <string>

namespace thumbqc {

// Bad arguments or violated operation preconditions.
class InvalidInput : public std::invalid_argument {
public:
    explicit InvalidInput(const std::string& what) : std::invalid_argument(what) {}
};

// Unreadable, truncated or malformed files.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Weight container / bundle contents do not match the expected schema.
class SchemaError : public std::runtime_error {
public:
    explicit SchemaError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed run configuration (CLI maps this to exit code 2).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Metric cannot be computed on the given inputs (e.g. single-class AUROC).
class UndefinedMetric : public std::runtime_error {
public:
    explicit UndefinedMetric(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace thumbqc
