#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fedzmg {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class LayoutError : public Error {
public:
    using Error::Error;
};

class LabelError : public Error {
public:
    using Error::Error;
};

class ConditioningError : public Error {
public:
    ConditioningError(const std::string& what, double smallest_eigenvalue)
        : Error(what), smallest_eigenvalue_(smallest_eigenvalue) {}

    double smallest_eigenvalue() const noexcept { return smallest_eigenvalue_; }

private:
    double smallest_eigenvalue_;
};

class RecipeError : public Error {
public:
    using Error::Error;
};

// Config errors carry the offending field path, e.g. "experiment.cohort".
class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& message)
        : Error(field.empty() ? message : field + ": " + message), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

class DegenerateVarianceError : public Error {
public:
    using Error::Error;
};

class SeriesError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace fedzmg
