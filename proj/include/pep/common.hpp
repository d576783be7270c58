#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace pep {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what, std::vector<double> attempted = {})
        : std::runtime_error(what), attempted_jitters(std::move(attempted)) {}
    std::vector<double> attempted_jitters;
};

class CavityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SiteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class StateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DegeneracyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IngestionError : public std::runtime_error {
public:
    IngestionError(const std::string& what, std::size_t line)
        : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line(line) {}
    std::size_t line;
};

class MetricError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace pep
