#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace lumen {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using Index = Eigen::Index;

/// Base class for all errors raised by the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed input file (netlist, config, model file). Carries a location
/// when one is known.
struct ParseError : Error {
    ParseError(const std::string& msg, int line = 0, int col = 0)
        : Error(line > 0 ? "line " + std::to_string(line) + ":" + std::to_string(col) + ": " + msg
                         : msg),
          line(line),
          col(col) {}
    int line = 0;
    int col = 0;
};

/// Numerical failure inside the DAE solver or an optimizer.
struct SolverError : Error {
    using Error::Error;
};

/// Filesystem problem (missing file, unwritable directory).
struct IoError : Error {
    using Error::Error;
};

/// An artifact references an upstream file whose content hash changed.
struct StaleArtifactError : Error {
    using Error::Error;
};

}  // namespace lumen
