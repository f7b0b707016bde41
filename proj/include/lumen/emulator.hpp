#pragma once

#include <memory>
#include <string>
#include <vector>

#include "lumen/sampling.hpp"
#include "lumen/types.hpp"

namespace lumen {

/// Common contract for every trained metamodel. Emulators take and return
/// physical units (the scaler is part of the model); they are immutable
/// after training, so concurrent reads are safe.
class Emulator {
  public:
    virtual ~Emulator() = default;

    virtual std::string kind() const = 0;
    int input_dim() const { return static_cast<int>(input_names_.size()); }
    int output_dim() const { return static_cast<int>(output_names_.size()); }
    const std::vector<std::string>& input_names() const { return input_names_; }
    const std::vector<std::string>& output_names() const { return output_names_; }

    /// One sample per row: n x d in, n x m out, physical units both sides.
    virtual Matrix predict(const Matrix& x) const = 0;
    Vector predict_one(const Vector& x) const;

    virtual bool has_input_gradient() const { return false; }
    /// Jacobian d(output)/d(input), m x d, physical units.
    virtual Matrix input_jacobian(const Vector& x) const;

    virtual void save(const std::string& path) const = 0;

  protected:
    std::vector<std::string> input_names_;
    std::vector<std::string> output_names_;
};

/// Loads any saved emulator, dispatching on the "lumen-model <kind>" header.
std::unique_ptr<Emulator> load_emulator(const std::string& path);

}  // namespace lumen
