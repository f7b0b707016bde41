#include "lumen/emulator.hpp"

#include "lumen/ffnn.hpp"
#include "lumen/gp.hpp"
#include "lumen/io.hpp"
#include "lumen/pce.hpp"
#include "lumen/sequence.hpp"

namespace lumen {

Vector Emulator::predict_one(const Vector& x) const {
    return predict(Matrix(x.transpose())).row(0).transpose();
}

Matrix Emulator::input_jacobian(const Vector&) const {
    throw Error("emulator kind '" + kind() + "' does not provide input gradients");
}

std::unique_ptr<Emulator> load_emulator(const std::string& path) {
    const ModelFile file = ModelFile::load(path);
    if (file.kind == "ffnn")
        return std::make_unique<FfnnEmulator>(FfnnEmulator::from_model_file(file));
    if (file.kind == "pce")
        return std::make_unique<PceEmulator>(PceEmulator::from_model_file(file));
    if (file.kind == "gp")
        return std::make_unique<GpEmulator>(GpEmulator::from_model_file(file));
    if (file.kind == "gru")
        return std::make_unique<SeqEmulator>(SeqEmulator::from_model_file(file));
    throw IoError(path + ": unknown model kind '" + file.kind + "'");
}

}  // namespace lumen
