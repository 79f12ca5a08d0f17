#pragma once

#include <string>

#include "rotocal/matrix.hpp"

namespace rotocal {

enum class BatchSource { synthetic, file };
enum class OriginDtype { real32, real64 };

/// T×C matrix of activation tokens (one token per row) plus provenance.
struct ActivationBatch {
    Matrix tokens;
    BatchSource source = BatchSource::synthetic;
    std::string layer_label;
    OriginDtype dtype_of_origin = OriginDtype::real64;

    std::size_t token_count() const { return tokens.rows(); }
    std::size_t channels() const { return tokens.cols(); }

    void validate() const {
        require(tokens.rows() >= 1 && tokens.cols() >= 1,
                "ActivationBatch: needs at least one token and one channel");
        require(all_finite(tokens), "ActivationBatch: non-finite entries");
    }
};

}  // namespace rotocal
