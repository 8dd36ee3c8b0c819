#pragma once

#include <cstddef>

#include "otflow/tensor.hpp"

namespace otflow {

// The two embedding spaces tokens can live in: the generator's latent space
// and the semantic (caption-model) space.
enum class Space { generator, semantic };

// N tokens x D dims, tagged with the space the rows live in.
struct EmbeddingBatch {
    Tensor tokens;
    Space space = Space::generator;

    std::size_t n_tokens() const { return tokens.rows(); }
    std::size_t dim() const { return tokens.cols(); }
};

enum class Reduction { sum, mean };

}  // namespace otflow
