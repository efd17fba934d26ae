#pragma once

#include "mate/memory/encoder.hpp"

#include <functional>

namespace mate::memory {

// Builds a scalar loss from readouts on the caller's tape.
using ReadoutLoss = std::function<nn::Tape::Var(nn::Tape&, nn::Tape::Var readouts)>;

struct LossAndGradients {
  double loss = 0.0;
  nn::Gradients grads;  // aligned with encoder.parameters()
};

// Single tape, single thread; the reference the parallel paths must match.
LossAndGradients sequential_gradients(MemoryEncoder& encoder, const Matrix& xs, const Segments& seg,
                                      const ReadoutLoss& loss);

// MATE only. Rows are split into `workers` contiguous ranges whose transition embeddings
// are built and back-propagated on separate threads; the prefix sums, projection and
// loss run on one tape in between.
LossAndGradients position_parallel_gradients(MemoryEncoder& encoder, const Matrix& xs, const Segments& seg,
                                             std::size_t workers, const ReadoutLoss& loss);

// Any architecture. Whole episodes are split across workers, each with its own tape.
// `loss` must be additive over episodes (e.g. a sum scaled by a fixed constant).
LossAndGradients episode_parallel_gradients(MemoryEncoder& encoder, const Matrix& xs, const Segments& seg,
                                            std::size_t workers, const ReadoutLoss& loss);

}  // namespace mate::memory
