#include "mate/memory/parallel.hpp"

#include "mate/errors.hpp"

#include <exception>
#include <thread>

namespace mate::memory {

namespace {

// Runs fn(0..n-1) on n threads and rethrows the first failure.
template <typename Fn>
void run_workers(std::size_t n, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  {
    std::vector<std::jthread> threads;
    threads.reserve(n);
    for (std::size_t w = 0; w < n; ++w) {
      threads.emplace_back([&, w] {
        try {
          fn(w);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void add_into(nn::Gradients& total, const nn::Gradients& part) {
  for (std::size_t i = 0; i < total.size(); ++i) total[i] += part[i];
}

// Splits [0, count) into at most `workers` contiguous, non-empty, near-equal ranges.
std::vector<std::size_t> split_points(std::size_t count, std::size_t workers) {
  const std::size_t parts = std::max<std::size_t>(1, std::min(workers, count));
  std::vector<std::size_t> cuts{0};
  for (std::size_t p = 1; p <= parts; ++p) cuts.push_back(count * p / parts);
  return cuts;
}

}  // namespace

LossAndGradients sequential_gradients(MemoryEncoder& encoder, const Matrix& xs, const Segments& seg,
                                      const ReadoutLoss& loss) {
  nn::ParamList params = encoder.parameters();
  nn::Tape tape;
  const auto l = loss(tape, encoder.encode_sequence(tape, xs, seg));
  tape.backward(l);
  return {tape.value(l)(0, 0), tape.gradients(params)};
}

LossAndGradients position_parallel_gradients(MemoryEncoder& encoder, const Matrix& xs, const Segments& seg,
                                             std::size_t workers, const ReadoutLoss& loss) {
  if (encoder.config().arch != Arch::mate) throw UsageError("position-parallel encoding needs the mate architecture");
  if (workers == 0) throw UsageError("workers must be positive");
  nn::ParamList params = encoder.parameters();
  const auto cuts = split_points(static_cast<std::size_t>(xs.rows()), workers);
  const std::size_t parts = cuts.size() - 1;

  std::vector<nn::Tape> tapes(parts);
  std::vector<nn::Tape::Var> outs(parts);
  nn::Parameter embeddings("embeddings", Matrix(xs.rows(), static_cast<Eigen::Index>(encoder.config().memory_dim)));
  run_workers(parts, [&](std::size_t w) {
    const auto begin = static_cast<Eigen::Index>(cuts[w]);
    const auto rows = static_cast<Eigen::Index>(cuts[w + 1] - cuts[w]);
    outs[w] = encoder.transition_embeddings(tapes[w], tapes[w].input(xs.middleRows(begin, rows)));
    embeddings.value.middleRows(begin, rows) = tapes[w].value(outs[w]);
  });

  nn::Tape main;
  const auto l = loss(main, encoder.readout_from_embeddings(main, main.param(embeddings), seg));
  main.backward(l);
  LossAndGradients out{main.value(l)(0, 0), main.gradients(params)};
  nn::Parameter* const emb_list[] = {&embeddings};
  const Matrix upstream = main.gradients(emb_list)[0];

  std::vector<nn::Gradients> partial(parts);
  run_workers(parts, [&](std::size_t w) {
    const auto begin = static_cast<Eigen::Index>(cuts[w]);
    const auto rows = static_cast<Eigen::Index>(cuts[w + 1] - cuts[w]);
    tapes[w].backward(outs[w], upstream.middleRows(begin, rows));
    partial[w] = tapes[w].gradients(params);
  });
  for (const auto& p : partial) add_into(out.grads, p);
  return out;
}

LossAndGradients episode_parallel_gradients(MemoryEncoder& encoder, const Matrix& xs, const Segments& seg,
                                            std::size_t workers, const ReadoutLoss& loss) {
  if (workers == 0) throw UsageError("workers must be positive");
  nn::ParamList params = encoder.parameters();
  const auto cuts = split_points(seg.count(), workers);
  const std::size_t parts = cuts.size() - 1;
  std::vector<LossAndGradients> partial(parts);
  run_workers(parts, [&](std::size_t w) {
    std::vector<std::size_t> lengths;
    for (std::size_t e = cuts[w]; e < cuts[w + 1]; ++e) lengths.push_back(seg.length(e));
    const auto begin = static_cast<Eigen::Index>(seg.begin(cuts[w]));
    const auto rows = static_cast<Eigen::Index>(seg.begin(cuts[w + 1] - 1) + seg.length(cuts[w + 1] - 1)) - begin;
    nn::Tape tape;
    const auto l = loss(tape, encoder.encode_sequence(tape, Matrix(xs.middleRows(begin, rows)),
                                                      Segments::from_lengths(lengths)));
    tape.backward(l);
    partial[w] = {tape.value(l)(0, 0), tape.gradients(params)};
  });
  LossAndGradients out = std::move(partial[0]);
  for (std::size_t w = 1; w < parts; ++w) {
    out.loss += partial[w].loss;
    add_into(out.grads, partial[w].grads);
  }
  return out;
}

}  // namespace mate::memory
