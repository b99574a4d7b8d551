#include "surf/conditional.hpp"

#include "surf/errors.hpp"

namespace surf {

std::vector<IntervalState> ConditionalModel::all_states(const EventSequence& seq) const {
  std::vector<IntervalState> states;
  states.reserve(seq.size() + 1);
  const std::span<const MarkedEvent> ev(seq.events);
  for (std::size_t i = 0; i <= seq.size(); ++i) states.push_back(next(ev.first(i)));
  return states;
}

ConstantRateModel::ConstantRateModel(double rate, std::vector<double> mark_probs)
    : rate_(rate), probs_(std::move(mark_probs)) {
  if (probs_.empty()) throw ValidationError("sampler", "mark distribution must be non-empty");
}

IntervalState ConstantRateModel::next(std::span<const MarkedEvent>) const {
  return {std::make_unique<ConstantHazard>(rate_), probs_};
}

}  // namespace surf
