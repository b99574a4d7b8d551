#pragma once

#include <memory>
#include <span>
#include <vector>

#include "surf/event_data.hpp"
#include "surf/heads.hpp"

namespace surf {

// What a model says about the interval after a history: the compensator
// from the last event (dt measured from it) and the mark distribution.
struct IntervalState {
  std::unique_ptr<IntervalHazard> hazard;
  std::vector<double> mark_probs;
};

// Common interface for trained models, ground-truth processes and test stubs.
class ConditionalModel {
 public:
  virtual ~ConditionalModel() = default;
  virtual int num_types() const = 0;
  virtual IntervalState next(std::span<const MarkedEvent> history) const = 0;
  // States for the N + 1 intervals of seq (the last one is the survival gap).
  virtual std::vector<IntervalState> all_states(const EventSequence& seq) const;
};

// Memoryless stub with a constant rate and fixed mark distribution.
class ConstantRateModel final : public ConditionalModel {
 public:
  explicit ConstantRateModel(double rate, std::vector<double> mark_probs = {1.0});
  int num_types() const override { return static_cast<int>(probs_.size()); }
  IntervalState next(std::span<const MarkedEvent> history) const override;

 private:
  double rate_;
  std::vector<double> probs_;
};

}  // namespace surf
