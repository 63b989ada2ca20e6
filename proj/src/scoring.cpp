#include "melodica/scoring.hpp"

#include <cmath>
#include <stdexcept>

#include "melodica/errors.hpp"

namespace melodica {

double likelihood(const std::vector<NoteId> &target, const std::vector<NoteId> &detected) {
  if (target.empty())
    throw EmptyTarget("likelihood needs a nonempty target");
  const double len = static_cast<double>(target.size());
  const double lev = static_cast<double>(levenshtein(target, detected));
  return std::max(0.0, (len - lev) / len);
}

const char *to_string(Verdict v) noexcept { return v == Verdict::Pass ? "pass" : "fail"; }

Verdict judge(const std::vector<NoteId> &target, const std::vector<NoteId> &detected) {
  if (target.empty())
    throw EmptyTarget("judge needs a nonempty target");
  if (target.size() == 1)
    return detected == target ? Verdict::Pass : Verdict::Fail;
  return likelihood(target, detected) >= kPassLikelihood - 1e-9 ? Verdict::Pass : Verdict::Fail;
}

TrialRecord TrialRecord::score(std::vector<NoteId> target, std::vector<NoteId> detected,
                               double timestamp_s) {
  TrialRecord r;
  r.likelihood = melodica::likelihood(target, detected);
  r.verdict = judge(target, detected);
  r.target = std::move(target);
  r.detected = std::move(detected);
  r.timestamp_s = timestamp_s;
  return r;
}

AccuracyTracker::AccuracyTracker(double threshold) : threshold_(threshold) {
  if (!(threshold > 0 && threshold < 1))
    throw std::invalid_argument("accuracy threshold must lie in (0, 1)");
}

void AccuracyTracker::record(Verdict v) noexcept {
  ++total_;
  if (v == Verdict::Pass)
    ++correct_;
}

double AccuracyTracker::accuracy() const noexcept {
  return total_ == 0 ? 0.0 : static_cast<double>(correct_) / static_cast<double>(total_);
}

PracticeDecision practice_policy(const AccuracyTracker &tracker) {
  if (tracker.total() == 0)
    throw std::invalid_argument("practice policy needs at least one trial");
  const double c = static_cast<double>(tracker.correct());
  const double n = static_cast<double>(tracker.total());
  const double th = tracker.threshold();
  if (c / n >= th - 1e-12)
    return Continue{};
  const double k = std::ceil((th * n - c) / (1.0 - th) - 1e-9);
  return ExtraTrials{static_cast<std::size_t>(std::max(1.0, k))};
}

} // namespace melodica
