#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <variant>
#include <vector>

#include "melodica/instrument.hpp"

namespace melodica {

/// Edit distance with unit insertion, deletion and substitution costs.
template <typename T> std::size_t levenshtein(std::span<const T> a, std::span<const T> b) {
  if (a.size() < b.size())
    std::swap(a, b);
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j)
    row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      const std::size_t sub = diag + (a[i - 1] == b[j - 1] ? 0 : 1);
      row[j] = std::min({up + 1, row[j - 1] + 1, sub});
      diag = up;
    }
  }
  return row[b.size()];
}

inline std::size_t levenshtein(const std::vector<NoteId> &a, const std::vector<NoteId> &b) {
  return levenshtein<NoteId>(std::span<const NoteId>(a), std::span<const NoteId>(b));
}

/// (len(target) - lev) / len(target), clamped at 0. Throws EmptyTarget.
double likelihood(const std::vector<NoteId> &target, const std::vector<NoteId> &detected);

enum class Verdict { Pass, Fail };

const char *to_string(Verdict v) noexcept;

/// Pass threshold for multi-note targets.
inline constexpr double kPassLikelihood = 2.0 / 3.0;

/// Single-note targets pass only on an exact match; longer targets pass when
/// likelihood >= 2/3. Throws EmptyTarget.
Verdict judge(const std::vector<NoteId> &target, const std::vector<NoteId> &detected);

struct TrialRecord {
  std::vector<NoteId> target;
  std::vector<NoteId> detected;
  double likelihood = 0;
  Verdict verdict = Verdict::Fail;
  double timestamp_s = 0;

  static TrialRecord score(std::vector<NoteId> target, std::vector<NoteId> detected,
                           double timestamp_s);
};

class AccuracyTracker {
public:
  explicit AccuracyTracker(double threshold = 0.6);

  void record(Verdict v) noexcept;
  void reset() noexcept { correct_ = total_ = 0; }

  std::size_t correct() const noexcept { return correct_; }
  std::size_t total() const noexcept { return total_; }
  double threshold() const noexcept { return threshold_; }
  double accuracy() const noexcept;

private:
  std::size_t correct_ = 0;
  std::size_t total_ = 0;
  double threshold_;
};

struct Continue {
  friend bool operator==(const Continue &, const Continue &) = default;
};
struct ExtraTrials {
  std::size_t count;
  friend bool operator==(const ExtraTrials &, const ExtraTrials &) = default;
};
using PracticeDecision = std::variant<Continue, ExtraTrials>;

/// Below-threshold accuracy schedules the smallest k >= 1 extra trials that
/// would restore the threshold if all succeeded. Requires total > 0.
PracticeDecision practice_policy(const AccuracyTracker &tracker);

} // namespace melodica
