#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace melodica {

inline constexpr double kEdaRateHz = 32.0;

// ---- recordings ------------------------------------------------------------

enum class SubSegmentKind { Learn, Play, Feedback };
const char *to_string(SubSegmentKind k) noexcept;

/// One labeled interval. Conversation rows have no sub-segment kind; Learn,
/// Play and Feedback rows subdivide a conversation.
struct Annotation {
  double start_s = 0;
  double end_s = 0;
  /// "S1", "S2" or "S3".
  std::string section;
  std::optional<SubSegmentKind> subsegment;
  /// Free-form tag, e.g. an emotion annotation.
  std::string label;
};

struct EdaRecording {
  /// Skin conductance in microsiemens.
  std::vector<double> samples;
  double sample_rate = kEdaRateHz;
  /// Time of the first sample on the annotation clock.
  double t0_s = 0;
  std::vector<Annotation> annotations;
  std::string session_kind;
  /// "TD" or "ASD"; empty when unknown.
  std::string group;

  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// CSV with a header row and columns t_s, microsiemens. Samples must be
/// evenly spaced at 32 Hz (within 1 ms).
EdaRecording read_eda_csv(const std::filesystem::path &path);
/// Sidecar CSV: start_s, end_s, section, subsegment, label. An empty or
/// "Conversation" subsegment marks a conversation row.
std::vector<Annotation> read_annotations_csv(const std::filesystem::path &path);
void write_eda_csv(const std::filesystem::path &path, const EdaRecording &rec);
void write_annotations_csv(const std::filesystem::path &path,
                           const std::vector<Annotation> &annotations);

struct SubSegment {
  SubSegmentKind kind = SubSegmentKind::Learn;
  std::size_t begin = 0;
  std::size_t end = 0;
};

struct Segment {
  std::string id;
  std::string section;
  std::string label;
  /// Sample range [begin, end) in the parent recording.
  std::size_t begin = 0;
  std::size_t end = 0;
  std::vector<double> samples;
  std::vector<SubSegment> subsegments;
};

/// One segment per conversation annotation, in time order, each with the
/// sub-segments that fall inside it. Throws MissingAnnotations when there are
/// no conversation rows, an interval leaves the recording, intervals of one
/// layer overlap, or a sub-segment lies outside every conversation.
std::vector<Segment> segment_conversations(const EdaRecording &rec,
                                           const std::string &id_prefix = "seg");

// ---- wavelet transform -----------------------------------------------------

struct Scalogram {
  /// scales x time, row-major.
  std::vector<std::complex<double>> values;
  std::vector<double> scales;
  std::vector<double> pseudo_frequencies_hz;
  std::size_t length = 0;

  std::complex<double> at(std::size_t scale, std::size_t t) const {
    return values[scale * length + t];
  }
};

/// Complex Morlet with center frequency fc and bandwidth fb:
/// psi(t) = (pi fb)^-1/2 exp(i 2 pi fc t) exp(-t^2 / fb).
std::complex<double> cmorlet(double t, double fc, double fb);

/// W(a, b) = a^-1/2 sum_n x[n] conj(psi((n - b) / a)), evaluated by FFT
/// with zero padding so the correlation never wraps. Scales are in samples;
/// pseudo-frequency = fc * fs / a. Throws SignalTooShort below 64 samples.
Scalogram cwt(const std::vector<double> &signal, double fc, double fb,
              const std::vector<double> &scales, double sample_rate = kEdaRateHz);

/// n scales whose pseudo-frequencies are log-spaced from f_high down to f_low.
std::vector<double> log_scales(double f_low_hz, double f_high_hz, std::size_t n, double fc,
                               double sample_rate = kEdaRateHz);

// ---- features --------------------------------------------------------------

struct FeatureConfig {
  double fc = 1.0;
  double fb = 1.0;
  double f_low_hz = 0.5;
  /// The upper band edge is capped just below Nyquist.
  double f_high_hz = 50.0;
  std::size_t scales = 24;
  std::size_t bands = 6;
  std::size_t time_cells = 4;
  double sample_rate = kEdaRateHz;

  double effective_high_hz() const;
  std::size_t length() const { return bands * time_cells * 3 + bands + 3; }
};

struct FeatureVector {
  std::vector<double> values;
  std::string segment_id;
  std::string label;
};

/// Layout: for each band (high to low frequency) and time cell, the mean,
/// std and max of |W|; then each band's mean |W| over the whole segment,
/// the mean of |W|^2 over the scalogram, the signal mean (tonic level) and
/// the std of the mean-removed signal (phasic activity). The CWT runs on the mean-removed signal. Throws
/// SignalTooShort.
std::vector<double> extract_features(const std::vector<double> &samples,
                                     const FeatureConfig &cfg = {});
FeatureVector extract_features(const Segment &seg, const FeatureConfig &cfg = {});

// ---- classifiers -----------------------------------------------------------

using Matrix = std::vector<std::vector<double>>;

enum class KernelKind { Linear, Poly, Rbf };
const char *to_string(KernelKind k) noexcept;
KernelKind kernel_from_string(const std::string &s);

struct Kernel {
  KernelKind kind = KernelKind::Rbf;
  /// <= 0 means 1 / feature count.
  double gamma = 0;
  double coef0 = 1;
  int degree = 3;

  double operator()(const std::vector<double> &a, const std::vector<double> &b) const;
};

struct SvmParams {
  Kernel kernel;
  double C = 1.0;
  double tolerance = 1e-3;
  std::size_t max_iterations = 10'000'000;
};

/// Two-class soft-margin machine: f(x) = sum coef_i K(sv_i, x) - rho, with
/// coef_i = alpha_i y_i. Positive values favour the first class.
struct BinarySvm {
  std::size_t positive = 0;
  std::size_t negative = 1;
  Matrix support_vectors;
  std::vector<double> coef;
  double rho = 0;
  /// Final KKT gap max(-yG | up) - min(-yG | low) and iteration count.
  double kkt_gap = 0;
  std::size_t iterations = 0;

  double decision(const Kernel &k, const std::vector<double> &x) const;
};

struct SmoResult {
  std::vector<double> alpha;
  double rho = 0;
  double kkt_gap = 0;
  std::size_t iterations = 0;
  /// Dual objective sum(alpha) - 1/2 alpha'Q alpha after every iteration,
  /// when requested.
  std::vector<double> dual_trace;
};

/// Solves the dual with SMO, picking the maximal violating pair each step,
/// until the KKT gap drops below params.tolerance. y holds +1/-1. Throws
/// DegenerateData when only one class is present.
SmoResult smo_solve(const Matrix &x, const std::vector<int> &y, const SvmParams &params,
                    bool trace = false);

/// Largest KKT violation of alpha for the problem (x, y): the gap between
/// the most violating up and low indices, and 0 when alpha is optimal.
double kkt_gap(const Matrix &x, const std::vector<int> &y, const std::vector<double> &alpha,
               const SvmParams &params);

/// Per-feature standardization fitted on training data; zero spread maps
/// to unit scale.
struct Normalizer {
  std::vector<double> mean;
  std::vector<double> scale;

  static Normalizer fit(const Matrix &x);
  std::vector<double> apply(const std::vector<double> &v) const;
  Matrix apply(const Matrix &x) const;
};

/// Class labels are ordered as given; the first is the positive class of
/// binary problems.
struct TrainedModel {
  enum class Kind { Svm, Knn };
  Kind kind = Kind::Svm;
  std::vector<std::string> labels;
  Normalizer norm;
  // SVM
  Kernel kernel;
  double C = 1.0;
  std::vector<BinarySvm> machines;
  // KNN
  int k = 1;
  Matrix train_x;
  std::vector<std::size_t> train_y;

  std::size_t feature_count() const { return norm.mean.size(); }
  /// Index into labels.
  std::size_t predict_index(const std::vector<double> &x) const;
  std::string predict(const std::vector<double> &x) const;
  /// Binary score, larger for the first class: the SVM decision value or
  /// the KNN vote margin. Throws std::logic_error for more than two classes.
  double score(const std::vector<double> &x) const;
};

/// One-vs-one machines over every label pair; prediction by majority vote
/// with ties going to the larger sum of decision values, then to the
/// earlier label. Features are standardized with training statistics.
TrainedModel svm_train(const Matrix &x, const std::vector<std::string> &y,
                       const std::vector<std::string> &labels, const SvmParams &params = {});

/// Throws EmptyTrainingSet, std::invalid_argument for K outside {1, 3, 5}.
TrainedModel knn_train(const Matrix &x, const std::vector<std::string> &y,
                       const std::vector<std::string> &labels, int k);

/// Majority label among the K nearest rows (stable order on distance); a tie
/// goes to the tied label met first in that order. Throws EmptyTrainingSet
/// and std::invalid_argument when K exceeds the training set.
std::size_t knn_classify(const Matrix &train, const std::vector<std::size_t> &labels,
                         const std::vector<double> &x, int k);

/// Text format, one token group per line, reals as hex floats:
///   melodica-model 1
///   kind svm|knn
///   labels N / one label per line
///   features F / mean ... / scale ...
///   svm: kernel KIND gamma coef0 degree / C c / machines M, then per
///        machine "machine pos neg rho n" and n lines "coef x..."
///   knn: k K / rows n, then n lines "label x..."
///   end
void save_model(std::ostream &out, const TrainedModel &m);
TrainedModel load_model(std::istream &in);

// ---- evaluation ------------------------------------------------------------

struct ClassifierSpec {
  TrainedModel::Kind kind = TrainedModel::Kind::Svm;
  SvmParams svm;
  int k = 1;

  std::string describe() const;
};

struct Dataset {
  Matrix x;
  std::vector<std::string> y;
  std::vector<std::string> ids;

  /// Rows whose label is in keep, relabelled in place.
  Dataset subset(const std::vector<std::string> &keep) const;
};

struct Metrics {
  std::vector<std::string> labels;
  double accuracy = 0;
  /// Binary problems only.
  std::optional<double> auc;
  std::optional<double> precision;
  std::optional<double> recall;
  /// confusion[true][predicted].
  std::vector<std::vector<std::size_t>> confusion;
};

/// Seeded stratified k-fold cross-validation over the given labels (the
/// first is the positive class). Fold membership depends on the seed and
/// the rows' contents, never on their order. Throws InsufficientClassMembers
/// when a class has fewer rows than folds.
Metrics evaluate(const ClassifierSpec &spec, const Dataset &data,
                 const std::vector<std::string> &labels, std::size_t folds = 5,
                 std::uint64_t seed = 0);

/// Area under the ROC curve of scores against positives, trapezoidal with
/// tied scores forming diagonal steps.
double roc_auc(const std::vector<double> &scores, const std::vector<bool> &positive);

// ---- synthetic data ----------------------------------------------------------

struct SynthParams {
  double tonic_level = 2.0;
  /// Microsiemens per second.
  double drift = 0.0005;
  double scr_rate_per_min = 4.0;
  double scr_amp = 0.4;
  std::uint64_t seed = 0;
  /// Gaussian sensor noise std.
  double noise = 0.005;
  /// Annotation schedule: back-to-back conversations in one section, each
  /// split into equal Learn, Play and Feedback thirds.
  std::string section = "S1";
  double conversation_s = 45.0;
};

inline constexpr double kScrTau1 = 2.0;
inline constexpr double kScrTau2 = 0.75;

/// Tonic level plus linear drift plus bi-exponential SCRs
/// amp (exp(-t/tau1) - exp(-t/tau2)) at Poisson onsets. Throws
/// std::invalid_argument on non-positive parameters.
EdaRecording synth_eda(const SynthParams &params, double duration_s);

/// Onset times drawn for the parameters, as used by synth_eda.
std::vector<double> scr_onsets(const SynthParams &params, double duration_s);

/// Features of every conversation segment of every recording.
Dataset build_dataset(const std::vector<EdaRecording> &recordings, const FeatureConfig &cfg = {});

/// Loads every *.csv recording in dir that has a matching *.annotations.csv
/// sidecar, sorted by file name.
std::vector<EdaRecording> load_recordings(const std::filesystem::path &dir);

} // namespace melodica
