#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "melodica/affect.hpp"
#include "melodica/errors.hpp"
#include "melodica/rng.hpp"

using namespace melodica;

namespace {

// The complex Morlet written out again, independent of the library.
std::complex<double> psi(double t, double fc, double fb) {
  return std::pow(M_PI * fb, -0.5) * std::exp(std::complex<double>(0, 2 * M_PI * fc * t)) *
         std::exp(-t * t / fb);
}

std::complex<double> direct_cwt(const std::vector<double> &x, double a, std::size_t b, double fc,
                                double fb) {
  std::complex<double> acc = 0;
  for (std::size_t n = 0; n < x.size(); ++n)
    acc += x[n] * std::conj(psi((double(n) - double(b)) / a, fc, fb));
  return acc / std::sqrt(a);
}

double rbf(const std::vector<double> &a, const std::vector<double> &b, double gamma) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    d += (a[i] - b[i]) * (a[i] - b[i]);
  return std::exp(-gamma * d);
}

// Mann-Whitney form of the AUC: the share of positive-negative pairs ranked
// correctly, ties counting half.
double pair_auc(const std::vector<double> &s, const std::vector<bool> &pos) {
  double good = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (pos[i] && !pos[j]) {
        pairs += 1;
        good += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
  return good / pairs;
}

Dataset blobs(std::size_t per_class, double sep, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const bool a = i % 2 == 0;
    d.x.push_back({rng.normal() + (a ? sep : -sep), rng.normal(), rng.normal()});
    d.y.push_back(a ? "A" : "B");
    d.ids.push_back("r" + std::to_string(i));
  }
  return d;
}

EdaRecording three_conversations() {
  SynthParams p;
  p.seed = 5;
  p.scr_rate_per_min = 6;
  return synth_eda(p, 3 * 45.0);
}

} // namespace

TEST_SUITE("affect") {
  TEST_CASE("cwt matches the direct sum") {
    Rng rng(1);
    std::vector<double> x(100);
    for (double &v : x)
      v = rng.normal();
    const std::vector<double> scales{1.5, 4.0, 11.0, 30.0};
    const Scalogram s = cwt(x, 1.0, 1.0, scales);
    for (std::size_t a = 0; a < scales.size(); ++a)
      for (std::size_t b : {0u, 13u, 50u, 99u})
        CHECK(std::abs(s.at(a, b) - direct_cwt(x, scales[a], b, 1.0, 1.0)) < 1e-9);
    CHECK(s.pseudo_frequencies_hz[1] == doctest::Approx(32.0 / 4.0));
  }

  TEST_CASE("impulse response traces the wavelet envelope") {
    std::vector<double> x(256, 0.0);
    x[128] = 1.0;
    const std::vector<double> scales{2.0, 6.0, 16.0};
    const Scalogram s = cwt(x, 1.0, 1.5, scales);
    for (std::size_t a = 0; a < scales.size(); ++a)
      for (std::size_t b = 100; b < 156; b += 3) {
        const double u = (128.0 - double(b)) / scales[a];
        const double env = std::pow(M_PI * 1.5, -0.5) * std::exp(-u * u / 1.5) / std::sqrt(scales[a]);
        CHECK(std::abs(s.at(a, b)) == doctest::Approx(env).epsilon(1e-9));
      }
  }

  TEST_CASE("sinusoid ridges sit within one scale bin") {
    FeatureConfig cfg;
    const auto scales = log_scales(cfg.f_low_hz, cfg.effective_high_hz(), cfg.scales, 1.0);
    CHECK(cfg.effective_high_hz() == doctest::Approx(15.9));
    for (double f0 : {1.0, 2.0, 4.0, 8.0}) {
      std::vector<double> x(1440);
      for (std::size_t n = 0; n < x.size(); ++n)
        x[n] = std::sin(2 * M_PI * f0 * double(n) / 32.0);
      const Scalogram s = cwt(x, 1.0, 1.0, scales);
      std::size_t best = 0;
      double best_v = -1;
      for (std::size_t a = 0; a < scales.size(); ++a) {
        double m = 0;
        for (std::size_t t = 0; t < x.size(); ++t)
          m += std::abs(s.at(a, t));
        if (m > best_v) {
          best_v = m;
          best = a;
        }
      }
      const double ratio = s.pseudo_frequencies_hz[0] / s.pseudo_frequencies_hz[1];
      CHECK(std::abs(std::log(s.pseudo_frequencies_hz[best] / f0)) <= std::log(ratio));
    }
  }

  TEST_CASE("zero and short signals") {
    const Scalogram z = cwt(std::vector<double>(64, 0.0), 1, 1, {2.0, 5.0});
    for (auto v : z.values)
      CHECK(v == std::complex<double>(0, 0));
    CHECK_THROWS_AS(cwt(std::vector<double>(63, 0.0), 1, 1, {2.0}), SignalTooShort);
  }

  TEST_CASE("segmentation") {
    const EdaRecording rec = three_conversations();
    const auto segs = segment_conversations(rec);
    REQUIRE(segs.size() == 3);
    std::size_t subs = 0;
    for (const auto &s : segs) {
      CHECK(s.samples.size() == 1440);
      subs += s.subsegments.size();
    }
    CHECK(subs == 9);

    EdaRecording bad = rec;
    bad.annotations.push_back({130.0, 140.0, "S1", SubSegmentKind::Play, ""});
    CHECK_THROWS_AS(segment_conversations(bad), MissingAnnotations);
    EdaRecording none = rec;
    none.annotations.clear();
    CHECK_THROWS_AS(segment_conversations(none), MissingAnnotations);
  }

  TEST_CASE("csv round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "melodica_unit_eda";
    std::filesystem::create_directories(dir);
    const EdaRecording rec = three_conversations();
    write_eda_csv(dir / "r.csv", rec);
    write_annotations_csv(dir / "r.annotations.csv", rec.annotations);
    const EdaRecording back = read_eda_csv(dir / "r.csv");
    REQUIRE(back.samples.size() == rec.samples.size());
    for (std::size_t i = 0; i < rec.samples.size(); ++i)
      CHECK(back.samples[i] == rec.samples[i]);
    const auto ann = read_annotations_csv(dir / "r.annotations.csv");
    REQUIRE(ann.size() == rec.annotations.size());
    CHECK(ann[1].subsegment == rec.annotations[1].subsegment);
    const auto loaded = load_recordings(dir);
    REQUIRE(loaded.size() == 1);
    CHECK(loaded[0].annotations.size() == rec.annotations.size());
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("features") {
    FeatureConfig cfg;
    const auto zero = extract_features(std::vector<double>(1440, 0.0), cfg);
    REQUIRE(zero.size() == cfg.length());
    for (double v : zero)
      CHECK(v == 0.0);

    const auto segs = segment_conversations(three_conversations());
    std::vector<double> doubled = segs[0].samples;
    for (double &v : doubled)
      v *= 2;
    const auto f1 = extract_features(segs[0].samples, cfg);
    const auto f2 = extract_features(doubled, cfg);
    const std::size_t mags = cfg.bands * cfg.time_cells * 3 + cfg.bands;
    for (std::size_t i = 0; i < mags; ++i)
      CHECK(f2[i] == doctest::Approx(2 * f1[i]).epsilon(1e-9));
    CHECK(f2[mags] == doctest::Approx(4 * f1[mags]).epsilon(1e-9));
    CHECK(f2[mags + 1] == doctest::Approx(2 * f1[mags + 1]).epsilon(1e-9));
    CHECK(f2[mags + 2] == doctest::Approx(2 * f1[mags + 2]).epsilon(1e-9));
  }

  TEST_CASE("SCR rate separates feature means") {
    std::vector<EdaRecording> recs;
    for (auto [rate, sec] : {std::pair{2.0, "S1"}, std::pair{8.0, "S3"}}) {
      SynthParams p;
      p.scr_rate_per_min = rate;
      p.section = sec;
      p.seed = 40;
      recs.push_back(synth_eda(p, 40 * 45.0));
    }
    const Dataset d = build_dataset(recs);
    REQUIRE(d.x.size() == 80);
    double best = 0;
    for (std::size_t f = 0; f < d.x[0].size(); ++f) {
      double m[2] = {0, 0}, v[2] = {0, 0};
      std::size_t n[2] = {0, 0};
      for (std::size_t r = 0; r < d.x.size(); ++r) {
        const int c = d.y[r] == "S1" ? 0 : 1;
        m[c] += d.x[r][f];
        ++n[c];
      }
      for (int c : {0, 1})
        m[c] /= double(n[c]);
      for (std::size_t r = 0; r < d.x.size(); ++r) {
        const int c = d.y[r] == "S1" ? 0 : 1;
        v[c] += (d.x[r][f] - m[c]) * (d.x[r][f] - m[c]);
      }
      const double pooled = std::sqrt((v[0] + v[1]) / double(n[0] + n[1] - 2));
      if (pooled > 0)
        best = std::max(best, std::abs(m[0] - m[1]) / pooled);
    }
    CHECK(best > 2.0);
  }

  TEST_CASE("two-point SMO has the closed-form solution") {
    // Hard-margin optimum for one point per class: alpha = 2 / |x1 - x2|^2,
    // capped at C.
    const Matrix x{{1.0, 2.0}, {-1.0, 0.5}};
    const std::vector<int> y{1, -1};
    SvmParams p;
    p.kernel.kind = KernelKind::Linear;
    p.C = 100;
    const SmoResult r = smo_solve(x, y, p);
    const double d2 = 4.0 + 2.25;
    CHECK(r.alpha[0] == doctest::Approx(2.0 / d2));
    CHECK(r.alpha[1] == doctest::Approx(2.0 / d2));
    p.C = 0.1;
    const SmoResult capped = smo_solve(x, y, p);
    CHECK(capped.alpha[0] == doctest::Approx(0.1));
  }

  TEST_CASE("SMO reaches KKT and the dual never decreases") {
    Rng rng(17);
    Matrix x;
    std::vector<int> y;
    for (int i = 0; i < 60; ++i) {
      const int label = i % 2 ? 1 : -1;
      x.push_back({rng.normal() + label * 0.7, rng.normal(), rng.normal()});
      y.push_back(label);
    }
    SvmParams p;
    p.kernel.gamma = 0.5;
    p.C = 2.0;
    const SmoResult r = smo_solve(x, y, p, true);
    for (std::size_t i = 1; i < r.dual_trace.size(); ++i)
      CHECK(r.dual_trace[i] >= r.dual_trace[i - 1] - 1e-12);
    CHECK(kkt_gap(x, y, r.alpha, p) <= 1e-3);

    // KKT checked by hand: margins against the box constraints.
    double eq = 0;
    for (std::size_t i = 0; i < x.size(); ++i)
      eq += r.alpha[i] * y[i];
    CHECK(std::abs(eq) < 1e-9);
    for (std::size_t i = 0; i < x.size(); ++i) {
      double f = -r.rho;
      for (std::size_t j = 0; j < x.size(); ++j)
        f += r.alpha[j] * y[j] * rbf(x[j], x[i], 0.5);
      const double m = y[i] * f;
      if (r.alpha[i] < 1e-9)
        CHECK(m >= 1 - 1e-3);
      else if (r.alpha[i] > p.C - 1e-9)
        CHECK(m <= 1 + 1e-3);
      else
        CHECK(std::abs(m - 1) <= 1e-3);
    }
    CHECK_THROWS_AS(smo_solve(x, std::vector<int>(x.size(), 1), p), DegenerateData);
  }

  TEST_CASE("svm toy problems") {
    const Matrix lin{{0, 0}, {1, 0}, {0, 1}, {3, 3}, {4, 3}, {3, 4}};
    const std::vector<std::string> ly{"a", "a", "a", "b", "b", "b"};
    SvmParams lp;
    lp.kernel.kind = KernelKind::Linear;
    const TrainedModel lm = svm_train(lin, ly, {"a", "b"}, lp);
    for (std::size_t i = 0; i < lin.size(); ++i) {
      CHECK(lm.predict(lin[i]) == ly[i]);
      CHECK((lm.score(lin[i]) > 0) == (ly[i] == "a"));
    }

    const Matrix xor_x{{0, 0}, {1, 1}, {0, 1}, {1, 0}};
    const std::vector<std::string> xor_y{"p", "p", "n", "n"};
    SvmParams xp;
    xp.kernel.gamma = 1.0;
    xp.C = 10.0;
    const TrainedModel xm = svm_train(xor_x, xor_y, {"p", "n"}, xp);
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(xm.predict(xor_x[i]) == xor_y[i]);

    // Swapping the class order negates every decision value.
    const TrainedModel flipped = svm_train(xor_x, xor_y, {"n", "p"}, xp);
    Rng rng(6);
    for (int i = 0; i < 50; ++i) {
      const std::vector<double> q{rng.uniform(-1, 2), rng.uniform(-1, 2)};
      CHECK(flipped.score(q) == doctest::Approx(-xm.score(q)).epsilon(1e-6));
    }
  }

  TEST_CASE("knn") {
    const Matrix train{{0.0}, {2.0}, {5.0}};
    const std::vector<std::size_t> labels{0, 1, 1};
    CHECK(knn_classify(train, labels, {5.0}, 1) == 1);
    CHECK(knn_classify(train, labels, {0.0}, 1) == 0);
    // 1.0 is equidistant from 0 and 2; the first in stable order wins.
    CHECK(knn_classify(train, labels, {1.0}, 2) == 0);
    CHECK_THROWS_AS(knn_classify(train, labels, {1.0}, 4), std::invalid_argument);
    CHECK_THROWS_AS(knn_classify({}, {}, {1.0}, 1), EmptyTrainingSet);
    CHECK_THROWS_AS(knn_train({{1.0}, {2.0}}, {"a", "b"}, {"a", "b"}, 2), std::invalid_argument);

    const Dataset tr = blobs(100, 2.5, 1), te = blobs(100, 2.5, 2);
    const TrainedModel m = knn_train(tr.x, tr.y, {"A", "B"}, 5);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < te.x.size(); ++i)
      hit += m.predict(te.x[i]) == te.y[i];
    CHECK(double(hit) / double(te.x.size()) >= 0.95);
  }

  TEST_CASE("roc auc equals the pairwise ranking share") {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> s(30);
      std::vector<bool> pos(30);
      for (std::size_t i = 0; i < s.size(); ++i) {
        s[i] = std::round(rng.uniform(0, 5));
        pos[i] = i % 3 == 0;
      }
      CHECK(roc_auc(s, pos) == doctest::Approx(pair_auc(s, pos)).epsilon(1e-12));
    }
  }

  TEST_CASE("evaluation") {
    ClassifierSpec spec;
    const Dataset sep = blobs(30, 6.0, 3);
    const Metrics m = evaluate(spec, sep, {"A", "B"}, 5, 1);
    CHECK(m.accuracy == 1.0);
    CHECK(*m.auc == 1.0);
    CHECK(*m.precision == 1.0);
    const Metrics again = evaluate(spec, sep, {"A", "B"}, 5, 1);
    CHECK(again.confusion == m.confusion);

    // Row order never changes the folds.
    Dataset shuffled = sep;
    std::reverse(shuffled.x.begin(), shuffled.x.end());
    std::reverse(shuffled.y.begin(), shuffled.y.end());
    std::reverse(shuffled.ids.begin(), shuffled.ids.end());
    CHECK(evaluate(spec, shuffled, {"A", "B"}, 5, 1).confusion == m.confusion);

    // Labels unrelated to the features.
    Dataset noise = blobs(60, 0.0, 4);
    Rng flip(12);
    for (auto &y : noise.y)
      y = flip.chance(0.5) ? "A" : "B";
    const double acc = evaluate(spec, noise, {"A", "B"}, 5, 0).accuracy;
    CHECK(acc >= 0.3);
    CHECK(acc <= 0.7);

    Dataset tiny = blobs(3, 1.0, 5);
    CHECK_THROWS_AS(evaluate(spec, tiny, {"A", "B"}, 5, 0), InsufficientClassMembers);
  }

  TEST_CASE("model files reproduce predictions") {
    const Dataset d = blobs(40, 1.0, 7);
    Rng rng(3);
    for (int kind = 0; kind < 4; ++kind) {
      TrainedModel m;
      if (kind == 3) {
        m = knn_train(d.x, d.y, {"A", "B"}, 3);
      } else {
        SvmParams p;
        p.kernel.kind = static_cast<KernelKind>(kind);
        m = svm_train(d.x, d.y, {"A", "B"}, p);
      }
      std::stringstream buf;
      save_model(buf, m);
      const TrainedModel back = load_model(buf);
      for (int i = 0; i < 200; ++i) {
        const std::vector<double> q{rng.uniform(-4, 4), rng.uniform(-3, 3), rng.uniform(-3, 3)};
        CHECK(back.predict(q) == m.predict(q));
        CHECK(back.score(q) == m.score(q));
      }
    }
    std::istringstream junk("not a model");
    CHECK_THROWS(load_model(junk));
  }

  TEST_CASE("synthetic EDA") {
    SynthParams flat;
    flat.scr_rate_per_min = 0;
    flat.noise = 0;
    flat.drift = 0;
    const EdaRecording r = synth_eda(flat, 300);
    for (double v : r.samples)
      CHECK(v == doctest::Approx(flat.tonic_level));

    SynthParams p;
    p.scr_rate_per_min = 6;
    p.seed = 77;
    const auto a = scr_onsets(p, 300), b = scr_onsets(p, 300);
    CHECK(a == b);
    // 30 expected; a Poisson count lands within 3 sigma.
    CHECK(std::abs(double(a.size()) - 30.0) <= 3 * std::sqrt(30.0));
    CHECK(synth_eda(p, 300).samples == synth_eda(p, 300).samples);
    p.scr_amp = -1;
    CHECK_THROWS_AS(synth_eda(p, 300), std::invalid_argument);
  }
}
