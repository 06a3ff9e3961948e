#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ecgan/data.hpp"
#include "ecgan/nn.hpp"
#include "ecgan/rng.hpp"

namespace ecgan::eval {

using FeatureMatrix = std::vector<std::vector<double>>;

struct ClassifierConfig {
    std::vector<int> channels = {128, 64, 32};  // mirrors the discriminator stack
    int kernel_size = 6;
    int num_classes = 2;
    int epochs = 30;
    int batch_size = 32;
    double learning_rate = 1e-3;
};

// CNN arrhythmia classifier: the discriminator's conv backbone with a
// softmax head. Its GAP activations are the feature map phi for every
// distributional metric.
class Classifier {
  public:
    Classifier() = default;
    Classifier(const ClassifierConfig& cfg, Rng& rng);

    const ClassifierConfig& config() const { return cfg_; }
    int feature_dim() const { return cfg_.channels.back(); }

    ad::Tensor logits(const std::vector<double>& values) const;     // [1,K]
    std::vector<double> predict_proba(const std::vector<double>& values) const;
    int predict(const std::vector<double>& values) const;
    std::vector<double> features(const std::vector<double>& values) const;

    std::vector<ad::Tensor> params() const;
    Classifier clone() const;

  private:
    ClassifierConfig cfg_;
    std::vector<nn::Conv1dBlock> blocks_;
    ad::Tensor head_w_, head_b_;
};

// Cross-entropy + Adam on the split's training pool (the generative
// portion's real beats); the tune set picks the best epoch snapshot.
Classifier train_classifier(const data::DatasetSplit& split, std::uint64_t seed,
                            const ClassifierConfig& cfg = {});
Classifier train_classifier_on(const std::vector<data::EcgBeat>& train_set,
                               const std::vector<data::EcgBeat>& tune_set, std::uint64_t seed,
                               const ClassifierConfig& cfg = {});

FeatureMatrix extract_features(const Classifier& classifier,
                               const std::vector<data::EcgBeat>& beats);
FeatureMatrix predict_rows(const Classifier& classifier,
                           const std::vector<data::EcgBeat>& beats);

// `label,f1..fD` rows for external embedding tools.
std::string features_csv(const std::vector<data::EcgBeat>& beats, const FeatureMatrix& features);

struct FeatureStats {
    std::vector<double> mu;
    std::vector<std::vector<double>> cov;  // symmetric, PSD up to -1e-8
    int count = 0;
};

FeatureStats compute_stats(const FeatureMatrix& features);
double min_cov_eigenvalue(const FeatureStats& stats);

// exp of the mean KL between per-sample label distributions and their
// marginal; natural log, so K classes bound it into [1, K].
double inception_score(const FeatureMatrix& label_rows);

// ||mu_r - mu_g||^2 + Tr(Cr + Cg - 2 (Cr Cg)^(1/2)); squared_mean_term=false
// switches the first term to the unsquared distance variant.
double fid(const FeatureStats& r, const FeatureStats& g, bool squared_mean_term = true);

enum class Kernel { linear, rbf };

// Biased V-statistic estimate of MMD^2. sigma 0 picks the median pairwise
// distance of the real set (only used by the RBF kernel).
double mmd(const FeatureMatrix& real, const FeatureMatrix& fake, Kernel kernel,
           double sigma = 0.0);

// Order-statistics W1 between two scalar samples.
double wasserstein_1d(std::vector<double> real, std::vector<double> fake);

// First principal component of the real features; both sets project onto it
// for the 1-D Wasserstein column of the report.
std::vector<double> first_principal_component(const FeatureMatrix& features);
std::vector<double> project_onto(const FeatureMatrix& features, const std::vector<double>& axis);

// Classic DP with squared local cost; returns sqrt of the accumulated cost.
double dtw(const std::vector<double>& a, const std::vector<double>& b);

struct DtwDiversity {
    std::vector<std::vector<double>> matrix;
    double collapse_score = 0.0;  // median off-diagonal DTW / median beat energy
};

DtwDiversity dtw_matrix(const std::vector<std::vector<double>>& samples);

struct SegmentDurations {
    std::optional<double> qt, qrs, pr, st;  // seconds; absent when a wave is missing
};

SegmentDurations segment_durations(const std::vector<double>& beat, double sampling_rate);

struct SegmentStats {
    double mean = 0.0, stddev = 0.0;
    int count = 0;
};

// Per-segment mean/std over a set of beats, skipping absent measurements.
std::vector<std::pair<std::string, SegmentStats>> segment_statistics(
    const std::vector<data::EcgBeat>& beats, double sampling_rate);

struct FunctionalityRow {
    std::string tag;
    double accuracy = 0.0, specificity = 0.0, sensitivity = 0.0, precision = 0.0, f1 = 0.0;
};

FunctionalityRow classification_metrics(const Classifier& classifier,
                                        const std::vector<data::EcgBeat>& test_set,
                                        const std::string& tag);

// Retrains the classifier with each source's synthetic beats mixed into the
// training pool and scores the untouched test set. The first row is the
// unaugmented baseline.
std::vector<FunctionalityRow> functionality_assessment(
    const data::DatasetSplit& split,
    const std::vector<std::pair<std::string, std::vector<data::EcgBeat>>>& sources,
    std::uint64_t seed, const ClassifierConfig& cfg = {});

}  // namespace ecgan::eval
