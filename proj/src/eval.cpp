#include "ecgan/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Dense>

#include "ecgan/errors.hpp"
#include "ecgan/io.hpp"
#include "ecgan/model.hpp"
#include "ecgan/tensor.hpp"

namespace ecgan::eval {

using ad::Tensor;

Classifier::Classifier(const ClassifierConfig& cfg, Rng& rng) : cfg_(cfg) {
    int in_ch = 1;
    for (int out_ch : cfg_.channels) {
        blocks_.emplace_back(in_ch, out_ch, cfg_.kernel_size, rng);
        in_ch = out_ch;
    }
    head_w_ = nn::init_matrix({in_ch, cfg_.num_classes}, in_ch, rng);
    head_b_ = Tensor::zeros({cfg_.num_classes}, true);
}

ad::Tensor Classifier::logits(const std::vector<double>& values) const {
    Tensor feat = Tensor::leaf({1, static_cast<int>(values.size())}, values);
    for (const nn::Conv1dBlock& block : blocks_) feat = block.apply(feat);
    Tensor pooled = ad::reshape(ad::global_avg_pool(feat), {1, cfg_.channels.back()});
    return ad::add(ad::matmul(pooled, head_w_), head_b_);
}

std::vector<double> Classifier::predict_proba(const std::vector<double>& values) const {
    Tensor l = logits(values);
    auto v = l.values();
    double mx = *std::max_element(v.begin(), v.end());
    std::vector<double> p(v.begin(), v.end());
    double z = 0.0;
    for (double& x : p) {
        x = std::exp(x - mx);
        z += x;
    }
    for (double& x : p) x /= z;
    return p;
}

int Classifier::predict(const std::vector<double>& values) const {
    std::vector<double> p = predict_proba(values);
    return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

std::vector<double> Classifier::features(const std::vector<double>& values) const {
    Tensor feat = Tensor::leaf({1, static_cast<int>(values.size())}, values);
    for (const nn::Conv1dBlock& block : blocks_) feat = block.apply(feat);
    Tensor pooled = ad::global_avg_pool(feat);
    auto v = pooled.values();
    return {v.begin(), v.end()};
}

std::vector<ad::Tensor> Classifier::params() const {
    std::vector<Tensor> out;
    for (std::size_t b = 0; b < blocks_.size(); ++b)
        for (Tensor t : nn::values_of(blocks_[b].params("c.b" + std::to_string(b))))
            out.push_back(t);
    out.push_back(head_w_);
    out.push_back(head_b_);
    return out;
}

Classifier Classifier::clone() const {
    Rng throwaway(0);
    Classifier copy(cfg_, throwaway);
    std::vector<Tensor> src = params();
    std::vector<Tensor> dst = copy.params();
    for (std::size_t i = 0; i < src.size(); ++i) {
        auto sv = src[i].values();
        auto dv = dst[i].values_mut();
        std::copy(sv.begin(), sv.end(), dv.begin());
    }
    return copy;
}

Classifier train_classifier(const data::DatasetSplit& split, std::uint64_t seed,
                            const ClassifierConfig& cfg) {
    return train_classifier_on(split.generative, split.classifier_tune, seed, cfg);
}

Classifier train_classifier_on(const std::vector<data::EcgBeat>& train_set,
                               const std::vector<data::EcgBeat>& tune_set, std::uint64_t seed,
                               const ClassifierConfig& cfg) {
    if (train_set.empty()) throw StateError("train_classifier: empty training set");
    Rng init(stream_seed(seed, "init", 0xC1A55));
    Classifier net(cfg, init);
    nn::Optimizer adam(nn::OptimizerKind::adam, cfg.learning_rate, net.params());

    auto tune_accuracy = [&](const Classifier& c) {
        if (tune_set.empty()) return 0.0;
        int hit = 0;
        for (const data::EcgBeat& b : tune_set)
            if (c.predict(b.values) == b.label) ++hit;
        return static_cast<double>(hit) / static_cast<double>(tune_set.size());
    };

    Classifier best = net.clone();
    double best_acc = tune_set.empty() ? -1.0 : tune_accuracy(net);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(train_set.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle(stream_seed(seed, "shuffle", 0xC1A55, static_cast<std::uint64_t>(epoch)));
        shuffle.shuffle(order);
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<Tensor> rows;
            std::vector<int> labels;
            for (std::size_t i = start; i < stop; ++i) {
                rows.push_back(net.logits(train_set[order[i]].values));
                labels.push_back(train_set[order[i]].label);
            }
            Tensor logits = ad::concat(rows, 0);
            Tensor loss = ad::softmax_cross_entropy(logits, labels);
            for (Tensor t : net.params()) t.zero_grad();
            ad::backward(loss);
            adam.step();
        }
        if (!tune_set.empty()) {
            double acc = tune_accuracy(net);
            if (acc > best_acc) {
                best_acc = acc;
                best = net.clone();
            }
        }
    }
    return tune_set.empty() ? net : best;
}

FeatureMatrix extract_features(const Classifier& classifier,
                               const std::vector<data::EcgBeat>& beats) {
    FeatureMatrix out;
    out.reserve(beats.size());
    for (const data::EcgBeat& b : beats) out.push_back(classifier.features(b.values));
    return out;
}

FeatureMatrix predict_rows(const Classifier& classifier,
                           const std::vector<data::EcgBeat>& beats) {
    FeatureMatrix out;
    out.reserve(beats.size());
    for (const data::EcgBeat& b : beats) out.push_back(classifier.predict_proba(b.values));
    return out;
}

std::string features_csv(const std::vector<data::EcgBeat>& beats, const FeatureMatrix& features) {
    if (beats.size() != features.size())
        throw StateError("features_csv: row count mismatch");
    std::ostringstream out;
    out << "label";
    if (!features.empty())
        for (std::size_t j = 0; j < features[0].size(); ++j) out << ",f" << (j + 1);
    out << "\n";
    for (std::size_t i = 0; i < beats.size(); ++i) {
        out << data::class_name(beats[i].label);
        for (double v : features[i]) out << "," << format_double(v);
        out << "\n";
    }
    return out.str();
}

FeatureStats compute_stats(const FeatureMatrix& features) {
    if (features.size() < 2) throw StateError("compute_stats: need at least two samples");
    const std::size_t d = features[0].size();
    FeatureStats stats;
    stats.count = static_cast<int>(features.size());
    stats.mu.assign(d, 0.0);
    for (const auto& row : features) {
        if (row.size() != d) throw ShapeError("compute_stats: ragged feature rows");
        for (std::size_t j = 0; j < d; ++j) stats.mu[j] += row[j];
    }
    for (double& m : stats.mu) m /= static_cast<double>(features.size());
    stats.cov.assign(d, std::vector<double>(d, 0.0));
    for (const auto& row : features) {
        for (std::size_t a = 0; a < d; ++a) {
            double da = row[a] - stats.mu[a];
            for (std::size_t b = a; b < d; ++b)
                stats.cov[a][b] += da * (row[b] - stats.mu[b]);
        }
    }
    const double denom = static_cast<double>(features.size() - 1);
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a; b < d; ++b) {
            stats.cov[a][b] /= denom;
            stats.cov[b][a] = stats.cov[a][b];
        }
    return stats;
}

namespace {

Eigen::MatrixXd to_eigen(const std::vector<std::vector<double>>& m) {
    const auto rows = static_cast<Eigen::Index>(m.size());
    const auto cols = static_cast<Eigen::Index>(m.empty() ? 0 : m[0].size());
    Eigen::MatrixXd out(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j)
            out(i, j) = m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    return out;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    Eigen::VectorXd lambda = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * lambda.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double min_cov_eigenvalue(const FeatureStats& stats) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(to_eigen(stats.cov));
    return es.eigenvalues().minCoeff();
}

double inception_score(const FeatureMatrix& label_rows) {
    if (label_rows.empty()) throw StateError("inception_score: empty predictions");
    const std::size_t k = label_rows[0].size();
    std::vector<double> marginal(k, 0.0);
    for (const auto& row : label_rows) {
        if (row.size() != k) throw ShapeError("inception_score: ragged prediction rows");
        for (std::size_t j = 0; j < k; ++j) marginal[j] += row[j];
    }
    for (double& m : marginal) m /= static_cast<double>(label_rows.size());
    double mean_kl = 0.0;
    for (const auto& row : label_rows) {
        double kl = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            if (row[j] <= 0.0) continue;  // 0 log 0 = 0
            kl += row[j] * std::log(row[j] / std::max(marginal[j], 1e-300));
        }
        mean_kl += kl;
    }
    mean_kl /= static_cast<double>(label_rows.size());
    return std::exp(mean_kl);
}

double fid(const FeatureStats& r, const FeatureStats& g, bool squared_mean_term) {
    if (r.mu.size() != g.mu.size())
        throw ShapeError("fid: feature dimensions disagree, " + std::to_string(r.mu.size()) +
                         " vs " + std::to_string(g.mu.size()));
    double mean_sq = 0.0;
    for (std::size_t j = 0; j < r.mu.size(); ++j) {
        double d = r.mu[j] - g.mu[j];
        mean_sq += d * d;
    }
    double mean_term = squared_mean_term ? mean_sq : std::sqrt(mean_sq);

    Eigen::MatrixXd cr = to_eigen(r.cov);
    Eigen::MatrixXd cg = to_eigen(g.cov);
    // Tr((Cr Cg)^(1/2)) computed through the symmetric product
    // Cr^(1/2) Cg Cr^(1/2); eigenvalues clamp at zero.
    Eigen::MatrixXd cr_half = psd_sqrt(cr);
    Eigen::MatrixXd inner = cr_half * cg * cr_half;
    inner = 0.5 * (inner + inner.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner);
    double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    double result = mean_term + cr.trace() + cg.trace() - 2.0 * tr_sqrt;
    return std::max(result, 0.0);
}

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double median_of(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

double mmd(const FeatureMatrix& real, const FeatureMatrix& fake, Kernel kernel, double sigma) {
    if (real.empty() || fake.empty()) throw StateError("mmd: empty sample set");
    const std::size_t d = real[0].size();
    for (const auto& row : real)
        if (row.size() != d) throw ShapeError("mmd: ragged feature rows");
    for (const auto& row : fake)
        if (row.size() != d) throw ShapeError("mmd: feature dimensions disagree");

    if (kernel == Kernel::rbf && sigma <= 0.0) {
        // median heuristic over the real set's pairwise distances
        std::vector<double> dists;
        for (std::size_t i = 0; i < real.size(); ++i)
            for (std::size_t j = i + 1; j < real.size(); ++j)
                dists.push_back(std::sqrt(sq_dist(real[i], real[j])));
        sigma = median_of(std::move(dists));
        if (sigma <= 0.0) sigma = 1.0;
    }
    auto k = [&](const std::vector<double>& a, const std::vector<double>& b) {
        if (kernel == Kernel::linear) return dot(a, b);
        return std::exp(-sq_dist(a, b) / (2.0 * sigma * sigma));
    };
    auto mean_kernel = [&](const FeatureMatrix& a, const FeatureMatrix& b) {
        double acc = 0.0;
        for (const auto& x : a)
            for (const auto& y : b) acc += k(x, y);
        return acc / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
    };
    return mean_kernel(real, real) - 2.0 * mean_kernel(real, fake) + mean_kernel(fake, fake);
}

double wasserstein_1d(std::vector<double> real, std::vector<double> fake) {
    if (real.empty() || fake.empty()) throw StateError("wasserstein_1d: empty sample set");
    std::sort(real.begin(), real.end());
    std::sort(fake.begin(), fake.end());
    // exact integral of |F_r - F_g| over the pooled support
    std::vector<double> all;
    all.reserve(real.size() + fake.size());
    all.insert(all.end(), real.begin(), real.end());
    all.insert(all.end(), fake.begin(), fake.end());
    std::sort(all.begin(), all.end());
    double w = 0.0;
    std::size_t ir = 0, ig = 0;
    for (std::size_t i = 0; i + 1 < all.size(); ++i) {
        while (ir < real.size() && real[ir] <= all[i]) ++ir;
        while (ig < fake.size() && fake[ig] <= all[i]) ++ig;
        double fr = static_cast<double>(ir) / static_cast<double>(real.size());
        double fg = static_cast<double>(ig) / static_cast<double>(fake.size());
        w += std::abs(fr - fg) * (all[i + 1] - all[i]);
    }
    return w;
}

std::vector<double> first_principal_component(const FeatureMatrix& features) {
    FeatureStats stats = compute_stats(features);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(to_eigen(stats.cov));
    Eigen::Index last = es.eigenvalues().size() - 1;  // ascending order
    Eigen::VectorXd pc = es.eigenvectors().col(last);
    return {pc.data(), pc.data() + pc.size()};
}

std::vector<double> project_onto(const FeatureMatrix& features, const std::vector<double>& axis) {
    std::vector<double> out;
    out.reserve(features.size());
    for (const auto& row : features) {
        if (row.size() != axis.size()) throw ShapeError("project_onto: dimension mismatch");
        out.push_back(dot(row, axis));
    }
    return out;
}

double dtw(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.empty() || b.empty()) throw StateError("dtw: empty sequence");
    const std::size_t n = a.size(), m = b.size();
    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> prev(m + 1, kInf), cur(m + 1, kInf);
    prev[0] = 0.0;
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = kInf;
        for (std::size_t j = 1; j <= m; ++j) {
            double cost = (a[i - 1] - b[j - 1]) * (a[i - 1] - b[j - 1]);
            cur[j] = cost + std::min({prev[j], cur[j - 1], prev[j - 1]});
        }
        std::swap(prev, cur);
    }
    return std::sqrt(prev[m]);
}

DtwDiversity dtw_matrix(const std::vector<std::vector<double>>& samples) {
    if (samples.size() < 2) throw StateError("dtw_matrix: need at least two samples");
    const std::size_t n = samples.size();
    DtwDiversity out;
    out.matrix.assign(n, std::vector<double>(n, 0.0));
    std::vector<double> offdiag;
    offdiag.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double d = dtw(samples[i], samples[j]);
            out.matrix[i][j] = d;
            out.matrix[j][i] = d;
            offdiag.push_back(d);
        }
    }
    std::vector<double> energies;
    energies.reserve(n);
    for (const auto& s : samples) {
        double e = 0.0;
        for (double v : s) e += v * v;
        energies.push_back(std::sqrt(e));
    }
    double median_energy = median_of(std::move(energies));
    out.collapse_score = median_energy < 1e-12 ? 0.0 : median_of(std::move(offdiag)) / median_energy;
    return out;
}

// ---- segment delineation ----

namespace {

// Nearest local minimum strictly before/after `from` within `span` samples.
std::optional<int> nearest_local_min(const std::vector<double>& v, int from, int span, bool left) {
    const int n = static_cast<int>(v.size());
    auto is_min = [&](int i) {
        return i > 0 && i + 1 < n && v[static_cast<std::size_t>(i)] <= v[static_cast<std::size_t>(i - 1)] &&
               v[static_cast<std::size_t>(i)] <= v[static_cast<std::size_t>(i + 1)];
    };
    if (left) {
        for (int i = from - 1; i >= std::max(1, from - span); --i)
            if (is_min(i)) return i;
    } else {
        for (int i = from + 1; i <= std::min(n - 2, from + span); ++i)
            if (is_min(i)) return i;
    }
    return std::nullopt;
}

std::optional<int> window_argmax(const std::vector<double>& v, int lo, int hi, double sign = 1.0) {
    lo = std::max(lo, 0);
    hi = std::min(hi, static_cast<int>(v.size()) - 1);
    if (lo > hi) return std::nullopt;
    int best = lo;
    for (int i = lo; i <= hi; ++i)
        if (sign * v[static_cast<std::size_t>(i)] > sign * v[static_cast<std::size_t>(best)]) best = i;
    return best;
}

// Walks outward from a wave peak until the slope magnitude falls below 10%
// of the flank's peak slope.
int wave_boundary(const std::vector<double>& v, int peak, bool left, int limit) {
    const int n = static_cast<int>(v.size());
    auto slope = [&](int i) {
        if (i < 0 || i + 1 >= n) return 0.0;
        return std::abs(v[static_cast<std::size_t>(i + 1)] - v[static_cast<std::size_t>(i)]);
    };
    double max_slope = 0.0;
    int i = left ? peak - 1 : peak;
    const int stop = left ? std::max(0, peak - limit) : std::min(n - 2, peak + limit);
    int boundary = left ? stop : std::min(n - 1, stop + 1);
    while (left ? i >= stop : i <= stop) {
        double s = slope(i);
        max_slope = std::max(max_slope, s);
        if (max_slope > 0.0 && s < 0.1 * max_slope) {
            boundary = left ? i + 1 : i;
            break;
        }
        i += left ? -1 : 1;
    }
    return boundary;
}

}  // namespace

SegmentDurations segment_durations(const std::vector<double>& beat, double sampling_rate) {
    SegmentDurations out;
    if (beat.size() < 8 || sampling_rate <= 0.0) return out;
    double lo = *std::min_element(beat.begin(), beat.end());
    double hi = *std::max_element(beat.begin(), beat.end());
    if (hi - lo < 1e-12) return out;  // flat: everything absent

    const auto ms = [&](double seconds) {
        return std::max(1, static_cast<int>(std::lround(seconds * sampling_rate)));
    };
    const int r = static_cast<int>(
        std::max_element(beat.begin(), beat.end()) - beat.begin());

    std::optional<int> q = nearest_local_min(beat, r, ms(0.08), true);
    std::optional<int> s = nearest_local_min(beat, r, ms(0.08), false);
    if (!q || !s) return out;

    const int q_on = wave_boundary(beat, *q, true, ms(0.12));
    const int s_off = wave_boundary(beat, *s, false, ms(0.12));
    out.qrs = static_cast<double>(s_off - q_on) / sampling_rate;

    std::optional<int> t_peak = window_argmax(beat, *s + ms(0.04), *s + ms(0.40), +1.0);
    if (t_peak) {
        const int t_on = wave_boundary(beat, *t_peak, true, ms(0.20));
        const int t_off = wave_boundary(beat, *t_peak, false, ms(0.20));
        double qt = static_cast<double>(t_off - q_on) / sampling_rate;
        double st = static_cast<double>(t_on - s_off) / sampling_rate;
        if (qt > 0.0) out.qt = qt;
        if (st > 0.0) out.st = st;
    }

    std::optional<int> p_peak = window_argmax(beat, *q - ms(0.30), *q - ms(0.04), +1.0);
    if (p_peak) {
        const int p_on = wave_boundary(beat, *p_peak, true, ms(0.15));
        double pr = static_cast<double>(q_on - p_on) / sampling_rate;
        if (pr > 0.0) out.pr = pr;
    }
    return out;
}

std::vector<std::pair<std::string, SegmentStats>> segment_statistics(
    const std::vector<data::EcgBeat>& beats, double sampling_rate) {
    std::vector<std::vector<double>> values(4);
    for (const data::EcgBeat& b : beats) {
        SegmentDurations d = segment_durations(b.values, sampling_rate);
        if (d.qt) values[0].push_back(*d.qt);
        if (d.qrs) values[1].push_back(*d.qrs);
        if (d.pr) values[2].push_back(*d.pr);
        if (d.st) values[3].push_back(*d.st);
    }
    const char* names[4] = {"qt", "qrs", "pr", "st"};
    std::vector<std::pair<std::string, SegmentStats>> out;
    for (int i = 0; i < 4; ++i) {
        SegmentStats s;
        s.count = static_cast<int>(values[static_cast<std::size_t>(i)].size());
        if (s.count > 0) {
            for (double v : values[static_cast<std::size_t>(i)]) s.mean += v;
            s.mean /= s.count;
            for (double v : values[static_cast<std::size_t>(i)])
                s.stddev += (v - s.mean) * (v - s.mean);
            s.stddev = s.count > 1 ? std::sqrt(s.stddev / (s.count - 1)) : 0.0;
        }
        out.emplace_back(names[i], s);
    }
    return out;
}

FunctionalityRow classification_metrics(const Classifier& classifier,
                                        const std::vector<data::EcgBeat>& test_set,
                                        const std::string& tag) {
    long tp = 0, tn = 0, fp = 0, fn = 0;
    for (const data::EcgBeat& b : test_set) {
        int pred = classifier.predict(b.values);
        if (b.label == data::kClassV) {
            (pred == data::kClassV ? tp : fn)++;
        } else {
            (pred == data::kClassN ? tn : fp)++;
        }
    }
    auto ratio = [](long a, long b) { return b > 0 ? static_cast<double>(a) / b : 0.0; };
    FunctionalityRow row;
    row.tag = tag;
    row.accuracy = ratio(tp + tn, tp + tn + fp + fn);
    row.specificity = ratio(tn, tn + fp);
    row.sensitivity = ratio(tp, tp + fn);
    row.precision = ratio(tp, tp + fp);
    row.f1 = (row.precision + row.sensitivity) > 0.0
                 ? 2.0 * row.precision * row.sensitivity / (row.precision + row.sensitivity)
                 : 0.0;
    return row;
}

std::vector<FunctionalityRow> functionality_assessment(
    const data::DatasetSplit& split,
    const std::vector<std::pair<std::string, std::vector<data::EcgBeat>>>& sources,
    std::uint64_t seed, const ClassifierConfig& cfg) {
    std::vector<FunctionalityRow> rows;
    Classifier baseline = train_classifier(split, seed, cfg);
    rows.push_back(classification_metrics(baseline, split.classifier_test, "original"));
    for (const auto& [tag, beats] : sources) {
        std::vector<data::EcgBeat> augmented = split.generative;
        augmented.insert(augmented.end(), beats.begin(), beats.end());
        Rng rng(stream_seed(seed, "augment", fnv1a64(tag)));
        rng.shuffle(augmented);
        Classifier net = train_classifier_on(augmented, split.classifier_tune, seed, cfg);
        rows.push_back(classification_metrics(net, split.classifier_test, tag));
    }
    return rows;
}

}  // namespace ecgan::eval
