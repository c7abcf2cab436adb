#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "msnet/data.hpp"
#include "msnet/error.hpp"
#include "msnet/loss.hpp"
#include "msnet/model.hpp"
#include "msnet/rng.hpp"

namespace msnet {

enum class ClassWeighting { Balanced, None };

struct TrainConfig {
    double lr = 1e-4;
    int epochs = 100;
    std::uint64_t seed = 0;
    ClassWeighting class_weighting = ClassWeighting::Balanced;
    double val_fraction = 0.3;
    bool shuffle_each_epoch = true;

    void validate() const {
        if (!(lr > 0.0)) {
            throw Error(ErrorKind::InvalidArgument, "lr must be positive");
        }
        if (epochs < 1) {
            throw Error(ErrorKind::InvalidArgument, "epochs must be >= 1");
        }
        if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
            throw Error(ErrorKind::InvalidArgument, "val_fraction must lie in (0, 1)");
        }
    }
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_accuracy = 0.0;
};

struct TrainLog {
    std::vector<EpochRecord> epochs;
    int best_epoch = 0;
    double best_val_accuracy = 0.0;
    bool diverged = false;
    std::string divergence_message;
};

struct TrainResult {
    MsNetModel best_model;
    TrainLog log;
};

enum class Precision { Float64, Float32 };

// First index wins on exact probability ties, so COVID is the deterministic
// default.
inline DiagnosisLabel argmax_label(const std::array<double, 3>& probs) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < 3; ++i) {
        if (probs[i] > probs[best]) {
            best = i;
        }
    }
    return static_cast<DiagnosisLabel>(best);
}

struct Prediction {
    DiagnosisLabel label = DiagnosisLabel::COVID;
    std::array<double, 3> probs{};
};

inline Prediction predict(const MsNetModel& model, const FeatureVolume& volume,
                          Precision precision = Precision::Float64) {
    Prediction p;
    if (precision == Precision::Float64) {
        p.probs = forward_probs(model, volume.as_f64());
    } else {
        const InferenceModel32 inf(model);
        const std::array<float, 3> f = inf.forward_probs(volume.features);
        p.probs = {static_cast<double>(f[0]), static_cast<double>(f[1]),
                   static_cast<double>(f[2])};
    }
    p.label = argmax_label(p.probs);
    return p;
}

struct TimingSummary {
    double total_seconds = 0.0;
    double mean_seconds = 0.0;
    double p50_seconds = 0.0;
    double p95_seconds = 0.0;
    std::size_t samples = 0;
};

inline TimingSummary summarize_timings(std::vector<double> seconds) {
    TimingSummary s;
    s.samples = seconds.size();
    if (seconds.empty()) {
        return s;
    }
    s.total_seconds = std::accumulate(seconds.begin(), seconds.end(), 0.0);
    s.mean_seconds = s.total_seconds / static_cast<double>(seconds.size());
    std::sort(seconds.begin(), seconds.end());
    auto percentile = [&seconds](double q) {
        const std::size_t idx = std::min(
            seconds.size() - 1, static_cast<std::size_t>(q * static_cast<double>(seconds.size())));
        return seconds[idx];
    };
    s.p50_seconds = percentile(0.50);
    s.p95_seconds = percentile(0.95);
    return s;
}

// Rows are ground truth, columns are predictions. Sensitivity of a class with
// no ground-truth examples is not applicable and stays empty.
struct EvalReport {
    std::array<std::array<std::int64_t, 3>, 3> confusion{};
    std::array<std::optional<double>, 3> sensitivity;
    double accuracy = 0.0;
    std::optional<TimingSummary> per_volume_seconds;
    std::int64_t n_volumes = 0;
};

inline EvalReport make_report(const std::vector<DiagnosisLabel>& truth,
                              const std::vector<DiagnosisLabel>& predicted) {
    if (truth.size() != predicted.size()) {
        throw Error(ErrorKind::ShapeMismatch, "truth/prediction count mismatch");
    }
    if (truth.empty()) {
        throw Error(ErrorKind::EmptyInput, "cannot evaluate an empty set");
    }
    EvalReport r;
    r.n_volumes = static_cast<std::int64_t>(truth.size());
    for (std::size_t i = 0; i < truth.size(); ++i) {
        r.confusion[static_cast<std::size_t>(static_cast<int>(truth[i]))]
                   [static_cast<std::size_t>(static_cast<int>(predicted[i]))] += 1;
    }
    std::int64_t correct = 0;
    for (std::size_t c = 0; c < 3; ++c) {
        const std::int64_t row_total =
            r.confusion[c][0] + r.confusion[c][1] + r.confusion[c][2];
        correct += r.confusion[c][c];
        if (row_total > 0) {
            r.sensitivity[c] =
                static_cast<double>(r.confusion[c][c]) / static_cast<double>(row_total);
        }
    }
    r.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
    return r;
}

inline EvalReport evaluate(const MsNetModel& model, const std::vector<LabeledVolume>& volumes,
                           Precision precision = Precision::Float64, bool timed = false) {
    if (volumes.empty()) {
        throw Error(ErrorKind::EmptyInput, "cannot evaluate an empty set");
    }
    std::vector<DiagnosisLabel> truth;
    std::vector<DiagnosisLabel> pred;
    std::vector<double> seconds;
    truth.reserve(volumes.size());
    pred.reserve(volumes.size());
    for (const auto& lv : volumes) {
        const auto start = std::chrono::steady_clock::now();
        pred.push_back(predict(model, lv.volume, precision).label);
        if (timed) {
            const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
            seconds.push_back(dt.count());
        }
        truth.push_back(lv.label);
    }
    EvalReport r = make_report(truth, pred);
    if (timed) {
        r.per_volume_seconds = summarize_timings(std::move(seconds));
    }
    return r;
}

struct BenchReport {
    TimingSummary timing;
    std::size_t n_volumes = 0;
    int repetitions = 1;
    std::vector<DiagnosisLabel> predictions;  // one per volume, stable across reps
};

// Times the 32-bit aggregation-only inference path. Features are handed in
// pre-loaded, so no file I/O lands inside the timed region; the first
// `warmup` volumes get one untimed pass.
inline BenchReport benchmark(const MsNetModel& model, const std::vector<FeatureVolume>& volumes,
                             int repetitions = 1, int warmup = 1) {
    if (volumes.empty()) {
        throw Error(ErrorKind::EmptyInput, "benchmark needs at least one volume");
    }
    if (repetitions < 1) {
        throw Error(ErrorKind::InvalidArgument, "repetitions must be >= 1");
    }
    const InferenceModel32 inf(model);

    for (int w = 0; w < std::min<int>(warmup, static_cast<int>(volumes.size())); ++w) {
        (void)inf.forward_probs(volumes[static_cast<std::size_t>(w)].features);
    }

    BenchReport report;
    report.n_volumes = volumes.size();
    report.repetitions = repetitions;
    std::vector<double> seconds;
    seconds.reserve(volumes.size() * static_cast<std::size_t>(repetitions));
    for (int rep = 0; rep < repetitions; ++rep) {
        for (std::size_t i = 0; i < volumes.size(); ++i) {
            const auto start = std::chrono::steady_clock::now();
            const std::array<float, 3> probs = inf.forward_probs(volumes[i].features);
            const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
            seconds.push_back(dt.count());
            const DiagnosisLabel label = argmax_label(
                {static_cast<double>(probs[0]), static_cast<double>(probs[1]),
                 static_cast<double>(probs[2])});
            if (rep == 0) {
                report.predictions.push_back(label);
            } else if (report.predictions[i] != label) {
                throw Error(ErrorKind::Corrupt, "inference produced unstable predictions");
            }
        }
    }
    report.timing = summarize_timings(std::move(seconds));
    return report;
}

namespace detail {

inline double validation_accuracy(const MsNetModel& model,
                                  const std::vector<LabeledVolume>& val_set) {
    std::int64_t correct = 0;
    for (const auto& lv : val_set) {
        if (predict(model, lv.volume).label == lv.label) {
            ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(val_set.size());
}

inline bool all_finite(const std::vector<double>& v) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            return false;
        }
    }
    return true;
}

}  // namespace detail

// One volume per optimizer step; epochs shuffle the patient order, validation
// accuracy decides which epoch's parameters survive (ties keep the earlier
// epoch). A non-finite loss aborts the run, keeping the best (or last known
// finite) parameters instead of the poisoned ones.
inline TrainResult train_with_split(const std::vector<LabeledVolume>& train_set,
                                    const std::vector<LabeledVolume>& val_set,
                                    const TrainConfig& config, const MsNetArch& arch = {}) {
    config.validate();
    if (train_set.empty() || val_set.empty()) {
        throw Error(ErrorKind::EmptyInput, "train and val splits must both be non-empty");
    }

    ClassWeights weights = ClassWeights::uniform();
    if (config.class_weighting == ClassWeighting::Balanced) {
        std::array<std::int64_t, 3> counts{};
        for (const auto& lv : train_set) {
            counts[static_cast<std::size_t>(static_cast<int>(lv.label))] += 1;
        }
        weights = class_weights_from_counts(counts);
    }

    MsNetModel model = init_model(arch, config.seed);
    AdamState adam(model.params.size(), config.lr);
    Rng shuffle_rng(config.seed + 0x9e3779b97f4a7c15ull);

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    TrainResult result;
    result.log.best_epoch = 0;
    double best_val = -1.0;
    std::vector<double> best_params;
    std::vector<double> last_finite_params = model.params;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        if (detail::all_finite(model.params)) {
            last_finite_params = model.params;
        }
        if (config.shuffle_each_epoch) {
            shuffle_rng.shuffle(order);
        }

        double loss_sum = 0.0;
        std::int64_t steps = 0;
        for (std::size_t idx : order) {
            const LabeledVolume& sample = train_set[idx];
            if (weights[sample.label] == 0.0) {
                continue;  // zero-count class, excluded from training
            }
            const SeqTensor input = sample.volume.as_f64();
            ForwardResult fw = forward(model, input);
            const double loss = weighted_cce(fw.probs, sample.label, weights);
            if (!std::isfinite(loss)) {
                result.log.diverged = true;
                result.log.divergence_message =
                    "non-finite loss at epoch " + std::to_string(epoch) + ", patient " +
                    sample.volume.patient_id;
                model.params = best_params.empty() ? last_finite_params : best_params;
                result.best_model = std::move(model);
                result.log.best_val_accuracy = std::max(best_val, 0.0);
                return result;
            }
            const std::array<double, 3> grad_logits =
                cce_grad_logits(fw.probs, sample.label, weights);
            const std::vector<double> grads = backward(model, fw.cache, grad_logits);
            adam_step(model.params, grads, adam);
            loss_sum += loss;
            ++steps;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = steps > 0 ? loss_sum / static_cast<double>(steps) : 0.0;
        rec.val_accuracy = detail::validation_accuracy(model, val_set);
        result.log.epochs.push_back(rec);

        if (rec.val_accuracy > best_val) {
            best_val = rec.val_accuracy;
            best_params = model.params;
            result.log.best_epoch = epoch;
        }
    }

    result.log.best_val_accuracy = best_val;
    model.params = std::move(best_params);
    result.best_model = std::move(model);
    return result;
}

// Splits the dataset internally (patient-level, stratified, seeded) and
// trains on the pieces.
inline TrainResult train(const std::vector<LabeledVolume>& dataset, const TrainConfig& config,
                         const MsNetArch& arch = {}) {
    config.validate();
    const SplitResult split = split_dataset(dataset, config.val_fraction, config.seed);
    std::vector<LabeledVolume> train_set;
    std::vector<LabeledVolume> val_set;
    train_set.reserve(split.train_indices.size());
    val_set.reserve(split.val_indices.size());
    for (std::size_t i : split.train_indices) {
        train_set.push_back(dataset[i]);
    }
    for (std::size_t i : split.val_indices) {
        val_set.push_back(dataset[i]);
    }
    return train_with_split(train_set, val_set, config, arch);
}

}  // namespace msnet
