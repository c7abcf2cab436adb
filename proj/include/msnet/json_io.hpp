#pragma once

#include <json.hpp>

#include "msnet/train.hpp"

namespace msnet {

// Machine-readable forms of the training log and evaluation outputs. Kept out
// of train.hpp so the json dependency stays opt-in.

inline nlohmann::json to_json(const TimingSummary& t) {
    return {
        {"total_seconds", t.total_seconds}, {"mean_seconds", t.mean_seconds},
        {"p50_seconds", t.p50_seconds},     {"p95_seconds", t.p95_seconds},
        {"samples", t.samples},
    };
}

inline nlohmann::json to_json(const TrainLog& log) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& rec : log.epochs) {
        epochs.push_back({
            {"epoch", rec.epoch},
            {"train_loss", rec.train_loss},
            {"val_accuracy", rec.val_accuracy},
        });
    }
    nlohmann::json j = {
        {"epochs", std::move(epochs)},
        {"best_epoch", log.best_epoch},
        {"best_val_accuracy", log.best_val_accuracy},
        {"diverged", log.diverged},
    };
    if (log.diverged) {
        j["divergence_message"] = log.divergence_message;
    }
    return j;
}

inline nlohmann::json to_json(const EvalReport& report) {
    nlohmann::json sens = nlohmann::json::array();
    for (const auto& s : report.sensitivity) {
        if (s.has_value()) {
            sens.push_back(*s);
        } else {
            sens.push_back(nullptr);  // class absent: not applicable
        }
    }
    nlohmann::json j = {
        {"confusion", report.confusion},
        {"sensitivity", std::move(sens)},
        {"accuracy", report.accuracy},
        {"n_volumes", report.n_volumes},
    };
    j["timing"] = report.per_volume_seconds.has_value() ? to_json(*report.per_volume_seconds)
                                                        : nlohmann::json(nullptr);
    return j;
}

inline nlohmann::json to_json(const BenchReport& report) {
    nlohmann::json j = to_json(report.timing);
    j["n_volumes"] = report.n_volumes;
    j["repetitions"] = report.repetitions;
    return j;
}

}  // namespace msnet
