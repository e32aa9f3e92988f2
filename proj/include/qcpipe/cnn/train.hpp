#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "qcpipe/cnn/adam.hpp"
#include "qcpipe/cnn/network.hpp"
#include "qcpipe/eval/metrics.hpp"
#include "qcpipe/eval/splitting.hpp"
#include "qcpipe/labels.hpp"
#include "qcpipe/phantom.hpp"
#include "qcpipe/split.hpp"

namespace qc::cnn {

struct TaskSample {
    std::string image_id;
    std::string patient_id;
    std::vector<float> input;
    int label = 0;
};

/// Images that carry a label for one binary task, flattened to network input.
struct TaskDataset {
    Task task = Task::sr;
    Dims4 input{1, 0, 0, 0};
    std::vector<TaskSample> samples;

    const TaskSample* find(const std::string& id) const {
        auto it = index_.find(id);
        return it == index_.end() ? nullptr : &samples[it->second];
    }
    void add(TaskSample s) {
        if (!index_.emplace(s.image_id, samples.size()).second)
            fail(errc::duplicate_image_id, "duplicate image id '" + s.image_id + "'");
        samples.push_back(std::move(s));
    }
    std::vector<SplitItem> split_items() const {
        std::vector<SplitItem> out;
        for (const auto& s : samples) out.push_back({s.image_id, s.patient_id, std::to_string(s.label)});
        return out;
    }

private:
    std::map<std::string, std::size_t> index_;
};

/// Keeps the samples for which `task_label` is defined.
inline TaskDataset build_task_dataset(const LabeledDataset& data, Task task) {
    TaskDataset out;
    out.task = task;
    for (const auto& s : data.samples) {
        auto y = task_label(s.label, task);
        if (!y) continue;
        const Dims4 d{1, s.volume.dims[0], s.volume.dims[1], s.volume.dims[2]};
        if (out.samples.empty()) out.input = d;
        else if (d != out.input) fail(errc::shape_mismatch, "volumes in a task dataset must share one shape");
        out.add({s.image_id, s.patient_id, std::vector<float>(s.volume.data.begin(), s.volume.data.end()), *y});
    }
    return out;
}

struct TrainConfig {
    double learning_rate = 1e-4;
    std::size_t batch_size = 2;
    int max_epochs = 50;
    int early_stop_patience = 10;
    std::optional<std::array<double, 2>> class_weights;  // computed from the training fold when unset
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(learning_rate > 0.0)) fail(errc::invalid_argument, "learning_rate must be positive");
        if (batch_size < 1) fail(errc::invalid_argument, "batch_size must be at least 1");
        if (max_epochs < 1) fail(errc::invalid_argument, "max_epochs must be at least 1");
        if (early_stop_patience < 0 || early_stop_patience > max_epochs)
            fail(errc::invalid_argument, "early_stop_patience must lie in [0, max_epochs]");
        if (class_weights && ((*class_weights)[0] < 0.0 || (*class_weights)[1] < 0.0))
            fail(errc::invalid_argument, "class weights must be non-negative");
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
         {"max_epochs", c.max_epochs},       {"early_stop_patience", c.early_stop_patience},
         {"adam_betas", {c.beta1, c.beta2}}, {"adam_eps", c.adam_eps},
         {"seed", c.seed}};
    j["class_weights"] = c.class_weights ? nlohmann::json(*c.class_weights) : nlohmann::json(nullptr);
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    c = TrainConfig{};
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    if (j.contains("adam_betas")) {
        c.beta1 = j.at("adam_betas").at(0).get<double>();
        c.beta2 = j.at("adam_betas").at(1).get<double>();
    }
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.seed = j.value("seed", c.seed);
    if (j.contains("class_weights") && !j.at("class_weights").is_null())
        c.class_weights = j.at("class_weights").get<std::array<double, 2>>();
}

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double validation_loss = 0.0;
    double validation_ba = 0.0;
};

inline void to_json(nlohmann::json& j, const EpochRecord& e) {
    j = {{"epoch", e.epoch},
         {"train_loss", e.train_loss},
         {"validation_loss", e.validation_loss},
         {"validation_ba", e.validation_ba}};
}
inline void from_json(const nlohmann::json& j, EpochRecord& e) {
    e.epoch = j.at("epoch").get<int>();
    e.train_loss = j.at("train_loss").get<double>();
    e.validation_loss = j.at("validation_loss").get<double>();
    e.validation_ba = j.at("validation_ba").get<double>();
}

struct TrainedModel {
    NetworkSpec spec;
    std::vector<float> parameters;
    std::vector<float> buffers;
    double best_validation_loss = 0.0;
    int best_epoch = 0;
    int epochs_run = 0;
    int fold_index = 0;
    TrainConfig config;
    std::array<double, 2> class_weights{1.0, 1.0};
    std::vector<EpochRecord> trace;
    std::vector<std::string> log;
};

/// w_c = N / (K * N_c).
inline std::array<double, 2> inverse_frequency_weights(std::size_t n0, std::size_t n1) {
    if (n0 == 0 || n1 == 0) fail(errc::degenerate_labels, "both classes are needed to weight the loss");
    const double n = static_cast<double>(n0 + n1);
    return {n / (2.0 * static_cast<double>(n0)), n / (2.0 * static_cast<double>(n1))};
}

using EpochCallback = std::function<void(const EpochRecord&)>;

namespace detail {

inline std::vector<const TaskSample*> resolve(const TaskDataset& data, const std::vector<std::string>& ids) {
    std::vector<const TaskSample*> out;
    for (const auto& id : ids)
        if (const auto* s = data.find(id)) out.push_back(s);
    return out;
}

inline void gather(const std::vector<const TaskSample*>& samples, std::size_t begin, std::size_t end,
                   std::vector<float>& input, std::vector<int>& labels) {
    input.clear();
    labels.clear();
    for (std::size_t i = begin; i < end; ++i) {
        input.insert(input.end(), samples[i]->input.begin(), samples[i]->input.end());
        labels.push_back(samples[i]->label);
    }
}

struct Evaluation {
    double loss = 0.0;
    std::vector<int> predicted;
    std::vector<double> prob1;
};

inline Evaluation evaluate(Network<float>& net, const std::vector<const TaskSample*>& samples,
                           const std::array<float, 2>& weights, std::size_t chunk = 8) {
    Evaluation e;
    std::vector<float> input;
    std::vector<int> labels;
    double total = 0.0;
    for (std::size_t b = 0; b < samples.size(); b += chunk) {
        const std::size_t end = std::min(samples.size(), b + chunk);
        gather(samples, b, end, input, labels);
        auto c = net.forward(input, end - b, false);
        total += static_cast<double>(net.loss(c, labels, weights)) * static_cast<double>(end - b);
        for (std::size_t s = 0; s < end - b; ++s) {
            e.prob1.push_back(c.probs[2 * s + 1]);
            e.predicted.push_back(c.probs[2 * s + 1] > c.probs[2 * s] ? 1 : 0);
        }
    }
    e.loss = samples.empty() ? 0.0 : total / static_cast<double>(samples.size());
    return e;
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return qc::splitmix64(a ^ qc::splitmix64(b)); }

}  // namespace detail

/// Trains on split.train[fold], monitors validation loss on split.validation[fold] and keeps the
/// parameters of the best epoch. Split members without a label for the task are skipped.
inline TrainedModel train_fold(const TaskDataset& data, const DatasetSplit& split, int fold, const NetworkSpec& spec,
                               const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
    cfg.validate();
    if (fold < 0 || static_cast<std::size_t>(fold) >= split.train.size() ||
        static_cast<std::size_t>(fold) >= split.validation.size())
        fail(errc::invalid_argument, "fold " + std::to_string(fold) + " is not in the split");
    if (spec.input != data.input) fail(errc::shape_mismatch, "network input does not match the dataset volumes");
    const auto train = detail::resolve(data, split.train[static_cast<std::size_t>(fold)]);
    const auto val = detail::resolve(data, split.validation[static_cast<std::size_t>(fold)]);
    if (train.empty()) fail(errc::empty_fold, "training fold " + std::to_string(fold) + " is empty");
    if (val.empty()) fail(errc::empty_fold, "validation fold " + std::to_string(fold) + " is empty");
    std::size_t n1 = 0;
    for (const auto* s : train) n1 += static_cast<std::size_t>(s->label);
    if (n1 == 0 || n1 == train.size())
        fail(errc::degenerate_labels, "training fold " + std::to_string(fold) + " holds a single class");

    Network<float> net(spec);
    const bool has_bn = std::any_of(spec.layers.begin(), spec.layers.end(),
                                    [](const LayerSpec& l) { return l.kind == LayerKind::batchnorm; });
    if (has_bn && cfg.batch_size < 2) fail(errc::invalid_argument, "batch norm training needs batch_size >= 2");
    if (has_bn && train.size() < 2) fail(errc::empty_fold, "training fold needs at least 2 images");
    net.initialize(cfg.seed);

    TrainedModel model;
    model.spec = spec;
    model.fold_index = fold;
    model.config = cfg;
    model.class_weights = cfg.class_weights ? *cfg.class_weights : inverse_frequency_weights(train.size() - n1, n1);
    const std::array<float, 2> weights{static_cast<float>(model.class_weights[0]),
                                       static_cast<float>(model.class_weights[1])};
    const AdamConfig adam{cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps};
    AdamState state;

    const std::size_t remainder = train.size() % cfg.batch_size;
    if (has_bn && remainder == 1)
        model.log.push_back("dropping a trailing batch of 1 image per epoch (" + std::to_string(train.size()) +
                            " training images, batch size " + std::to_string(cfg.batch_size) + ")");

    double best = std::numeric_limits<double>::infinity();
    int since_best = 0;
    std::vector<std::size_t> order(train.size());
    std::vector<float> input;
    std::vector<int> labels;
    std::vector<const TaskSample*> batch_samples;
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 rng(detail::mix(cfg.seed, static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), b + cfg.batch_size);
            if (has_bn && end - b < 2) break;
            batch_samples.clear();
            for (std::size_t i = b; i < end; ++i) batch_samples.push_back(train[order[i]]);
            detail::gather(batch_samples, 0, batch_samples.size(), input, labels);
            const std::uint64_t drop_seed = detail::mix(cfg.seed ^ 0xD1B54A32D192ED03ULL,
                                                        static_cast<std::uint64_t>(epoch) * 1000003ULL + b);
            auto cache = net.forward(input, end - b, true, drop_seed);
            loss_sum += static_cast<double>(net.loss(cache, labels, weights)) * static_cast<double>(end - b);
            seen += end - b;
            const auto grad = net.backward(cache, labels, weights);
            adam_step(net.mutable_params(), grad, state, adam);
        }

        const auto ev = detail::evaluate(net, val, weights);
        std::vector<int> truth;
        for (const auto* s : val) truth.push_back(s->label);
        EpochRecord rec{epoch, seen ? loss_sum / static_cast<double>(seen) : 0.0, ev.loss,
                        balanced_accuracy(ev.predicted, truth)};
        model.trace.push_back(rec);
        model.epochs_run = epoch;
        if (on_epoch) on_epoch(rec);
        if (rec.validation_loss < best) {
            best = rec.validation_loss;
            model.best_epoch = epoch;
            model.parameters = net.params();
            model.buffers = net.buffers();
            since_best = 0;
        } else if (++since_best > cfg.early_stop_patience) {
            break;
        }
    }
    model.best_validation_loss = best;
    if (model.parameters.empty()) {
        // Every validation loss was NaN; keep the final state.
        model.parameters = net.params();
        model.buffers = net.buffers();
    }
    return model;
}

struct Prediction {
    std::vector<int> labels;
    std::vector<double> prob1;  // probability of class 1
};

/// Inference-mode prediction for a batch of volumes laid out back to back.
inline Prediction predict(const TrainedModel& model, std::span<const float> volumes, std::size_t count) {
    Network<float> net(model.spec);
    net.set_params(model.parameters);
    net.set_buffers(model.buffers);
    const std::size_t n = numel(model.spec.input);
    if (volumes.size() != count * n) fail(errc::shape_mismatch, "volume batch does not match the network input");
    Prediction p;
    constexpr std::size_t chunk = 8;
    for (std::size_t b = 0; b < count; b += chunk) {
        const std::size_t end = std::min(count, b + chunk);
        auto c = net.forward(volumes.subspan(b * n, (end - b) * n), end - b, false);
        for (std::size_t s = 0; s < end - b; ++s) {
            p.prob1.push_back(c.probs[2 * s + 1]);
            p.labels.push_back(c.probs[2 * s + 1] > c.probs[2 * s] ? 1 : 0);
        }
    }
    return p;
}

inline Prediction predict(const TrainedModel& model, const std::vector<const TaskSample*>& samples) {
    std::vector<float> input;
    std::vector<int> labels;
    detail::gather(samples, 0, samples.size(), input, labels);
    if (samples.empty()) return {};
    return predict(model, input, samples.size());
}

inline EvalReport evaluate_model(const TrainedModel& model, const TaskDataset& data, const std::vector<std::string>& ids) {
    const auto samples = detail::resolve(data, ids);
    if (samples.empty()) fail(errc::empty_fold, "no labelled test images for " + std::string(task_name(data.task)));
    const auto p = predict(model, samples);
    std::vector<int> truth;
    for (const auto* s : samples) truth.push_back(s->label);
    return evaluate_predictions(std::string(task_name(data.task)), p.labels, truth, p.prob1);
}

struct CrossValidationResult {
    std::vector<TrainedModel> models;
    std::vector<EvalReport> fold_reports;  // each fold's model on the common test set
    std::map<std::string, MeanStd> aggregate;
};

/// `max_folds` limits how many folds are trained (all when 0).
inline CrossValidationResult run_cross_validation(const TaskDataset& data, const DatasetSplit& split,
                                                  const NetworkSpec& spec, const TrainConfig& cfg,
                                                  int max_folds = 0, const EpochCallback& on_epoch = {}) {
    if (split.n_folds < 1 || split.train.size() != static_cast<std::size_t>(split.n_folds))
        fail(errc::invalid_argument, "split does not hold n_folds training lists");
    const int folds = max_folds > 0 ? std::min(max_folds, split.n_folds) : split.n_folds;
    CrossValidationResult out;
    for (int f = 0; f < folds; ++f) {
        TrainConfig fold_cfg = cfg;
        fold_cfg.seed = detail::mix(cfg.seed, static_cast<std::uint64_t>(f) + 1);
        out.models.push_back(train_fold(data, split, f, spec, fold_cfg, on_epoch));
        out.fold_reports.push_back(evaluate_model(out.models.back(), data, split.test));
    }
    out.aggregate = aggregate_reports(out.fold_reports);
    return out;
}

struct LearningCurvePoint {
    std::size_t size = 0;          // requested training-pool size
    std::size_t actual_size = 0;   // images drawn (patient granularity may overshoot)
    MeanStd ba;
    std::vector<double> fold_ba;
};

/// Sizes count images of the train/validation pool (everything outside the test set). For each
/// size, whole patients are drawn at random until the size is reached, re-split into folds and
/// cross-validated against the fixed test set. The full pool reuses `split` unchanged.
inline std::vector<LearningCurvePoint> learning_curve(const TaskDataset& data, const DatasetSplit& split,
                                                      const std::vector<std::size_t>& sizes, const NetworkSpec& spec,
                                                      const TrainConfig& cfg, int max_folds = 0) {
    const std::set<std::string> test(split.test.begin(), split.test.end());
    std::vector<SplitItem> pool;
    for (const auto& s : data.samples)
        if (!test.count(s.image_id)) pool.push_back({s.image_id, s.patient_id, std::to_string(s.label)});
    for (auto n : sizes)
        if (n > pool.size())
            fail(errc::size_too_large, "size " + std::to_string(n) + " exceeds the " + std::to_string(pool.size()) +
                                           "-image training pool");

    std::vector<LearningCurvePoint> out;
    for (auto n : sizes) {
        LearningCurvePoint pt;
        pt.size = n;
        DatasetSplit sub;
        if (n == pool.size()) {
            sub = split;
            pt.actual_size = n;
        } else {
            std::map<std::string, std::vector<std::size_t>> by_patient;
            for (std::size_t i = 0; i < pool.size(); ++i) by_patient[pool[i].patient_id].push_back(i);
            std::vector<std::string> patients;
            for (const auto& [p, v] : by_patient) patients.push_back(p);
            std::mt19937_64 rng(detail::mix(cfg.seed, n));
            std::shuffle(patients.begin(), patients.end(), rng);
            std::vector<SplitItem> chosen;
            for (const auto& p : patients) {
                if (chosen.size() >= n) break;
                for (auto i : by_patient[p]) chosen.push_back(pool[i]);
            }
            pt.actual_size = chosen.size();
            sub = patient_kfold(chosen, split.n_folds, detail::mix(cfg.seed, n + 1));
            sub.test = split.test;
        }
        const auto cv = run_cross_validation(data, sub, spec, cfg, max_folds);
        for (const auto& r : cv.fold_reports) pt.fold_ba.push_back(r.metrics.ba.value_or(0.0));
        pt.ba = mean_std(pt.fold_ba);
        out.push_back(pt);
    }
    return out;
}

}  // namespace qc::cnn
