// Copyright (c) 2026 The modref authors
// SPDX-License-Identifier: Apache-2.0

#include "modref/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "modref/classifiers.hpp"
#include "modref/errors.hpp"
#include "modref/ops.hpp"

namespace modref {

void EpisodeSpec::validate() const {
    if (class_batch == 0) throw ValidationError("episode: class_batch must be positive");
    if (shots < 2) throw ValidationError("episode: K must be at least 2");
    const auto lo = min_exemplars(), hi = max_exemplars();
    if (!(lo >= 1 && lo <= hi && hi + 1 <= shots))
        throw ValidationError("episode: exemplar range [" + std::to_string(lo) + ", " + std::to_string(hi) +
                              "] invalid for K = " + std::to_string(shots));
}

namespace {

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows) {
    const std::size_t d = x.cols();
    std::vector<T> out;
    out.reserve(rows.size() * d);
    for (auto r : rows) out.insert(out.end(), x.data().begin() + r * d, x.data().begin() + (r + 1) * d);
    return Tensor<T>({rows.size(), d}, std::move(out));
}

}  // namespace

template <typename T>
Episode<T> sample_episode(std::span<const ClassReferenceSet<T>> dataset, const EpisodeSpec& spec, Rng& rng,
                          std::vector<std::string>* warnings) {
    spec.validate();
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const std::size_t n = dataset[i].has_exemplars() ? dataset[i].exemplars.rows() : 0;
        if (n >= spec.shots) {
            eligible.push_back(i);
        } else if (spec.strict) {
            throw ValidationError("class '" + dataset[i].id + "' has " + std::to_string(n) + " samples, K = " +
                                  std::to_string(spec.shots));
        } else if (warnings) {
            warnings->push_back("skipping class '" + dataset[i].id + "': " + std::to_string(n) + " samples < K = " +
                                std::to_string(spec.shots));
        }
    }
    if (eligible.size() < spec.class_batch)
        throw ValidationError("episode needs " + std::to_string(spec.class_batch) + " classes with >= " +
                              std::to_string(spec.shots) + " samples, found " + std::to_string(eligible.size()));

    Episode<T> episode;
    const auto picked = rng.sample_without_replacement(eligible.size(), spec.class_batch);
    for (std::size_t label = 0; label < picked.size(); ++label) {
        const auto& ref = dataset[eligible[picked[label]]];
        EpisodeClass<T> ec;
        ec.source = eligible[picked[label]];
        ec.label = label;
        const auto rows = rng.sample_without_replacement(ref.exemplars.rows(), spec.shots);
        const auto m = static_cast<std::size_t>(rng.uniform_int(spec.min_exemplars(), spec.max_exemplars()));
        ec.exemplar_rows.assign(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(m));
        ec.target_rows.assign(rows.begin() + static_cast<std::ptrdiff_t>(m), rows.end());
        ec.exemplars = gather_rows(ref.exemplars, ec.exemplar_rows);
        ec.targets = gather_rows(ref.exemplars, ec.target_rows);
        ec.text_tokens = ref.text_tokens;
        episode.classes.push_back(std::move(ec));
    }
    return episode;
}

template <typename T>
Tensor<T> episode_loss(const GeneratorParams<T>& generator, const LanguageEncoderParams<T>& encoder,
                       const Episode<T>& episode, T tau_t, Rng* dropout_rng) {
    if (episode.classes.empty()) throw ValidationError("episode_loss: empty episode");
    std::vector<ClassReferenceSet<T>> refs;
    std::vector<Tensor<T>> targets;
    std::vector<std::size_t> labels;
    for (const auto& ec : episode.classes) {
        refs.push_back({std::to_string(ec.source), ec.label, ec.exemplars, ec.text_tokens, {}});
        targets.push_back(ec.targets);
        labels.insert(labels.end(), ec.targets.rows(), ec.label);
    }
    const auto bank = build_classifier_weights<T>(&generator, encoder, refs, {false, true, true}, tau_t, dropout_rng);
    const auto features = concat_rows(targets);
    const auto loss_v = cross_entropy(classify(*bank.vision, features, tau_t), labels);
    const auto loss_vt = cross_entropy(classify(*bank.multimodal, features, tau_t), labels);
    return add(loss_v, loss_vt);
}

template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state, double lr,
               const AdamConfig& config) {
    if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
        state.second_moment.size() != params.size())
        throw DimensionError("adam_step: parameter, gradient and state sizes differ");
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(config.beta1, t);
    const double c2 = 1.0 - std::pow(config.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = static_cast<double>(grads[i]) + config.weight_decay * static_cast<double>(params[i]);
        const double m = config.beta1 * static_cast<double>(state.first_moment[i]) + (1.0 - config.beta1) * g;
        const double v = config.beta2 * static_cast<double>(state.second_moment[i]) + (1.0 - config.beta2) * g * g;
        state.first_moment[i] = static_cast<T>(m);
        state.second_moment[i] = static_cast<T>(v);
        const double update = lr * (m / c1) / (std::sqrt(v / c2) + config.eps);
        params[i] = static_cast<T>(static_cast<double>(params[i]) - update);
    }
}

template <typename T>
Adam<T>::Adam(std::vector<Tensor<T>> params, AdamConfig config) : params_(std::move(params)), config_(config) {
    for (const auto& p : params_) {
        if (!p.requires_grad() || !p.is_leaf()) throw ParameterError("Adam: parameters must be leaves with gradients");
        states_.emplace_back(p.size());
    }
}

template <typename T>
void Adam<T>::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

template <typename T>
void Adam<T>::step(double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i)
        adam_step<T>(params_[i].mutable_data(), params_[i].grad(), states_[i], lr, config_);
}

double cosine_lr(double base_lr, std::size_t step, std::size_t total_steps) {
    if (total_steps <= 1) return base_lr;
    const double progress = static_cast<double>(std::min(step, total_steps - 1)) / static_cast<double>(total_steps - 1);
    return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * progress));
}

std::size_t episodes_per_epoch(std::size_t eligible_classes, std::size_t class_batch) {
    return class_batch == 0 ? 0 : std::max<std::size_t>(1, (eligible_classes + class_batch - 1) / class_batch);
}

TrainResult train(std::span<const ClassReferenceSet<float>> dataset, const LanguageEncoderParams<float>& encoder,
                  const EpisodeSpec& spec, const TrainConfig& config) {
    spec.validate();
    if (config.epochs == 0 && !config.steps) throw ValidationError("train: epochs must be >= 1");
    if (!(config.base_lr > 0)) throw ValidationError("train: base learning rate must be positive");
    if (config.steps && *config.steps == 0) throw ValidationError("train: steps must be >= 1");
    if (!(config.tau_t > 0)) throw ValidationError("train: tau_t must be positive");

    std::size_t eligible = 0;
    for (const auto& ref : dataset) eligible += ref.has_exemplars() && ref.exemplars.rows() >= spec.shots;
    const std::size_t per_epoch = episodes_per_epoch(eligible, spec.class_batch);
    const std::size_t total = config.steps ? *config.steps : config.epochs * per_epoch;

    auto gen_config = config.generator;
    gen_config.dim = encoder.dim();
    TrainResult result{GeneratorParams<float>::initialize(gen_config, config.seed), {}, {}};
    Adam<float> optimizer(result.generator.parameters(), config.adam);

    // Independent streams so changing dropout rates does not reshuffle episodes.
    Rng sampler(config.seed ^ 0x9E3779B97F4A7C15ull);
    Rng dropout(config.seed ^ 0xD1B54A32D192ED03ull);
    for (std::size_t step = 0; step < total; ++step) {
        auto* warn = step == 0 ? &result.warnings : nullptr;
        const auto episode = sample_episode<float>(dataset, spec, sampler, warn);
        const double lr = cosine_lr(config.base_lr, step, total);
        optimizer.zero_grad();
        const auto loss = episode_loss<float>(result.generator, encoder, episode, static_cast<float>(config.tau_t),
                                              &dropout);
        const double value = loss.item();
        if (!std::isfinite(value)) {
            std::ostringstream os;
            os << "non-finite loss at step " << step << " (lr " << lr << ")";
            if (!result.log.empty()) os << "; previous loss " << result.log.back().loss;
            throw NumericError(os.str());
        }
        loss.backward();
        optimizer.step(lr);

        TrainLogRow row{step, step / per_epoch, lr, value, spec.shots, 0};
        for (const auto& ec : episode.classes) {
            row.min_exemplars = std::min(row.min_exemplars, ec.exemplars.rows());
            row.max_exemplars = std::max(row.max_exemplars, ec.exemplars.rows());
        }
        result.log.push_back(row);
        if (config.on_step) config.on_step(row);
        const bool last = step + 1 == total;
        if (config.on_checkpoint && (last || (config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0)))
            config.on_checkpoint(step + 1, result.generator);
    }
    return result;
}

std::string log_to_csv(std::span<const TrainLogRow> log) {
    std::ostringstream os;
    os.precision(9);
    os << "step,epoch,lr,loss,m_min,m_max\n";
    for (const auto& r : log)
        os << r.step << ',' << r.epoch << ',' << r.lr << ',' << r.loss << ',' << r.min_exemplars << ','
           << r.max_exemplars << '\n';
    return os.str();
}

#define MODREF_INSTANTIATE_TRAINING(T)                                                                            \
    template Episode<T> sample_episode(std::span<const ClassReferenceSet<T>>, const EpisodeSpec&, Rng&,           \
                                       std::vector<std::string>*);                                                \
    template Tensor<T> episode_loss(const GeneratorParams<T>&, const LanguageEncoderParams<T>&, const Episode<T>&, \
                                    T, Rng*);                                                                     \
    template void adam_step(std::span<T>, std::span<const T>, AdamState<T>&, double, const AdamConfig&);          \
    template class Adam<T>;

MODREF_INSTANTIATE_TRAINING(float)
MODREF_INSTANTIATE_TRAINING(double)

}  // namespace modref
