// Copyright (c) 2026 The modref authors
// SPDX-License-Identifier: Apache-2.0
//
// Episodic pre-training of the visual token generator.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "modref/encoders.hpp"
#include "modref/references.hpp"
#include "modref/rng.hpp"

namespace modref {

struct EpisodeSpec {
    std::size_t shots = 8;         // K
    std::size_t class_batch = 16;  // classes per episode
    bool strict = false;           // error instead of skipping short classes

    /// ceil(K / 4)
    std::size_t min_exemplars() const { return (shots + 3) / 4; }
    /// floor(3K / 4)
    std::size_t max_exemplars() const { return (3 * shots) / 4; }
    /// 1 <= M_low <= M_high <= K - 1 and class_batch >= 1.
    void validate() const;

    static EpisodeSpec desk_scale() { return {8, 16, false}; }
    static EpisodeSpec large_scale() { return {8, 192, false}; }
};

template <typename T>
struct EpisodeClass {
    std::size_t source = 0;  // index into the dataset
    std::size_t label = 0;   // 0 .. class_batch - 1
    std::vector<std::size_t> exemplar_rows;
    std::vector<std::size_t> target_rows;
    Tensor<T> exemplars;  // M x d
    Tensor<T> targets;    // (K - M) x d
    Tensor<T> text_tokens;
};

template <typename T>
struct Episode {
    std::vector<EpisodeClass<T>> classes;
};

/// Draws class_batch classes, K samples from each class's exemplar pool, and
/// splits them into M ~ U{M_low..M_high} exemplars and K - M targets. Classes
/// with fewer than K samples are skipped (a warning is appended) unless strict.
template <typename T>
Episode<T> sample_episode(std::span<const ClassReferenceSet<T>> dataset, const EpisodeSpec& spec, Rng& rng,
                          std::vector<std::string>* warnings = nullptr);

/// CE(p_V, targets) + CE(p_VT, targets) with dropout driven by `dropout_rng`.
template <typename T>
Tensor<T> episode_loss(const GeneratorParams<T>& generator, const LanguageEncoderParams<T>& encoder,
                       const Episode<T>& episode, T tau_t, Rng* dropout_rng);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

template <typename T>
struct AdamState {
    std::vector<T> first_moment;
    std::vector<T> second_moment;
    std::size_t step = 0;

    explicit AdamState(std::size_t n = 0) : first_moment(n, T(0)), second_moment(n, T(0)) {}
};

/// One bias-corrected Adam update of `params` in place.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state, double lr,
               const AdamConfig& config = {});

/// Adam over a list of parameter tensors (leaves with gradients).
template <typename T>
class Adam {
public:
    Adam(std::vector<Tensor<T>> params, AdamConfig config = {});
    void zero_grad();
    void step(double lr);

private:
    std::vector<Tensor<T>> params_;
    std::vector<AdamState<T>> states_;
    AdamConfig config_;
};

/// base * (1 + cos(pi * step / (total - 1))) / 2; reaches 0 on the last step.
double cosine_lr(double base_lr, std::size_t step, std::size_t total_steps);

struct TrainLogRow {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double lr = 0;
    double loss = 0;
    std::size_t min_exemplars = 0;  // smallest M drawn in the episode
    std::size_t max_exemplars = 0;
};

struct TrainConfig {
    std::size_t epochs = 30;
    /// Total episodes; overrides epochs when set.
    std::optional<std::size_t> steps;
    double base_lr = 2e-4;
    AdamConfig adam;
    double tau_t = 0.01;
    std::uint64_t seed = 0;
    GeneratorConfig generator;
    /// Called every `checkpoint_every` steps (0 = never) and after the last step.
    std::size_t checkpoint_every = 0;
    std::function<void(std::size_t step, const GeneratorParams<float>&)> on_checkpoint;
    /// Called after every step with its log row.
    std::function<void(const TrainLogRow&)> on_step;
};


struct TrainResult {
    GeneratorParams<float> generator;
    std::vector<TrainLogRow> log;
    std::vector<std::string> warnings;
};

/// Episodes per epoch: ceil(eligible classes / class_batch).
std::size_t episodes_per_epoch(std::size_t eligible_classes, std::size_t class_batch);

/// Only the generator is updated. Throws NumericError on a non-finite loss.
TrainResult train(std::span<const ClassReferenceSet<float>> dataset, const LanguageEncoderParams<float>& encoder,
                  const EpisodeSpec& spec, const TrainConfig& config);

std::string log_to_csv(std::span<const TrainLogRow> log);

}  // namespace modref
