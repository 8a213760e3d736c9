// Copyright (c) 2026 The modref authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>

#include "modref/tensor.hpp"

namespace modref {

/// Everything known about one class: exemplar features (unit rows, may have
/// zero rows), text token embeddings, and optional held-out target features.
template <typename T>
struct ClassReferenceSet {
    std::string id;
    std::size_t label = 0;
    Tensor<T> exemplars;
    Tensor<T> text_tokens;
    Tensor<T> targets;

    bool has_exemplars() const { return exemplars.rows() > 0 && !exemplars.empty(); }
    bool has_targets() const { return targets.rows() > 0 && !targets.empty(); }
};

}  // namespace modref
