// Copyright (c) 2026 The modref authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace modref {

/// Base of every error the toolkit throws. `kind()` is a stable short tag
/// used by the CLI when printing diagnostics.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
    virtual const char* kind() const noexcept { return "error"; }
};

#define MODREF_DEFINE_ERROR(Name, tag)                                         \
    class Name : public Error {                                                \
    public:                                                                    \
        explicit Name(const std::string& what) : Error(what) {}                \
        const char* kind() const noexcept override { return tag; }             \
    };

MODREF_DEFINE_ERROR(DimensionError, "dimension")
MODREF_DEFINE_ERROR(ParameterError, "parameter")
MODREF_DEFINE_ERROR(IndexError, "index")
MODREF_DEFINE_ERROR(DegenerateInputError, "degenerate-input")
MODREF_DEFINE_ERROR(NumericError, "numeric")
MODREF_DEFINE_ERROR(ConfigError, "config")
MODREF_DEFINE_ERROR(ReferenceError, "reference")
MODREF_DEFINE_ERROR(ValidationError, "validation")
MODREF_DEFINE_ERROR(FormatError, "format")
MODREF_DEFINE_ERROR(IoError, "io")

#undef MODREF_DEFINE_ERROR

}  // namespace modref
