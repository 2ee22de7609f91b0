#pragma once

#include <stdexcept>
#include <string>

namespace sat {

// Base for all domain errors. kind() feeds the machine-readable error
// objects the CLI prints on stderr.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
    virtual const char* kind() const noexcept { return "Error"; }
};

#define SAT_ERROR_TYPE(Name)                                      \
    struct Name : Error {                                         \
        using Error::Error;                                       \
        const char* kind() const noexcept override { return #Name; } \
    };

SAT_ERROR_TYPE(ParseError)
SAT_ERROR_TYPE(InvalidInput)
SAT_ERROR_TYPE(UnsupportedLanguage)
SAT_ERROR_TYPE(AlignmentError)
SAT_ERROR_TYPE(DimensionMismatch)
SAT_ERROR_TYPE(ShapeMismatch)
SAT_ERROR_TYPE(TooLarge)
SAT_ERROR_TYPE(EmptyReference)
SAT_ERROR_TYPE(EmptyHeads)
SAT_ERROR_TYPE(SequenceTooLong)
SAT_ERROR_TYPE(NotConverged)
SAT_ERROR_TYPE(UsageError)

#undef SAT_ERROR_TYPE

}  // namespace sat
