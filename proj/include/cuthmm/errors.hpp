#pragma once

#include <stdexcept>
#include <string>

namespace cuthmm {

// Base class for every error raised by the library. The CLI maps the
// category onto its exit code.
class Error : public std::runtime_error {
public:
    enum class Category { Config, MissingArtifact, Numerical, Domain };

    Error(Category category, const std::string& what)
        : std::runtime_error(what), category_(category) {}

    Category category() const noexcept { return category_; }

private:
    Category category_;
};

#define CUTHMM_DEFINE_ERROR(Name, Cat)                                     \
    class Name : public Error {                                            \
    public:                                                                \
        explicit Name(const std::string& what)                             \
            : Error(Category::Cat, std::string(#Name ": ") + what) {}      \
    }

CUTHMM_DEFINE_ERROR(NonErgodic, Numerical);
CUTHMM_DEFINE_ERROR(ZeroLikelihood, Numerical);
CUTHMM_DEFINE_ERROR(SingularMoment, Numerical);
CUTHMM_DEFINE_ERROR(RankDeficient, Numerical);
CUTHMM_DEFINE_ERROR(NonConvergence, Numerical);
CUTHMM_DEFINE_ERROR(SingularOmega, Numerical);
CUTHMM_DEFINE_ERROR(SingularInformation, Numerical);
CUTHMM_DEFINE_ERROR(TooShort, Domain);
CUTHMM_DEFINE_ERROR(DomainError, Domain);
CUTHMM_DEFINE_ERROR(InvalidArgument, Domain);
CUTHMM_DEFINE_ERROR(InsufficientStores, Domain);
CUTHMM_DEFINE_ERROR(ConfigError, Config);
CUTHMM_DEFINE_ERROR(MissingArtifact, MissingArtifact);

#undef CUTHMM_DEFINE_ERROR

}  // namespace cuthmm
