#pragma once

#include <stdexcept>
#include <string>

namespace culturemap {

// Every failure the library raises derives from Error; the CLI maps the
// category onto a process exit code.
enum class ErrorCategory {
    usage,    // bad config, bad arguments
    data,     // malformed or degenerate input data
    backend,  // transport / HTTP failures talking to a model
};

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& what)
        : std::runtime_error(what), category_(category) {}

    ErrorCategory category() const noexcept { return category_; }

private:
    ErrorCategory category_;
};

#define CULTUREMAP_DEFINE_ERROR(Name, Category)                              \
    class Name : public Error {                                              \
    public:                                                                  \
        explicit Name(const std::string& what)                               \
            : Error(ErrorCategory::Category, #Name ": " + what) {}           \
    }

// survey_core
CULTUREMAP_DEFINE_ERROR(OutOfRange, data);
CULTUREMAP_DEFINE_ERROR(NoAnswerFound, data);
CULTUREMAP_DEFINE_ERROR(RegistryError, usage);

class InvalidEntry : public Error {
public:
    // index == -1 signals an arity mismatch rather than a bad entry
    InvalidEntry(int index, const std::string& what)
        : Error(ErrorCategory::data, "InvalidEntry(" + (index < 0 ? std::string("arity") : std::to_string(index)) +
                                         "): " + what),
          index_(index) {}

    int index() const noexcept { return index_; }
    bool is_arity() const noexcept { return index_ < 0; }

private:
    int index_;
};

// ivs_ingest
CULTUREMAP_DEFINE_ERROR(SchemaError, data);
CULTUREMAP_DEFINE_ERROR(MissingColumn, data);
CULTUREMAP_DEFINE_ERROR(UnknownWave, data);
CULTUREMAP_DEFINE_ERROR(EmptyGroup, data);
CULTUREMAP_DEFINE_ERROR(InvalidSpec, usage);

// benchmark_builder
CULTUREMAP_DEFINE_ERROR(DegenerateIndicator, data);
CULTUREMAP_DEFINE_ERROR(RankDeficient, data);
CULTUREMAP_DEFINE_ERROR(NoConvergence, data);
CULTUREMAP_DEFINE_ERROR(SpaceFormatError, data);

// projection / metrics
CULTUREMAP_DEFINE_ERROR(EmptyVariantSet, usage);
CULTUREMAP_DEFINE_ERROR(UnknownCountry, data);

// llm_gateway
CULTUREMAP_DEFINE_ERROR(TransportError, backend);
CULTUREMAP_DEFINE_ERROR(MockMisconfigured, usage);
CULTUREMAP_DEFINE_ERROR(UnknownQuestion, backend);

class BadStatus : public Error {
public:
    BadStatus(int code, const std::string& body)
        : Error(ErrorCategory::backend, "BadStatus(" + std::to_string(code) + "): " + body), code_(code) {}

    int code() const noexcept { return code_; }

private:
    int code_;
};

// prompting
CULTUREMAP_DEFINE_ERROR(MissingCountry, usage);
CULTUREMAP_DEFINE_ERROR(MissingProgram, usage);
CULTUREMAP_DEFINE_ERROR(ElicitationFailed, data);

// optimizer
CULTUREMAP_DEFINE_ERROR(ProposerFailed, backend);

// cli
CULTUREMAP_DEFINE_ERROR(ConfigError, usage);

#undef CULTUREMAP_DEFINE_ERROR

}  // namespace culturemap
