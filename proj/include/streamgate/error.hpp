#pragma once

#include <stdexcept>
#include <string>

namespace streamgate {

// Base of every error raised by the library. `kind()` is a short stable tag
// used by the CLI when reporting failures.
class Error : public std::runtime_error {
  public:
    Error(std::string kind, const std::string &what)
        : std::runtime_error(what), kind_(std::move(kind)) {}
    const std::string &kind() const noexcept { return kind_; }

  private:
    std::string kind_;
};

#define STREAMGATE_ERROR(Name, tag)                                                               \
    class Name : public Error {                                                                   \
      public:                                                                                     \
        explicit Name(const std::string &what) : Error(tag, what) {}                              \
    };

STREAMGATE_ERROR(DimensionError, "dimension")
STREAMGATE_ERROR(IndexError, "index")
STREAMGATE_ERROR(TrainingError, "training")
STREAMGATE_ERROR(FormatError, "format")
STREAMGATE_ERROR(SpecError, "spec")
STREAMGATE_ERROR(NumericalError, "numerical")
STREAMGATE_ERROR(ConfigError, "config")
STREAMGATE_ERROR(OrderingError, "ordering")
STREAMGATE_ERROR(EmptyPoolError, "empty-pool")
STREAMGATE_ERROR(InputError, "input")
STREAMGATE_ERROR(DatasetError, "dataset")
STREAMGATE_ERROR(EvaluationError, "evaluation")
STREAMGATE_ERROR(VocabularyError, "vocabulary")
STREAMGATE_ERROR(ContextOverflowError, "context-overflow")
STREAMGATE_ERROR(BackendError, "backend")

#undef STREAMGATE_ERROR

} // namespace streamgate
