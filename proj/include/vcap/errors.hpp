#pragma once

#include <stdexcept>
#include <string>

namespace vcap {

// Error categories map onto CLI exit codes: usage -> 1, data -> 2, numeric -> 3.
enum class ErrorKind { Usage = 1, Data = 2, Numeric = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

#define VCAP_DEFINE_ERROR(NAME, KIND)                       \
  struct NAME : Error {                                     \
    explicit NAME(const std::string& msg)                   \
        : Error(ErrorKind::KIND, std::string(#NAME ": ") + msg) {} \
  }

// numeric kernel
VCAP_DEFINE_ERROR(DimensionMismatch, Data);
VCAP_DEFINE_ERROR(EmptyInput, Data);
VCAP_DEFINE_ERROR(NonPositiveScale, Data);
VCAP_DEFINE_ERROR(NonFiniteEvaluation, Numeric);

// feature container
VCAP_DEFINE_ERROR(BadMagic, Data);
VCAP_DEFINE_ERROR(CorruptHeader, Data);
VCAP_DEFINE_ERROR(DimMismatch, Data);
VCAP_DEFINE_ERROR(NonFiniteValue, Data);
VCAP_DEFINE_ERROR(IoError, Data);
VCAP_DEFINE_ERROR(BadPattern, Usage);
VCAP_DEFINE_ERROR(MissingTensor, Data);

// attention
VCAP_DEFINE_ERROR(EmptyWindow, Data);
VCAP_DEFINE_ERROR(FrameCountMismatch, Data);

// graph
VCAP_DEFINE_ERROR(FrameRangeMismatch, Data);
VCAP_DEFINE_ERROR(EmptyGraph, Data);

// captioning
VCAP_DEFINE_ERROR(EmptyCorpus, Data);
VCAP_DEFINE_ERROR(PrefixTooLong, Data);
VCAP_DEFINE_ERROR(EmptyVisualSequence, Data);

// training
VCAP_DEFINE_ERROR(LengthMismatch, Data);
VCAP_DEFINE_ERROR(AllPadded, Data);
VCAP_DEFINE_ERROR(ShapeMismatch, Data);
VCAP_DEFINE_ERROR(EmptyDataset, Data);
VCAP_DEFINE_ERROR(DivergedLoss, Numeric);

#undef VCAP_DEFINE_ERROR

}  // namespace vcap
