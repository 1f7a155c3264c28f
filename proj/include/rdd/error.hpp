#pragma once

#include <stdexcept>
#include <string>

namespace rdd {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated (shape mismatch, bad range, ...).
class InvalidArgument : public Error {
  public:
    using Error::Error;
};

/// The pixel queue holds fewer embeddings than were requested.
class NotReady : public Error {
  public:
    using Error::Error;
};

/// The progressive-distillation target inversion hit a vanishing denominator.
class SingularTarget : public Error {
  public:
    SingularTarget(double t, double t_target, double denominator);
    double t;
    double t_target;
    double denominator;
};

/// Training produced a non-finite loss.
class Divergence : public Error {
  public:
    using Error::Error;
};

/// Malformed on-disk artifact or config file.
class FormatError : public Error {
  public:
    using Error::Error;
};

} // namespace rdd

#define RDD_REQUIRE(cond, msg)                                                                     \
    do {                                                                                           \
        if (!(cond)) {                                                                             \
            throw ::rdd::InvalidArgument(std::string(__func__) + ": " + (msg));                    \
        }                                                                                          \
    } while (0)
