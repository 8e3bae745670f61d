#ifndef BIOTK_ERRORS_HPP
#define BIOTK_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace biotk {

struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& m) : std::runtime_error(m) {}
};
struct NormalizationError : std::runtime_error {
    explicit NormalizationError(const std::string& m) : std::runtime_error(m) {}
};
struct EmptyAggregationError : std::runtime_error {
    explicit EmptyAggregationError(const std::string& m) : std::runtime_error(m) {}
};
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& m) : std::runtime_error(m) {}
};
struct EmptyThresholdSetError : std::runtime_error {
    explicit EmptyThresholdSetError(const std::string& m) : std::runtime_error(m) {}
};
struct EmptyMatedSetError : std::runtime_error {
    explicit EmptyMatedSetError(const std::string& m) : std::runtime_error(m) {}
};
struct PartitionError : std::runtime_error {
    explicit PartitionError(const std::string& m) : std::runtime_error(m) {}
};
struct RangeClassViolation : std::runtime_error {
    explicit RangeClassViolation(const std::string& m) : std::runtime_error(m) {}
};
struct DegenerateActivationError : std::runtime_error {
    explicit DegenerateActivationError(const std::string& m) : std::runtime_error(m) {}
};
struct MissingScoreError : std::runtime_error {
    explicit MissingScoreError(const std::string& m) : std::runtime_error(m) {}
};
struct RankingDegenerateError : std::runtime_error {
    explicit RankingDegenerateError(const std::string& m) : std::runtime_error(m) {}
};
struct InsufficientDataError : std::runtime_error {
    explicit InsufficientDataError(const std::string& m) : std::runtime_error(m) {}
};
struct ProtocolError : std::runtime_error {
    explicit ProtocolError(const std::string& m) : std::runtime_error(m) {}
};
struct StreamOrderError : std::runtime_error {
    explicit StreamOrderError(const std::string& m) : std::runtime_error(m) {}
};
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& m) : std::runtime_error(m) {}
};

} // namespace biotk

#endif
