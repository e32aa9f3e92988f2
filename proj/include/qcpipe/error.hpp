#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace qc {

enum class errc {
    invalid_argument,
    // core-model
    missing_adjudication,
    id_mismatch,
    // nifti-io
    bad_magic,
    unsupported_datatype,
    truncated_payload,
    non_finite,
    dimension_overflow,
    io_failure,
    // cohort-select
    empty_catalog,
    duplicate_image_id,
    malformed_row,
    unknown_image_id,
    // phantom
    shape_too_small,
    invalid_mix,
    // cnn-engine
    shape_mismatch,
    stale_cache,
    empty_fold,
    degenerate_labels,
    size_too_large,
    bad_checkpoint,
    // evaluation
    empty_matrix,
    one_class_only,
    length_mismatch,
    too_few_patients,
    infeasible_strata,
    // annotation-service
    validation_failed,
    unknown_image,
    unknown_rater,
    not_ready,
};

inline std::string_view errc_name(errc e) {
    switch (e) {
    case errc::invalid_argument: return "InvalidArgument";
    case errc::missing_adjudication: return "MissingAdjudication";
    case errc::id_mismatch: return "IdMismatch";
    case errc::bad_magic: return "BadMagic";
    case errc::unsupported_datatype: return "UnsupportedDatatype";
    case errc::truncated_payload: return "TruncatedPayload";
    case errc::non_finite: return "NonFinite";
    case errc::dimension_overflow: return "DimensionOverflow";
    case errc::io_failure: return "IoFailure";
    case errc::empty_catalog: return "EmptyCatalog";
    case errc::duplicate_image_id: return "DuplicateImageId";
    case errc::malformed_row: return "MalformedRow";
    case errc::unknown_image_id: return "UnknownImageId";
    case errc::shape_too_small: return "ShapeTooSmall";
    case errc::invalid_mix: return "InvalidMix";
    case errc::shape_mismatch: return "ShapeMismatch";
    case errc::stale_cache: return "StaleCache";
    case errc::empty_fold: return "EmptyFold";
    case errc::degenerate_labels: return "DegenerateLabels";
    case errc::size_too_large: return "SizeTooLarge";
    case errc::bad_checkpoint: return "BadCheckpoint";
    case errc::empty_matrix: return "EmptyMatrix";
    case errc::one_class_only: return "OneClassOnly";
    case errc::length_mismatch: return "LengthMismatch";
    case errc::too_few_patients: return "TooFewPatients";
    case errc::infeasible_strata: return "InfeasibleStrata";
    case errc::validation_failed: return "ValidationFailed";
    case errc::unknown_image: return "UnknownImage";
    case errc::unknown_rater: return "UnknownRater";
    case errc::not_ready: return "NotReady";
    }
    return "Unknown";
}

/// Every failure raised by the library carries a stable machine-readable code.
class error : public std::runtime_error {
public:
    error(errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    errc code() const noexcept { return code_; }

private:
    errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& what) { throw error(code, what); }

}  // namespace qc
