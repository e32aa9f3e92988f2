#pragma once

#include <optional>
#include <string>

#include <json.hpp>

#include "qcpipe/registration.hpp"
#include "qcpipe/resample.hpp"
#include "qcpipe/volume.hpp"

namespace qc {

struct PreprocessConfig {
    double target_spacing = 1.0;
    Shape3 target_shape{169, 208, 179};
    Interpolation interpolation = Interpolation::trilinear;
    bool do_registration = false;
    std::optional<Volume> reference;
    // When set, only volumes with some voxel dimension below this value (mm) are resampled.
    std::optional<double> resample_below_spacing;

    void validate() const {
        if (!(target_spacing > 0.0)) fail(errc::invalid_argument, "target_spacing must be positive");
        for (auto s : target_shape)
            if (s < 1) fail(errc::invalid_argument, "target_shape must be >= 1");
        if (do_registration && !reference) fail(errc::invalid_argument, "registration requested without a reference");
    }
};

struct PreprocessResult {
    Volume volume;
    std::optional<RegistrationResult> registration;
};

/// resample -> optional affine registration -> min-max rescale -> centre crop/pad.
inline PreprocessResult preprocess_pipeline_detailed(const Volume& v, const PreprocessConfig& cfg) {
    cfg.validate();
    v.validate();
    PreprocessResult out;
    bool resample = true;
    if (cfg.resample_below_spacing) {
        const double smallest = std::min({v.spacing[0], v.spacing[1], v.spacing[2]});
        resample = smallest < *cfg.resample_below_spacing;
    }
    Volume cur = resample ? resample_isotropic(v, cfg.target_spacing, cfg.interpolation) : v;
    if (cfg.do_registration) {
        // Constant inputs have nothing to align; they pass through.
        if (cur.max() > cur.min()) {
            out.registration = register_affine(cur, *cfg.reference);
            cur = out.registration->registered;
        } else {
            cur = crop_or_pad(cur, cfg.reference->dims);
        }
    }
    cur = rescale_minmax(cur);
    out.volume = crop_or_pad(cur, cfg.target_shape);
    return out;
}

inline Volume preprocess_pipeline(const Volume& v, const PreprocessConfig& cfg) {
    return preprocess_pipeline_detailed(v, cfg).volume;
}

/// Reads the config fields; `reference` is given as a path and resolved by the caller.
inline PreprocessConfig preprocess_config_from_json(const nlohmann::json& j) {
    PreprocessConfig c;
    c.target_spacing = j.value("target_spacing", c.target_spacing);
    if (j.contains("target_shape")) {
        const auto s = j.at("target_shape").get<std::vector<std::size_t>>();
        if (s.size() != 3) fail(errc::invalid_argument, "target_shape needs 3 entries");
        c.target_shape = {s[0], s[1], s[2]};
    }
    const std::string interp = j.value("interpolation", std::string("trilinear"));
    if (interp == "cubic") c.interpolation = Interpolation::cubic;
    else if (interp == "trilinear") c.interpolation = Interpolation::trilinear;
    else fail(errc::invalid_argument, "interpolation must be trilinear or cubic");
    c.do_registration = j.value("do_registration", false);
    if (j.contains("resample_below_spacing") && !j.at("resample_below_spacing").is_null())
        c.resample_below_spacing = j.at("resample_below_spacing").get<double>();
    return c;
}

}  // namespace qc
