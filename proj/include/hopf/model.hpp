#pragma once

#include <string>

#include <json.hpp>

#include "hopf/coordinate_map.hpp"
#include "hopf/normal_form.hpp"
#include "hopf/speed_model.hpp"

namespace hopf {

inline constexpr int kModelFormatVersion = 1;

// Normal form + observation map + oscillation speed.
struct HybridModel {
    NormalFormParams normal_form;
    CoordinateMap map;
    SpeedModel speed;
    std::string dataset_fingerprint;
    nlohmann::json config = nlohmann::json::object();
    int format_version = kModelFormatVersion;

    void validate() const;
};

}  // namespace hopf
