#pragma once

// nlohmann::json adapters for the configuration and record types. Readers
// take defaults for missing keys and throw ConfigError on wrong types.

#include <nlohmann/json.hpp>

#include "spi/detector.hpp"
#include "spi/geometry.hpp"
#include "spi/optim.hpp"
#include "spi/pipeline.hpp"
#include "spi/preprocess.hpp"
#include "spi/simulator.hpp"
#include "spi/store.hpp"

namespace spi {

void to_json(nlohmann::json& j, const DetectorConfig& c);
void from_json(const nlohmann::json& j, DetectorConfig& c);

void to_json(nlohmann::json& j, const RateChange& c);
void from_json(const nlohmann::json& j, RateChange& c);
void to_json(nlohmann::json& j, const OptimizerConfig& c);
void from_json(const nlohmann::json& j, OptimizerConfig& c);

void to_json(nlohmann::json& j, const BoxAnnotation& b);
void from_json(const nlohmann::json& j, BoxAnnotation& b);

void to_json(nlohmann::json& j, const DetectorGeometry& g);
void from_json(const nlohmann::json& j, DetectorGeometry& g);

void to_json(nlohmann::json& j, const RenderSpec& s);
void from_json(const nlohmann::json& j, RenderSpec& s);

void to_json(nlohmann::json& j, const SimConfig& c);
void from_json(const nlohmann::json& j, SimConfig& c);

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

void to_json(nlohmann::json& j, const ManifestEntry& e);
void from_json(const nlohmann::json& j, ManifestEntry& e);
void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

void to_json(nlohmann::json& j, const LabelRecord& r);
void from_json(const nlohmann::json& j, LabelRecord& r);

void to_json(nlohmann::json& j, const SelectionSet& s);

// Parses text, rethrowing parse and type errors as ConfigError with `what`
// as context.
nlohmann::json parse_json(const std::string& text, const std::string& what);

}  // namespace spi
