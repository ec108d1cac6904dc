#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hre/metrics.hpp"
#include "hre/runtime.hpp"
#include "hre/store.hpp"
#include "hre/types.hpp"

namespace hre::detectors {

enum class Detector { MaxSoftmax, MaxLogit, Energy, Odin };

std::string detector_name(Detector d);
Detector parse_detector(const std::string& name);

struct DetectorConfig {
    std::vector<Detector> enabled{Detector::MaxSoftmax, Detector::MaxLogit,
                                  Detector::Energy, Detector::Odin};
    double odin_temperature = 1000.0;
    double odin_epsilon = 0.0014;
    double energy_temperature = 1.0;
    std::uint32_t per_source_cap = 0;  // 0 = use each OOD source in full
    std::string id_split = "id_val";   // or "id_test"

    void validate() const;
};

// Scalar scores; higher always means "more in-distribution".
double max_softmax_score(std::span<const double> logits);
double max_logit_score(std::span<const double> logits);
// negative free energy: T * logsumexp(z/T)
double energy_score(std::span<const double> logits, double temperature);
// max softmax at the ODIN temperature after nudging the input against the
// loss gradient of the model's own prediction
double odin_score(const runtime::ToyModel& model, std::span<const double> input,
                  const DetectorConfig& config);

// Per-detector AUROC over id split vs the union of all ood_ splits.
// `model` enables ODIN (splits must then carry raw features);
// `logit_temperature` rescales dump logits (post temperature-scaling pass).
std::vector<metrics::DetectorAuroc> detect(const store::ModelRun& run,
                                           const DetectorConfig& config,
                                           const runtime::ToyModel* model = nullptr,
                                           double logit_temperature = 1.0,
                                           std::uint64_t cap_seed = 1);

} // namespace hre::detectors
