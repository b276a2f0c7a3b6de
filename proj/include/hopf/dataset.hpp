#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hopf/normal_form.hpp"

namespace hopf {

// One measured (or simulated) limit cycle at a fixed parameter value.
struct LcoRecord {
    std::string id;
    double mu = 0.0;
    Stability stability = Stability::Stable;
    std::vector<double> t;      // uniform grid
    Eigen::MatrixXd states;     // rows = samples, columns = z1..zm
    std::string provenance = "simulated";  // simulated | stabilized | shooting | imported

    Eigen::Index samples() const { return states.rows(); }
    Eigen::Index state_count() const { return states.cols(); }
    double dt() const { return t.size() > 1 ? t[1] - t[0] : 0.0; }

    // (z1, z2) of every sample as column vectors
    std::vector<Eigen::Vector2d> planar_points() const;
};

struct TrainingDataset {
    std::vector<LcoRecord> records;
    int m = 2;  // observed states per record
    std::vector<std::string> state_names;
    std::vector<std::string> units;
    std::string mu_units;

    std::size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }

    // Throws InvalidArgument unless every record is well formed and has m states.
    void validate() const;

    // Copy without record i.
    TrainingDataset without(std::size_t i) const;
};

// FNV-1a 64 over ids, parameters, stabilities, time grids and samples (hex).
std::string dataset_fingerprint(const TrainingDataset& data);

// Keeps every k-th sample so that at most max_samples remain.
LcoRecord downsample(const LcoRecord& record, int max_samples);

}  // namespace hopf
