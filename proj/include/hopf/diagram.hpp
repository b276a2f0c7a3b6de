#pragma once

#include <string>
#include <vector>

#include "hopf/model.hpp"

namespace hopf {

struct DiagramRow {
    double mu = 0.0;
    std::string branch;           // stable | unstable
    double amplitude_max = 0.0;   // largest distance of the mapped orbit from its centroid
    double amplitude_a0 = 0.0;    // descriptor a0 (NaN when the orbit is not star-shaped)
    std::string marker;           // hopf | saddle_node | empty
};

struct BifurcationDiagram {
    std::vector<DiagramRow> rows;  // sorted by mu
    double hopf_mu = 0.0;
    double saddle_node_mu = 0.0;   // NaN for supercritical forms
    int branch_points = 0;         // grid rows carrying an orbit

    std::string to_csv() const;
};

// Grid of `steps` equi-spaced parameters in [mu_min, mu_max] plus the Hopf and
// saddle-node rows, which are always present.
BifurcationDiagram build_bifurcation_diagram(const HybridModel& model, double mu_min, double mu_max, int steps,
                                             int n_points = 100, int n_h = 10);

}  // namespace hopf
