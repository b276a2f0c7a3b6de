#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hopf/coordinate_map.hpp"
#include "hopf/dataset.hpp"
#include "hopf/model.hpp"
#include "hopf/normal_form.hpp"
#include "hopf/speed_model.hpp"

namespace hopf {

struct StageSchedule {
    int adam_iters = 0;
    double adam_lr = 0.01;
    int lbfgs_iters = 0;
    double lbfgs_step = 1e-5;  // first L-BFGS trial step
};

struct TrainingConfig {
    Criticality criticality = Criticality::Supercritical;
    int n_h = 10;
    int n_points = 100;
    StageSchedule stage1{200, 0.01, 200, 1e-3};
    StageSchedule stage2{300, 0.01, 1000, 1e-5};
    StageSchedule stage3{2000, 0.01, 1000, 1e-5};
    std::uint64_t seed = 1;
    std::optional<double> mu0_init;
    std::optional<double> mu_upper_bound;  // subcritical mu0_init heuristic
    std::optional<double> a2_init;
    std::optional<bool> fit_a2;             // default: subcritical only
    int downsample = 1000;
    double nonsingular_floor = 1e-6;
    double nonsingular_weight = 1e6;
    // stage 2: hinge on det J / |det L| over a disk grid at each training mu
    double fold_margin = 0.1;
    double fold_weight = 300.0;
    std::vector<int> map_hidden{32, 32};
    SpeedMode speed_mode = SpeedMode::FourierCorrection;
    int n_h_speed = 10;
    std::vector<int> speed_hidden{32, 32};
    int substeps = 1;
    double aux_ridge = 1e-8;

    void validate() const;
    bool trains_a2() const { return fit_a2.value_or(criticality == Criticality::Subcritical); }

    nlohmann::json to_json() const;
    // Required keys: criticality, seed, stage1, stage2, stage3 (each with all four
    // schedule fields). Throws InvalidArgument naming the offending field.
    static TrainingConfig from_json(const nlohmann::json& j);

    static TrainingConfig vdp_defaults();
    static TrainingConfig aero_defaults();
};

// Stage-2 fold guard. The grid holds NN inputs (u1, u2, scaled mu) on a disk of
// 1.2x the largest branch radius at nine mu values across the data.
Eigen::Matrix3Xd fold_grid(const TrainingDataset& data, const NormalFormParams& nf, const CoordinateMap& map);
// Adds d/d(nn params) into grad_nn (resized and zeroed when empty) when the penalty is active.
double fold_penalty(const CoordinateMap& map, const Eigen::Matrix3Xd& pts, double margin, double weight,
                    Eigen::VectorXd& grad_nn);

struct StageTrace {
    std::vector<double> adam;
    std::vector<double> lbfgs;
    std::string lbfgs_stop;

    std::size_t size() const { return adam.size() + lbfgs.size(); }
    double last() const;
};

struct TrainingReport {
    StageTrace stage1;
    StageTrace stage2;
    StageTrace stage3;
    double shape_loss_final = 0.0;
    double speed_loss_final = 0.0;
    double mu0 = 0.0;
    double a2 = 0.0;
    double omega0 = 0.0;
    double omega0_init = 0.0;
    double mu0_init = 0.0;
    double a2_init = 0.0;
    double z_scale = 1.0;  // traces are in raw units (normalized loss times this)
    double wall_time = 0.0;
    nlohmann::json config;
    std::string failed_stage;
    std::string error;

    nlohmann::json to_json() const;
};

// Raised when a stage aborts; carries everything completed before the failure.
class TrainingAborted : public std::runtime_error {
public:
    TrainingAborted(std::string stage, const std::string& what, TrainingReport partial)
        : std::runtime_error("training aborted in " + stage + ": " + what),
          stage_(std::move(stage)),
          report_(std::move(partial))
    {
    }
    const std::string& stage() const { return stage_; }
    const TrainingReport& report() const { return report_; }

private:
    std::string stage_;
    TrainingReport report_;
};

// Affine change of observation and parameter coordinates used while training.
struct Normalization {
    Eigen::Vector2d z_center = Eigen::Vector2d::Zero();
    double z_scale = 1.0;
    double mu_center = 0.0;
    double mu_scale = 1.0;

    static Normalization from_data(const TrainingDataset& data);
    TrainingDataset apply(const TrainingDataset& data) const;  // z1, z2 only
    // Map acting on normalized observations -> map acting on raw ones.
    CoordinateMap unapply(const CoordinateMap& normalized) const;
};

double default_mu0_init(const TrainingDataset& data, const TrainingConfig& cfg);
double default_a2_init(const TrainingDataset& data, const TrainingConfig& cfg, double mu0);

// Dominant angular frequency of z1 in the record (zero-padded DFT peak).
double dominant_frequency(const LcoRecord& record, int padding = 16);

struct Stage1Result {
    LinearMap linear;
    TranslationOffset offset;
    StageTrace trace;
};

struct Stage2Result {
    CoordinateMap map;
    NormalFormParams normal_form;
    StageTrace trace;
};

struct Stage3Result {
    SpeedModel speed;
    StageTrace trace;
};

// The stage functions work in the coordinates of `data` as given (the caller
// normalizes); traces are in those units.
Stage1Result stage1_fit_linear(const TrainingDataset& data, const TrainingConfig& cfg, const NormalFormParams& nf,
                               double mu_center, double mu_scale);
Stage2Result stage2_fit_nn(const TrainingDataset& data, const TrainingConfig& cfg, const Stage1Result& stage1,
                           const NormalFormParams& nf_init, double mu_center, double mu_scale);
Stage3Result stage3_fit_speed(const TrainingDataset& data, const TrainingConfig& cfg, const CoordinateMap& map,
                              const NormalFormParams& nf);

struct TrainingResult {
    HybridModel model;
    TrainingReport report;
};

TrainingResult train_full(const TrainingDataset& data, const TrainingConfig& cfg);

struct HeldOutErrors {
    double descriptor_error = 0.0;  // distance relative to the measured a0
    double timeseries_nrmse = 0.0;
};

struct FoldResult {
    std::string held_out_id;
    double held_out_mu = 0.0;
    Stability held_out_stability = Stability::Stable;
    std::optional<HybridModel> model;
    std::optional<TrainingReport> report;
    HeldOutErrors errors;
    double saddle_node = 0.0;  // NaN when the form has none
    double min_abs_det = 0.0;
    std::string error;  // non-empty when the fold failed
};

// Evaluation of a model on one record it may not have seen.
HeldOutErrors held_out_errors(const HybridModel& model, const LcoRecord& record, int n_h = 10);

std::vector<FoldResult> leave_one_out(const TrainingDataset& data, const TrainingConfig& cfg);

}  // namespace hopf
