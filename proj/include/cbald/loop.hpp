#pragma once

#include <cstdint>
#include <vector>

#include "cbald/acquisition.hpp"
#include "cbald/dataset.hpp"
#include "cbald/posterior.hpp"

namespace cbald {

enum class ModelKind { gp, ensemble };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

struct LoopConfig {
    int warm_up_size = 10;
    int acquisition_size = 10;
    int acquisition_steps = 30;
    double temperature = 1.0;
    ModelKind model = ModelKind::gp;
    AcquisitionKind acquisition = AcquisitionKind::Random;
    EnsembleSpec ensemble;
    std::uint64_t seed = 0;

    int final_labeled() const { return warm_up_size + acquisition_size * acquisition_steps; }

    // Checked before any data is touched.
    void validate(Eigen::Index pool_size) const;
};

struct TrajectoryStep {
    int step = 0;     // 0 is the warm-up row
    int n_train = 0;  // labeled count the row's model was fit on
    double pehe = 0.0;
    // Kept for format stability but always 0: recorded wall time would break
    // bit-exact reruns. Real timings go to stderr.
    long long wall_ms = 0;
    std::vector<int> selected;  // pool indices revealed for this row

    bool operator==(const TrajectoryStep&) const = default;
};

struct Trajectory {
    LoopConfig config;
    std::vector<TrajectoryStep> steps;
};

// Label bookkeeping over a fixed pool. Outcomes (and only outcomes, plus the
// unit's covariates and treatment) move into the training set when revealed;
// the pool's counterfactual surfaces are never copied out.
class ActivePool {
public:
    explicit ActivePool(const ObservationalDataset& pool);

    Eigen::Index pool_size() const { return pool_->n(); }
    Eigen::Index labeled_count() const { return static_cast<Eigen::Index>(labeled_order_.size()); }
    const std::vector<int>& remaining() const { return remaining_; }
    const LabeledSet& train() const { return train_; }
    bool is_labeled(int index) const { return labeled_flags_[static_cast<std::size_t>(index)]; }

    // Moves the given pool units into the training set. Rejects indices that
    // are out of range, duplicated, or already labeled.
    void reveal_outcomes(const std::vector<int>& indices);

    // Covariate rows of the remaining units, in remaining() order.
    Eigen::MatrixXd remaining_covariates() const;
    Eigen::VectorXi remaining_treatments() const;

private:
    const ObservationalDataset* pool_;
    std::vector<int> remaining_;
    std::vector<bool> labeled_flags_;
    std::vector<int> labeled_order_;
    LabeledSet train_;
};

// Warm-up draw, then acquisition_steps rounds of score / select / reveal /
// refit-from-scratch. Row 0 evaluates the warm-up model; every later row
// evaluates the model refit after that round's reveal. PEHE is computed on
// the test set against its true effect surfaces.
Trajectory run_experiment(const ObservationalDataset& pool, const ObservationalDataset& valid,
                          const ObservationalDataset& test, const LoopConfig& config);

}  // namespace cbald
