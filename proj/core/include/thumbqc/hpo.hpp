#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace thumbqc {

/// Integer lattice dimension: values low, low+step, ..., high.
struct SearchDim {
    std::string name;
    long low = 0;
    long high = 0;
    long step = 1;
    long lattice_size() const { return (high - low) / step + 1; }
};

struct SearchSpace {
    std::vector<SearchDim> dims;
    void validate() const;
    /// Three classifier-head hidden widths in [64, 2048] step 64.
    static SearchSpace default_head_space();
};

using Point = std::vector<long>;

struct Rung {
    int n = 0;       // entrant count at this rung
    int budget = 0;  // training budget (epochs)
};

/// One successive-halving bracket; rungs[0] holds the initial population.
struct Bracket {
    int s = 0;
    std::vector<Rung> rungs;
};

/// Brackets s_max..0 with n_s = ceil((s_max+1)/(s+1) * eta^s) initial
/// configs at budget R * eta^-s; each rung keeps the top floor(n/eta).
std::vector<Bracket> hyperband_schedule(int R, int eta);

enum class TrialStatus { running, pruned, complete, failed };
std::string trial_status_name(TrialStatus s);

struct RungValue {
    int rung = 0;
    int budget = 0;
    double value = 0.0;
};

struct Trial {
    int id = -1;
    Point point;
    int bracket_s = -1;
    std::vector<RungValue> values;
    TrialStatus status = TrialStatus::running;
    double final_value() const;
};

struct TpeOptions {
    double gamma = 0.25;
    int n_startup = 10;
    int n_candidates = 24;
};

/// One TPE suggestion (objective maximized). Cold start (< n_startup
/// completed trials) samples the lattice uniformly; otherwise candidates
/// are drawn from a per-dimension Gaussian KDE over the good set and the
/// one maximizing l(x)/g(x) is returned. Always on the lattice.
Point tpe_suggest(const std::vector<const Trial*>& completed_history, const SearchSpace& space,
                  const TpeOptions& opts, std::mt19937& rng);

/// Throw from the train function to mark one trial failed without
/// aborting the study. Any other exception aborts (the study resumes from
/// its log).
class TrialFailure : public std::runtime_error {
public:
    explicit TrialFailure(const std::string& what) : std::runtime_error(what) {}
};

/// (point, budget) -> objective value, higher is better. Must be
/// deterministic for study-level determinism.
using TrainFn = std::function<double(const Point&, int budget)>;

struct StudyOptions {
    int R = 27;
    int eta = 3;
    TpeOptions tpe;
    int max_trials = 256;
    uint64_t seed = 0;
    /// When set, every trial update is appended as JSONL; an existing log
    /// is replayed so finished evaluations are not recomputed.
    std::filesystem::path log_path;
};

struct StudyState {
    std::vector<Trial> trials;
    uint64_t seed = 0;
    int max_trials = 0;
    int best_trial_id = -1;

    const Trial* best() const;
    int count(TrialStatus s) const;
};

/// Cycles Hyperband brackets, sampling entrants with TPE over the completed
/// history, until max_trials trials have been issued. A rung whose survivor
/// count floor(n/eta) reaches 0 completes its entrants there (so
/// max_trials = 1 yields one complete trial).
StudyState run_study(const SearchSpace& space, const TrainFn& train_fn, const StudyOptions& opts);

}  // namespace thumbqc
