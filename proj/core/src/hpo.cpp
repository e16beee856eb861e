#include "thumbqc/hpo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "thumbqc/errors.hpp"

namespace thumbqc {

using nlohmann::json;

void SearchSpace::validate() const {
    if (dims.empty()) throw InvalidInput("search space: empty");
    for (const auto& d : dims) {
        if (d.name.empty()) throw InvalidInput("search space: unnamed dimension");
        if (d.low > d.high) throw InvalidInput("search space: low > high for " + d.name);
        if (d.step <= 0) throw InvalidInput("search space: step must be > 0 for " + d.name);
        if ((d.high - d.low) % d.step != 0) {
            throw InvalidInput("search space: step does not divide range for " + d.name);
        }
    }
}

SearchSpace SearchSpace::default_head_space() {
    SearchSpace s;
    s.dims = {{"layer1", 64, 2048, 64}, {"layer2", 64, 2048, 64}, {"layer3", 64, 2048, 64}};
    return s;
}

std::vector<Bracket> hyperband_schedule(int R, int eta) {
    if (R < 1 || eta < 2) throw InvalidInput("hyperband: need R >= 1 and eta >= 2");
    const int s_max = static_cast<int>(std::floor(std::log(static_cast<double>(R)) /
                                                  std::log(static_cast<double>(eta)) +
                                                  1e-12));
    std::vector<Bracket> brackets;
    for (int s = s_max; s >= 0; --s) {
        Bracket b;
        b.s = s;
        const double n0 = std::ceil(static_cast<double>(s_max + 1) / (s + 1) *
                                    std::pow(static_cast<double>(eta), s) -
                                    1e-12);
        const double r0 = R * std::pow(static_cast<double>(eta), -s);
        int n = static_cast<int>(n0);
        double r = r0;
        for (int i = 0; i <= s; ++i) {
            b.rungs.push_back({n, static_cast<int>(std::llround(r))});
            n = n / eta;  // floor(n/eta) survivors
            r *= eta;
        }
        brackets.push_back(std::move(b));
    }
    return brackets;
}

std::string trial_status_name(TrialStatus s) {
    switch (s) {
        case TrialStatus::running: return "running";
        case TrialStatus::pruned: return "pruned";
        case TrialStatus::complete: return "complete";
        case TrialStatus::failed: return "failed";
    }
    return "?";
}

double Trial::final_value() const {
    if (values.empty()) throw InvalidInput("trial has no recorded values");
    return values.back().value;
}

namespace {

long quantize(const SearchDim& d, double x) {
    const double steps = std::round((x - static_cast<double>(d.low)) / static_cast<double>(d.step));
    long v = d.low + static_cast<long>(steps) * d.step;
    return std::clamp(v, d.low, d.high);
}

long uniform_lattice(const SearchDim& d, std::mt19937& rng) {
    const long n = d.lattice_size();
    return d.low + d.step * static_cast<long>(rng() % static_cast<unsigned long>(n));
}

// Scott-style bandwidth on the quantized axis, floored at one lattice step.
double kde_bandwidth(const std::vector<double>& xs, double step) {
    if (xs.size() < 2) return step;
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
    const double sigma = std::sqrt(var);
    const double h = sigma * std::pow(static_cast<double>(xs.size()), -0.2);
    return std::max(h, step);
}

// Per-dimension Parzen mixture over the distinct lattice values of a set,
// plus one wide prior Gaussian at the domain midpoint. Deduplication stops
// a repeatedly suggested point from reinforcing its own density spike, and
// the prior keeps exploration alive when the set collapses to few points.
struct DimKde {
    std::vector<double> centers;
    std::vector<double> bandwidths;

    static DimKde build(std::vector<double> points, const SearchDim& dim) {
        std::sort(points.begin(), points.end());
        points.erase(std::unique(points.begin(), points.end()), points.end());
        DimKde k;
        const double step = static_cast<double>(dim.step);
        const double range =
            std::max(static_cast<double>(dim.high - dim.low), step);
        const double h = kde_bandwidth(points, step);
        for (double p : points) {
            k.centers.push_back(p);
            k.bandwidths.push_back(h);
        }
        k.centers.push_back(0.5 * static_cast<double>(dim.low + dim.high));
        k.bandwidths.push_back(range);
        return k;
    }

    double sample(std::mt19937& rng, std::normal_distribution<double>& gauss) const {
        const size_t i = rng() % centers.size();
        return centers[i] + gauss(rng) * bandwidths[i];
    }

    double log_density(double x) const {
        double acc = 0.0;
        for (size_t i = 0; i < centers.size(); ++i) {
            const double z = (x - centers[i]) / bandwidths[i];
            acc += std::exp(-0.5 * z * z) / bandwidths[i];
        }
        const double density =
            acc * 0.3989422804014327 / static_cast<double>(centers.size());
        return std::log(std::max(density, 1e-300));
    }
};

}  // namespace

Point tpe_suggest(const std::vector<const Trial*>& completed_history, const SearchSpace& space,
                  const TpeOptions& opts, std::mt19937& rng) {
    space.validate();
    const size_t n = completed_history.size();
    if (static_cast<int>(n) < opts.n_startup) {
        Point p;
        for (const auto& d : space.dims) p.push_back(uniform_lattice(d, rng));
        return p;
    }

    std::vector<const Trial*> sorted(completed_history);
    std::stable_sort(sorted.begin(), sorted.end(), [](const Trial* a, const Trial* b) {
        return a->final_value() > b->final_value();
    });
    const size_t n_good =
        std::max<size_t>(1, static_cast<size_t>(std::ceil(opts.gamma * static_cast<double>(n))));

    const size_t ndim = space.dims.size();
    std::vector<std::vector<double>> good(ndim), bad(ndim);
    for (size_t i = 0; i < sorted.size(); ++i) {
        for (size_t d = 0; d < ndim; ++d) {
            (i < n_good ? good[d] : bad[d]).push_back(static_cast<double>(sorted[i]->point[d]));
        }
    }
    std::vector<DimKde> l_kde, g_kde;
    for (size_t d = 0; d < ndim; ++d) {
        l_kde.push_back(DimKde::build(good[d], space.dims[d]));
        g_kde.push_back(DimKde::build(bad[d], space.dims[d]));
    }

    Point best;
    double best_score = -std::numeric_limits<double>::infinity();
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int c = 0; c < opts.n_candidates; ++c) {
        Point cand(ndim);
        double score = 0.0;
        for (size_t d = 0; d < ndim; ++d) {
            cand[d] = quantize(space.dims[d], l_kde[d].sample(rng, gauss));
            const double xd = static_cast<double>(cand[d]);
            score += l_kde[d].log_density(xd) - g_kde[d].log_density(xd);
        }
        if (score > best_score) {
            best_score = score;
            best = std::move(cand);
        }
    }
    return best;
}

const Trial* StudyState::best() const {
    if (best_trial_id < 0) return nullptr;
    return &trials[static_cast<size_t>(best_trial_id)];
}

int StudyState::count(TrialStatus s) const {
    int n = 0;
    for (const auto& t : trials) {
        if (t.status == s) ++n;
    }
    return n;
}

namespace {

struct StudyLog {
    std::filesystem::path path;
    std::map<int, Point> sampled;                    // trial -> point
    std::map<std::pair<int, int>, double> values;    // (trial, rung) -> value
    std::map<int, std::string> final_status;         // trial -> status (replay only)
    std::ofstream out;

    void load(const std::vector<std::string>& dim_names) {
        if (path.empty() || !std::filesystem::exists(path)) return;
        std::ifstream in(path);
        std::string line;
        size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            json j;
            try {
                j = json::parse(line);
                const std::string event = j.at("event").get<std::string>();
                if (event == "sampled") {
                    Point p;
                    for (const auto& name : dim_names) {
                        p.push_back(j.at("point").at(name).get<long>());
                    }
                    sampled[j.at("trial").get<int>()] = std::move(p);
                } else if (event == "value") {
                    values[{j.at("trial").get<int>(), j.at("rung").get<int>()}] =
                        j.at("value").get<double>();
                } else if (event == "status") {
                    final_status[j.at("trial").get<int>()] = j.at("status").get<std::string>();
                }
            } catch (const json::exception& e) {
                throw IoError("study log " + path.string() + " line " + std::to_string(lineno) +
                              ": " + e.what());
            }
        }
    }

    void open_for_append() {
        if (path.empty()) return;
        out.open(path, std::ios::app);
        if (!out) throw IoError("cannot open study log for append: " + path.string());
    }

    void write(const json& j) {
        if (!out.is_open()) return;
        out << j.dump() << '\n';
        out.flush();
    }
};

}  // namespace

StudyState run_study(const SearchSpace& space, const TrainFn& train_fn, const StudyOptions& opts) {
    space.validate();
    if (opts.max_trials < 1) throw InvalidInput("run_study: max_trials must be >= 1");
    const std::vector<Bracket> brackets = hyperband_schedule(opts.R, opts.eta);

    std::vector<std::string> dim_names;
    for (const auto& d : space.dims) dim_names.push_back(d.name);

    StudyLog log;
    log.path = opts.log_path;
    log.load(dim_names);
    log.open_for_append();

    StudyState state;
    state.seed = opts.seed;
    state.max_trials = opts.max_trials;
    std::mt19937 rng(static_cast<uint32_t>(opts.seed * 0x85ebca6bu + 3));

    auto point_json = [&](const Point& p) {
        json jp;
        for (size_t d = 0; d < dim_names.size(); ++d) jp[dim_names[d]] = p[d];
        return jp;
    };

    auto completed_history = [&] {
        std::vector<const Trial*> h;
        for (const auto& t : state.trials) {
            if (t.status == TrialStatus::complete) h.push_back(&t);
        }
        return h;
    };

    // On a finite lattice the argmax of l/g happily re-suggests an already
    // issued point; burning a trial on it adds nothing, so resample a few
    // times before accepting the duplicate.
    std::set<Point> issued_points;
    auto next_point = [&] {
        Point p;
        for (int attempt = 0; attempt < 64; ++attempt) {
            p = tpe_suggest(completed_history(), space, opts.tpe, rng);
            if (!issued_points.count(p)) break;
        }
        issued_points.insert(p);
        return p;
    };

    auto set_status = [&](Trial& t, TrialStatus s) {
        t.status = s;
        if (!log.final_status.count(t.id)) {
            log.write({{"event", "status"}, {"trial", t.id}, {"status", trial_status_name(s)}});
        }
    };

    bool budget_exhausted = false;
    while (!budget_exhausted) {
        for (const Bracket& bracket : brackets) {
            const int remaining = opts.max_trials - static_cast<int>(state.trials.size());
            if (remaining <= 0) {
                budget_exhausted = true;
                break;
            }
            const int n0 = std::min(bracket.rungs[0].n, remaining);

            std::vector<int> entrants;
            for (int i = 0; i < n0; ++i) {
                const int id = static_cast<int>(state.trials.size());
                Point p = next_point();
                auto it = log.sampled.find(id);
                if (it != log.sampled.end() && it->second != p) {
                    throw ConfigError(
                        "study log does not match this configuration/seed (trial " +
                        std::to_string(id) + " sampled a different point)");
                }
                if (it == log.sampled.end()) {
                    log.write({{"event", "sampled"},
                               {"trial", id},
                               {"bracket", bracket.s},
                               {"point", point_json(p)}});
                }
                Trial t;
                t.id = id;
                t.point = std::move(p);
                t.bracket_s = bracket.s;
                state.trials.push_back(std::move(t));
                entrants.push_back(id);
            }

            for (size_t ri = 0; ri < bracket.rungs.size(); ++ri) {
                const int budget = bracket.rungs[ri].budget;
                std::vector<int> evaluated;
                for (int id : entrants) {
                    Trial& t = state.trials[static_cast<size_t>(id)];
                    double value = 0.0;
                    auto cached = log.values.find({id, static_cast<int>(ri)});
                    if (cached != log.values.end()) {
                        value = cached->second;
                    } else {
                        try {
                            value = train_fn(t.point, budget);
                        } catch (const TrialFailure&) {
                            set_status(t, TrialStatus::failed);
                            continue;
                        }
                        log.write({{"event", "value"},
                                   {"trial", id},
                                   {"rung", static_cast<int>(ri)},
                                   {"budget", budget},
                                   {"value", value}});
                    }
                    t.values.push_back({static_cast<int>(ri), budget, value});
                    evaluated.push_back(id);
                }

                const bool last_rung = ri + 1 == bracket.rungs.size();
                const int keep = static_cast<int>(evaluated.size()) / opts.eta;
                if (last_rung || keep == 0 || evaluated.empty()) {
                    for (int id : evaluated) {
                        set_status(state.trials[static_cast<size_t>(id)], TrialStatus::complete);
                    }
                    break;
                }
                // Stable rank: by rung value descending, ties by id.
                std::sort(evaluated.begin(), evaluated.end(), [&](int a, int b) {
                    const double va = state.trials[static_cast<size_t>(a)].values.back().value;
                    const double vb = state.trials[static_cast<size_t>(b)].values.back().value;
                    if (va != vb) return va > vb;
                    return a < b;
                });
                for (size_t i = static_cast<size_t>(keep); i < evaluated.size(); ++i) {
                    set_status(state.trials[static_cast<size_t>(evaluated[i])],
                               TrialStatus::pruned);
                }
                entrants.assign(evaluated.begin(), evaluated.begin() + keep);
            }
        }
    }

    for (const auto& t : state.trials) {
        if (t.status != TrialStatus::complete) continue;
        if (state.best_trial_id < 0 ||
            t.final_value() > state.trials[static_cast<size_t>(state.best_trial_id)].final_value()) {
            state.best_trial_id = t.id;
        }
    }
    if (state.best_trial_id >= 0) {
        log.write({{"event", "best"}, {"trial", state.best_trial_id}});
    }
    return state;
}

}  // namespace thumbqc
