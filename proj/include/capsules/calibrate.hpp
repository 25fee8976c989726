#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "capsules/execution.hpp"

namespace capsules {

// Fresh instances per workflow leg keep runs independent (no shared windows,
// no shared warm-cache memory).
using AdapterFactory = std::function<std::shared_ptr<Adapter>()>;
using EvaluatorFactory = std::function<std::shared_ptr<Evaluator>()>;  // may yield null

struct Distribution {
    double min = 0.0;
    double median = 0.0;
    double p95 = 0.0;
    double max = 0.0;
    double mean = 0.0;
    double stddev = 0.0;
    int count = 0;
};

Distribution summarize(std::vector<double> values);  // InsufficientData when empty
double percentile(std::vector<double> values, double p);  // nearest-rank, p in [0,100]

struct GroupCalibration {
    Distribution scores;  // composition scores from the locked-FINE leg
    std::map<std::string, double> mean_quality_by_tier;  // fine/standard/two_phase/sequential
    std::map<std::string, Distribution> output_tokens_by_agent;  // fine-mode evidence
    int evidence_runs = 0;
};

struct CalibrationReport {
    std::map<std::string, GroupCalibration> groups;
    ControllerPolicy recommended;

    nlohmann::json to_json() const;
    // Human-readable summary plus a policy block ready to paste into a
    // pipeline file. Advisory only; nothing is rewritten.
    std::string render_text() const;
};

CalibrationReport calibrate(const PipelineSpec& pipeline, const std::vector<std::string>& tasks,
                            const AdapterFactory& adapters, const EvaluatorFactory& evaluators,
                            int runs_per_mode = 1);

struct SweepPoint {
    double compose_at = 0.0;
    long input_tokens = 0;
    long output_tokens = 0;
    double mean_quality = 0.0;
    int compound_fires = 0;  // runs a group executed in COMPOUND mode
    int blocks = 0;
    int reverts = 0;
    int escalations = 0;
};

std::vector<SweepPoint> sweep(const PipelineSpec& pipeline,
                              const std::vector<std::string>& tasks,
                              const AdapterFactory& adapters,
                              const EvaluatorFactory& evaluators,
                              const std::vector<double>& grid, int runs_per_task = 6);

std::string sweep_csv(const std::vector<SweepPoint>& points);

}  // namespace capsules
