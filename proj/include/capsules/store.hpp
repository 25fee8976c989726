#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "capsules/policy.hpp"

namespace capsules {

enum class Mode { FINE, COMPOUND };
const char* to_string(Mode m);
Mode mode_from_name(const std::string& name);
CompoundTier tier_from_name(const std::string& name);

// One group-run's telemetry.
struct Observation {
    std::string pipeline;
    std::string group;
    std::uint64_t run_id = 0;  // strictly increasing per (pipeline, group)
    Mode mode = Mode::FINE;
    CompoundTier tier = CompoundTier::standard;  // meaningful when COMPOUND
    std::vector<long> per_agent_output_tokens;
    std::vector<long> per_agent_input_tokens;
    std::vector<long> per_agent_tool_calls;
    long overhead_tokens = 0;
    long total_output_tokens = 0;
    long latency_ms = 0;
    std::optional<double> quality;
    std::int64_t timestamp_ms = 0;  // UTC milliseconds

    std::vector<std::string> violations() const;  // empty when invariants hold
};

void to_json(nlohmann::json& j, const Observation& o);
void from_json(const nlohmann::json& j, Observation& o);

// Persisted per-group controller state. The window floor run-ids implement
// window resets: a rebuild ignores observations at or below the floor, so
// incrementally maintained state and log replay agree.
struct GroupControllerState {
    Mode mode = Mode::FINE;
    CompoundTier tier = CompoundTier::standard;
    CompoundTier base_tier = CompoundTier::standard;
    CompoundTier candidate_tier = CompoundTier::standard;
    int consecutive_below_floor = 0;
    int consecutive_above_floor = 0;
    bool shadow_pending = false;
    double confidence = 0.0;
    std::uint64_t last_run_id = 0;
    std::uint64_t score_window_floor_run = 0;
    std::uint64_t quality_window_floor_run = 0;
    int shadow_block_failures = 0;
    unsigned burned_tiers = 0;  // bitmask by CompoundTier index

    bool tier_burned(CompoundTier t) const { return burned_tiers & (1u << static_cast<int>(t)); }
    void burn_tier(CompoundTier t) { burned_tiers |= (1u << static_cast<int>(t)); }

    bool operator==(const GroupControllerState&) const = default;
};

void to_json(nlohmann::json& j, const GroupControllerState& s);
void from_json(const nlohmann::json& j, GroupControllerState& s);

// String-key / byte-value store. Append is atomic and order-preserving per
// key; compare_and_set is the primitive that serializes controller state
// transitions across workers.
class Backend {
public:
    virtual ~Backend() = default;
    virtual void put(const std::string& key, const std::string& value) = 0;
    virtual std::optional<std::string> get(const std::string& key) = 0;
    virtual std::size_t append(const std::string& key, const std::string& record) = 0;
    // expected == nullopt means "create only if absent".
    virtual bool compare_and_set(const std::string& key,
                                 const std::optional<std::string>& expected,
                                 const std::string& value) = 0;
};

class MemoryBackend : public Backend {
public:
    void put(const std::string& key, const std::string& value) override;
    std::optional<std::string> get(const std::string& key) override;
    std::size_t append(const std::string& key, const std::string& record) override;
    bool compare_and_set(const std::string& key, const std::optional<std::string>& expected,
                         const std::string& value) override;

private:
    std::mutex mu_;
    std::map<std::string, std::string> data_;
};

// Durable backend: one file per key under a root directory, flock-guarded
// so separate processes sharing the directory see a single total order.
class FileBackend : public Backend {
public:
    explicit FileBackend(std::string root_dir);
    void put(const std::string& key, const std::string& value) override;
    std::optional<std::string> get(const std::string& key) override;
    std::size_t append(const std::string& key, const std::string& record) override;
    bool compare_and_set(const std::string& key, const std::optional<std::string>& expected,
                         const std::string& value) override;

private:
    std::string path_for(const std::string& key) const;
    std::string root_;
};

// Rolling per-group statistics. Window contents are value deques so that the
// incremental update and a full log replay are trivially fold-equivalent.
struct GroupStats {
    std::deque<double> score_window;    // FINE-mode composition scores
    std::deque<double> quality_window;  // quality at the current mode+tier

    std::deque<double> fine_output_per_agent_obs;   // mean output tokens/agent per fine obs
    std::deque<double> fine_overhead_ratio_obs;
    std::deque<double> fine_tool_calls_obs;
    std::deque<std::vector<long>> fine_output_by_agent_obs;
    std::deque<double> compound_tool_calls_obs;

    void observe(const Observation& obs, const GroupControllerState& state, int agent_count,
                 int dep_depth, int window_size);

    double mean_fine_output_per_agent() const;
    double mean_overhead_ratio() const;
    double fine_tool_calls_per_agent() const;
    double compound_tool_calls_per_agent() const;
    // Mean fine-mode output tokens for one agent; nullopt without evidence.
    std::optional<double> mean_fine_output_tokens_for_agent(int agent_index) const;
};

std::optional<double> rolling_mean_quality(const GroupStats& stats);

GroupStats build_group_stats(std::span<const Observation> log, const GroupControllerState& state,
                             int agent_count, int dep_depth, int window_size);

// Key schema: ac:{pipeline}:{group}:obs (ndjson append log) and
// ac:{pipeline}:{group}:state (canonical-JSON snapshot).
class TelemetryStore {
public:
    explicit TelemetryStore(std::shared_ptr<Backend> backend);

    static std::string obs_key(const std::string& pipeline, const std::string& group);
    static std::string state_key(const std::string& pipeline, const std::string& group);

    void record_observation(const Observation& obs);
    std::vector<Observation> load_observations(const std::string& pipeline,
                                               const std::string& group) const;

    // Returns the state plus the raw snapshot bytes to use as the CAS witness.
    std::optional<std::pair<GroupControllerState, std::string>> load_state(
        const std::string& pipeline, const std::string& group) const;
    bool cas_state(const std::string& pipeline, const std::string& group,
                   const std::optional<std::string>& expected_raw,
                   const GroupControllerState& state);

    Backend& backend() { return *backend_; }

private:
    std::shared_ptr<Backend> backend_;
};

}  // namespace capsules
