#include "capsules/store.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "capsules/composition.hpp"
#include "capsules/errors.hpp"

namespace capsules {

const char* to_string(Mode m) { return m == Mode::FINE ? "FINE" : "COMPOUND"; }

Mode mode_from_name(const std::string& name) {
    if (name == "FINE") return Mode::FINE;
    if (name == "COMPOUND") return Mode::COMPOUND;
    throw CapsuleError(ErrorCode::SerializationError, "bad mode '" + name + "'");
}

CompoundTier tier_from_name(const std::string& name) {
    if (name == "standard") return CompoundTier::standard;
    if (name == "two_phase") return CompoundTier::two_phase;
    if (name == "sequential") return CompoundTier::sequential;
    throw CapsuleError(ErrorCode::SerializationError, "bad tier '" + name + "'");
}

std::vector<std::string> Observation::violations() const {
    std::vector<std::string> v;
    const auto n = per_agent_output_tokens.size();
    if (per_agent_input_tokens.size() != n || per_agent_tool_calls.size() != n)
        v.push_back("per-agent lists must share one length");
    if (overhead_tokens > total_output_tokens)
        v.push_back("overhead_tokens <= total_output_tokens");
    const long sum = std::accumulate(per_agent_output_tokens.begin(),
                                     per_agent_output_tokens.end(), 0L);
    if (sum != total_output_tokens)
        v.push_back("total_output_tokens = sum(per_agent_output_tokens)");
    if (quality && (*quality < 0.0 || *quality > 1.0)) v.push_back("quality in [0,1]");
    return v;
}

void to_json(nlohmann::json& j, const Observation& o) {
    j = nlohmann::json{
        {"pipeline", o.pipeline},
        {"group", o.group},
        {"run_id", o.run_id},
        {"mode", to_string(o.mode)},
        {"tier", to_string(o.tier)},
        {"per_agent_output_tokens", o.per_agent_output_tokens},
        {"per_agent_input_tokens", o.per_agent_input_tokens},
        {"per_agent_tool_calls", o.per_agent_tool_calls},
        {"overhead_tokens", o.overhead_tokens},
        {"total_output_tokens", o.total_output_tokens},
        {"latency_ms", o.latency_ms},
        {"timestamp_ms", o.timestamp_ms},
    };
    if (o.quality) j["quality"] = *o.quality;
}

void from_json(const nlohmann::json& j, Observation& o) {
    o = Observation{};
    o.pipeline = j.at("pipeline").get<std::string>();
    o.group = j.at("group").get<std::string>();
    o.run_id = j.at("run_id").get<std::uint64_t>();
    o.mode = mode_from_name(j.at("mode").get<std::string>());
    o.tier = tier_from_name(j.at("tier").get<std::string>());
    o.per_agent_output_tokens = j.at("per_agent_output_tokens").get<std::vector<long>>();
    o.per_agent_input_tokens = j.at("per_agent_input_tokens").get<std::vector<long>>();
    o.per_agent_tool_calls = j.at("per_agent_tool_calls").get<std::vector<long>>();
    o.overhead_tokens = j.at("overhead_tokens").get<long>();
    o.total_output_tokens = j.at("total_output_tokens").get<long>();
    o.latency_ms = j.at("latency_ms").get<long>();
    o.timestamp_ms = j.at("timestamp_ms").get<std::int64_t>();
    if (j.contains("quality")) o.quality = j.at("quality").get<double>();
}

void to_json(nlohmann::json& j, const GroupControllerState& s) {
    j = nlohmann::json{
        {"mode", to_string(s.mode)},
        {"tier", to_string(s.tier)},
        {"base_tier", to_string(s.base_tier)},
        {"candidate_tier", to_string(s.candidate_tier)},
        {"consecutive_below_floor", s.consecutive_below_floor},
        {"consecutive_above_floor", s.consecutive_above_floor},
        {"shadow_pending", s.shadow_pending},
        {"confidence", s.confidence},
        {"last_run_id", s.last_run_id},
        {"score_window_floor_run", s.score_window_floor_run},
        {"quality_window_floor_run", s.quality_window_floor_run},
        {"shadow_block_failures", s.shadow_block_failures},
        {"burned_tiers", s.burned_tiers},
    };
}

void from_json(const nlohmann::json& j, GroupControllerState& s) {
    s = GroupControllerState{};
    s.mode = mode_from_name(j.at("mode").get<std::string>());
    s.tier = tier_from_name(j.at("tier").get<std::string>());
    s.base_tier = tier_from_name(j.at("base_tier").get<std::string>());
    s.candidate_tier = tier_from_name(j.at("candidate_tier").get<std::string>());
    s.consecutive_below_floor = j.at("consecutive_below_floor").get<int>();
    s.consecutive_above_floor = j.at("consecutive_above_floor").get<int>();
    s.shadow_pending = j.at("shadow_pending").get<bool>();
    s.confidence = j.at("confidence").get<double>();
    s.last_run_id = j.at("last_run_id").get<std::uint64_t>();
    s.score_window_floor_run = j.at("score_window_floor_run").get<std::uint64_t>();
    s.quality_window_floor_run = j.at("quality_window_floor_run").get<std::uint64_t>();
    s.shadow_block_failures = j.at("shadow_block_failures").get<int>();
    s.burned_tiers = j.at("burned_tiers").get<unsigned>();
}

// ---------------------------------------------------------------- backends

void MemoryBackend::put(const std::string& key, const std::string& value) {
    std::lock_guard lock(mu_);
    data_[key] = value;
}

std::optional<std::string> MemoryBackend::get(const std::string& key) {
    std::lock_guard lock(mu_);
    auto it = data_.find(key);
    if (it == data_.end()) return std::nullopt;
    return it->second;
}

std::size_t MemoryBackend::append(const std::string& key, const std::string& record) {
    std::lock_guard lock(mu_);
    auto& v = data_[key];
    v += record;
    return v.size();
}

bool MemoryBackend::compare_and_set(const std::string& key,
                                    const std::optional<std::string>& expected,
                                    const std::string& value) {
    std::lock_guard lock(mu_);
    auto it = data_.find(key);
    if (expected.has_value()) {
        if (it == data_.end() || it->second != *expected) return false;
    } else if (it != data_.end()) {
        return false;
    }
    data_[key] = value;
    return true;
}

namespace {

// RAII flock on a per-backend lock file; serializes multi-process access.
class FileLock {
public:
    FileLock(const std::string& path, int op) {
        fd_ = ::open(path.c_str(), O_CREAT | O_RDWR, 0644);
        if (fd_ < 0)
            throw CapsuleError(ErrorCode::BackendUnavailable, "cannot open lock " + path);
        if (::flock(fd_, op) != 0) {
            ::close(fd_);
            throw CapsuleError(ErrorCode::BackendUnavailable, "flock failed on " + path);
        }
    }
    ~FileLock() {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }

private:
    int fd_;
};

std::string encode_key(const std::string& key) {
    std::string out;
    for (unsigned char c : key) {
        if (std::isalnum(c) || c == '.' || c == '-' || c == '_') {
            out += static_cast<char>(c);
        } else {
            char buf[4];
            std::snprintf(buf, sizeof buf, "%%%02X", c);
            out += buf;
        }
    }
    return out;
}

std::optional<std::string> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

FileBackend::FileBackend(std::string root_dir) : root_(std::move(root_dir)) {
    std::error_code ec;
    std::filesystem::create_directories(root_, ec);
    if (ec) throw CapsuleError(ErrorCode::BackendUnavailable, "cannot create " + root_);
}

std::string FileBackend::path_for(const std::string& key) const {
    return root_ + "/" + encode_key(key);
}

void FileBackend::put(const std::string& key, const std::string& value) {
    FileLock lock(root_ + "/.lock", LOCK_EX);
    const std::string path = path_for(key);
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << value;
    }
    std::filesystem::rename(tmp, path);
}

std::optional<std::string> FileBackend::get(const std::string& key) {
    FileLock lock(root_ + "/.lock", LOCK_SH);
    return read_file(path_for(key));
}

std::size_t FileBackend::append(const std::string& key, const std::string& record) {
    FileLock lock(root_ + "/.lock", LOCK_EX);
    const std::string path = path_for(key);
    {
        std::ofstream out(path, std::ios::binary | std::ios::app);
        out << record;
    }
    return std::filesystem::file_size(path);
}

bool FileBackend::compare_and_set(const std::string& key,
                                  const std::optional<std::string>& expected,
                                  const std::string& value) {
    FileLock lock(root_ + "/.lock", LOCK_EX);
    const std::string path = path_for(key);
    auto current = read_file(path);
    if (expected.has_value()) {
        if (!current || *current != *expected) return false;
    } else if (current) {
        return false;
    }
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << value;
    }
    std::filesystem::rename(tmp, path);
    return true;
}

// ------------------------------------------------------------- group stats

namespace {

double mean_of(const std::deque<double>& xs) {
    if (xs.empty()) return 0.0;
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

void trim(std::deque<double>& xs, int window) {
    while (static_cast<int>(xs.size()) > window) xs.pop_front();
}

}  // namespace

void GroupStats::observe(const Observation& obs, const GroupControllerState& state,
                         int agent_count, int dep_depth, int window_size) {
    if (obs.mode == Mode::FINE && obs.run_id > state.score_window_floor_run) {
        const double total = static_cast<double>(obs.total_output_tokens);
        const double r = total > 0 ? static_cast<double>(obs.overhead_tokens) / total : 0.0;
        double tbar = 0.0;
        if (!obs.per_agent_tool_calls.empty())
            tbar = std::accumulate(obs.per_agent_tool_calls.begin(),
                                   obs.per_agent_tool_calls.end(), 0.0) /
                   static_cast<double>(obs.per_agent_tool_calls.size());
        score_window.push_back(
            composition_score({.overhead_ratio = r,
                               .agent_count = agent_count,
                               .mean_tool_calls = tbar,
                               .dependency_depth = dep_depth}));
        fine_output_per_agent_obs.push_back(
            agent_count > 0 ? total / static_cast<double>(agent_count) : 0.0);
        fine_overhead_ratio_obs.push_back(r);
        fine_tool_calls_obs.push_back(tbar);
        fine_output_by_agent_obs.push_back(obs.per_agent_output_tokens);
        trim(score_window, window_size);
        trim(fine_output_per_agent_obs, window_size);
        trim(fine_overhead_ratio_obs, window_size);
        trim(fine_tool_calls_obs, window_size);
        while (static_cast<int>(fine_output_by_agent_obs.size()) > window_size)
            fine_output_by_agent_obs.pop_front();
    }
    if (obs.mode == Mode::COMPOUND) {
        double tbar = 0.0;
        if (!obs.per_agent_tool_calls.empty())
            tbar = std::accumulate(obs.per_agent_tool_calls.begin(),
                                   obs.per_agent_tool_calls.end(), 0.0) /
                   static_cast<double>(obs.per_agent_tool_calls.size());
        compound_tool_calls_obs.push_back(tbar);
        trim(compound_tool_calls_obs, window_size);
    }
    // quality window: only runs at the current mode+tier, after the last reset
    if (obs.quality && obs.run_id > state.quality_window_floor_run && obs.mode == state.mode &&
        (state.mode == Mode::FINE || obs.tier == state.tier)) {
        quality_window.push_back(*obs.quality);
        trim(quality_window, window_size);
    }
}

double GroupStats::mean_fine_output_per_agent() const { return mean_of(fine_output_per_agent_obs); }
double GroupStats::mean_overhead_ratio() const { return mean_of(fine_overhead_ratio_obs); }
double GroupStats::fine_tool_calls_per_agent() const { return mean_of(fine_tool_calls_obs); }
double GroupStats::compound_tool_calls_per_agent() const { return mean_of(compound_tool_calls_obs); }

std::optional<double> GroupStats::mean_fine_output_tokens_for_agent(int agent_index) const {
    if (fine_output_by_agent_obs.empty()) return std::nullopt;
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& per_agent : fine_output_by_agent_obs) {
        if (agent_index < static_cast<int>(per_agent.size())) {
            sum += static_cast<double>(per_agent[agent_index]);
            ++count;
        }
    }
    if (count == 0) return std::nullopt;
    return sum / static_cast<double>(count);
}

std::optional<double> rolling_mean_quality(const GroupStats& stats) {
    if (stats.quality_window.empty()) return std::nullopt;
    return mean_of(stats.quality_window);
}

GroupStats build_group_stats(std::span<const Observation> log, const GroupControllerState& state,
                             int agent_count, int dep_depth, int window_size) {
    GroupStats stats;
    for (const auto& obs : log) stats.observe(obs, state, agent_count, dep_depth, window_size);
    return stats;
}

// ---------------------------------------------------------- telemetry store

TelemetryStore::TelemetryStore(std::shared_ptr<Backend> backend) : backend_(std::move(backend)) {}

std::string TelemetryStore::obs_key(const std::string& pipeline, const std::string& group) {
    return "ac:" + pipeline + ":" + group + ":obs";
}

std::string TelemetryStore::state_key(const std::string& pipeline, const std::string& group) {
    return "ac:" + pipeline + ":" + group + ":state";
}

void TelemetryStore::record_observation(const Observation& obs) {
    const auto v = obs.violations();
    if (!v.empty())
        throw CapsuleError(ErrorCode::SerializationError, "invalid observation: " + v.front());
    const auto log = load_observations(obs.pipeline, obs.group);
    if (!log.empty() && obs.run_id <= log.back().run_id)
        throw CapsuleError(ErrorCode::StaleRunId,
                           "run_id " + std::to_string(obs.run_id) + " <= last " +
                               std::to_string(log.back().run_id));
    nlohmann::json j = obs;
    backend_->append(obs_key(obs.pipeline, obs.group), j.dump() + "\n");
}

std::vector<Observation> TelemetryStore::load_observations(const std::string& pipeline,
                                                           const std::string& group) const {
    std::vector<Observation> out;
    auto raw = backend_->get(obs_key(pipeline, group));
    if (!raw) return out;
    std::istringstream in(*raw);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            out.push_back(nlohmann::json::parse(line).get<Observation>());
        } catch (const nlohmann::json::exception& e) {
            throw CapsuleError(ErrorCode::SerializationError, e.what());
        }
    }
    return out;
}

std::optional<std::pair<GroupControllerState, std::string>> TelemetryStore::load_state(
    const std::string& pipeline, const std::string& group) const {
    auto raw = backend_->get(state_key(pipeline, group));
    if (!raw) return std::nullopt;
    try {
        return std::make_pair(nlohmann::json::parse(*raw).get<GroupControllerState>(), *raw);
    } catch (const nlohmann::json::exception& e) {
        throw CapsuleError(ErrorCode::SerializationError, e.what());
    }
}

bool TelemetryStore::cas_state(const std::string& pipeline, const std::string& group,
                               const std::optional<std::string>& expected_raw,
                               const GroupControllerState& state) {
    nlohmann::json j = state;
    return backend_->compare_and_set(state_key(pipeline, group), expected_raw, j.dump());
}

}  // namespace capsules
