#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ordermerge/geometry.hpp"
#include "ordermerge/model.hpp"
#include "ordermerge/packing.hpp"

namespace ordermerge {

using Dims3 = std::array<double, 3>;

/// Build volume rounded to 1 mm plus the sorted canonical material set.
struct DeviceClass {
    Dims3 volume_mm{};
    std::vector<std::string> materials;

    friend bool operator==(const DeviceClass&, const DeviceClass&) = default;
};

/// Geometric key of a batch: device class and the sorted multiset of part
/// dimensions rounded to 0.1 mm.
struct BatchSignature {
    DeviceClass device_class;
    std::vector<Dims3> parts;

    friend bool operator==(const BatchSignature&, const BatchSignature&) = default;
};

BatchSignature make_signature(const Device& device, std::span<const PartSpec> parts);

struct CasePosition {
    Dims3 dims{};
    Vec3 center;

    friend bool operator==(const CasePosition&, const CasePosition&) = default;
};

struct MemoryCase {
    BatchSignature signature;
    std::string device_id;
    std::vector<CasePosition> final_positions;
    int iterations_used = 1;
    std::string template_id;
    Timestamp recorded_at{};
    // Needed to re-check the stored layout exactly as it was verified.
    double clearance_mm = kDefaultClearanceMm;
    Dims3 volume_mm{};

    friend bool operator==(const MemoryCase&, const MemoryCase&) = default;
};

/// Layout reconstructed from a case (placement ids "p0", "p1", ...).
Layout case_layout(const MemoryCase& c);

/// SHA-256 (hex) over the canonical JSON of the case, excluding recorded_at.
std::string case_id(const MemoryCase& c);

nlohmann::json to_json(const MemoryCase& c);
MemoryCase memory_case_from_json(const nlohmann::json& j, const std::string& path = "");
nlohmann::json to_json(const BatchSignature& sig);

/// 1.0 on exact signature match; 1 / (1 + mean relative dimension error) for
/// batches with the same part count; 0 otherwise. Errors are relative to the
/// stored case's dimensions.
double similarity(const BatchSignature& query, const BatchSignature& stored);

inline constexpr double kSimilarityThreshold = 0.5;
inline constexpr std::size_t kDefaultMemoryK = 3;

struct ScoredCase {
    std::string case_id;
    MemoryCase value;
    double score = 0.0;
};

/// Append-only JSON-lines case log with an in-memory index. Writes are
/// serialized; readers take a shared lock and see a consistent snapshot.
class MemoryStore {
public:
    /// In-memory only.
    MemoryStore();
    /// Replays the log at `log_path` (created on first write). Lines that do
    /// not parse, or whose case id does not match their content, are skipped
    /// with a warning.
    explicit MemoryStore(std::filesystem::path log_path);

    MemoryStore(const MemoryStore&) = delete;
    MemoryStore& operator=(const MemoryStore&) = delete;

    /// Re-checks the case layout, appends it and returns its id. Recording the
    /// same content twice stores it once. Throws RejectedCaseError or
    /// StorageError.
    std::string record_success(const MemoryCase& c);

    /// Up to k cases scoring at least the threshold, best first, then most
    /// recent, then by id.
    std::vector<ScoredCase> retrieve_similar(const BatchSignature& sig, std::size_t k) const;

    std::vector<ScoredCase> all() const;
    std::size_t size() const;
    std::size_t skipped_lines() const noexcept { return skipped_lines_; }
    const std::optional<std::filesystem::path>& log_path() const noexcept { return log_path_; }

private:
    std::optional<std::filesystem::path> log_path_;
    mutable std::shared_mutex mutex_;
    std::vector<ScoredCase> cases_; // score unused here
    std::size_t skipped_lines_ = 0;
};

/// When the best retrieved case is an exact match, maps its positions onto
/// the new batch (parts paired by sorted dimensions, z reset to h / 2) and
/// returns the layout if it is checker-clear at the requested clearance.
std::optional<Layout> seed_layout(std::span<const ScoredCase> cases, const std::string& device_id,
                                  std::span<const PartSpec> parts, const BuildVolume& volume,
                                  double clearance_mm);

} // namespace ordermerge
