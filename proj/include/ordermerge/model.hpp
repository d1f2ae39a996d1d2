#pragma once

#include <array>
#include <chrono>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace ordermerge {

// Device and order model. Every type validates its invariants on
// construction, so a value that exists is a valid value.

using Timestamp = std::chrono::sys_seconds;

/// Parses `YYYY-MM-DDTHH:MM:SSZ` (UTC, whole seconds). Throws ValueError.
Timestamp parse_timestamp(std::string_view text);
std::string format_timestamp(Timestamp t);

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    friend bool operator==(const Vec3&, const Vec3&) = default;
};

/// Strictly positive length/width/height triple in millimeters.
class Extents {
public:
    Extents(double l_mm, double w_mm, double h_mm);

    double l() const noexcept { return l_; }
    double w() const noexcept { return w_; }
    double h() const noexcept { return h_; }
    double footprint() const noexcept { return l_ * w_; }
    double volume() const noexcept { return l_ * w_ * h_; }

    friend bool operator==(const Extents&, const Extents&) = default;

private:
    double l_;
    double w_;
    double h_;
};

/// Interior printable box of a device.
struct BuildVolume : Extents {
    using Extents::Extents;
};

/// Axis-aligned bounding dimensions of an ordered part.
struct OrderSpatial : Extents {
    using Extents::Extents;
};

/// Canonical material identifier: trimmed, inner whitespace collapsed to a
/// single space, ASCII upper-cased. Two materials match iff their canonical
/// strings are equal.
class Material {
public:
    explicit Material(std::string_view raw);

    const std::string& str() const noexcept { return value_; }

    friend bool operator==(const Material&, const Material&) = default;
    friend auto operator<=>(const Material&, const Material&) = default;

private:
    std::string value_;
};

std::string canonical_material(std::string_view raw);

enum class TechnologyKind { FDM, SLA, SLS, Other };

/// Printing technology label. Known labels are canonicalized; anything else
/// is kept verbatim (trimmed) as `Other`.
class Technology {
public:
    explicit Technology(std::string_view label);

    TechnologyKind kind() const noexcept { return kind_; }
    const std::string& label() const noexcept { return label_; }

    friend bool operator==(const Technology&, const Technology&) = default;

private:
    TechnologyKind kind_;
    std::string label_;
};

class DeviceFunctional {
public:
    DeviceFunctional(Technology m_type, std::vector<Material> materials);

    const Technology& m_type() const noexcept { return m_type_; }
    const std::vector<Material>& materials() const noexcept { return materials_; }
    bool supports(const Material& material) const;

    friend bool operator==(const DeviceFunctional&, const DeviceFunctional&) = default;

private:
    Technology m_type_;
    std::vector<Material> materials_;
};

class DevicePerformance {
public:
    DevicePerformance(double accuracy_mm, double speed_mm_s);

    /// Smaller is finer.
    double accuracy_mm() const noexcept { return accuracy_mm_; }
    double speed_mm_s() const noexcept { return speed_mm_s_; }

    friend bool operator==(const DevicePerformance&, const DevicePerformance&) = default;

private:
    double accuracy_mm_;
    double speed_mm_s_;
};

enum class DeviceStatus { Idle, Printing, Offline };

std::string_view to_string(DeviceStatus status);
DeviceStatus parse_device_status(std::string_view text);

class Device {
public:
    Device(std::string id, DeviceFunctional functional, DevicePerformance performance,
           BuildVolume volume, DeviceStatus status = DeviceStatus::Idle);

    const std::string& id() const noexcept { return id_; }
    const DeviceFunctional& functional() const noexcept { return functional_; }
    const DevicePerformance& performance() const noexcept { return performance_; }
    const BuildVolume& volume() const noexcept { return volume_; }
    DeviceStatus status() const noexcept { return status_; }

    Device with_status(DeviceStatus status) const;

    friend bool operator==(const Device&, const Device&) = default;

private:
    std::string id_;
    DeviceFunctional functional_;
    DevicePerformance performance_;
    BuildVolume volume_;
    DeviceStatus status_;
};

class Fleet {
public:
    Fleet() = default;
    /// Throws DuplicateIdError when two devices share an id.
    explicit Fleet(std::vector<Device> devices);

    const std::vector<Device>& devices() const noexcept { return devices_; }
    const Device* find(std::string_view id) const;
    std::size_t size() const noexcept { return devices_.size(); }
    bool empty() const noexcept { return devices_.empty(); }

    friend bool operator==(const Fleet&, const Fleet&) = default;

private:
    std::vector<Device> devices_;
};

class WorkOrder {
public:
    WorkOrder(std::string id, OrderSpatial spatial, Material material, double accuracy_req_mm,
              Timestamp start_time, Timestamp expected_time,
              std::optional<std::string> mesh_ref = std::nullopt,
              std::optional<Technology> m_type_req = std::nullopt);

    const std::string& id() const noexcept { return id_; }
    const OrderSpatial& spatial() const noexcept { return spatial_; }
    const Material& material() const noexcept { return material_; }
    /// Coarsest acceptable device accuracy.
    double accuracy_req_mm() const noexcept { return accuracy_req_mm_; }
    Timestamp start_time() const noexcept { return start_time_; }
    Timestamp expected_time() const noexcept { return expected_time_; }
    const std::optional<std::string>& mesh_ref() const noexcept { return mesh_ref_; }
    const std::optional<Technology>& m_type_req() const noexcept { return m_type_req_; }

    friend bool operator==(const WorkOrder&, const WorkOrder&) = default;

private:
    std::string id_;
    OrderSpatial spatial_;
    Material material_;
    double accuracy_req_mm_;
    Timestamp start_time_;
    Timestamp expected_time_;
    std::optional<std::string> mesh_ref_;
    std::optional<Technology> m_type_req_;
};

class OrderBook {
public:
    OrderBook() = default;
    explicit OrderBook(std::vector<WorkOrder> orders);

    const std::vector<WorkOrder>& orders() const noexcept { return orders_; }
    const WorkOrder* find(std::string_view id) const;
    std::size_t size() const noexcept { return orders_.size(); }
    bool empty() const noexcept { return orders_.empty(); }

    friend bool operator==(const OrderBook&, const OrderBook&) = default;

private:
    std::vector<WorkOrder> orders_;
};

// --- JSON persistence (strict schema: unknown fields are rejected) ---

struct LoadOptions {
    /// Base directory for relative `mesh_ref` paths. When an order has a
    /// `mesh_ref` but no `spatial` block, the spatial extents are derived
    /// from the referenced STL file.
    std::string mesh_root;
};

Fleet load_fleet(std::string_view json_text);
Fleet load_fleet(std::istream& in);
OrderBook load_orders(std::string_view json_text, const LoadOptions& options = {});
OrderBook load_orders(std::istream& in, const LoadOptions& options = {});

std::string save_fleet(const Fleet& fleet);
std::string save_orders(const OrderBook& book);

nlohmann::json device_to_json(const Device& device);
nlohmann::json order_to_json(const WorkOrder& order);
Device device_from_json(const nlohmann::json& j, const std::string& path = "");
WorkOrder order_from_json(const nlohmann::json& j, const std::string& path = "",
                          const LoadOptions& options = {});

// --- Triangle meshes ---

using Triangle = std::array<Vec3, 3>;

/// Reads an ASCII or binary STL file. Throws StorageError / ParseError.
std::vector<Triangle> read_stl(const std::string& path);

/// Per-axis (max - min) of all vertices. Throws EmptyMeshError,
/// NonFiniteError, or DegenerateMeshError when any extent is zero.
OrderSpatial derive_spatial_from_mesh(std::span<const Triangle> mesh);

} // namespace ordermerge
