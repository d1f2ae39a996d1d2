#include "ordermerge/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "json_util.hpp"
#include "ordermerge/errors.hpp"

namespace ordermerge {

using detail::child_path;
using detail::json;
using detail::ObjectReader;

// --- timestamps ---

Timestamp parse_timestamp(std::string_view text) {
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
    char tail = 0;
    std::string buf(text);
    int n = std::sscanf(buf.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%c", &y, &mo, &d, &h, &mi, &s, &tail);
    if (n != 7 || tail != 'Z' || buf.size() != 20) {
        throw ValueError(fmt::format("timestamp '{}' is not of the form YYYY-MM-DDTHH:MM:SSZ", text));
    }
    using namespace std::chrono;
    year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
    if (!ymd.ok() || h > 23 || mi > 59 || s > 59) {
        throw ValueError(fmt::format("timestamp '{}' is out of range", text));
    }
    return sys_days{ymd} + hours{h} + minutes{mi} + seconds{s};
}

std::string format_timestamp(Timestamp t) {
    using namespace std::chrono;
    auto day_point = floor<days>(t);
    year_month_day ymd{day_point};
    hh_mm_ss hms{t - day_point};
    return fmt::format("{:04d}-{:02d}-{:02d}T{:02d}:{:02d}:{:02d}Z", static_cast<int>(ymd.year()),
                       static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                       hms.hours().count(), hms.minutes().count(), hms.seconds().count());
}

// --- value types ---

Extents::Extents(double l_mm, double w_mm, double h_mm) : l_(l_mm), w_(w_mm), h_(h_mm) {
    for (double v : {l_mm, w_mm, h_mm}) {
        if (!std::isfinite(v)) throw ValueError("dimension is not finite");
        if (v <= 0.0) throw ValueError(fmt::format("dimension must be positive, got {}", v));
    }
}

namespace {

std::string collapse_whitespace(std::string_view raw) {
    std::string out;
    bool pending_space = false;
    for (char c : raw) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(c);
    }
    return out;
}

std::string upper_ascii(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
}

} // namespace

std::string canonical_material(std::string_view raw) {
    return upper_ascii(collapse_whitespace(raw));
}

Material::Material(std::string_view raw) : value_(canonical_material(raw)) {
    if (value_.empty()) throw ValueError("material identifier is empty");
}

Technology::Technology(std::string_view label) {
    auto trimmed = collapse_whitespace(label);
    if (trimmed.empty()) throw ValueError("technology label is empty");
    auto upper = upper_ascii(trimmed);
    if (upper == "FDM") {
        kind_ = TechnologyKind::FDM;
        label_ = upper;
    } else if (upper == "SLA") {
        kind_ = TechnologyKind::SLA;
        label_ = upper;
    } else if (upper == "SLS") {
        kind_ = TechnologyKind::SLS;
        label_ = upper;
    } else {
        kind_ = TechnologyKind::Other;
        label_ = trimmed;
    }
}

DeviceFunctional::DeviceFunctional(Technology m_type, std::vector<Material> materials)
    : m_type_(std::move(m_type)), materials_(std::move(materials)) {
    if (materials_.empty()) throw ValueError("device supports no materials");
}

bool DeviceFunctional::supports(const Material& material) const {
    return std::find(materials_.begin(), materials_.end(), material) != materials_.end();
}

DevicePerformance::DevicePerformance(double accuracy_mm, double speed_mm_s)
    : accuracy_mm_(accuracy_mm), speed_mm_s_(speed_mm_s) {
    if (!(std::isfinite(accuracy_mm) && accuracy_mm > 0.0)) {
        throw ValueError(fmt::format("accuracy_mm must be positive, got {}", accuracy_mm));
    }
    if (!(std::isfinite(speed_mm_s) && speed_mm_s > 0.0)) {
        throw ValueError(fmt::format("speed_mm_s must be positive, got {}", speed_mm_s));
    }
}

std::string_view to_string(DeviceStatus status) {
    switch (status) {
    case DeviceStatus::Idle:
        return "Idle";
    case DeviceStatus::Printing:
        return "Printing";
    case DeviceStatus::Offline:
        return "Offline";
    }
    return "Idle";
}

DeviceStatus parse_device_status(std::string_view text) {
    if (text == "Idle") return DeviceStatus::Idle;
    if (text == "Printing") return DeviceStatus::Printing;
    if (text == "Offline") return DeviceStatus::Offline;
    throw ValueError(fmt::format("unknown device status '{}'", text));
}

Device::Device(std::string id, DeviceFunctional functional, DevicePerformance performance,
               BuildVolume volume, DeviceStatus status)
    : id_(std::move(id)),
      functional_(std::move(functional)),
      performance_(performance),
      volume_(volume),
      status_(status) {
    if (id_.empty()) throw ValueError("device id is empty");
}

Device Device::with_status(DeviceStatus status) const {
    Device copy = *this;
    copy.status_ = status;
    return copy;
}

namespace {

template <typename T>
void require_unique_ids(const std::vector<T>& items) {
    std::set<std::string_view> seen;
    for (const auto& item : items) {
        if (!seen.insert(item.id()).second) throw DuplicateIdError(item.id());
    }
}

} // namespace

Fleet::Fleet(std::vector<Device> devices) : devices_(std::move(devices)) {
    require_unique_ids(devices_);
}

const Device* Fleet::find(std::string_view id) const {
    for (const auto& d : devices_) {
        if (d.id() == id) return &d;
    }
    return nullptr;
}

WorkOrder::WorkOrder(std::string id, OrderSpatial spatial, Material material, double accuracy_req_mm,
                     Timestamp start_time, Timestamp expected_time,
                     std::optional<std::string> mesh_ref, std::optional<Technology> m_type_req)
    : id_(std::move(id)),
      spatial_(spatial),
      material_(std::move(material)),
      accuracy_req_mm_(accuracy_req_mm),
      start_time_(start_time),
      expected_time_(expected_time),
      mesh_ref_(std::move(mesh_ref)),
      m_type_req_(std::move(m_type_req)) {
    if (id_.empty()) throw ValueError("order id is empty");
    if (!(std::isfinite(accuracy_req_mm) && accuracy_req_mm > 0.0)) {
        throw ValueError(fmt::format("accuracy_req_mm must be positive, got {}", accuracy_req_mm));
    }
    if (expected_time_ < start_time_) throw ValueError("expected_time precedes start_time");
}

OrderBook::OrderBook(std::vector<WorkOrder> orders) : orders_(std::move(orders)) {
    require_unique_ids(orders_);
}

const WorkOrder* OrderBook::find(std::string_view id) const {
    for (const auto& o : orders_) {
        if (o.id() == id) return &o;
    }
    return nullptr;
}

// --- JSON ---

namespace {

// Runs `fn`, prefixing any ValueError with the JSON path it came from.
template <typename Fn>
auto at_path(const std::string& path, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const ValueError& e) {
        throw ValueError(fmt::format("{}: {}", path.empty() ? "/" : path, e.what()));
    }
}

template <typename T>
T extents_from_json(const json& j, const std::string& path) {
    ObjectReader r(j, path, {"l_mm", "w_mm", "h_mm"});
    return at_path(path, [&] { return T(r.number("l_mm"), r.number("w_mm"), r.number("h_mm")); });
}

json extents_to_json(const Extents& e) {
    return json{{"l_mm", e.l()}, {"w_mm", e.w()}, {"h_mm", e.h()}};
}

Timestamp timestamp_field(const ObjectReader& r, const char* key) {
    auto text = r.string(key);
    return at_path(child_path(r.path(), key), [&] { return parse_timestamp(text); });
}

} // namespace

Device device_from_json(const json& j, const std::string& path) {
    ObjectReader r(j, path, {"id", "functional", "performance", "volume", "status"});
    auto id = r.string("id");

    auto fpath = child_path(path, "functional");
    ObjectReader fr(r.object("functional"), fpath, {"m_type", "materials"});
    auto tech = at_path(child_path(fpath, "m_type"), [&] { return Technology(fr.string("m_type")); });
    auto raw_materials = fr.string_list("materials");
    std::vector<Material> materials;
    for (std::size_t i = 0; i < raw_materials.size(); ++i) {
        materials.push_back(at_path(child_path(child_path(fpath, "materials"), i),
                                    [&] { return Material(raw_materials[i]); }));
    }
    auto functional = at_path(fpath, [&] { return DeviceFunctional(tech, materials); });

    auto ppath = child_path(path, "performance");
    ObjectReader pr(r.object("performance"), ppath, {"accuracy_mm", "speed_mm_s"});
    auto performance = at_path(
        ppath, [&] { return DevicePerformance(pr.number("accuracy_mm"), pr.number("speed_mm_s")); });

    auto volume = extents_from_json<BuildVolume>(r.object("volume"), child_path(path, "volume"));

    auto status = DeviceStatus::Idle;
    if (auto s = r.optional_string("status")) {
        status = at_path(child_path(path, "status"), [&] { return parse_device_status(*s); });
    }
    return at_path(path, [&] {
        return Device(std::move(id), functional, performance, volume, status);
    });
}

json device_to_json(const Device& d) {
    json materials = json::array();
    for (const auto& m : d.functional().materials()) materials.push_back(m.str());
    return json{
        {"id", d.id()},
        {"functional", {{"m_type", d.functional().m_type().label()}, {"materials", materials}}},
        {"performance",
         {{"accuracy_mm", d.performance().accuracy_mm()},
          {"speed_mm_s", d.performance().speed_mm_s()}}},
        {"volume", extents_to_json(d.volume())},
        {"status", std::string(to_string(d.status()))},
    };
}

WorkOrder order_from_json(const json& j, const std::string& path, const LoadOptions& options) {
    ObjectReader r(j, path,
                   {"id", "spatial", "material", "accuracy_req_mm", "start_time", "expected_time",
                    "mesh_ref", "m_type_req"});
    auto id = r.string("id");
    auto mesh_ref = r.optional_string("mesh_ref");

    std::optional<OrderSpatial> spatial;
    if (r.has("spatial")) {
        spatial = extents_from_json<OrderSpatial>(r.object("spatial"), child_path(path, "spatial"));
    } else if (mesh_ref) {
        std::filesystem::path mesh_path(*mesh_ref);
        if (mesh_path.is_relative() && !options.mesh_root.empty()) {
            mesh_path = std::filesystem::path(options.mesh_root) / mesh_path;
        }
        auto mesh = read_stl(mesh_path.string());
        spatial = derive_spatial_from_mesh(mesh);
    } else {
        throw SchemaError(child_path(path, "spatial"), "missing field (and no mesh_ref)");
    }

    auto material = at_path(child_path(path, "material"), [&] { return Material(r.string("material")); });
    auto accuracy = r.number("accuracy_req_mm");
    auto start = timestamp_field(r, "start_time");
    auto expected = timestamp_field(r, "expected_time");
    std::optional<Technology> m_type_req;
    if (auto t = r.optional_string("m_type_req")) {
        m_type_req = at_path(child_path(path, "m_type_req"), [&] { return Technology(*t); });
    }
    return at_path(path, [&] {
        return WorkOrder(std::move(id), *spatial, material, accuracy, start, expected, mesh_ref,
                         m_type_req);
    });
}

json order_to_json(const WorkOrder& o) {
    json j{
        {"id", o.id()},
        {"spatial", extents_to_json(o.spatial())},
        {"material", o.material().str()},
        {"accuracy_req_mm", o.accuracy_req_mm()},
        {"start_time", format_timestamp(o.start_time())},
        {"expected_time", format_timestamp(o.expected_time())},
    };
    if (o.mesh_ref()) j["mesh_ref"] = *o.mesh_ref();
    if (o.m_type_req()) j["m_type_req"] = o.m_type_req()->label();
    return j;
}

namespace {

std::string read_all(std::istream& in) {
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

} // namespace

Fleet load_fleet(std::string_view text) {
    auto root = detail::parse_json(text);
    ObjectReader r(root, "", {"devices"});
    const auto& arr = r.array("devices");
    std::vector<Device> devices;
    devices.reserve(arr.size());
    for (std::size_t i = 0; i < arr.size(); ++i) {
        devices.push_back(device_from_json(arr[i], child_path("/devices", i)));
    }
    return Fleet(std::move(devices));
}

Fleet load_fleet(std::istream& in) { return load_fleet(read_all(in)); }

OrderBook load_orders(std::string_view text, const LoadOptions& options) {
    auto root = detail::parse_json(text);
    ObjectReader r(root, "", {"orders"});
    const auto& arr = r.array("orders");
    std::vector<WorkOrder> orders;
    orders.reserve(arr.size());
    for (std::size_t i = 0; i < arr.size(); ++i) {
        orders.push_back(order_from_json(arr[i], child_path("/orders", i), options));
    }
    return OrderBook(std::move(orders));
}

OrderBook load_orders(std::istream& in, const LoadOptions& options) {
    return load_orders(read_all(in), options);
}

std::string save_fleet(const Fleet& fleet) {
    json arr = json::array();
    for (const auto& d : fleet.devices()) arr.push_back(device_to_json(d));
    return json{{"devices", arr}}.dump(2);
}

std::string save_orders(const OrderBook& book) {
    json arr = json::array();
    for (const auto& o : book.orders()) arr.push_back(order_to_json(o));
    return json{{"orders", arr}}.dump(2);
}

// --- meshes ---

namespace {

std::vector<Triangle> read_binary_stl(const std::string& bytes) {
    std::uint32_t count = 0;
    std::memcpy(&count, bytes.data() + 80, sizeof(count));
    std::vector<Triangle> tris;
    tris.reserve(count);
    const char* p = bytes.data() + 84;
    for (std::uint32_t i = 0; i < count; ++i, p += 50) {
        Triangle t;
        for (int v = 0; v < 3; ++v) {
            float xyz[3];
            std::memcpy(xyz, p + 12 + v * 12, sizeof(xyz));
            t[v] = Vec3{xyz[0], xyz[1], xyz[2]};
        }
        tris.push_back(t);
    }
    return tris;
}

std::vector<Triangle> read_ascii_stl(const std::string& bytes) {
    std::istringstream in(bytes);
    std::vector<Triangle> tris;
    std::vector<Vec3> pending;
    std::string token;
    while (in >> token) {
        if (token != "vertex") continue;
        Vec3 v;
        if (!(in >> v.x >> v.y >> v.z)) throw ParseError("malformed vertex line in STL");
        pending.push_back(v);
        if (pending.size() == 3) {
            tris.push_back(Triangle{pending[0], pending[1], pending[2]});
            pending.clear();
        }
    }
    if (!pending.empty()) throw ParseError("STL facet with fewer than three vertices");
    return tris;
}

} // namespace

std::vector<Triangle> read_stl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StorageError(fmt::format("cannot open mesh '{}'", path));
    auto bytes = read_all(in);
    if (bytes.size() >= 84) {
        std::uint32_t count = 0;
        std::memcpy(&count, bytes.data() + 80, sizeof(count));
        if (bytes.size() == 84 + std::size_t{count} * 50) return read_binary_stl(bytes);
    }
    if (bytes.rfind("solid", 0) == 0) return read_ascii_stl(bytes);
    throw ParseError(fmt::format("'{}' is neither ASCII nor binary STL", path));
}

OrderSpatial derive_spatial_from_mesh(std::span<const Triangle> mesh) {
    if (mesh.empty()) throw EmptyMeshError();
    constexpr double inf = std::numeric_limits<double>::infinity();
    double lo[3] = {inf, inf, inf};
    double hi[3] = {-inf, -inf, -inf};
    for (const auto& tri : mesh) {
        for (const auto& v : tri) {
            const double c[3] = {v.x, v.y, v.z};
            for (int a = 0; a < 3; ++a) {
                if (!std::isfinite(c[a])) throw NonFiniteError("mesh vertex has a non-finite coordinate");
                lo[a] = std::min(lo[a], c[a]);
                hi[a] = std::max(hi[a], c[a]);
            }
        }
    }
    try {
        return OrderSpatial(hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]);
    } catch (const ValueError&) {
        throw DegenerateMeshError(fmt::format("mesh has a zero extent ({} x {} x {})", hi[0] - lo[0],
                                              hi[1] - lo[1], hi[2] - lo[2]));
    }
}

} // namespace ordermerge
