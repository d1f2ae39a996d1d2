#include "ordermerge/prompting.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "ordermerge/errors.hpp"

namespace ordermerge {

// --- template ---

namespace {

// Kept byte-identical to templates/merge_layout_v1.txt (checked by a test).
constexpr std::string_view kBuiltinTemplate =
    R"(# Default merge-layout prompt. Placeholders are filled per iteration.
@id merge-layout-v1
@system
You plan build-plate layouts for a 3D printer. Move parts so that none of them overlap each other or leave the build volume.
Edit x and y only: every z must stay equal to its starting value in {default_positions}.
Part centers right now: {positions}.
Build volume, drawn as a red frame in the images: {volume_bounds}.
Part colors: {color_legend}.
Base the new x,y values on the interference report and the attached images.
Layouts that worked before for similar parts: {memory_examples}
Answer with one line shaped exactly like: {output_format}
@user
Interference report: {interference_report}
Return revised positions that clear every interference.
)";

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

} // namespace

PromptTemplate PromptTemplate::parse(std::string_view text) {
    PromptTemplate t;
    enum class Section { None, System, User } section = Section::None;
    std::vector<std::string> system_lines, user_lines;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.rfind('#', 0) == 0) continue;
        if (line.rfind("@id", 0) == 0) {
            t.id_ = std::string(trim(std::string_view(line).substr(3)));
            continue;
        }
        if (line == "@system") {
            section = Section::System;
            continue;
        }
        if (line == "@user") {
            section = Section::User;
            continue;
        }
        if (section == Section::System) {
            system_lines.push_back(line);
        } else if (section == Section::User) {
            user_lines.push_back(line);
        } else if (!trim(line).empty()) {
            throw ConfigError("prompt template: text outside a section: " + line);
        }
    }
    auto join = [](const std::vector<std::string>& lines) {
        std::string out;
        for (const auto& l : lines) {
            if (!out.empty()) out += '\n';
            out += l;
        }
        return std::string(trim(out));
    };
    t.system_ = join(system_lines);
    t.user_ = join(user_lines);
    if (t.id_.empty()) throw ConfigError("prompt template: missing @id");
    if (t.system_.empty()) throw ConfigError("prompt template: empty @system section");
    if (t.system_.find("{output_format}") == std::string::npos) {
        throw ConfigError("prompt template: system section must contain {output_format}");
    }
    return t;
}

PromptTemplate PromptTemplate::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("cannot read prompt template '{}'", path));
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

const PromptTemplate& PromptTemplate::builtin() {
    static const PromptTemplate t = parse(kBuiltinTemplate);
    return t;
}

std::string_view PromptTemplate::builtin_text() { return kBuiltinTemplate; }

std::string PromptTemplate::render(std::string_view text, const std::map<std::string, std::string>& values) {
    std::string out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        if (text[i] == '{') {
            auto close = text.find('}', i);
            if (close != std::string_view::npos) {
                auto name = std::string(text.substr(i + 1, close - i - 1));
                auto it = values.find(name);
                if (it == values.end()) throw ConfigError("prompt template: unknown placeholder {" + name + "}");
                out += it->second;
                i = close + 1;
                continue;
            }
        }
        out += text[i++];
    }
    return out;
}

// --- number / position formatting ---

std::string format_number(double value) {
    std::array<char, 64> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value, std::chars_format::fixed, 6);
    if (ec != std::errc{}) throw ValueError("number out of formatting range");
    std::string s(buf.data(), end);
    if (auto dot = s.find('.'); dot != std::string::npos) {
        while (s.back() == '0') s.pop_back();
        if (s.back() == '.') s.pop_back();
    }
    if (s == "-0") s = "0";
    return s;
}

std::string format_position_list(std::span<const Vec3> positions) {
    std::string out = "[";
    for (std::size_t i = 0; i < positions.size(); ++i) {
        if (i) out += ", ";
        out += fmt::format("({}, {}, {})", format_number(positions[i].x), format_number(positions[i].y),
                           format_number(positions[i].z));
    }
    return out + "]";
}

std::string format_positions(const PositionsAnswer& answer) {
    return "positions = " + format_position_list(answer.positions);
}

std::string format_volume_bounds(const BuildVolume& vol) {
    return fmt::format("({} to {} in x, {} to {} in y, 0 to {} in z)", format_number(-vol.l() / 2.0),
                       format_number(vol.l() / 2.0), format_number(-vol.w() / 2.0),
                       format_number(vol.w() / 2.0), format_number(vol.h()));
}

std::string output_format_line(std::size_t n) {
    std::string out = "positions = [";
    for (std::size_t i = 1; i <= n; ++i) {
        if (i > 1) out += ", ";
        out += fmt::format("(x{0}, y{0}, z{0})", i);
    }
    return out + "]";
}

// --- prompt assembly ---

namespace {

std::vector<Vec3> centers(const Layout& layout) {
    std::vector<Vec3> out;
    for (const auto& p : layout.placements) out.push_back(p.center);
    return out;
}

std::string memory_examples_text(std::span<const ScoredCase> cases) {
    auto arr = nlohmann::json::array();
    for (const auto& sc : cases) {
        auto parts = nlohmann::json::array();
        auto positions = nlohmann::json::array();
        for (const auto& p : sc.value.final_positions) {
            parts.push_back({p.dims[0], p.dims[1], p.dims[2]});
            positions.push_back({p.center.x, p.center.y, p.center.z});
        }
        arr.push_back({{"device_id", sc.value.device_id},
                       {"similarity", std::round(sc.score * 1000.0) / 1000.0},
                       {"part_dims", parts},
                       {"positions", positions},
                       {"iterations_used", sc.value.iterations_used}});
    }
    return arr.dump();
}

} // namespace

PromptBundle build_prompt(const Layout& layout, const Layout& defaults, const BuildVolume& vol,
                          const InterferenceReport& report, std::span<const ScoredCase> memory_examples,
                          const std::optional<std::string>& intervention, const PromptOptions& options) {
    if (layout.placements.size() != defaults.placements.size()) {
        throw MismatchedLayoutError("layout and default positions have different part counts");
    }
    for (std::size_t i = 0; i < layout.placements.size(); ++i) {
        if (layout.placements[i].order_id != defaults.placements[i].order_id) {
            throw MismatchedLayoutError(fmt::format("part {} is '{}' in the layout but '{}' in the defaults", i,
                                                    layout.placements[i].order_id,
                                                    defaults.placements[i].order_id));
        }
    }
    const auto& tmpl = options.prompt_template ? *options.prompt_template : PromptTemplate::builtin();
    const auto n = layout.placements.size();

    std::string legend;
    for (std::size_t i = 0; i < n; ++i) {
        if (i) legend += ", ";
        legend += fmt::format("{} ({})", layout.placements[i].order_id, palette_name(i));
    }
    auto default_centers = centers(defaults);
    auto current_centers = centers(layout);
    const std::map<std::string, std::string> values{
        {"default_positions", format_position_list(default_centers)},
        {"positions", format_position_list(current_centers)},
        {"volume_bounds", format_volume_bounds(vol)},
        {"color_legend", legend},
        {"memory_examples", memory_examples_text(memory_examples)},
        {"output_format", output_format_line(n)},
        {"interference_report", report.text},
    };

    PromptBundle bundle{
        tmpl.id(),
        PromptTemplate::render(tmpl.system(), values),
        PromptTemplate::render(tmpl.user(), values),
        {},
        n,
        PlanningContext{layout, vol, {}},
    };
    for (const auto& sc : memory_examples) bundle.context.memory_case_ids.push_back(sc.case_id);
    if (options.repair_answer) {
        bundle.user_text += fmt::format(
            "\n\nYour previous answer could not be parsed:\n{}\nReformat exactly as: {}", *options.repair_answer,
            output_format_line(n));
    }
    if (intervention) bundle.user_text += "\n\nOPERATOR INSTRUCTION: " + *intervention;
    if (options.include_images) bundle.images = render_views(layout, vol);
    return bundle;
}

// --- answer parsing ---

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

double parse_component(std::string_view token) {
    token = trim(token);
    if (token.empty()) throw ParseError("empty coordinate");
    if (token.front() == '+') token.remove_prefix(1);
    double value = 0.0;
    auto [end, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (ec != std::errc{} || end != token.data() + token.size()) {
        throw ParseError(fmt::format("'{}' is not a number", token));
    }
    if (!std::isfinite(value)) throw NonFiniteError(fmt::format("coordinate '{}' is not finite", token));
    return value;
}

// Finds the start of the last `positions <ws> = <ws> [` and returns the index
// just past the '['.
std::optional<std::size_t> last_block_start(std::string_view text) {
    constexpr std::string_view kKey = "positions";
    std::optional<std::size_t> found;
    for (auto at = text.find(kKey); at != std::string_view::npos; at = text.find(kKey, at + 1)) {
        auto i = at + kKey.size();
        while (i < text.size() && is_space(text[i])) ++i;
        if (i >= text.size() || text[i] != '=') continue;
        ++i;
        while (i < text.size() && is_space(text[i])) ++i;
        if (i >= text.size() || text[i] != '[') continue;
        found = i + 1;
    }
    return found;
}

} // namespace

PositionsAnswer parse_positions(std::string_view text, std::size_t expected_count) {
    auto start = last_block_start(text);
    if (!start) throw ParseError("no 'positions = [...]' block found");

    PositionsAnswer answer;
    std::size_t i = *start;
    auto skip_ws = [&] {
        while (i < text.size() && is_space(text[i])) ++i;
    };
    skip_ws();
    if (i < text.size() && text[i] == ']') {
        if (expected_count != 0) throw CountMismatchError(expected_count, 0);
        return answer;
    }
    while (true) {
        skip_ws();
        if (i >= text.size() || text[i] != '(') throw ParseError("expected '(' at the start of a triple");
        auto close = text.find(')', i);
        if (close == std::string_view::npos) throw ParseError("unterminated triple");
        auto body = text.substr(i + 1, close - i - 1);
        std::array<double, 3> xyz{};
        std::size_t component = 0;
        std::size_t from = 0;
        while (true) {
            auto comma = body.find(',', from);
            auto token = body.substr(from, comma == std::string_view::npos ? std::string_view::npos : comma - from);
            if (component >= 3) throw ParseError("triple has more than three components");
            xyz[component++] = parse_component(token);
            if (comma == std::string_view::npos) break;
            from = comma + 1;
        }
        if (component != 3) throw ParseError("triple has fewer than three components");
        answer.positions.push_back(Vec3{xyz[0], xyz[1], xyz[2]});
        i = close + 1;
        skip_ws();
        if (i >= text.size()) throw ParseError("unterminated positions list");
        if (text[i] == ',') {
            ++i;
            continue;
        }
        if (text[i] == ']') break;
        throw ParseError(fmt::format("unexpected '{}' in positions list", text[i]));
    }
    if (answer.positions.size() != expected_count) {
        throw CountMismatchError(expected_count, answer.positions.size());
    }
    return answer;
}

// --- views ---

namespace {

struct PaletteEntry {
    Rgb color;
    std::string_view name;
};

constexpr std::array<PaletteEntry, 8> kPalette = {{
    {{230, 25, 75}, "red"},
    {{60, 180, 75}, "green"},
    {{0, 130, 200}, "blue"},
    {{245, 130, 48}, "orange"},
    {{145, 30, 180}, "purple"},
    {{70, 200, 200}, "cyan"},
    {{240, 50, 230}, "magenta"},
    {{128, 128, 0}, "olive"},
}};

// Maps a (u, v) world rectangle spanning [u_lo, u_hi] x [v_lo, v_hi] onto the
// canvas with v pointing up.
struct ViewMapping {
    double scale;
    double u_mid;
    double v_mid;

    double px(double u) const { return kViewSize / 2.0 + (u - u_mid) * scale; }
    double py(double v) const { return kViewSize / 2.0 - (v - v_mid) * scale; }
};

ViewMapping mapping_for(double u_lo, double u_hi, double v_lo, double v_hi) {
    double span = std::max(u_hi - u_lo, v_hi - v_lo);
    return ViewMapping{kViewSize * 0.9 / span, (u_lo + u_hi) / 2.0, (v_lo + v_hi) / 2.0};
}

template <typename Project>
Raster draw_view(const Layout& layout, double u_lo, double u_hi, double v_lo, double v_hi, Project project) {
    Raster r(kViewSize, kViewSize, kBackgroundColor);
    auto m = mapping_for(u_lo, u_hi, v_lo, v_hi);
    for (std::size_t i = 0; i < layout.placements.size(); ++i) {
        auto [a0, a1, b0, b1] = project(layout.placements[i]);
        r.fill_rect(m.px(a0), m.py(b1), m.px(a1), m.py(b0), palette_color(i));
    }
    r.stroke_rect(m.px(u_lo), m.py(v_hi), m.px(u_hi), m.py(v_lo), 2, kBoundaryColor);
    return r;
}

} // namespace

Rgb palette_color(std::size_t index) { return kPalette[index % kPalette.size()].color; }

std::string_view palette_name(std::size_t index) { return kPalette[index % kPalette.size()].name; }

Raster render_top_view(const Layout& layout, const BuildVolume& vol) {
    return draw_view(layout, -vol.l() / 2.0, vol.l() / 2.0, -vol.w() / 2.0, vol.w() / 2.0, [](const Placement& p) {
        return std::array<double, 4>{p.center.x - p.dims.l() / 2.0, p.center.x + p.dims.l() / 2.0,
                                     p.center.y - p.dims.w() / 2.0, p.center.y + p.dims.w() / 2.0};
    });
}

Raster render_front_view(const Layout& layout, const BuildVolume& vol) {
    return draw_view(layout, -vol.l() / 2.0, vol.l() / 2.0, 0.0, vol.h(), [](const Placement& p) {
        return std::array<double, 4>{p.center.x - p.dims.l() / 2.0, p.center.x + p.dims.l() / 2.0,
                                     p.center.z - p.dims.h() / 2.0, p.center.z + p.dims.h() / 2.0};
    });
}

std::vector<ViewImage> render_views(const Layout& layout, const BuildVolume& vol) {
    return {
        ViewImage{"top", base64_encode(encode_png(render_top_view(layout, vol)))},
        ViewImage{"front", base64_encode(encode_png(render_front_view(layout, vol)))},
    };
}

} // namespace ordermerge
