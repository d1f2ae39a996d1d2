#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ordermerge/geometry.hpp"
#include "ordermerge/memory.hpp"
#include "ordermerge/raster.hpp"

namespace ordermerge {

/// Versioned prompt template. File format:
///
///     # comment lines are ignored
///     @id merge-layout-v1
///     @system
///     ...system text with {placeholders}...
///     @user
///     ...user text with {placeholders}...
///
/// Line breaks inside a section are kept. Placeholders:
/// {default_positions} {positions} {volume_bounds} {color_legend}
/// {memory_examples} {output_format} {interference_report}.
class PromptTemplate {
public:
    static PromptTemplate parse(std::string_view text);
    static PromptTemplate load(const std::string& path);
    static const PromptTemplate& builtin();
    static std::string_view builtin_text();

    const std::string& id() const noexcept { return id_; }
    const std::string& system() const noexcept { return system_; }
    const std::string& user() const noexcept { return user_; }

    /// Substitutes `{name}` placeholders. Throws ConfigError on an unknown one.
    static std::string render(std::string_view text, const std::map<std::string, std::string>& values);

private:
    std::string id_;
    std::string system_;
    std::string user_;
};

struct ViewImage {
    std::string label;      ///< "top" or "front"
    std::string png_base64; ///< raw base64, no data-URL prefix

    std::string data_url() const { return "data:image/png;base64," + png_base64; }

    friend bool operator==(const ViewImage&, const ViewImage&) = default;
};

/// Structured state carried next to the text so non-LLM planners can work
/// from the same bundle.
struct PlanningContext {
    Layout layout;
    BuildVolume volume;
    std::vector<std::string> memory_case_ids;
};

struct PromptBundle {
    std::string template_id;
    std::string system_text;
    std::string user_text;
    std::vector<ViewImage> images;
    std::size_t expected_part_count = 0;
    PlanningContext context;
};

struct PositionsAnswer {
    std::vector<Vec3> positions;

    friend bool operator==(const PositionsAnswer&, const PositionsAnswer&) = default;
};

struct PromptOptions {
    const PromptTemplate* prompt_template = nullptr; ///< builtin when null
    bool include_images = true;
    /// Unparseable previous answer; adds a reformat request to the user text.
    std::optional<std::string> repair_answer;
};

/// Shortest fixed-point rendering with at most six fractional digits.
std::string format_number(double value);
/// `[(x1, y1, z1), (x2, y2, z2)]`
std::string format_position_list(std::span<const Vec3> positions);
/// `positions = [(x1, y1, z1), ...]`
std::string format_positions(const PositionsAnswer& answer);
/// `(-L/2 to L/2 in x, -W/2 to W/2 in y, 0 to H in z)`
std::string format_volume_bounds(const BuildVolume& vol);
/// Placeholder answer line for `n` parts.
std::string output_format_line(std::size_t n);

/// Throws MismatchedLayoutError when `layout` and `defaults` differ in ids or order.
PromptBundle build_prompt(const Layout& layout, const Layout& defaults, const BuildVolume& vol,
                          const InterferenceReport& report, std::span<const ScoredCase> memory_examples,
                          const std::optional<std::string>& intervention, const PromptOptions& options = {});

/// Reads the last `positions = [...]` block. Throws ParseError,
/// CountMismatchError or NonFiniteError.
PositionsAnswer parse_positions(std::string_view text, std::size_t expected_count);

/// Fixed 8-color part palette, cycled by placement index.
Rgb palette_color(std::size_t index);
std::string_view palette_name(std::size_t index);
inline constexpr Rgb kBoundaryColor{255, 0, 0};
inline constexpr Rgb kBackgroundColor{255, 255, 255};
inline constexpr int kViewSize = 512;

/// Top (x-y) and front (x-z) orthographic views as PNG, 512x512, volume
/// mapped with a 5% margin.
std::vector<ViewImage> render_views(const Layout& layout, const BuildVolume& vol);
Raster render_top_view(const Layout& layout, const BuildVolume& vol);
Raster render_front_view(const Layout& layout, const BuildVolume& vol);

} // namespace ordermerge
