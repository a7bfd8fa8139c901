#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "cftwin/cfgen.hpp"

namespace cftwin::heatmap {

struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

    std::array<std::uint8_t, 3> pixel(int x, int y) const;
    void set(int x, int y, std::array<std::uint8_t, 3> c);
};

// Piecewise-linear viridis; u is clamped to [0, 1].
std::array<std::uint8_t, 3> viridis(double u);

struct Layout {
    int scale = 4;      // pixels per fine cell
    int gap = 8;        // white columns between panels
    int bar_width = 12; // colour bar on the right; 0 disables it
};

struct RenderInfo {
    double lo = 0.0;
    double hi = 0.0;
    int panel_side = 0;                 // pixels
    std::vector<int> panel_x;           // left edge of each panel
};

// Renders channel 0 of each grid side by side on one shared colour scale
// (min/max over all panels). Coarser grids are replicated to the finest
// resolution so the panels align cell for cell.
Image render_panels(const std::vector<const cfgen::CFGrid*>& panels, const Layout& layout, RenderInfo* info = nullptr);

void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

}  // namespace cftwin::heatmap
