#include "cftwin/heatmap.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>

#include "cftwin/error.hpp"

namespace cftwin::heatmap {

namespace {

constexpr std::array<std::array<double, 3>, 9> kViridis{{{68, 1, 84},
                                                         {71, 44, 122},
                                                         {59, 81, 139},
                                                         {44, 113, 142},
                                                         {33, 144, 141},
                                                         {39, 173, 129},
                                                         {92, 200, 99},
                                                         {170, 220, 50},
                                                         {253, 231, 37}}};

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};

}  // namespace

std::array<std::uint8_t, 3> Image::pixel(int x, int y) const {
    const auto* p = &rgb[(static_cast<std::size_t>(y) * width + x) * 3];
    return {p[0], p[1], p[2]};
}

void Image::set(int x, int y, std::array<std::uint8_t, 3> c) {
    auto* p = &rgb[(static_cast<std::size_t>(y) * width + x) * 3];
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
}

std::array<std::uint8_t, 3> viridis(double u) {
    if (!std::isfinite(u)) u = 0.0;
    u = std::clamp(u, 0.0, 1.0) * (kViridis.size() - 1);
    const auto i = std::min(static_cast<std::size_t>(u), kViridis.size() - 2);
    const double f = u - static_cast<double>(i);
    std::array<std::uint8_t, 3> c{};
    for (int k = 0; k < 3; ++k)
        c[k] = static_cast<std::uint8_t>(std::lround(kViridis[i][k] + f * (kViridis[i + 1][k] - kViridis[i][k])));
    return c;
}

Image render_panels(const std::vector<const cfgen::CFGrid*>& panels, const Layout& layout, RenderInfo* info) {
    if (panels.empty()) throw DomainError("render_panels: no panels");
    if (layout.scale < 1 || layout.gap < 0 || layout.bar_width < 0) throw DomainError("render_panels: bad layout");
    int fine = 0;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto* g : panels) {
        if (!g || g->resolution < 1 || g->values.empty()) throw DomainError("render_panels: empty panel");
        fine = std::max(fine, g->resolution);
        for (int i = 0; i < g->resolution; ++i)
            for (int j = 0; j < g->resolution; ++j) {
                lo = std::min(lo, g->at(i, j));
                hi = std::max(hi, g->at(i, j));
            }
    }
    for (const auto* g : panels)
        if (fine % g->resolution != 0) throw DomainError("render_panels: panel resolutions must divide the finest one");

    const int side = fine * layout.scale;
    const int n = static_cast<int>(panels.size());
    Image img;
    img.width = n * side + (n - 1) * layout.gap + (layout.bar_width > 0 ? layout.gap + layout.bar_width : 0);
    img.height = side;
    img.rgb.assign(static_cast<std::size_t>(img.width) * img.height * 3, 255);
    const double span = hi > lo ? hi - lo : 1.0;

    RenderInfo ri{lo, hi, side, {}};
    for (int p = 0; p < n; ++p) {
        const auto& g = *panels[p];
        const int x0 = p * (side + layout.gap);
        ri.panel_x.push_back(x0);
        const int rep = fine / g.resolution * layout.scale;
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x) img.set(x0 + x, y, viridis((g.at(y / rep, x / rep) - lo) / span));
    }
    if (layout.bar_width > 0) {
        const int x0 = n * (side + layout.gap);
        for (int y = 0; y < side; ++y) {
            const auto c = viridis(side > 1 ? 1.0 - static_cast<double>(y) / (side - 1) : 1.0);
            for (int x = 0; x < layout.bar_width; ++x) img.set(x0 + x, y, c);
        }
    }
    if (info) *info = ri;
    return img;
}

void write_png(const std::filesystem::path& path, const Image& img) {
    if (img.width < 1 || img.height < 1 || img.rgb.size() != static_cast<std::size_t>(img.width) * img.height * 3)
        throw DomainError("write_png: inconsistent image");
    std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "wb"));
    if (!f) throw FormatError(FormatError::Kind::io, "write_png: cannot open " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw FormatError(FormatError::Kind::io, "write_png: libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw FormatError(FormatError::Kind::io, "write_png: libpng error writing " + path.string());
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.height; ++y)
        png_write_row(png, const_cast<png_bytep>(&img.rgb[static_cast<std::size_t>(y) * img.width * 3]));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
    std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "rb"));
    if (!f) throw FormatError(FormatError::Kind::io, "read_png: cannot open " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw FormatError(FormatError::Kind::io, "read_png: libpng initialisation failed");
    }
    Image img;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError(FormatError::Kind::bad_header, "read_png: malformed " + path.string());
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    if (png_get_color_type(png, info) != PNG_COLOR_TYPE_RGB || png_get_bit_depth(png, info) != 8) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError(FormatError::Kind::bad_header, "read_png: expected 8-bit RGB");
    }
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
    for (int y = 0; y < img.height; ++y)
        png_read_row(png, &img.rgb[static_cast<std::size_t>(y) * img.width * 3], nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

}  // namespace cftwin::heatmap
