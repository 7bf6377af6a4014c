#include "zidian/glyph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "zidian/utf8.hpp"

namespace zidian {

const std::vector<double>& GlyphAtlas::bitmap(char32_t c) const {
    auto it = glyphs.find(c);
    if (it == glyphs.end())
        throw GlyphError("character '" + utf8_encode_one(c) + "' not in glyph atlas");
    return it->second;
}

void GlyphAtlas::insert(char32_t c, std::vector<double> bm) {
    if (static_cast<int>(bm.size()) != side * side)
        throw GlyphError("glyph bitmap for '" + utf8_encode_one(c) + "' has " +
                         std::to_string(bm.size()) + " pixels, expected " +
                         std::to_string(side * side));
    if (std::all_of(bm.begin(), bm.end(), [](double v) { return v == 0.0; }))
        throw GlyphError("glyph bitmap for '" + utf8_encode_one(c) + "' is all zero");
    if (!glyphs.count(c)) order.push_back(c);
    glyphs[c] = std::move(bm);
}

GlyphAtlas GlyphAtlas::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw GlyphError("cannot open glyph atlas: " + path);
    std::string magic, version;
    int side = 0, count = 0;
    in >> magic >> version >> side >> count;
    if (magic != "GLYPH" || version != "v1")
        throw GlyphError("bad glyph atlas header in " + path);
    if (side <= 0 || count < 0) throw GlyphError("bad glyph atlas dimensions in " + path);
    in.ignore();  // trailing newline after the header

    GlyphAtlas atlas;
    atlas.side = side;
    std::string line;
    for (int g = 0; g < count; ++g) {
        if (!std::getline(in, line)) throw GlyphError("glyph atlas truncated at glyph " + std::to_string(g));
        auto cps = utf8_decode(line);
        if (cps.size() != 1)
            throw GlyphError("glyph " + std::to_string(g) + " name is not a single character: '" +
                             line + "'");
        std::vector<double> bm;
        bm.reserve(static_cast<size_t>(side) * static_cast<size_t>(side));
        for (int r = 0; r < side; ++r) {
            if (!std::getline(in, line))
                throw GlyphError("glyph atlas truncated inside glyph '" + utf8_encode_one(cps[0]) + "'");
            std::istringstream ss(line);
            int v = 0;
            for (int c = 0; c < side; ++c) {
                if (!(ss >> v) || v < 0 || v > 255)
                    throw GlyphError("bad pixel value in glyph '" + utf8_encode_one(cps[0]) +
                                     "' row " + std::to_string(r));
                bm.push_back(static_cast<double>(v) / 255.0);
            }
        }
        atlas.insert(cps[0], std::move(bm));
    }
    return atlas;
}

void GlyphAtlas::save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw GlyphError("cannot open glyph atlas for writing: " + path);
    out << "GLYPH v1 " << side << " " << order.size() << "\n";
    for (char32_t c : order) {
        out << utf8_encode_one(c) << "\n";
        const std::vector<double>& bm = glyphs.at(c);
        for (int r = 0; r < side; ++r) {
            for (int col = 0; col < side; ++col) {
                if (col) out << " ";
                out << static_cast<int>(std::lround(bm[static_cast<size_t>(r * side + col)] * 255.0));
            }
            out << "\n";
        }
    }
}

std::vector<double> augment_bitmap(const std::vector<double>& bitmap, int side,
                                   const GlyphAugmentation& aug) {
    if (static_cast<int>(bitmap.size()) != side * side)
        throw GlyphError("augment_bitmap: bitmap size does not match side " + std::to_string(side));
    const double theta = aug.rotation_deg * 3.141592653589793 / 180.0;
    const double c = std::cos(theta), s = std::sin(theta);
    const double ctr = (side - 1) / 2.0;
    const double inv_scale = 1.0 / aug.scale;

    std::vector<double> out(bitmap.size(), 0.0);
    auto sample = [&](double y, double x) -> double {
        const int x0 = static_cast<int>(std::floor(x));
        const int y0 = static_cast<int>(std::floor(y));
        double acc = 0.0;
        for (int dy = 0; dy <= 1; ++dy)
            for (int dx = 0; dx <= 1; ++dx) {
                const int yy = y0 + dy, xx = x0 + dx;
                if (yy < 0 || yy >= side || xx < 0 || xx >= side) continue;
                const double w = (1.0 - std::abs(y - yy)) * (1.0 - std::abs(x - xx));
                acc += w * bitmap[static_cast<size_t>(yy * side + xx)];
            }
        return acc;
    };
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            // Inverse map: undo shear, then rotation, then scale.
            double dx = (x - ctr);
            double dy = (y - ctr);
            dx -= aug.shear * dy;
            const double sx = (c * dx + s * dy) * inv_scale;
            const double sy = (-s * dx + c * dy) * inv_scale;
            const double v = sample(sy + ctr, sx + ctr);
            out[static_cast<size_t>(y * side + x)] = std::clamp(v, 0.0, 1.0);
        }
    }
    return out;
}

}  // namespace zidian
