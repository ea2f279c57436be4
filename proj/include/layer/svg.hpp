#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "layer/saliency.hpp"
#include "layer/util.hpp"

namespace layer {
namespace svg {

namespace detail {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kCx = 200.0, kCy = 200.0;

inline const std::array<const char*, kLayerCount>& palette() {
    static const std::array<const char*, kLayerCount> colors{
        "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948"};
    return colors;
}

struct Pt {
    double x, y;
};

inline Pt polar(double radius, double angle_deg) {
    const double a = angle_deg * kPi / 180.0;
    return {kCx + radius * std::cos(a), kCy + radius * std::sin(a)};
}

inline std::string annular_sector(double r_in, double r_out, double a0, double a1) {
    const Pt o0 = polar(r_out, a0), o1 = polar(r_out, a1);
    const Pt i0 = polar(r_in, a0), i1 = polar(r_in, a1);
    std::string d;
    d += "M " + fmt_fixed(o0.x) + " " + fmt_fixed(o0.y);
    d += " A " + fmt_fixed(r_out) + " " + fmt_fixed(r_out) + " 0 0 1 " + fmt_fixed(o1.x) +
         " " + fmt_fixed(o1.y);
    d += " L " + fmt_fixed(i1.x) + " " + fmt_fixed(i1.y);
    d += " A " + fmt_fixed(r_in) + " " + fmt_fixed(r_in) + " 0 0 0 " + fmt_fixed(i0.x) + " " +
         fmt_fixed(i0.y);
    d += " Z";
    return d;
}

inline std::string line(const Pt& a, const Pt& b, const std::string& style) {
    return "<line x1=\"" + fmt_fixed(a.x) + "\" y1=\"" + fmt_fixed(a.y) + "\" x2=\"" +
           fmt_fixed(b.x) + "\" y2=\"" + fmt_fixed(b.y) + "\" " + style + "/>\n";
}

inline void segment_angles(int idx, double& a0, double& a1, double& mid) {
    const double span = 360.0 / kLayerCount;
    const double gap = 4.0;
    a0 = -90.0 + span * idx + gap / 2.0;
    a1 = -90.0 + span * (idx + 1) - gap / 2.0;
    mid = 0.5 * (a0 + a1);
}

} // namespace detail

/// Saliency annulus: six segments, band thickness encodes the mean saliency
/// score, fill opacity the volume-adjusted score, radial black ticks the 95%
/// bootstrap CI of the mean.
inline std::string render_annulus(const SaliencyReport& report, const std::string& title) {
    using namespace detail;
    const double r_in = 70.0, t_min = 6.0, t_max = 62.0;

    double max_ss = 0.0, max_va = 0.0, max_hi = 0.0;
    for (const auto& row : report.rows) {
        max_ss = std::max(max_ss, row.ss_mean);
        max_va = std::max(max_va, row.va_ss);
        max_hi = std::max(max_hi, row.ss_ci.high);
    }
    const double ss_scale = std::max(max_ss, max_hi);
    auto radius_of = [&](double ss) {
        const double f = ss_scale > 0.0 ? std::clamp(ss / ss_scale, 0.0, 1.0) : 0.0;
        return r_in + t_min + f * (t_max - t_min);
    };

    std::string out;
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 400 420\" "
           "font-family=\"sans-serif\">\n";
    out += "<title>" + title + "</title>\n";
    out += "<text x=\"200\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" + title +
           "</text>\n";
    for (int idx = 0; idx < kLayerCount; ++idx) {
        const auto& row = report.rows[static_cast<std::size_t>(idx)];
        double a0, a1, mid;
        segment_angles(idx, a0, a1, mid);
        const double r_out = radius_of(row.ss_mean);
        const double opacity =
            max_va > 0.0 ? 0.15 + 0.85 * std::clamp(row.va_ss / max_va, 0.0, 1.0) : 0.15;
        out += "<path d=\"" + annular_sector(r_in, r_out, a0, a1) + "\" fill=\"" +
               palette()[static_cast<std::size_t>(idx)] + "\" fill-opacity=\"" +
               fmt_fixed(opacity) + "\" stroke=\"#333\" stroke-width=\"0.6\"/>\n";

        // CI error bar at the segment mid-angle
        const double r_lo = radius_of(row.ss_ci.low), r_hi = radius_of(row.ss_ci.high);
        const std::string tick_style = "stroke=\"#000\" stroke-width=\"1.4\"";
        out += line(polar(r_lo, mid), polar(r_hi, mid), tick_style);
        const double tick_half = 2.2;
        out += line(polar(r_lo, mid - tick_half), polar(r_lo, mid + tick_half), tick_style);
        out += line(polar(r_hi, mid - tick_half), polar(r_hi, mid + tick_half), tick_style);

        const Pt lp = polar(r_in + t_max + 18.0, mid);
        out += "<text x=\"" + fmt_fixed(lp.x) + "\" y=\"" + fmt_fixed(lp.y) +
               "\" text-anchor=\"middle\" font-size=\"11\">" +
               layer_name(idx + 1) + "</text>\n";
        out += "<text x=\"" + fmt_fixed(lp.x) + "\" y=\"" + fmt_fixed(lp.y + 12.0) +
               "\" text-anchor=\"middle\" font-size=\"9\" fill=\"#555\">" +
               fmt_fixed(row.ss_mean, 3) + "</text>\n";
    }
    out += "</svg>\n";
    return out;
}

enum class ChordValue { Rho, Ois };

/// Chorded annulus: interior chords between layer segments; chord thickness
/// encodes |rho| or |mean OIS|, color class the sign (warm positive, cool
/// negative).
inline std::string render_chord_annulus(const InteractionReport& report, ChordValue kind,
                                        const std::string& title) {
    using namespace detail;
    const double r_in = 120.0, r_out = 140.0;

    auto value_of = [&](int a, int b) -> std::optional<double> {
        if (kind == ChordValue::Rho) return report.rho[a][b];
        if (report.pair_count[a][b] == 0) return std::nullopt;
        return report.mean_ois[a][b];
    };

    double max_abs = 0.0;
    for (int a = 0; a < kLayerCount; ++a)
        for (int b = a + 1; b < kLayerCount; ++b)
            if (auto v = value_of(a, b)) max_abs = std::max(max_abs, std::fabs(*v));

    std::string out;
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 400 420\" "
           "font-family=\"sans-serif\">\n";
    out += "<title>" + title + "</title>\n";
    out += "<text x=\"200\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" + title +
           "</text>\n";

    std::array<Pt, kLayerCount> anchors{};
    for (int idx = 0; idx < kLayerCount; ++idx) {
        double a0, a1, mid;
        segment_angles(idx, a0, a1, mid);
        out += "<path d=\"" + annular_sector(r_in, r_out, a0, a1) + "\" fill=\"" +
               palette()[static_cast<std::size_t>(idx)] +
               "\" stroke=\"#333\" stroke-width=\"0.6\"/>\n";
        anchors[static_cast<std::size_t>(idx)] = polar(r_in - 2.0, mid);
        const Pt lp = polar(r_out + 16.0, mid);
        out += "<text x=\"" + fmt_fixed(lp.x) + "\" y=\"" + fmt_fixed(lp.y) +
               "\" text-anchor=\"middle\" font-size=\"11\">" + layer_name(idx + 1) +
               "</text>\n";
    }

    for (int a = 0; a < kLayerCount; ++a)
        for (int b = a + 1; b < kLayerCount; ++b) {
            const auto v = value_of(a, b);
            if (!v || max_abs == 0.0) continue;
            const double width = 0.8 + 7.0 * std::fabs(*v) / max_abs;
            const char* color = *v >= 0.0 ? "#c0392b" : "#2980b9";
            const Pt pa = anchors[static_cast<std::size_t>(a)];
            const Pt pb = anchors[static_cast<std::size_t>(b)];
            const double mx = 0.5 * (pa.x + pb.x), my = 0.5 * (pa.y + pb.y);
            const Pt ctrl{kCx + 0.25 * (mx - kCx), kCy + 0.25 * (my - kCy)};
            out += "<path d=\"M " + fmt_fixed(pa.x) + " " + fmt_fixed(pa.y) + " Q " +
                   fmt_fixed(ctrl.x) + " " + fmt_fixed(ctrl.y) + " " + fmt_fixed(pb.x) + " " +
                   fmt_fixed(pb.y) + "\" fill=\"none\" stroke=\"" + color +
                   "\" stroke-opacity=\"0.75\" stroke-width=\"" + fmt_fixed(width) + "\"/>\n";
        }
    out += "</svg>\n";
    return out;
}

} // namespace svg
} // namespace layer
