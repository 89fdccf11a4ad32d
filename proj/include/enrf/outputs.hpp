#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "enrf/errors.hpp"

namespace enrf {

/// Fixed decimal formatting for CSV cells; NaN renders as the empty field.
inline std::string format_value(double v) {
    if (std::isnan(v)) return "";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

/// Full-precision formatting (round-trips exactly).
inline std::string format_exact(double v) {
    if (std::isnan(v)) return "";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(p.parent_path(), ec);
        if (ec) throw IoError("cannot create directory " + p.parent_path().string() +
                              ": " + ec.message());
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << content;
    if (!f) throw IoError("write failed: " + path);
}

/// Minimal SVG polyline chart; axes are linear, one polyline per series.
class SvgChart {
public:
    SvgChart(std::string title, std::string x_label, std::string y_label)
        : title_(std::move(title)), x_label_(std::move(x_label)), y_label_(std::move(y_label)) {}

    void add_series(std::string name, std::vector<double> x, std::vector<double> y) {
        series_.push_back({std::move(name), std::move(x), std::move(y)});
    }

    std::string render() const {
        constexpr double w = 640, h = 420, ml = 70, mr = 160, mt = 40, mb = 50;
        double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
        for (const auto& s : series_)
            for (size_t i = 0; i < s.x.size(); ++i) {
                if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
                xmin = std::min(xmin, s.x[i]); xmax = std::max(xmax, s.x[i]);
                ymin = std::min(ymin, s.y[i]); ymax = std::max(ymax, s.y[i]);
            }
        if (xmin > xmax) { xmin = 0; xmax = 1; ymin = 0; ymax = 1; }
        if (xmax == xmin) xmax = xmin + 1;
        if (ymax == ymin) ymax = ymin + 1;
        const double span = ymax - ymin;
        ymin -= 0.05 * span;
        ymax += 0.05 * span;

        auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr); };
        auto py = [&](double y) { return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb); };

        static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                        "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
        std::string out;
        char buf[512];
        std::snprintf(buf, sizeof(buf),
                      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%g\" height=\"%g\" "
                      "viewBox=\"0 0 %g %g\" font-family=\"sans-serif\" font-size=\"12\">\n",
                      w, h, w, h);
        out += buf;
        std::snprintf(buf, sizeof(buf),
                      "<text x=\"%g\" y=\"22\" font-size=\"15\">%s</text>\n", ml,
                      title_.c_str());
        out += buf;
        std::snprintf(buf, sizeof(buf),
                      "<rect x=\"%g\" y=\"%g\" width=\"%g\" height=\"%g\" fill=\"none\" "
                      "stroke=\"#444\"/>\n",
                      ml, mt, w - ml - mr, h - mt - mb);
        out += buf;
        for (int k = 0; k <= 4; ++k) {
            const double yv = ymin + (ymax - ymin) * k / 4.0;
            const double xv = xmin + (xmax - xmin) * k / 4.0;
            std::snprintf(buf, sizeof(buf),
                          "<text x=\"%g\" y=\"%g\" text-anchor=\"end\">%.3g</text>\n", ml - 6,
                          py(yv) + 4, yv);
            out += buf;
            std::snprintf(buf, sizeof(buf),
                          "<text x=\"%g\" y=\"%g\" text-anchor=\"middle\">%.3g</text>\n",
                          px(xv), h - mb + 18, xv);
            out += buf;
        }
        std::snprintf(buf, sizeof(buf),
                      "<text x=\"%g\" y=\"%g\" text-anchor=\"middle\">%s</text>\n",
                      ml + (w - ml - mr) / 2, h - 12, x_label_.c_str());
        out += buf;
        std::snprintf(buf, sizeof(buf),
                      "<text x=\"16\" y=\"%g\" transform=\"rotate(-90 16 %g)\" "
                      "text-anchor=\"middle\">%s</text>\n",
                      mt + (h - mt - mb) / 2, mt + (h - mt - mb) / 2, y_label_.c_str());
        out += buf;

        for (size_t si = 0; si < series_.size(); ++si) {
            const auto& s = series_[si];
            const char* color = palette[si % 8];
            std::string pts;
            for (size_t i = 0; i < s.x.size(); ++i) {
                if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
                std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", px(s.x[i]), py(s.y[i]));
                pts += buf;
            }
            std::snprintf(buf, sizeof(buf),
                          "<polyline points=\"%s\" fill=\"none\" stroke=\"%s\" "
                          "stroke-width=\"1.6\"/>\n",
                          pts.c_str(), color);
            out += buf;
            std::snprintf(buf, sizeof(buf),
                          "<text x=\"%g\" y=\"%g\" fill=\"%s\">%s</text>\n", w - mr + 10,
                          mt + 16.0 * (si + 1), color, s.name.c_str());
            out += buf;
        }
        out += "</svg>\n";
        return out;
    }

private:
    struct Series {
        std::string name;
        std::vector<double> x, y;
    };
    std::string title_, x_label_, y_label_;
    std::vector<Series> series_;
};

}  // namespace enrf
