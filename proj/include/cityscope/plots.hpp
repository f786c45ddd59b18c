#ifndef CITYSCOPE_PLOTS_HPP
#define CITYSCOPE_PLOTS_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cityscope/errors.hpp"
#include "cityscope/train.hpp"

namespace cityscope {

namespace detail {

struct Series {
    std::string name;
    std::string color;
    std::vector<double> values;  // one per epoch
};

inline std::string format_tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

// One SVG chart: epoch on x, the series values on y, optional vertical
// stage-boundary marker.
inline void write_svg_chart(const std::filesystem::path& path, const std::string& title,
                            const std::string& y_label, const std::vector<int>& epochs,
                            const std::vector<Series>& series, std::optional<int> boundary) {
    const double width = 640, height = 420;
    const double left = 70, right = 20, top = 40, bottom = 50;
    const double plot_w = width - left - right, plot_h = height - top - bottom;

    double y_min = 1e300, y_max = -1e300;
    for (const Series& s : series)
        for (double v : s.values) {
            y_min = std::min(y_min, v);
            y_max = std::max(y_max, v);
        }
    if (y_min == y_max) { y_min -= 0.5; y_max += 0.5; }
    double pad = 0.05 * (y_max - y_min);
    y_min -= pad;
    y_max += pad;
    double x_min = epochs.front(), x_max = epochs.back();
    if (x_min == x_max) { x_min -= 0.5; x_max += 0.5; }

    auto px = [&](double e) { return left + (e - x_min) / (x_max - x_min) * plot_w; };
    auto py = [&](double v) { return top + (y_max - v) / (y_max - y_min) * plot_h; };

    std::ofstream out(path);
    if (!out) fail("IoError", "cannot write plot " + path.string());
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
        << "' viewBox='0 0 " << width << " " << height << "'>\n";
    out << "<rect width='100%' height='100%' fill='white'/>\n";
    out << "<text x='" << width / 2 << "' y='22' text-anchor='middle' font-size='16'>"
        << title << "</text>\n";

    // axes
    out << "<line x1='" << left << "' y1='" << top << "' x2='" << left << "' y2='"
        << top + plot_h << "' stroke='black'/>\n";
    out << "<line x1='" << left << "' y1='" << top + plot_h << "' x2='" << left + plot_w
        << "' y2='" << top + plot_h << "' stroke='black'/>\n";
    out << "<text x='" << left + plot_w / 2 << "' y='" << height - 10
        << "' text-anchor='middle' font-size='13'>epoch</text>\n";
    out << "<text x='18' y='" << top + plot_h / 2 << "' text-anchor='middle' font-size='13' "
        << "transform='rotate(-90 18 " << top + plot_h / 2 << ")'>" << y_label << "</text>\n";

    for (int i = 0; i <= 5; ++i) {
        double v = y_min + (y_max - y_min) * i / 5.0;
        out << "<line x1='" << left - 4 << "' y1='" << py(v) << "' x2='" << left << "' y2='"
            << py(v) << "' stroke='black'/>\n";
        out << "<text x='" << left - 8 << "' y='" << py(v) + 4
            << "' text-anchor='end' font-size='11'>" << format_tick(v) << "</text>\n";
    }
    int step = std::max(1, static_cast<int>(epochs.size()) / 10);
    for (std::size_t i = 0; i < epochs.size(); i += step) {
        double x = px(epochs[i]);
        out << "<line x1='" << x << "' y1='" << top + plot_h << "' x2='" << x << "' y2='"
            << top + plot_h + 4 << "' stroke='black'/>\n";
        out << "<text x='" << x << "' y='" << top + plot_h + 18
            << "' text-anchor='middle' font-size='11'>" << epochs[i] << "</text>\n";
    }

    if (boundary) {
        double x = px(*boundary);
        out << "<line x1='" << x << "' y1='" << top << "' x2='" << x << "' y2='" << top + plot_h
            << "' stroke='gray' stroke-dasharray='5,4'/>\n";
        out << "<text x='" << x + 4 << "' y='" << top + 14
            << "' font-size='11' fill='gray'>fine-tune</text>\n";
    }

    for (const Series& s : series) {
        out << "<polyline fill='none' stroke='" << s.color << "' stroke-width='2' points='";
        for (std::size_t i = 0; i < s.values.size(); ++i)
            out << px(epochs[i]) << "," << py(s.values[i]) << " ";
        out << "'/>\n";
    }
    double legend_y = top + 8;
    for (const Series& s : series) {
        out << "<line x1='" << left + plot_w - 110 << "' y1='" << legend_y << "' x2='"
            << left + plot_w - 85 << "' y2='" << legend_y << "' stroke='" << s.color
            << "' stroke-width='2'/>\n";
        out << "<text x='" << left + plot_w - 80 << "' y='" << legend_y + 4
            << "' font-size='12'>" << s.name << "</text>\n";
        legend_y += 16;
    }
    out << "</svg>\n";
    if (!out) fail("IoError", "write failed for " + path.string());
}

} // namespace detail

struct PlotPaths {
    std::filesystem::path accuracy;
    std::filesystem::path loss;
};

// Emits <label>_accuracy.svg and <label>_loss.svg with train/val series
// and a stage-boundary marker for fine-tuning histories.
inline PlotPaths plot_history(const TrainingHistory& history,
                              const std::filesystem::path& out_dir) {
    if (history.epochs.empty()) fail("EmptyHistory", "history has no epochs");
    std::filesystem::create_directories(out_dir);
    std::string label = history.label.empty() ? "run" : history.label;

    std::vector<int> epochs;
    detail::Series train_acc{"train", "#1f77b4", {}}, val_acc{"val", "#ff7f0e", {}};
    detail::Series train_loss{"train", "#1f77b4", {}}, val_loss{"val", "#ff7f0e", {}};
    for (const EpochMetrics& e : history.epochs) {
        epochs.push_back(e.epoch);
        train_acc.values.push_back(e.train_accuracy);
        val_acc.values.push_back(e.val_accuracy);
        train_loss.values.push_back(e.train_loss);
        val_loss.values.push_back(e.val_loss);
    }

    PlotPaths paths{out_dir / (label + "_accuracy.svg"), out_dir / (label + "_loss.svg")};
    detail::write_svg_chart(paths.accuracy, label + " (Accuracy)", "accuracy", epochs,
                            {train_acc, val_acc}, history.stage_boundary);
    detail::write_svg_chart(paths.loss, label + " (Loss)", "loss", epochs,
                            {train_loss, val_loss}, history.stage_boundary);
    return paths;
}

} // namespace cityscope

#endif
