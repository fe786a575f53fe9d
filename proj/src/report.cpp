#include "maskcond/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "maskcond/csv.hpp"
#include "maskcond/error.hpp"

namespace maskcond {

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot write " + path);
  return out;
}

std::string num(double v) { return csv::format_double(v); }

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

}  // namespace

void write_training_csv(const TrainingReport& report, const std::string& path) {
  auto out = open_out(path);
  out << "epoch,step,p_t,recon,kl,total\n";
  for (const auto& s : report.steps) {
    out << s.epoch << ',' << s.step << ',' << num(s.p_t) << ',' << num(s.recon) << ',' << num(s.kl) << ','
        << num(s.total) << '\n';
  }
}

void write_sweep_csv(const SweepResult& result, const std::string& path) {
  auto out = open_out(path);
  out << "sweep_var,level,mse_mean,mse_std,seeds\n";
  for (const auto& r : result.rows) {
    out << csv::escape(r.key) << ',' << num(r.level) << ',' << num(r.mse_mean) << ',' << num(r.mse_std) << ','
        << r.seeds << '\n';
  }
}

void write_per_seed_csv(const SweepResult& result, const std::string& path) {
  auto out = open_out(path);
  out << "sweep_var,seed,level,mse\n";
  for (const auto& r : result.per_seed) {
    out << csv::escape(r.key) << ',' << r.seed << ',' << num(r.level) << ',' << num(r.mse) << '\n';
  }
}

void write_trend_csv(const SweepResult& result, const std::vector<ReferenceValue>& references,
                     const std::string& path) {
  auto out = open_out(path);
  out << "sweep_var,metric,value\n";
  for (const auto& key : result.keys()) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& r : result.rows) {
      if (r.key == key) {
        sum += r.mse_mean;
        ++count;
      }
    }
    out << csv::escape(key) << ",spearman_level_mse," << num(result.trend(key)) << '\n';
    out << csv::escape(key) << ",mse_mean_over_levels," << num(sum / static_cast<double>(count)) << '\n';
  }
  for (const auto& ref : references) {
    out << csv::escape(ref.label) << ',' << csv::escape(ref.metric) << ',' << num(ref.value) << '\n';
  }
}

void write_schedule_table_csv(const std::vector<ScheduleSummary>& rows, const std::string& path) {
  auto out = open_out(path);
  out << "schedule,mse_level0,mse_level0_std,mse_grid_mean\n";
  for (const auto& r : rows) {
    out << csv::escape(r.label) << ',' << num(r.mse_at_zero) << ',' << num(r.std_at_zero) << ',' << num(r.grid_mean)
        << '\n';
  }
}

std::string svg_line_chart(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                           const std::string& y_label) {
  constexpr double width = 640, height = 420, left = 70, right = 180, top = 40, bottom = 60;
  const double plot_w = width - left - right, plot_h = height - top - bottom;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (double v : s.x) x0 = std::min(x0, v), x1 = std::max(x1, v);
    for (double v : s.y) y0 = std::min(y0, v), y1 = std::max(y1, v);
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  y0 = std::min(y0, 0.0);
  if (y1 <= y0) y1 = y0 + 1;
  y1 += 0.05 * (y1 - y0);
  auto px = [&](double v) { return left + (v - x0) / (x1 - x0) * plot_w; };
  auto py = [&](double v) { return top + plot_h - (v - y0) / (y1 - y0) * plot_h; };
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << left + plot_w / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(title)
     << "</text>\n"
     << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w << "\" y2=\"" << top + plot_h
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + plot_h
     << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = x0 + (x1 - x0) * i / 5.0, yv = y0 + (y1 - y0) * i / 5.0;
    os << "<line x1=\"" << px(xv) << "\" y1=\"" << top + plot_h << "\" x2=\"" << px(xv) << "\" y2=\""
       << top + plot_h + 5 << "\" stroke=\"black\"/>\n"
       << "<text x=\"" << px(xv) << "\" y=\"" << top + plot_h + 18 << "\" text-anchor=\"middle\">" << fixed(xv, 2)
       << "</text>\n"
       << "<line x1=\"" << left - 5 << "\" y1=\"" << py(yv) << "\" x2=\"" << left << "\" y2=\"" << py(yv)
       << "\" stroke=\"black\"/>\n"
       << "<text x=\"" << left - 8 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << fixed(yv, 3)
       << "</text>\n";
  }
  os << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 15 << "\" text-anchor=\"middle\">"
     << xml_escape(x_label) << "</text>\n"
     << "<text x=\"18\" y=\"" << top + plot_h / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
     << top + plot_h / 2 << ")\">" << xml_escape(y_label) << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* color = palette[i % std::size(palette)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t k = 0; k < std::min(s.x.size(), s.y.size()); ++k) {
      os << (k ? " " : "") << fixed(px(s.x[k]), 2) << ',' << fixed(py(s.y[k]), 2);
    }
    os << "\"/>\n";
    const double ly = top + 10 + 18.0 * static_cast<double>(i);
    os << "<line x1=\"" << left + plot_w + 15 << "\" y1=\"" << ly << "\" x2=\"" << left + plot_w + 35 << "\" y2=\""
       << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
       << "<text x=\"" << left + plot_w + 40 << "\" y=\"" << ly + 4 << "\">" << xml_escape(s.name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void write_sweep_svg(const SweepResult& result, const std::string& title, const std::string& path) {
  std::vector<Series> series;
  for (const auto& key : result.keys()) {
    Series s{result.sweep_var + "=" + key, {}, {}};
    for (const auto& r : result.rows) {
      if (r.key == key) {
        s.x.push_back(r.level);
        s.y.push_back(r.mse_mean);
      }
    }
    series.push_back(std::move(s));
  }
  auto out = open_out(path);
  out << svg_line_chart(series, title, "sparsity level", "MSE");
}

}  // namespace maskcond
