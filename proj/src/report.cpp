#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "liprobust/experiment.hpp"

namespace liprobust {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Series {
  std::string name;
  std::vector<double> x, y;
};

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string num(double x) {
  std::ostringstream os;
  os << std::setprecision(10) << x;
  return os.str();
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

void write_file(const fs::path& path, const std::string& text, std::vector<std::string>& files) {
  std::ofstream f(path);
  if (!f) throw ValidationError("cannot write " + path.string());
  f << text;
  files.push_back(path.filename().string());
}

std::string line_plot(const std::string& title, const std::string& xlabel,
                      const std::string& ylabel, const std::vector<Series>& series,
                      bool markers_only = false) {
  const double W = 640, H = 420, L = 70, R = 170, T = 40, B = 50;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const Series& s : series) {
    for (double v : s.x) x0 = std::min(x0, v), x1 = std::max(x1, v);
    for (double v : s.y) y0 = std::min(y0, v), y1 = std::max(y1, v);
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x0 -= 0.5, x1 += 0.5;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
     << escape(title) << "</text>\n"
     << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << W - L - R << "\" height=\""
     << H - T - B << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4, yv = y0 + (y1 - y0) * i / 4;
    os << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">"
       << std::setprecision(3) << xv << "</text>\n"
       << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << yv
       << "</text>\n";
  }
  os << "<text x=\"" << L + (W - L - R) / 2 << "\" y=\"" << H - 12
     << "\" text-anchor=\"middle\">" << escape(xlabel) << "</text>\n"
     << "<text x=\"16\" y=\"" << T + (H - T - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << T + (H - T - B) / 2 << ")\">" << escape(ylabel) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const Series& s = series[k];
    const char* color = kPalette[k % 10];
    if (!markers_only && s.x.size() > 1) {
      os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
      for (std::size_t i = 0; i < s.x.size(); ++i) os << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
      os << "\"/>\n";
    }
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      os << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"3\" fill=\""
         << color << "\"/>\n";
    }
    os << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 16 * (k + 1) << "\" fill=\"" << color
       << "\">" << escape(s.name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

// Blue-white-red for signed data, white-to-dark for nonnegative data.
std::string color_for(double t, bool diverging) {
  t = std::clamp(t, 0.0, 1.0);
  int r, g, b;
  if (diverging) {
    if (t < 0.5) {
      const double s = t / 0.5;
      r = int(40 + 215 * s), g = int(80 + 175 * s), b = 255;
    } else {
      const double s = (t - 0.5) / 0.5;
      r = 255, g = int(255 - 200 * s), b = int(255 - 215 * s);
    }
  } else {
    r = int(255 - 220 * t), g = int(255 - 180 * t), b = int(255 - 90 * t);
  }
  std::ostringstream os;
  os << "rgb(" << r << ',' << g << ',' << b << ')';
  return os.str();
}

std::string heatmap(const std::string& title, const std::vector<double>& alpha,
                    const std::vector<double>& alpha_dot, const Tensor& values, bool diverging) {
  const double W = 560, H = 480, L = 60, T = 40, S = 380;
  double lo = values.minCoeff(), hi = values.maxCoeff();
  if (diverging) {
    const double m = std::max(std::abs(lo), std::abs(hi));
    lo = -m, hi = m;
  }
  if (hi == lo) hi = lo + 1;
  const double cw = S / values.rows(), ch = S / values.cols();
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << L + S / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
     << escape(title) << "</text>\n";
  // alpha along x, alpha_dot along y (upwards).
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
      os << "<rect x=\"" << L + i * cw << "\" y=\"" << T + S - (j + 1) * ch << "\" width=\""
         << cw + 0.05 << "\" height=\"" << ch + 0.05 << "\" fill=\""
         << color_for((values(i, j) - lo) / (hi - lo), diverging) << "\"/>\n";
    }
  }
  os << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << S << "\" height=\"" << S
     << "\" fill=\"none\" stroke=\"black\"/>\n"
     << std::setprecision(3) << "<text x=\"" << L << "\" y=\"" << T + S + 16 << "\">"
     << alpha.front() << "</text>\n"
     << "<text x=\"" << L + S << "\" y=\"" << T + S + 16 << "\" text-anchor=\"end\">"
     << alpha.back() << "</text>\n"
     << "<text x=\"" << L + S / 2 << "\" y=\"" << T + S + 32
     << "\" text-anchor=\"middle\">alpha</text>\n"
     << "<text x=\"" << L - 6 << "\" y=\"" << T + S << "\" text-anchor=\"end\">"
     << alpha_dot.front() << "</text>\n"
     << "<text x=\"" << L - 6 << "\" y=\"" << T + 10 << "\" text-anchor=\"end\">"
     << alpha_dot.back() << "</text>\n"
     << "<text x=\"" << L - 30 << "\" y=\"" << T + S / 2
     << "\" text-anchor=\"middle\">alpha_dot</text>\n";
  for (int k = 0; k <= 10; ++k) {
    os << "<rect x=\"" << L + S + 30 << "\" y=\"" << T + S - (k + 1) * S / 11 << "\" width=\"20\" height=\""
       << S / 11 + 0.5 << "\" fill=\"" << color_for(k / 10.0, diverging) << "\"/>\n";
  }
  os << "<text x=\"" << L + S + 56 << "\" y=\"" << T + S << "\">" << lo << "</text>\n"
     << "<text x=\"" << L + S + 56 << "\" y=\"" << T + 10 << "\">" << hi << "</text>\n"
     << "</svg>\n";
  return os.str();
}

std::string matrix_csv(const Tensor& values) {
  std::ostringstream os;
  os << std::setprecision(10);
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
      if (j) os << ',';
      os << values(i, j);
    }
    os << '\n';
  }
  return os.str();
}

struct Stats {
  double mean = 0, std = 0, stabilized = 0;
  int n = 0;
};

Stats stats_of(const std::vector<const RunRecord*>& runs) {
  Stats s;
  s.n = static_cast<int>(runs.size());
  if (runs.empty()) return s;
  for (const RunRecord* r : runs) s.mean += r->discounted_return, s.stabilized += r->stabilized;
  s.mean /= s.n;
  s.stabilized /= s.n;
  if (s.n > 1) {
    for (const RunRecord* r : runs) s.std += std::pow(r->discounted_return - s.mean, 2);
    s.std = std::sqrt(s.std / (s.n - 1));
  }
  return s;
}

std::string gamma_str(const ModelSpec& m) { return m.gamma ? num(*m.gamma) : ""; }

}  // namespace

ReportSummary make_reports(const fs::path& out) {
  return make_reports(out, load_experiment_config(out / "config.json"));
}

ReportSummary make_reports(const fs::path& out, const ExperimentConfig& config) {
  config.validate();
  const fs::path dir = out / "reports";
  fs::create_directories(dir);
  ReportSummary report;

  std::vector<CellResult> cells;
  std::map<std::string, std::vector<const CellResult*>> by_model;
  for (const ModelSpec& m : config.models()) {
    for (std::uint64_t seed : config.seeds) {
      const CellKey key{m, seed};
      if (auto c = load_cell(out, key)) {
        cells.push_back(std::move(*c));
      } else {
        report.missing.push_back(key.name());
      }
    }
  }
  for (const CellResult& c : cells) by_model[c.key.model.label()].push_back(&c);

  // Summary table.
  const std::vector<SummaryRow> rows = summarize(config, cells);
  std::set<std::string> attack_keys;
  for (const SummaryRow& r : rows) {
    for (const auto& [k, v] : r.failing_eps) attack_keys.insert(k);
  }
  {
    std::ostringstream os;
    os << std::setprecision(10)
       << "model,architecture,gamma,seeds,lip_mean,lip_std,tightness,reward_mean,reward_std,"
          "stabilized_seeds";
    for (const std::string& k : attack_keys) os << ",failing_eps_" << k << ",failing_none_" << k;
    os << '\n';
    for (const SummaryRow& r : rows) {
      os << r.model.label() << ',' << to_string(r.model.architecture) << ',' << gamma_str(r.model)
         << ',' << r.seeds << ',' << r.lip_mean << ',' << r.lip_std << ','
         << (r.tightness ? num(*r.tightness) : "") << ',' << r.reward_mean << ',' << r.reward_std
         << ',' << r.stabilized_seeds;
      for (const std::string& k : attack_keys) {
        const auto it = std::find_if(r.failing_eps.begin(), r.failing_eps.end(),
                                     [&](const auto& p) { return p.first == k; });
        const auto jt = std::find_if(r.failing_eps_none.begin(), r.failing_eps_none.end(),
                                     [&](const auto& p) { return p.first == k; });
        os << ',' << (it != r.failing_eps.end() ? num(it->second) : "") << ','
           << (jt != r.failing_eps_none.end() ? std::to_string(jt->second) : "");
      }
      os << '\n';
    }
    write_file(dir / "summary.csv", os.str(), report.files);
  }

  auto lip_mean = [&](const std::string& label) {
    for (const SummaryRow& r : rows) {
      if (r.model.label() == label) return r.lip_mean;
    }
    return 0.0;
  };

  // Perturbation curves: (model, perturbation, value) -> runs over all seeds.
  struct Curve {
    std::vector<double> values;
    std::map<double, std::vector<const RunRecord*>> runs;
  };
  std::map<std::string, std::map<std::string, Curve>> curves;
  for (const auto& [label, list] : by_model) {
    for (const CellResult* c : list) {
      for (const RunRecord& r : c->runs) {
        if (r.perturbation == "none") continue;
        curves[r.perturbation][label].runs[r.value].push_back(&r);
      }
    }
  }
  // Curves keep only grid values so that every seed contributes.
  std::map<std::string, std::set<double>> grid_values;
  for (int k : config.delays) grid_values["delay"].insert(k);
  for (const AttackGrid& g : config.attacks) {
    const std::string key = to_string(g.spec.kind) + "_" + to_string(g.spec.norm);
    for (double e : g.epsilons) grid_values[key].insert(e);
  }

  std::ostringstream cross;
  cross << std::setprecision(10)
        << "model,architecture,gamma,lip_mean,perturbation,value,reward_mean,reward_std,"
           "stabilized_fraction,runs\n";
  std::map<std::string, std::vector<Series>> cross_series;
  for (const auto& [perturbation, models] : curves) {
    std::ostringstream os;
    os << std::setprecision(10)
       << "model,architecture,gamma,value,reward_mean,reward_std,stabilized_fraction,runs\n";
    std::vector<Series> series;
    for (const ModelSpec& m : config.models()) {
      const auto it = models.find(m.label());
      if (it == models.end()) continue;
      Series s{m.label(), {}, {}};
      for (const auto& [value, runs] : it->second.runs) {
        if (!grid_values[perturbation].contains(value)) continue;
        const Stats st = stats_of(runs);
        os << m.label() << ',' << to_string(m.architecture) << ',' << gamma_str(m) << ',' << value
           << ',' << st.mean << ',' << st.std << ',' << st.stabilized << ',' << st.n << '\n';
        cross << m.label() << ',' << to_string(m.architecture) << ',' << gamma_str(m) << ','
              << lip_mean(m.label()) << ',' << perturbation << ',' << value << ',' << st.mean
              << ',' << st.std << ',' << st.stabilized << ',' << st.n << '\n';
        s.x.push_back(value);
        s.y.push_back(st.mean);
      }
      series.push_back(s);
    }
    const std::string stem = perturbation == "delay" ? "delay_curve" : "attack_curve_" + perturbation;
    write_file(dir / (stem + ".csv"), os.str(), report.files);
    write_file(dir / (stem + ".svg"),
               line_plot(perturbation == "delay" ? "Reward under sample delay"
                                                 : "Reward under " + perturbation + " attack",
                         perturbation == "delay" ? "delay (samples)" : "epsilon",
                         "mean discounted return", series),
               report.files);
  }
  write_file(dir / "cross_section.csv", cross.str(), report.files);
  {
    // One series per perturbation setting, reward against the mean empirical bound.
    std::vector<Series> series;
    for (const auto& [perturbation, models] : curves) {
      std::map<double, Series> per_value;
      for (const ModelSpec& m : config.models()) {
        const auto it = models.find(m.label());
        if (it == models.end()) continue;
        for (const auto& [value, runs] : it->second.runs) {
          if (!grid_values[perturbation].contains(value)) continue;
          Series& s = per_value[value];
          s.name = perturbation + " " + num(value);
          s.x.push_back(lip_mean(m.label()));
          s.y.push_back(stats_of(runs).mean);
        }
      }
      for (auto& [value, s] : per_value) {
        std::vector<std::size_t> order(s.x.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](auto a, auto b) { return s.x[a] < s.x[b]; });
        Series sorted{s.name, {}, {}};
        for (std::size_t i : order) sorted.x.push_back(s.x[i]), sorted.y.push_back(s.y[i]);
        series.push_back(sorted);
      }
    }
    if (series.size() > 10) series.resize(10);
    write_file(dir / "cross_section.svg",
               line_plot("Reward against empirical Lipschitz bound", "mean lower bound",
                         "mean discounted return", series),
               report.files);
  }

  // Action contours and local Lipschitz maps for the first available seed.
  const DomainBox domain = task_domain(config.task);
  const int res = config.estimation.contour_resolution;
  for (const ModelSpec& m : config.models()) {
    const auto it = by_model.find(m.label());
    if (it == by_model.end()) continue;
    const CellResult& c = *it->second.front();
    std::vector<double> alpha(res), alpha_dot(res);
    Tensor x(2, res * res);
    for (int i = 0; i < res; ++i) {
      alpha[i] = domain.lower(0) + (domain.upper(0) - domain.lower(0)) * i / (res - 1);
      alpha_dot[i] = domain.lower(1) + (domain.upper(1) - domain.lower(1)) * i / (res - 1);
    }
    for (int i = 0; i < res; ++i) {
      for (int j = 0; j < res; ++j) x.col(i * res + j) << alpha[i], alpha_dot[j];
    }
    const Tensor u = PolicySnapshot{c.policy.mean}(x);
    Tensor grid(res, res);
    for (int i = 0; i < res; ++i) {
      for (int j = 0; j < res; ++j) grid(i, j) = u(0, i * res + j);
    }
    const std::string stem = "contour_" + c.key.name();
    write_file(dir / (stem + ".csv"), matrix_csv(grid), report.files);
    write_file(dir / (stem + ".json"),
               json{{"rows", "alpha"}, {"cols", "alpha_dot"}, {"alpha", alpha},
                    {"alpha_dot", alpha_dot}, {"value", "mean action"}, {"cell", c.key.name()}}
                   .dump(2),
               report.files);
    write_file(dir / (stem + ".svg"),
               heatmap("Policy action, " + c.key.name(), alpha, alpha_dot, grid, true),
               report.files);

    const fs::path local = out / "cells" / c.key.name() / "local_lipschitz.csv";
    const fs::path sidecar = out / "cells" / c.key.name() / "local_lipschitz.json";
    if (fs::exists(local) && fs::exists(sidecar)) {
      std::ifstream sf(sidecar);
      const json side = json::parse(sf);
      const auto la = side.at("alpha").get<std::vector<double>>();
      const auto lad = side.at("alpha_dot").get<std::vector<double>>();
      Tensor values(la.size(), lad.size());
      std::ifstream lf(local);
      std::string line;
      for (std::size_t i = 0; i < la.size() && std::getline(lf, line); ++i) {
        std::istringstream ls(line);
        std::string cell;
        for (std::size_t j = 0; j < lad.size() && std::getline(ls, cell, ','); ++j) {
          values(i, j) = std::stod(cell);
        }
      }
      const std::string lstem = "local_lipschitz_" + c.key.name();
      fs::copy_file(local, dir / (lstem + ".csv"), fs::copy_options::overwrite_existing);
      report.files.push_back(lstem + ".csv");
      write_file(dir / (lstem + ".svg"),
                 heatmap("Local Lipschitz estimate, " + c.key.name(), la, lad, values, false),
                 report.files);
    }
  }

  json warnings = json::array();
  for (const CellResult& c : cells) {
    for (const auto& [key, a] : c.eval.at("attacks").items()) {
      if (a.value("non_monotone", false)) {
        warnings.push_back(c.key.name() + ": non-monotone failure pattern for " + key);
      }
    }
  }
  std::ofstream rj(dir / "report.json");
  rj << json{{"missing", report.missing}, {"files", report.files}, {"warnings", warnings}}.dump(2)
     << '\n';
  report.files.push_back("report.json");
  return report;
}

}  // namespace liprobust
