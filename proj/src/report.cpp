#include "sentinel/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sentinel/core.hpp"
#include "sentinel/image.hpp"

namespace fs = std::filesystem;

namespace sentinel::report {

std::vector<train::EpochMetrics> load_metrics_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open metrics log: " + path.string());
  std::vector<train::EpochMetrics> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("bad metrics line " + std::to_string(lineno) +
                            " in " + path.string() + ": " + e.what());
    }
    train::EpochMetrics m;
    m.epoch = j.at("epoch").get<int>();
    m.split = j.at("split").get<std::string>();
    m.loss = j.at("loss").get<double>();
    m.accuracy = j.at("accuracy").get<double>();
    m.precision_macro = j.at("precision_macro").get<double>();
    m.recall_macro = j.at("recall_macro").get<double>();
    m.f1_macro = j.at("f1_macro").get<double>();
    m.lr = j.at("lr").get<double>();
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<Panel> build_curve_panels(
    const std::vector<train::EpochMetrics>& history) {
  if (history.empty()) {
    throw ValidationError("no epochs logged");
  }
  const std::array<float, 3> train_c{0.16f, 0.42f, 0.80f};
  const std::array<float, 3> val_c{0.92f, 0.53f, 0.12f};
  const std::array<float, 3> val_p{0.22f, 0.66f, 0.36f};
  const std::array<float, 3> val_r{0.62f, 0.30f, 0.66f};

  auto pick = [&](const std::string& split, auto getter) {
    Series s;
    for (const auto& m : history) {
      if (m.split != split) continue;
      s.x.push_back(m.epoch);
      s.y.push_back(getter(m));
    }
    return s;
  };

  Panel loss{"loss", {}};
  {
    Series tr = pick("train", [](const auto& m) { return m.loss; });
    tr.name = "train";
    tr.color = train_c;
    Series va = pick("val", [](const auto& m) { return m.loss; });
    va.name = "val";
    va.color = val_c;
    loss.series = {tr, va};
  }

  Panel acc{"accuracy", {}};
  {
    Series tr = pick("train", [](const auto& m) { return m.accuracy; });
    tr.name = "train";
    tr.color = train_c;
    Series va = pick("val", [](const auto& m) { return m.accuracy; });
    va.name = "val";
    va.color = val_c;
    acc.series = {tr, va};
  }

  Panel f1{"f1 / precision / recall", {}};
  {
    Series tr = pick("train", [](const auto& m) { return m.f1_macro; });
    tr.name = "f1 train";
    tr.color = train_c;
    Series va = pick("val", [](const auto& m) { return m.f1_macro; });
    va.name = "f1 val";
    va.color = val_c;
    Series vp = pick("val", [](const auto& m) { return m.precision_macro; });
    vp.name = "precision val";
    vp.color = val_p;
    Series vr = pick("val", [](const auto& m) { return m.recall_macro; });
    vr.name = "recall val";
    vr.color = val_r;
    f1.series = {tr, va, vp, vr};
  }
  return {loss, acc, f1};
}

// ---------------------------------------------------------------------------
// Tiny raster canvas with a 5x7 font (digits, lowercase, basic punctuation).
// ---------------------------------------------------------------------------

namespace {

struct Glyph {
  char ch;
  uint8_t rows[7];
};

constexpr Glyph kFont[] = {
    {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
    {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
    {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
    {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
    {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
    {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
    {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
    {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
    {'a', {0x00, 0x00, 0x0E, 0x01, 0x0F, 0x11, 0x0F}},
    {'b', {0x10, 0x10, 0x1E, 0x11, 0x11, 0x11, 0x1E}},
    {'c', {0x00, 0x00, 0x0E, 0x11, 0x10, 0x11, 0x0E}},
    {'d', {0x01, 0x01, 0x0F, 0x11, 0x11, 0x11, 0x0F}},
    {'e', {0x00, 0x00, 0x0E, 0x11, 0x1F, 0x10, 0x0E}},
    {'f', {0x06, 0x09, 0x08, 0x1C, 0x08, 0x08, 0x08}},
    {'g', {0x00, 0x0F, 0x11, 0x11, 0x0F, 0x01, 0x0E}},
    {'h', {0x10, 0x10, 0x1E, 0x11, 0x11, 0x11, 0x11}},
    {'i', {0x04, 0x00, 0x0C, 0x04, 0x04, 0x04, 0x0E}},
    {'j', {0x02, 0x00, 0x06, 0x02, 0x02, 0x12, 0x0C}},
    {'k', {0x10, 0x10, 0x12, 0x14, 0x18, 0x14, 0x12}},
    {'l', {0x0C, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'m', {0x00, 0x00, 0x1A, 0x15, 0x15, 0x15, 0x15}},
    {'n', {0x00, 0x00, 0x1E, 0x11, 0x11, 0x11, 0x11}},
    {'o', {0x00, 0x00, 0x0E, 0x11, 0x11, 0x11, 0x0E}},
    {'p', {0x00, 0x00, 0x1E, 0x11, 0x1E, 0x10, 0x10}},
    {'q', {0x00, 0x00, 0x0F, 0x11, 0x0F, 0x01, 0x01}},
    {'r', {0x00, 0x00, 0x16, 0x19, 0x10, 0x10, 0x10}},
    {'s', {0x00, 0x00, 0x0F, 0x10, 0x0E, 0x01, 0x1E}},
    {'t', {0x08, 0x08, 0x1C, 0x08, 0x08, 0x09, 0x06}},
    {'u', {0x00, 0x00, 0x11, 0x11, 0x11, 0x13, 0x0D}},
    {'v', {0x00, 0x00, 0x11, 0x11, 0x11, 0x0A, 0x04}},
    {'w', {0x00, 0x00, 0x11, 0x11, 0x15, 0x15, 0x0A}},
    {'x', {0x00, 0x00, 0x11, 0x0A, 0x04, 0x0A, 0x11}},
    {'y', {0x00, 0x00, 0x11, 0x11, 0x0F, 0x01, 0x0E}},
    {'z', {0x00, 0x00, 0x1F, 0x02, 0x04, 0x08, 0x1F}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
    {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
    {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}},
    {'/', {0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10}},
    {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}},
    {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
    {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
    {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}},
    {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
};

const Glyph* find_glyph(char c) {
  for (const auto& g : kFont) {
    if (g.ch == c) return &g;
  }
  return nullptr;
}

struct Canvas {
  ImageF img;

  Canvas(int h, int w) : img(h, w) {
    std::fill(img.px.begin(), img.px.end(), 1.f);
  }

  void put(int y, int x, const std::array<float, 3>& c) {
    if (y < 0 || y >= img.h || x < 0 || x >= img.w) return;
    float* p = img.at(y, x);
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
  }

  void line(int y0, int x0, int y1, int x1, const std::array<float, 3>& c) {
    int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
      put(y0, x0, c);
      put(y0 + 1, x0, c);  // 2 px thick for legibility
      if (x0 == x1 && y0 == y1) break;
      int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  void text(int y, int x, const std::string& s, const std::array<float, 3>& c,
            int scale = 1) {
    int cx = x;
    for (char ch : s) {
      const Glyph* g = find_glyph(static_cast<char>(::tolower(ch)));
      if (g) {
        for (int r = 0; r < 7; ++r) {
          for (int b = 0; b < 5; ++b) {
            if (g->rows[r] & (1 << (4 - b))) {
              for (int sy = 0; sy < scale; ++sy) {
                for (int sx = 0; sx < scale; ++sx) {
                  put(y + r * scale + sy, cx + b * scale + sx, c);
                }
              }
            }
          }
        }
      }
      cx += 6 * scale;
    }
  }
};

std::string format_tick(double v) {
  std::ostringstream ss;
  if (std::abs(v) >= 1000 || (std::abs(v) < 0.001 && v != 0)) {
    ss.precision(1);
    ss << std::scientific << v;
  } else {
    ss.precision(3);
    ss << v;
  }
  return ss.str();
}

}  // namespace

void render_panels(const std::vector<Panel>& panels, const fs::path& png_path,
                   int panel_w, int panel_h) {
  if (panels.empty()) throw ValidationError("no panels to render");
  const std::array<float, 3> black{0.1f, 0.1f, 0.1f};
  const std::array<float, 3> gridc{0.85f, 0.85f, 0.85f};
  Canvas canvas(panel_h, panel_w * static_cast<int>(panels.size()));

  for (size_t pi = 0; pi < panels.size(); ++pi) {
    const Panel& panel = panels[pi];
    const int ox = static_cast<int>(pi) * panel_w;
    const int ml = 58, mr = 14, mt = 28, mb = 34;
    const int px0 = ox + ml, px1 = ox + panel_w - mr;
    const int py0 = mt, py1 = panel_h - mb;

    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool any = false;
    for (const auto& s : panel.series) {
      for (size_t i = 0; i < s.x.size(); ++i) {
        if (!any) {
          xmin = xmax = s.x[i];
          ymin = ymax = s.y[i];
          any = true;
        } else {
          xmin = std::min(xmin, s.x[i]);
          xmax = std::max(xmax, s.x[i]);
          ymin = std::min(ymin, s.y[i]);
          ymax = std::max(ymax, s.y[i]);
        }
      }
    }
    if (xmax - xmin < 1e-12) xmax = xmin + 1;
    if (ymax - ymin < 1e-12) ymax = ymin + 1;
    const double ypad = 0.06 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;

    auto map_x = [&](double v) {
      return px0 + static_cast<int>((v - xmin) / (xmax - xmin) * (px1 - px0));
    };
    auto map_y = [&](double v) {
      return py1 - static_cast<int>((v - ymin) / (ymax - ymin) * (py1 - py0));
    };

    // frame, ticks, labels
    canvas.text(py0 - 20, px0, panel.title, black, 2);
    canvas.line(py1, px0, py1, px1, black);
    canvas.line(py0, px0, py1, px0, black);
    for (int t = 0; t <= 4; ++t) {
      double vy = ymin + (ymax - ymin) * t / 4.0;
      int y = map_y(vy);
      if (t > 0) canvas.line(y, px0, y, px1, gridc);
      canvas.text(y - 3, ox + 4, format_tick(vy), black, 1);
      double vx = xmin + (xmax - xmin) * t / 4.0;
      int x = map_x(vx);
      canvas.text(py1 + 6, x - 8, format_tick(vx), black, 1);
    }
    canvas.text(py1 + 18, (px0 + px1) / 2 - 18, "epoch", black, 1);

    // series + legend
    int ly = py0 + 4;
    for (const auto& s : panel.series) {
      for (size_t i = 1; i < s.x.size(); ++i) {
        canvas.line(map_y(s.y[i - 1]), map_x(s.x[i - 1]), map_y(s.y[i]),
                    map_x(s.x[i]), s.color);
      }
      canvas.line(ly + 3, px1 - 92, ly + 3, px1 - 78, s.color);
      canvas.text(ly, px1 - 74, s.name, black, 1);
      ly += 11;
    }
  }
  save_png(png_path, canvas.img);
}

void write_summary(const std::vector<train::EpochMetrics>& history,
                   const fs::path& md_path) {
  if (history.empty()) throw ValidationError("no epochs logged");
  const train::EpochMetrics* last_train = nullptr;
  const train::EpochMetrics* last_val = nullptr;
  const train::EpochMetrics* best_val = nullptr;
  for (const auto& m : history) {
    if (m.split == "train") last_train = &m;
    if (m.split == "val") {
      last_val = &m;
      if (!best_val || m.accuracy > best_val->accuracy) best_val = &m;
    }
  }

  std::ofstream out(md_path);
  if (!out) throw RuntimeFailure("cannot write summary: " + md_path.string());
  out << "# Training summary\n\n";
  out << "| split | epoch | loss | accuracy | precision | recall | f1 |\n";
  out << "|---|---|---|---|---|---|---|\n";
  auto row = [&](const char* tag, const train::EpochMetrics& m) {
    out << "| " << tag << " | " << m.epoch << " | " << m.loss << " | "
        << m.accuracy << " | " << m.precision_macro << " | " << m.recall_macro
        << " | " << m.f1_macro << " |\n";
  };
  if (last_train) row("final train", *last_train);
  if (last_val) row("final val", *last_val);
  if (best_val) row("best val", *best_val);
  out << "\n";
  if (best_val) {
    out << "Best validation accuracy: " << best_val->accuracy << " (epoch "
        << best_val->epoch << ")\n";
  }
  if (last_val) {
    out << "Final validation accuracy: " << last_val->accuracy << "\n";
    out << "Final learning rate: " << last_val->lr << "\n";
  }
}

void render_report(const fs::path& run_dir) {
  auto history = load_metrics_jsonl(run_dir / "metrics.jsonl");
  if (history.empty()) throw ValidationError("no epochs logged");
  auto panels = build_curve_panels(history);
  render_panels(panels, run_dir / "curves.png");
  write_summary(history, run_dir / "summary.md");
}

}  // namespace sentinel::report
