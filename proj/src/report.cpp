#include "eyecue/report.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "eyecue/annotation.hpp"
#include "eyecue/experiments.hpp"
#include "eyecue/image_io.hpp"

namespace eyecue {

namespace {

std::string fmt(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

std::string svg_open(int w, int h) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) + "\" height=\"" +
         std::to_string(h) + "\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

std::string text(double x, double y, const std::string& s, const std::string& anchor = "middle") {
  return "<text x=\"" + fmt(x, 1) + "\" y=\"" + fmt(y, 1) + "\" text-anchor=\"" + anchor + "\">" + escape(s) +
         "</text>\n";
}

}  // namespace

std::string svg_roc(const std::vector<RocPoint>& roc, std::optional<double> auc) {
  const double x0 = 50, y0 = 20, size = 300;
  std::string s = svg_open(380, 380);
  s += "<rect x=\"50\" y=\"20\" width=\"300\" height=\"300\" fill=\"none\" stroke=\"black\"/>\n";
  s += "<line x1=\"50\" y1=\"320\" x2=\"350\" y2=\"20\" stroke=\"#aaa\" stroke-dasharray=\"4 4\"/>\n";
  std::string pts;
  for (const auto& p : roc) pts += fmt(x0 + p.fpr * size, 1) + "," + fmt(y0 + (1.0 - p.tpr) * size, 1) + " ";
  s += "<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
  s += text(200, 350, "false positive rate");
  s += "<text x=\"15\" y=\"170\" text-anchor=\"middle\" transform=\"rotate(-90 15 170)\">true positive rate</text>\n";
  s += text(200, 372, auc ? "AUC " + fmt(*auc) : "AUC undefined (single class)");
  s += "</svg>\n";
  return s;
}

std::string svg_confusion(const Confusion& c) {
  std::string s = svg_open(320, 300);
  const std::int64_t cells[2][2] = {{c.tp, c.fn}, {c.fp, c.tn}};
  const std::int64_t peak = std::max<std::int64_t>(1, std::max({c.tp, c.fn, c.fp, c.tn}));
  const char* rows[2] = {"distracted", "attentive"};
  for (int r = 0; r < 2; ++r) {
    for (int k = 0; k < 2; ++k) {
      const double shade = 1.0 - 0.7 * static_cast<double>(cells[r][k]) / static_cast<double>(peak);
      const int g = static_cast<int>(255 * shade);
      const double x = 110 + k * 100, y = 40 + r * 100;
      s += "<rect x=\"" + fmt(x, 0) + "\" y=\"" + fmt(y, 0) + "\" width=\"100\" height=\"100\" fill=\"rgb(" +
           std::to_string(g) + "," + std::to_string(g) + ",255)\" stroke=\"black\"/>\n";
      s += text(x + 50, y + 55, std::to_string(cells[r][k]));
    }
    s += text(105, 95 + r * 100, rows[r], "end");
    s += text(160 + r * 100, 32, rows[r]);
  }
  s += text(210, 14, "predicted");
  s += text(210, 270, "rows: true class; accuracy " + fmt(c.accuracy() * 100.0, 2) + "%");
  s += "</svg>\n";
  return s;
}

std::string svg_bar_chart(const std::string& title, const std::vector<BarValue>& bars) {
  const int bar_w = 44, gap = 16, left = 50, top = 30, height = 240;
  const int width = left + static_cast<int>(bars.size()) * (bar_w + gap) + 20;
  std::string s = svg_open(std::max(width, 240), top + height + 110);
  s += text(std::max(width, 240) / 2.0, 18, title);
  s += "<line x1=\"" + std::to_string(left) + "\" y1=\"" + std::to_string(top + height) + "\" x2=\"" +
       std::to_string(width - 10) + "\" y2=\"" + std::to_string(top + height) + "\" stroke=\"black\"/>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    const double y = top + height * (1.0 - tick / 4.0);
    s += text(left - 6, y + 4, std::to_string(tick * 25) + "%", "end");
  }
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const double x = left + gap / 2.0 + static_cast<double>(i) * (bar_w + gap);
    const double v = std::clamp(bars[i].value, 0.0, 1.0);
    s += "<rect x=\"" + fmt(x, 1) + "\" y=\"" + fmt(top + height * (1.0 - v), 1) + "\" width=\"" +
         std::to_string(bar_w) + "\" height=\"" + fmt(height * v, 1) + "\" fill=\"#2e86c1\"/>\n";
    s += text(x + bar_w / 2.0, top + height * (1.0 - v) - 4, fmt(bars[i].value * 100.0, 1));
    if (bars[i].reference) {
      const double ry = top + height * (1.0 - std::clamp(*bars[i].reference, 0.0, 1.0));
      s += "<line x1=\"" + fmt(x - 3, 1) + "\" y1=\"" + fmt(ry, 1) + "\" x2=\"" + fmt(x + bar_w + 3, 1) +
           "\" y2=\"" + fmt(ry, 1) + "\" stroke=\"#e67e22\" stroke-width=\"2\"/>\n";
    }
    const double lx = x + bar_w / 2.0, ly = top + height + 12;
    s += "<text x=\"" + fmt(lx, 1) + "\" y=\"" + fmt(ly, 1) + "\" text-anchor=\"end\" transform=\"rotate(-45 " +
         fmt(lx, 1) + " " + fmt(ly, 1) + ")\">" + escape(bars[i].label) + "</text>\n";
  }
  s += text(left, top + height + 100, "orange tick: reference value", "start");
  s += "</svg>\n";
  return s;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream out;
  out << "epoch,learning_rate,train_loss,train_accuracy,val_loss,val_accuracy\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << r.learning_rate << ',' << r.train_loss << ',' << r.train_accuracy << ',';
    if (r.has_validation) out << r.val_loss << ',' << r.val_accuracy;
    else out << ',';
    out << '\n';
  }
  return out.str();
}

std::string config_hash(const nlohmann::json& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : config.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

RunDirectory::RunDirectory(std::filesystem::path dir, std::string command, nlohmann::json config,
                           std::string config_path)
    : dir_(std::move(dir)),
      command_(std::move(command)),
      config_(std::move(config)),
      config_path_(std::move(config_path)),
      started_(utc_timestamp()) {
  std::filesystem::create_directories(dir_);
  write_json("config.json", config_);
}

void RunDirectory::write_json(const std::string& name, const nlohmann::json& j) const {
  write_file_bytes(dir_ / name, j.dump(2) + "\n");
}

void RunDirectory::write_text(const std::string& name, const std::string& text) const {
  write_file_bytes(dir_ / name, text);
}

void RunDirectory::finish() const {
  write_json("run_manifest.json", {{"command", command_},
                                   {"config_path", config_path_},
                                   {"config_hash", config_hash(config_)},
                                   {"output_dir", std::filesystem::absolute(dir_).string()},
                                   {"started_at", started_},
                                   {"finished_at", utc_timestamp()}});
}

}  // namespace eyecue
