#include "kernn/panel.hpp"

#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <tuple>

#include "text_io.hpp"

namespace kernn {

PanelDataset::PanelDataset(int units, int outcomes, int dim)
    : units_(units), outcomes_(outcomes), dim_(dim) {
  if (units < 0 || outcomes < 0 || dim < 1)
    throw std::invalid_argument("PanelDataset: invalid shape");
  cells_.resize(static_cast<std::size_t>(units) * static_cast<std::size_t>(outcomes));
}

std::size_t PanelDataset::index(int i, int t) const {
  if (i < 0 || i >= units_ || t < 0 || t >= outcomes_)
    throw std::out_of_range("PanelDataset: cell (" + std::to_string(i) + "," + std::to_string(t) +
                            ") out of range");
  return static_cast<std::size_t>(i) * static_cast<std::size_t>(outcomes_) +
         static_cast<std::size_t>(t);
}

void PanelDataset::set_cell(int i, int t, int label, Points block) {
  Cell& c = cells_[index(i, t)];
  if (label == kMissing) {
    if (block.rows() != 0) throw std::invalid_argument("set_cell: missing cell cannot carry a block");
    c = Cell{};
    return;
  }
  if (label < 0) throw std::invalid_argument("set_cell: labels must be >= 0");
  if (block.rows() < 1) throw std::invalid_argument("set_cell: labeled cell needs >= 1 measurement");
  if (block.cols() != dim_)
    throw std::invalid_argument("set_cell: block dimension " + std::to_string(block.cols()) +
                                " != panel dimension " + std::to_string(dim_));
  c.label = label;
  c.block = std::move(block);
}

void PanelDataset::set_missing(int i, int t) { cells_[index(i, t)] = Cell{}; }

std::optional<int> PanelDataset::uniform_n() const {
  std::optional<int> n;
  for (const Cell& c : cells_) {
    if (c.missing()) continue;
    const auto rows = static_cast<int>(c.block.rows());
    if (!n) {
      n = rows;
    } else if (*n != rows) {
      return std::nullopt;
    }
  }
  return n;
}

int PanelDataset::observed_count() const {
  int count = 0;
  for (const Cell& c : cells_) count += c.missing() ? 0 : 1;
  return count;
}

PanelFormat format_for_path(const std::filesystem::path& path) {
  return path.extension() == ".json" ? PanelFormat::Json : PanelFormat::LongCsv;
}

namespace {

void check_uniform(const PanelDataset& ds, const LoadOptions& opts) {
  if (opts.require_uniform_n && ds.observed_count() > 0 && !ds.uniform_n())
    throw std::invalid_argument("panel: cells differ in sample count but uniform n is required");
}

}  // namespace

PanelDataset read_panel_csv(std::istream& is, const LoadOptions& opts) {
  std::string line;
  std::optional<int> declared_n, declared_t, declared_d;
  std::vector<std::string_view> header;
  std::string header_line;

  while (std::getline(is, line)) {
    const auto tl = text::trim(line);
    if (tl.empty()) continue;
    if (tl.front() == '#') {
      std::istringstream meta{std::string(tl.substr(1))};
      std::string tok;
      while (meta >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) continue;
        const auto key = tok.substr(0, eq);
        const auto val = static_cast<int>(text::parse_int(tok.substr(eq + 1)));
        if (key == "N") declared_n = val;
        if (key == "T") declared_t = val;
        if (key == "d") declared_d = val;
      }
      continue;
    }
    header_line = std::string(tl);
    header = text::split(header_line);
    break;
  }
  if (header.size() < 5 || header[0] != "unit" || header[1] != "time" || header[2] != "label" ||
      header[3] != "sample_idx")
    throw std::invalid_argument("panel csv: header must be unit,time,label,sample_idx,x1..xd");
  const int d = static_cast<int>(header.size()) - 4;
  if (declared_d && *declared_d != d)
    throw std::invalid_argument("panel csv: declared d disagrees with header");

  struct Pending {
    int label;
    std::map<long long, std::vector<double>> rows;
  };
  std::map<std::pair<int, int>, Pending> cells;
  int max_i = -1, max_t = -1;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    const auto tl = text::trim(line);
    if (tl.empty() || tl.front() == '#') continue;
    const auto f = text::split(tl);
    if (static_cast<int>(f.size()) != d + 4)
      throw std::invalid_argument("panel csv: ragged dimensions at line " + std::to_string(line_no));
    const auto i = static_cast<int>(text::parse_int(f[0]));
    const auto t = static_cast<int>(text::parse_int(f[1]));
    const auto label = static_cast<int>(text::parse_int(f[2]));
    const auto sample = text::parse_int(f[3]);
    if (i < 0 || t < 0 || label < 0 || sample < 0)
      throw std::invalid_argument("panel csv: negative index at line " + std::to_string(line_no));
    std::vector<double> x(static_cast<std::size_t>(d));
    for (int c = 0; c < d; ++c) x[static_cast<std::size_t>(c)] = text::parse_double(f[static_cast<std::size_t>(4 + c)]);

    auto [it, fresh] = cells.try_emplace({i, t}, Pending{label, {}});
    if (!fresh && it->second.label != label)
      throw std::invalid_argument("panel csv: conflicting labels for one cell at line " +
                                  std::to_string(line_no));
    if (!it->second.rows.emplace(sample, std::move(x)).second)
      throw std::invalid_argument("panel csv: duplicate (unit,time,sample_idx) at line " +
                                  std::to_string(line_no));
    max_i = std::max(max_i, i);
    max_t = std::max(max_t, t);
  }

  const int units = declared_n.value_or(max_i + 1);
  const int outcomes = declared_t.value_or(max_t + 1);
  if (max_i >= units || max_t >= outcomes)
    throw std::invalid_argument("panel csv: index exceeds declared shape");
  PanelDataset ds(units, outcomes, d);
  for (auto& [key, pending] : cells) {
    Points block(static_cast<Eigen::Index>(pending.rows.size()), d);
    Eigen::Index r = 0;
    for (auto& [sample, x] : pending.rows) {
      for (int c = 0; c < d; ++c) block(r, c) = x[static_cast<std::size_t>(c)];
      ++r;
    }
    ds.set_cell(key.first, key.second, pending.label, std::move(block));
  }
  check_uniform(ds, opts);
  return ds;
}

void write_panel_csv(std::ostream& os, const PanelDataset& ds) {
  os << "# kernn-panel N=" << ds.units() << " T=" << ds.outcomes() << " d=" << ds.dim() << '\n';
  os << "unit,time,label,sample_idx";
  for (int c = 0; c < ds.dim(); ++c) os << ",x" << (c + 1);
  os << '\n';
  for (int i = 0; i < ds.units(); ++i) {
    for (int t = 0; t < ds.outcomes(); ++t) {
      const Cell& cell = ds.cell(i, t);
      for (Eigen::Index r = 0; r < cell.block.rows(); ++r) {
        os << i << ',' << t << ',' << cell.label << ',' << r;
        for (int c = 0; c < ds.dim(); ++c) os << ',' << text::format_double(cell.block(r, c));
        os << '\n';
      }
    }
  }
}

void to_json(nlohmann::json& j, const PanelDataset& ds) {
  nlohmann::json cells = nlohmann::json::array();
  for (int i = 0; i < ds.units(); ++i) {
    for (int t = 0; t < ds.outcomes(); ++t) {
      const Cell& cell = ds.cell(i, t);
      if (cell.missing()) continue;
      nlohmann::json block = nlohmann::json::array();
      for (Eigen::Index r = 0; r < cell.block.rows(); ++r) {
        std::vector<double> row(cell.block.row(r).data(), cell.block.row(r).data() + ds.dim());
        block.push_back(std::move(row));
      }
      cells.push_back({{"i", i}, {"t", t}, {"label", cell.label}, {"block", std::move(block)}});
    }
  }
  j = {{"N", ds.units()}, {"T", ds.outcomes()}, {"d", ds.dim()}, {"cells", std::move(cells)}};
  if (!ds.unit_names.empty()) j["unit_names"] = ds.unit_names;
  if (!ds.outcome_names.empty()) j["outcome_names"] = ds.outcome_names;
}

PanelDataset panel_from_json(const nlohmann::json& j, const LoadOptions& opts) {
  const int d = j.at("d").get<int>();
  PanelDataset ds(j.at("N").get<int>(), j.at("T").get<int>(), d);
  std::vector<char> seen(static_cast<std::size_t>(ds.units()) * static_cast<std::size_t>(ds.outcomes()), 0);
  for (const auto& c : j.at("cells")) {
    const int i = c.at("i").get<int>();
    const int t = c.at("t").get<int>();
    const auto& rows = c.at("block");
    Points block(static_cast<Eigen::Index>(rows.size()), d);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (static_cast<int>(rows[r].size()) != d)
        throw std::invalid_argument("panel json: ragged dimensions");
      for (int k = 0; k < d; ++k)
        block(static_cast<Eigen::Index>(r), k) = rows[r][static_cast<std::size_t>(k)].get<double>();
    }
    ds.set_cell(i, t, c.at("label").get<int>(), std::move(block));
    auto& flag = seen[static_cast<std::size_t>(i) * static_cast<std::size_t>(ds.outcomes()) +
                      static_cast<std::size_t>(t)];
    if (flag) throw std::invalid_argument("panel json: duplicate cell");
    flag = 1;
  }
  if (j.contains("unit_names")) ds.unit_names = j["unit_names"].get<std::vector<std::string>>();
  if (j.contains("outcome_names"))
    ds.outcome_names = j["outcome_names"].get<std::vector<std::string>>();
  check_uniform(ds, opts);
  return ds;
}

PanelDataset load_panel(const std::filesystem::path& path, PanelFormat format,
                        const LoadOptions& opts) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  if (format == PanelFormat::Json) return panel_from_json(nlohmann::json::parse(in), opts);
  return read_panel_csv(in, opts);
}

void save_panel(const PanelDataset& ds, const std::filesystem::path& path, PanelFormat format) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  if (format == PanelFormat::Json) {
    nlohmann::json j = ds;
    out << j.dump() << '\n';
  } else {
    write_panel_csv(out, ds);
  }
}

int overlap_count(const PanelDataset& ds, int i, int j, std::optional<int> exclude, int a) {
  int count = 0;
  for (int s = 0; s < ds.outcomes(); ++s) {
    if (exclude && s == *exclude) continue;
    if (ds.has_label(i, s, a) && ds.has_label(j, s, a)) ++count;
  }
  return count;
}

PanelDataset transpose(const PanelDataset& ds) {
  PanelDataset out(ds.outcomes(), ds.units(), ds.dim());
  for (int i = 0; i < ds.units(); ++i)
    for (int t = 0; t < ds.outcomes(); ++t) {
      const Cell& c = ds.cell(i, t);
      if (!c.missing()) out.set_cell(t, i, c.label, c.block);
    }
  out.unit_names = ds.outcome_names;
  out.outcome_names = ds.unit_names;
  return out;
}

PanelDataset select_columns(const PanelDataset& ds, const std::vector<int>& columns) {
  PanelDataset out(ds.units(), static_cast<int>(columns.size()), ds.dim());
  for (int i = 0; i < ds.units(); ++i)
    for (std::size_t s = 0; s < columns.size(); ++s) {
      const Cell& c = ds.cell(i, columns[s]);
      if (!c.missing()) out.set_cell(i, static_cast<int>(s), c.label, c.block);
    }
  out.unit_names = ds.unit_names;
  if (!ds.outcome_names.empty())
    for (int t : columns) out.outcome_names.push_back(ds.outcome_names[static_cast<std::size_t>(t)]);
  return out;
}

std::vector<const Points*> observed_blocks(const PanelDataset& ds) {
  std::vector<const Points*> out;
  for (int i = 0; i < ds.units(); ++i)
    for (int t = 0; t < ds.outcomes(); ++t)
      if (!ds.cell(i, t).missing()) out.push_back(&ds.cell(i, t).block);
  return out;
}

}  // namespace kernn
