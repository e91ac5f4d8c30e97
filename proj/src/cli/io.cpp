#include <algorithm>
#include <bit>
#include <cerrno>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fcntl.h>
#include <fstream>
#include <signal.h>
#include <sstream>
#include <unistd.h>

#include "pqda/cli.hpp"
#include "pqda/errors.hpp"

namespace pqda::cli {

namespace {

constexpr char magic[4] = {'P', 'Q', 'D', 'A'};

void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
public:
  Reader(const std::string& bytes, const fs::path& path) : bytes_(bytes), path_(path) {}

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IoError(path_.string() + ": truncated container");
  }
  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void seek(std::size_t pos) { pos_ = pos; }

private:
  const std::string& bytes_;
  const fs::path& path_;
  std::size_t pos_ = 0;
};

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream ss(line);
  while (std::getline(ss, item, sep)) out.push_back(item);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double parse_cell(const std::string& cell, std::size_t line_no) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  while (first < last && *first == ' ') ++first;
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last) {
    throw IoError("line " + std::to_string(line_no) + ": not a number: '" + cell + "'");
  }
  return v;
}

} // namespace

// ---------------------------------------------------------------------------
// Container

Entry f64_entry(std::vector<double> values, std::vector<std::uint64_t> shape) {
  std::uint64_t n = 1;
  for (auto d : shape) n *= d;
  if (n != values.size()) throw std::invalid_argument("f64_entry: shape does not match value count");
  Entry e;
  e.dtype = DType::f64;
  e.values = std::move(values);
  e.shape = std::move(shape);
  return e;
}

Entry text_entry(std::string text) {
  Entry e;
  e.dtype = DType::text;
  e.shape = {text.size()};
  e.text = std::move(text);
  return e;
}

void write_container(const fs::path& path, const Container& c) {
  // Directory size is known up front, so payload offsets are absolute.
  std::size_t header = 12;
  for (const auto& [name, e] : c) header += 4 + name.size() + 1 + 4 + 8 * e.shape.size() + 16;

  std::string out(magic, 4);
  put_u32(out, format_version);
  put_u32(out, static_cast<std::uint32_t>(c.size()));
  std::uint64_t offset = header;
  for (const auto& [name, e] : c) {
    const std::uint64_t length = e.dtype == DType::f64 ? 8 * e.values.size() : e.text.size();
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u8(out, static_cast<std::uint8_t>(e.dtype));
    put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) put_u64(out, d);
    put_u64(out, offset);
    put_u64(out, length);
    offset += length;
  }
  for (const auto& [name, e] : c) {
    if (e.dtype == DType::f64) {
      for (double v : e.values) put_u64(out, std::bit_cast<std::uint64_t>(v));
    } else {
      out += e.text;
    }
  }
  write_file_atomic(path, out);
}

Container read_container(const fs::path& path) {
  const std::string bytes = read_file(path);
  Reader r(bytes, path);
  if (r.take(4) != std::string(magic, 4)) throw IoError(path.string() + ": not a PQDA container");
  const auto version = r.uint(4);
  if (version != format_version) {
    throw IoError(path.string() + ": unsupported container version " + std::to_string(version));
  }
  const auto count = r.uint(4);
  struct Dir {
    std::string name;
    Entry entry;
    std::uint64_t offset, length;
  };
  std::vector<Dir> dir;
  for (std::uint64_t i = 0; i < count; ++i) {
    Dir d;
    d.name = r.take(r.uint(4));
    const auto dtype = r.uint(1);
    if (dtype != 1 && dtype != 2) throw IoError(path.string() + ": unknown dtype for entry " + d.name);
    d.entry.dtype = static_cast<DType>(dtype);
    const auto ndim = r.uint(4);
    for (std::uint64_t k = 0; k < ndim; ++k) d.entry.shape.push_back(r.uint(8));
    d.offset = r.uint(8);
    d.length = r.uint(8);
    dir.push_back(std::move(d));
  }
  Container c;
  for (auto& d : dir) {
    if (d.offset + d.length > bytes.size()) throw IoError(path.string() + ": entry " + d.name + " out of bounds");
    r.seek(d.offset);
    if (d.entry.dtype == DType::f64) {
      std::uint64_t n = 1;
      for (auto s : d.entry.shape) n *= s;
      if (8 * n != d.length) throw IoError(path.string() + ": entry " + d.name + " has inconsistent shape");
      d.entry.values.resize(n);
      for (auto& v : d.entry.values) v = std::bit_cast<double>(r.uint(8));
    } else {
      d.entry.text = r.take(d.length);
    }
    c.emplace(d.name, std::move(d.entry));
  }
  return c;
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// CSV

std::string series_csv(const TimeSeries& series, const std::string& hash) {
  std::string out = "# pqda series format=" + std::to_string(format_version) + " config=" + hash +
                    " delta_t=" + format_real(series.delta_t) + " start_time=" + format_real(series.start_time) +
                    " train_end=" + std::to_string(series.train_end) + "\n";
  out += "time";
  for (std::size_t k = 0; k < series.dim(); ++k) out += ",y" + std::to_string(k + 1);
  out += "\n";
  for (std::size_t n = 0; n < series.length(); ++n) {
    out += format_real(series.start_time + static_cast<double>(n + 1) * series.delta_t);
    for (double v : series.observations.row(n)) out += "," + format_real(v);
    out += "\n";
  }
  return out;
}

TimeSeries parse_series_csv(const std::string& text) {
  const Table t = parse_table(text);
  if (t.columns.empty() || t.columns[0] != "time") throw IoError("series file: first column must be 'time'");
  const auto delta_t = t.meta("delta_t");
  const auto start = t.meta("start_time");
  const auto train_end = t.meta("train_end");
  if (!delta_t || !start || !train_end) throw IoError("series file: missing delta_t, start_time or train_end metadata");
  TimeSeries s;
  const std::size_t K = t.columns.size() - 1;
  s.observations = Matrix(t.rows.size(), K);
  for (std::size_t n = 0; n < t.rows.size(); ++n) {
    for (std::size_t k = 0; k < K; ++k) s.observations(n, k) = t.rows[n][k + 1];
  }
  s.delta_t = parse_cell(*delta_t, 1);
  s.start_time = parse_cell(*start, 1);
  s.train_end = static_cast<std::size_t>(parse_cell(*train_end, 1));
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw IoError(std::string("series file: ") + e.what());
  }
  return s;
}

MetricsRow to_row(const diagnostics::MetricsReport& r) {
  return {r.episode_index, r.calibration_error, r.nrmse, r.r2, r.range_begin, r.range_end};
}

std::string metrics_csv(const std::vector<MetricsRow>& rows, const std::string& hash, const std::string& source,
                        TestRange range) {
  std::string out = "# pqda metrics format=" + std::to_string(format_version) + " config=" + hash +
                    " source=" + source + " test_range=" + to_string(range) + "\n";
  out += "episode_index,calibration_error,nrmse,r2,range_begin,range_end\n";
  for (const auto& r : rows) {
    out += std::to_string(r.episode_index) + "," + format_real(r.calibration_error) + "," + format_real(r.nrmse) +
           "," + format_real(r.r2) + "," + std::to_string(r.range_begin) + "," + std::to_string(r.range_end) + "\n";
  }
  return out;
}

std::string tempering_csv(const std::vector<TemperingRow>& rows, const std::string& hash) {
  std::string out = "# pqda tempering format=" + std::to_string(format_version) + " config=" + hash + "\n";
  out += "episode_index,step,alpha,cess\n";
  for (const auto& r : rows) {
    out += std::to_string(r.episode_index) + "," + std::to_string(r.step) + "," + format_real(r.alpha) + "," +
           format_real(r.cess) + "\n";
  }
  return out;
}

Table parse_table(const std::string& text) {
  Table t;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      t.comments.push_back(line);
      continue;
    }
    auto cells = split(line, ',');
    if (t.columns.empty()) {
      t.columns = std::move(cells);
      continue;
    }
    if (cells.size() != t.columns.size()) {
      throw IoError("line " + std::to_string(line_no) + ": expected " + std::to_string(t.columns.size()) +
                    " fields, found " + std::to_string(cells.size()));
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) row.push_back(parse_cell(c, line_no));
    t.rows.push_back(std::move(row));
  }
  return t;
}

std::vector<double> Table::column(const std::string& name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw ConfigError("missing column '" + name + "'");
  const auto k = static_cast<std::size_t>(it - columns.begin());
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r[k]);
  return out;
}

std::optional<std::string> Table::meta(const std::string& key) const {
  const std::string prefix = key + "=";
  for (const auto& c : comments) {
    std::istringstream in(c);
    std::string word;
    while (in >> word) {
      if (word.rfind(prefix, 0) == 0) return word.substr(prefix.size());
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Lock and checkpoints

DirectoryLock::DirectoryLock(const fs::path& dir) : path_(dir / ".lock") {
  fs::create_directories(dir);
  for (int attempt = 0; attempt < 2; ++attempt) {
    const int fd = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_EXCL, 0644);
    if (fd >= 0) {
      const std::string pid = std::to_string(::getpid()) + "\n";
      const bool ok = ::write(fd, pid.data(), pid.size()) == static_cast<ssize_t>(pid.size());
      ::close(fd);
      if (!ok) throw IoError("cannot write lock file " + path_.string());
      return;
    }
    if (errno != EEXIST) throw IoError("cannot create lock file " + path_.string() + ": " + std::strerror(errno));
    // Take over a lock whose owner has exited.
    std::ifstream in(path_);
    long owner = 0;
    in >> owner;
    if (owner > 0 && (::kill(static_cast<pid_t>(owner), 0) == 0 || errno == EPERM)) break;
    std::error_code ec;
    fs::remove(path_, ec);
  }
  throw IoError("output directory " + dir.string() + " is locked by another run (" + path_.string() + ")");
}

DirectoryLock::~DirectoryLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

fs::path checkpoint_path(const fs::path& out, std::size_t episode) {
  char name[32];
  std::snprintf(name, sizeof(name), "episode_%04zu.pqda", episode);
  return out / "checkpoints" / name;
}

void write_checkpoint(const fs::path& path, const Checkpoint& cp) {
  const auto& ens = cp.ensemble;
  const std::size_t n = ens.size();
  const std::size_t p = n > 0 ? ens.particles[0].size() : 0;
  std::vector<double> flat;
  flat.reserve(n * p);
  for (const auto& th : ens.particles) flat.insert(flat.end(), th.begin(), th.end());

  std::vector<double> metrics;
  for (const auto& r : cp.metrics) {
    metrics.insert(metrics.end(), {static_cast<double>(r.episode_index), r.calibration_error, r.nrmse, r.r2,
                                   static_cast<double>(r.range_begin), static_cast<double>(r.range_end)});
  }
  std::vector<double> tempering;
  for (const auto& r : cp.tempering) {
    tempering.insert(tempering.end(), {static_cast<double>(r.episode_index), static_cast<double>(r.step), r.alpha, r.cess});
  }

  Container c;
  c["particles"] = f64_entry(std::move(flat), {n, p});
  c["log_weights"] = f64_entry(ens.log_weights, {n});
  c["episode_index"] = f64_entry({static_cast<double>(ens.episode_index)}, {1});
  // Halves of a 64-bit seed are exact in a double.
  c["seed"] = f64_entry({static_cast<double>(cp.seed >> 32), static_cast<double>(cp.seed & 0xffffffffULL)}, {2});
  c["config_hash"] = text_entry(cp.config_hash);
  c["metrics"] = f64_entry(std::move(metrics), {cp.metrics.size(), 6});
  c["tempering"] = f64_entry(std::move(tempering), {cp.tempering.size(), 4});
  write_container(path, c);
}

Checkpoint read_checkpoint(const fs::path& path) {
  const Container c = read_container(path);
  auto get = [&](const std::string& name) -> const Entry& {
    const auto it = c.find(name);
    if (it == c.end()) throw IoError(path.string() + ": missing entry " + name);
    return it->second;
  };
  Checkpoint cp;
  const Entry& parts = get("particles");
  if (parts.shape.size() != 2) throw IoError(path.string() + ": particles must be two-dimensional");
  const std::size_t n = parts.shape[0], p = parts.shape[1];
  cp.ensemble.particles.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    cp.ensemble.particles[i].assign(parts.values.begin() + static_cast<std::ptrdiff_t>(i * p),
                                    parts.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * p));
  }
  cp.ensemble.log_weights = get("log_weights").values;
  if (cp.ensemble.log_weights.size() != n) throw IoError(path.string() + ": log_weights length differs from N");
  cp.ensemble.episode_index = static_cast<std::size_t>(get("episode_index").values.at(0));
  const auto& seed = get("seed").values;
  if (seed.size() != 2) throw IoError(path.string() + ": seed must have two halves");
  cp.seed = (static_cast<std::uint64_t>(seed[0]) << 32) | static_cast<std::uint64_t>(seed[1]);
  cp.config_hash = get("config_hash").text;
  const auto& m = get("metrics").values;
  for (std::size_t i = 0; i + 6 <= m.size(); i += 6) {
    cp.metrics.push_back({static_cast<std::size_t>(m[i]), m[i + 1], m[i + 2], m[i + 3],
                          static_cast<std::size_t>(m[i + 4]), static_cast<std::size_t>(m[i + 5])});
  }
  const auto& t = get("tempering").values;
  for (std::size_t i = 0; i + 4 <= t.size(); i += 4) {
    cp.tempering.push_back({static_cast<std::size_t>(t[i]), static_cast<std::size_t>(t[i + 1]), t[i + 2], t[i + 3]});
  }
  return cp;
}

std::optional<fs::path> latest_checkpoint(const fs::path& out) {
  const fs::path dir = out / "checkpoints";
  if (!fs::is_directory(dir)) return std::nullopt;
  std::optional<fs::path> best;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("episode_", 0) != 0 || entry.path().extension() != ".pqda") continue;
    if (!best || name > best->filename().string()) best = entry.path();
  }
  return best;
}

} // namespace pqda::cli
