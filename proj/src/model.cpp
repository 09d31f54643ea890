#include "tiltlab/model.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "tiltlab/random.hpp"

namespace tiltlab {

namespace {

constexpr double kRowTolerance = 1e-9;
constexpr double kRootTolerance = 1e-12;
constexpr std::string_view kMagic = "tiltlab-instance v1";

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_real(std::string_view token, std::string_view what) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc{} || ptr != token.data() + token.size())
    throw ParseError("invalid number for " + std::string(what) + ": '" + std::string(token) + "'");
  return v;
}

long parse_int(std::string_view token, std::string_view what) {
  long v = 0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc{} || ptr != token.data() + token.size())
    throw ParseError("invalid integer for " + std::string(what) + ": '" + std::string(token) + "'");
  return v;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string_view rest_after_key(std::string_view line, std::string_view key) {
  auto rest = line.substr(key.size());
  while (!rest.empty() && (rest.front() == ' ' || rest.front() == '\t')) rest.remove_prefix(1);
  while (!rest.empty() && (rest.back() == '\r' || rest.back() == ' ')) rest.remove_suffix(1);
  return rest;
}

void emit_subtree(const Instance& inst, Node node, std::ostringstream& out) {
  const int B = inst.shape().B;
  out << "node " << to_prefix(node, B).to_string() << ' ' << format_real(inst.twist.value(node));
  if (node.t < inst.shape().T) {
    out << " row";
    for (double p : inst.reference.row(node)) out << ' ' << format_real(p);
  }
  out << '\n';
  if (node.t < inst.shape().T)
    for (Symbol s = 0; s < B; ++s) emit_subtree(inst, node.child(s, B), out);
}

}  // namespace

std::size_t Shape::count(int t) const {
  std::size_t n = 1;
  for (int i = 0; i < t; ++i) n *= static_cast<std::size_t>(B);
  return n;
}

void Shape::validate() const {
  if (B < 2) throw Error("alphabet size must be at least 2");
  if (T < 1) throw Error("horizon must be at least 1");
  std::size_t n = 1;
  for (int i = 0; i < T; ++i) {
    n *= static_cast<std::size_t>(B);
    if (n > kMaxLeaves)
      throw Error("memory cap exceeded: B^T must not exceed " + std::to_string(kMaxLeaves));
  }
}

std::string Prefix::to_string() const {
  if (symbols.empty()) return "-";
  std::string out;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i) out += '.';
    out += std::to_string(symbols[i]);
  }
  return out;
}

Prefix Prefix::parse(std::string_view text) {
  Prefix p;
  if (text == "-") return p;
  std::size_t i = 0;
  while (i <= text.size()) {
    auto j = text.find('.', i);
    if (j == std::string_view::npos) j = text.size();
    auto v = parse_int(text.substr(i, j - i), "prefix symbol");
    if (v < 0) throw ParseError("negative symbol in prefix '" + std::string(text) + "'");
    p.symbols.push_back(static_cast<Symbol>(v));
    i = j + 1;
  }
  return p;
}

Node to_node(const Prefix& prefix, int B) {
  Node n;
  for (Symbol s : prefix.symbols) {
    if (s < 0 || s >= B) throw Error("prefix symbol out of range");
    n = n.child(s, B);
  }
  return n;
}

Prefix to_prefix(Node node, int B) {
  Prefix p;
  p.symbols.resize(static_cast<std::size_t>(node.t));
  for (int k = node.t - 1; k >= 0; --k) {
    p.symbols[static_cast<std::size_t>(k)] = node.last(B);
    node = node.parent(B);
  }
  return p;
}

std::size_t ancestor(Node node, int t, int B) {
  while (node.t > t) node = node.parent(B);
  return node.index;
}

ReferenceModel::ReferenceModel(Shape shape, std::vector<std::vector<double>> rows)
    : shape_(shape), rows_(std::move(rows)) {
  shape_.validate();
  if (static_cast<int>(rows_.size()) != shape_.T) throw Error("reference table needs one level per t < T");
  for (int t = 0; t < shape_.T; ++t) {
    auto& level = rows_[static_cast<std::size_t>(t)];
    if (level.size() != shape_.count(t + 1))
      throw Error("reference level " + std::to_string(t) + " has wrong size");
    for (std::size_t i = 0; i < shape_.count(t); ++i) {
      double* r = level.data() + i * static_cast<std::size_t>(shape_.B);
      double sum = 0.0;
      for (int s = 0; s < shape_.B; ++s) {
        if (!(r[s] >= 0.0) || !std::isfinite(r[s]))
          throw Error("negative or non-finite probability at prefix " + to_prefix({t, i}, shape_.B).to_string());
        sum += r[s];
      }
      if (std::abs(sum - 1.0) > kRowTolerance)
        throw Error("row at prefix " + to_prefix({t, i}, shape_.B).to_string() + " sums to " + format_real(sum) +
                    ", not 1");
      if (std::abs(sum - 1.0) <= 4 * std::numeric_limits<double>::epsilon()) continue;
      int largest = 0;
      for (int s = 0; s < shape_.B; ++s) {
        r[s] /= sum;
        if (r[s] > r[largest]) largest = s;
      }
      double resum = 0.0;
      for (int s = 0; s < shape_.B; ++s) resum += r[s];
      r[largest] += 1.0 - resum;
    }
  }
}

std::span<const double> ReferenceModel::row(Node prefix) const {
  const auto& level = rows_.at(static_cast<std::size_t>(prefix.t));
  return std::span<const double>(level).subspan(prefix.index * static_cast<std::size_t>(shape_.B),
                                                static_cast<std::size_t>(shape_.B));
}

std::vector<double> ReferenceModel::marginal(int t) const {
  std::vector<double> m{1.0};
  for (int k = 0; k < t; ++k) {
    std::vector<double> next(shape_.count(k + 1));
    const auto& level = rows_[static_cast<std::size_t>(k)];
    for (std::size_t j = 0; j < next.size(); ++j) next[j] = m[j / static_cast<std::size_t>(shape_.B)] * level[j];
    m = std::move(next);
  }
  return m;
}

TwistModel::TwistModel(Shape shape, std::vector<std::vector<double>> values)
    : shape_(shape), values_(std::move(values)) {
  shape_.validate();
  if (static_cast<int>(values_.size()) != shape_.T + 1) throw Error("twist table needs one level per t <= T");
  for (int t = 0; t <= shape_.T; ++t) {
    const auto& level = values_[static_cast<std::size_t>(t)];
    if (level.size() != shape_.count(t)) throw Error("twist level " + std::to_string(t) + " has wrong size");
    for (std::size_t i = 0; i < level.size(); ++i)
      if (!(level[i] > 0.0) || !std::isfinite(level[i]))
        throw Error("nonpositive twist value at prefix " + to_prefix({t, i}, shape_.B).to_string());
  }
  if (std::abs(values_[0][0] - 1.0) > kRootTolerance)
    throw Error("root twist must equal 1, got " + format_real(values_[0][0]));
}

Instance::Instance(std::string id_, ReferenceModel reference_, TwistModel twist_, std::string prompt_)
    : id(std::move(id_)), prompt(std::move(prompt_)), reference(std::move(reference_)), twist(std::move(twist_)) {
  if (!(reference.shape() == twist.shape())) throw Error("reference and twist shapes differ");
  if (id.find('\n') != std::string::npos || prompt.find('\n') != std::string::npos)
    throw Error("instance id and prompt must be single-line");
}

Instance parse_instance(std::string_view text) {
  std::string id, prompt;
  long B = -1, T = -1;
  bool magic = false;
  struct Record {
    double twist;
    std::vector<double> row;
  };
  std::map<Prefix, Record> records;

  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    auto tokens = split_ws(line);
    if (tokens.empty() || tokens[0].front() == '#') continue;
    const auto where = " (line " + std::to_string(line_no) + ")";
    if (!magic) {
      if (rest_after_key(line, "") != kMagic) throw ParseError("missing header '" + std::string(kMagic) + "'");
      magic = true;
    } else if (tokens[0] == "id") {
      id = std::string(rest_after_key(line, "id"));
    } else if (tokens[0] == "prompt") {
      prompt = std::string(rest_after_key(line, "prompt"));
    } else if (tokens[0] == "B" && tokens.size() == 2) {
      B = parse_int(tokens[1], "B");
    } else if (tokens[0] == "T" && tokens.size() == 2) {
      T = parse_int(tokens[1], "T");
    } else if (tokens[0] == "node") {
      if (B < 0 || T < 0) throw ParseError("node record before B and T" + where);
      if (tokens.size() < 3) throw ParseError("truncated node record" + where);
      auto prefix = Prefix::parse(tokens[1]);
      Record rec{parse_real(tokens[2], "twist"), {}};
      if (prefix.length() > T) throw ParseError("prefix longer than T" + where);
      if (prefix.length() < T) {
        if (tokens.size() != static_cast<std::size_t>(4 + B) || tokens[3] != "row")
          throw ParseError("expected 'row' with " + std::to_string(B) + " probabilities" + where);
        for (long s = 0; s < B; ++s) rec.row.push_back(parse_real(tokens[static_cast<std::size_t>(4 + s)], "row"));
      } else if (tokens.size() != 3) {
        throw ParseError("terminal record carries no row" + where);
      }
      for (Symbol s : prefix.symbols)
        if (s >= B) throw ParseError("symbol out of range" + where);
      if (!records.emplace(std::move(prefix), std::move(rec)).second)
        throw ParseError("duplicate prefix record" + where);
    } else {
      throw ParseError("unrecognized line" + where);
    }
  }
  if (!magic) throw ParseError("empty instance document");
  if (B < 0 || T < 0) throw ParseError("header must declare B and T");
  Shape shape{static_cast<int>(B), static_cast<int>(T)};
  shape.validate();

  std::vector<std::vector<double>> rows(static_cast<std::size_t>(T));
  std::vector<std::vector<double>> twist(static_cast<std::size_t>(T + 1));
  for (int t = 0; t <= shape.T; ++t) {
    twist[static_cast<std::size_t>(t)].resize(shape.count(t));
    if (t < shape.T) rows[static_cast<std::size_t>(t)].resize(shape.count(t + 1));
  }
  for (auto& [prefix, rec] : records) {
    Node n = to_node(prefix, shape.B);
    twist[static_cast<std::size_t>(n.t)][n.index] = rec.twist;
    for (std::size_t s = 0; s < rec.row.size(); ++s)
      rows[static_cast<std::size_t>(n.t)][n.index * static_cast<std::size_t>(B) + s] = rec.row[s];
  }
  std::size_t expected = 0;
  for (int t = 0; t <= shape.T; ++t) expected += shape.count(t);
  if (records.size() != expected) {
    for (int t = 0; t <= shape.T; ++t)
      for (std::size_t i = 0; i < shape.count(t); ++i) {
        auto p = to_prefix({t, i}, shape.B);
        if (!records.count(p)) throw ParseError("missing prefix entry " + p.to_string());
      }
  }
  try {
    return Instance(std::move(id), ReferenceModel(shape, std::move(rows)), TwistModel(shape, std::move(twist)),
                    std::move(prompt));
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError(e.what());
  }
}

std::string serialize_instance(const Instance& instance) {
  std::ostringstream out;
  out << kMagic << '\n';
  out << "id " << instance.id << '\n';
  if (!instance.prompt.empty()) out << "prompt " << instance.prompt << '\n';
  out << "B " << instance.shape().B << '\n';
  out << "T " << instance.shape().T << '\n';
  emit_subtree(instance, Node{}, out);
  return out.str();
}

Instance read_instance(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open instance file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_instance(buf.str());
  } catch (const Error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_instance(const Instance& instance, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write instance file " + path.string());
  out << serialize_instance(instance);
  if (!out) throw Error("write failed for " + path.string());
}

TwistModel optimal_twist(const ReferenceModel& reference, std::span<const double> terminal) {
  const Shape& shape = reference.shape();
  if (terminal.size() != shape.leaves()) throw Error("terminal table must cover every leaf");
  std::vector<std::vector<double>> v(static_cast<std::size_t>(shape.T + 1));
  v.back().assign(terminal.begin(), terminal.end());
  for (double x : v.back())
    if (!(x > 0.0)) throw Error("terminal values must be positive");
  for (int t = shape.T - 1; t >= 0; --t) {
    auto& level = v[static_cast<std::size_t>(t)];
    const auto& next = v[static_cast<std::size_t>(t + 1)];
    const auto rows = reference.level(t);
    level.assign(shape.count(t), 0.0);
    for (std::size_t j = 0; j < next.size(); ++j) level[j / static_cast<std::size_t>(shape.B)] += rows[j] * next[j];
  }
  const double root = v[0][0];
  for (auto& level : v)
    for (double& x : level) x /= root;
  return TwistModel(shape, std::move(v));
}

TwistModel perturb_twist(const TwistModel& twist, double gamma, std::uint64_t seed) {
  if (!(gamma >= 0.0)) throw Error("gamma must be nonnegative");
  auto v = twist.table();
  const double a = std::log1p(gamma);
  RandomStream rng(seed);
  for (int t = 1; t < twist.shape().T; ++t)
    for (double& x : v[static_cast<std::size_t>(t)]) x *= std::exp(a * (2.0 * rng.uniform() - 1.0));
  return TwistModel(twist.shape(), std::move(v));
}

Instance random_instance(const RandomInstanceSpec& spec) {
  Shape shape{spec.B, spec.T};
  shape.validate();
  RandomStream row_rng = RandomStream(spec.seed).split(1);
  RandomStream reward_rng = RandomStream(spec.seed).split(2);
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(spec.T));
  for (int t = 0; t < spec.T; ++t) {
    auto& level = rows[static_cast<std::size_t>(t)];
    level.resize(shape.count(t + 1));
    for (std::size_t i = 0; i < shape.count(t); ++i) {
      double sum = 0.0;
      for (int s = 0; s < spec.B; ++s) {
        double x = spec.row_floor + (1.0 - spec.row_floor) * row_rng.uniform();
        level[i * static_cast<std::size_t>(spec.B) + s] = x;
        sum += x;
      }
      for (int s = 0; s < spec.B; ++s) level[i * static_cast<std::size_t>(spec.B) + s] /= sum;
    }
  }
  ReferenceModel reference(shape, std::move(rows));
  std::vector<double> phi(shape.leaves());
  for (double& x : phi) x = std::exp(spec.spread * (2.0 * reward_rng.uniform() - 1.0));
  auto twist = perturb_twist(optimal_twist(reference, phi), spec.gamma, spec.seed);
  std::ostringstream id;
  id << "random;B=" << spec.B << ";T=" << spec.T << ";spread=" << spec.spread << ";gamma=" << spec.gamma
     << ";seed=" << spec.seed;
  return Instance(id.str(), std::move(reference), std::move(twist));
}

}  // namespace tiltlab
