#include "acof/evaluators.hpp"

#include <fcntl.h>
#include <signal.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "acof/errors.hpp"

namespace acof::eval {

// ---------------------------------------------------------------------------
// synthetic_opamp

SyntheticOpamp::SyntheticOpamp(ParameterSpace space) : space_(std::move(space)) {
  if (space_.dimension() < 3) {
    throw StructuralError("synthetic_opamp needs at least 3 parameters (one per group)");
  }
}

EvalResult SyntheticOpamp::run(const DesignPoint& point) const {
  space_.check_point(point);
  const auto z = space_.normalize(point);

  std::array<double, 3> sum{};
  std::array<int, 3> count{};
  for (std::size_t i = 0; i < z.size(); ++i) {
    sum[i % 3] += z[i];
    ++count[i % 3];
  }
  const double a = sum[0] / count[0];
  const double b = sum[1] / count[1];
  const double c = sum[2] / count[2];

  if (a < kFailureThreshold) {
    return {Measurements::invalid(), "synthetic failure pocket (a < 0.05)", {}};
  }
  Measurements m;
  m.gain_db = 110.0 * a - 20.0 * a * b;
  m.ugbw_hz = 1000e6 * b * (0.5 + c);
  m.pm_deg = 160.0 * c * (1.0 - 0.4 * b);
  m.power_w = 1e-3 * (0.1 + 0.9 * b + 0.2 * a);
  m.sim_valid = true;
  return {m, {}, {}};
}

// ---------------------------------------------------------------------------
// multi_pocket

MultiPocket::MultiPocket(ParameterSpace space, SpecTargets targets)
    : space_(std::move(space)), targets_(targets) {
  targets_.validate();
  const std::size_t d = space_.dimension();
  std::vector<double> c1(d, 0.2), c2(d), c3(d);
  for (std::size_t i = 0; i < d; ++i) {
    c2[i] = (i % 2 == 0) ? 0.8 : 0.2;
    c3[i] = (i % 2 == 0) ? 0.5 : 0.9;
  }
  centers_ = {std::move(c1), std::move(c2), std::move(c3)};
}

EvalResult MultiPocket::run(const DesignPoint& point) const {
  space_.check_point(point);
  const auto z = space_.normalize(point);
  double peak = 0.0;
  for (const auto& c : centers_) {
    double d2 = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) d2 += (z[i] - c[i]) * (z[i] - c[i]);
    peak = std::max(peak, std::exp(-d2 / (2.0 * kPocketWidth * kPocketWidth)));
  }
  Measurements m;
  m.gain_db = targets_.gain_db * peak;
  m.ugbw_hz = targets_.ugbw_hz;
  m.pm_deg = targets_.pm_deg;
  m.power_w = targets_.power_w;
  m.sim_valid = true;
  return {m, {}, {}};
}

// ---------------------------------------------------------------------------
// templates and measurement parsing

std::string_view to_string(MeasField field) {
  switch (field) {
    case MeasField::gain_db: return "gain_db";
    case MeasField::ugbw_hz: return "ugbw_hz";
    case MeasField::pm_deg: return "pm_deg";
    case MeasField::power_w: return "power_w";
  }
  return "?";
}

MeasField meas_field_from_string(std::string_view text) {
  if (text == "gain_db") return MeasField::gain_db;
  if (text == "ugbw_hz") return MeasField::ugbw_hz;
  if (text == "pm_deg") return MeasField::pm_deg;
  if (text == "power_w") return MeasField::power_w;
  throw ValidationError("unknown measurement field '" + std::string(text) + "'");
}

std::vector<std::string> find_placeholders(std::string_view body) {
  std::vector<std::string> names;
  std::size_t pos = 0;
  while ((pos = body.find('{', pos)) != std::string_view::npos) {
    const auto close = body.find('}', pos + 1);
    if (close == std::string_view::npos) {
      names.emplace_back(body.substr(pos + 1));
      break;
    }
    std::string name(body.substr(pos + 1, close - pos - 1));
    if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
    pos = close + 1;
  }
  return names;
}

NetlistTemplate NetlistTemplate::from_body(std::string body, MeasurementMap map) {
  NetlistTemplate t;
  for (auto& name : find_placeholders(body)) t.required_params.insert(std::move(name));
  t.body = std::move(body);
  t.measurement_map = std::move(map);
  return t;
}

void NetlistTemplate::validate() const {
  for (const auto& name : required_params) {
    if (body.find("{" + name + "}") == std::string::npos) {
      throw TemplateError(name, "required parameter {" + name + "} does not appear in the template");
    }
  }
  std::array<bool, 4> covered{};
  for (const auto& [sim_name, binding] : measurement_map) {
    covered[static_cast<std::size_t>(binding.field)] = true;
  }
  for (std::size_t f = 0; f < covered.size(); ++f) {
    if (!covered[f]) {
      throw ValidationError("measurement map does not cover field " +
                            std::string(to_string(static_cast<MeasField>(f))));
    }
  }
}

std::string format_spice_number(double value) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value,
                                 std::chars_format::scientific);
  std::string text(buf.data(), end);
  const auto e = text.find('e');
  if (e == std::string::npos) return text;
  std::string mantissa = text.substr(0, e);
  std::string exponent = text.substr(e + 1);
  bool negative = false;
  std::size_t i = 0;
  if (i < exponent.size() && (exponent[i] == '+' || exponent[i] == '-')) {
    negative = exponent[i] == '-';
    ++i;
  }
  while (i + 1 < exponent.size() && exponent[i] == '0') ++i;
  return mantissa + "e" + (negative ? "-" : "") + exponent.substr(i);
}

std::string render_netlist(const NetlistTemplate& tmpl, const DesignPoint& point,
                           const ParameterSpace& space) {
  space.check_dimension(point.size(), "design point");
  std::string out;
  out.reserve(tmpl.body.size() + 64);
  const std::string_view body = tmpl.body;
  std::size_t pos = 0;
  while (pos < body.size()) {
    const auto open = body.find('{', pos);
    if (open == std::string_view::npos) {
      out.append(body.substr(pos));
      break;
    }
    out.append(body.substr(pos, open - pos));
    const auto close = body.find('}', open + 1);
    const std::string name(close == std::string_view::npos
                               ? body.substr(open + 1)
                               : body.substr(open + 1, close - open - 1));
    const auto idx = close == std::string_view::npos ? std::nullopt : space.index_of(name);
    if (!idx) throw TemplateError(name, "unresolved placeholder: " + name);
    out += format_spice_number(point.values[*idx]);
    pos = close + 1;
  }
  return out;
}

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool parse_real(std::string_view token, double& value) {
  const std::string text(token);
  char* end = nullptr;
  value = std::strtod(text.c_str(), &end);
  return end != text.c_str() && *end == '\0';
}

}  // namespace

ParseOutcome parse_measurements(std::string_view simulator_output, const MeasurementMap& map) {
  std::map<std::string, std::string, std::less<>> found;
  std::size_t start = 0;
  while (start <= simulator_output.size()) {
    auto end = simulator_output.find('\n', start);
    if (end == std::string_view::npos) end = simulator_output.size();
    const auto line = simulator_output.substr(start, end - start);
    start = end + 1;

    const auto eq = line.find('=');
    if (eq == std::string_view::npos) continue;
    const auto name = trim(line.substr(0, eq));
    if (name.empty() || name.find_first_of(" \t") != std::string_view::npos) continue;
    auto rest = trim(line.substr(eq + 1));
    const auto stop = rest.find_first_of(" \t,");
    if (stop != std::string_view::npos) rest = rest.substr(0, stop);
    found.try_emplace(lower(name), std::string(rest));
  }

  ParseOutcome out{Measurements::invalid(), {}};
  Measurements m;
  for (const auto& [sim_name, binding] : map) {
    const auto it = found.find(lower(sim_name));
    if (it == found.end()) {
      out.reason = "missing measurement: " + sim_name;
      return out;
    }
    double value = 0.0;
    if (!parse_real(it->second, value) || !std::isfinite(value)) {
      out.reason = "non-finite measurement: " + sim_name + " = " + it->second;
      return out;
    }
    value *= binding.multiplier;
    switch (binding.field) {
      case MeasField::gain_db: m.gain_db = value; break;
      case MeasField::ugbw_hz: m.ugbw_hz = value; break;
      case MeasField::pm_deg: m.pm_deg = value; break;
      case MeasField::power_w: m.power_w = value; break;
    }
  }
  if (map.empty()) {
    out.reason = "empty measurement map";
    return out;
  }
  m.sim_valid = true;
  out.meas = m;
  return out;
}

// ---------------------------------------------------------------------------
// ngspice subprocess adapter

std::filesystem::path resolve_executable(const std::string& name) {
  namespace fs = std::filesystem;
  auto usable = [](const fs::path& p) {
    std::error_code ec;
    return fs::is_regular_file(p, ec) && ::access(p.c_str(), X_OK) == 0;
  };
  if (name.empty()) throw ConfigError("simulator executable not configured");
  if (name.find('/') != std::string::npos) {
    const fs::path p = fs::absolute(name);
    if (usable(p)) return p;
    throw ConfigError("simulator executable not found or not executable: " + name);
  }
  const char* path_env = std::getenv("PATH");
  std::string_view dirs = path_env ? path_env : "/usr/local/bin:/usr/bin:/bin";
  while (!dirs.empty()) {
    const auto colon = dirs.find(':');
    const auto dir = dirs.substr(0, colon);
    if (!dir.empty()) {
      const fs::path candidate = fs::path(std::string(dir)) / name;
      if (usable(candidate)) return candidate;
    }
    if (colon == std::string_view::npos) break;
    dirs.remove_prefix(colon + 1);
  }
  throw ConfigError("simulator executable '" + name + "' not found on PATH");
}

NgspiceEvaluator::NgspiceEvaluator(ParameterSpace space, NetlistTemplate tmpl,
                                   NgspiceSettings settings)
    : space_(std::move(space)), tmpl_(std::move(tmpl)), settings_(std::move(settings)) {
  tmpl_.validate();
  for (const auto& name : tmpl_.required_params) {
    if (!space_.index_of(name)) {
      throw TemplateError(name, "template placeholder {" + name + "} is not a parameter");
    }
  }
  if (settings_.timeout.count() <= 0) throw ValidationError("ngspice timeout must be > 0");
  executable_ = resolve_executable(settings_.executable);
}

namespace {

struct ChildOutcome {
  bool timed_out = false;
  int exit_status = -1;
  bool spawned = true;
};

ChildOutcome run_child(const std::filesystem::path& exe, const std::filesystem::path& dir,
                       std::chrono::milliseconds timeout) {
  const std::string exe_s = exe.string();
  const std::string dir_s = dir.string();
  const std::string log_s = (dir / "output.log").string();
  std::array<char*, 4> argv{const_cast<char*>(exe_s.c_str()), const_cast<char*>("-b"),
                            const_cast<char*>("netlist.cir"), nullptr};

  const pid_t pid = ::fork();
  if (pid < 0) return {false, -1, false};
  if (pid == 0) {
    ::setpgid(0, 0);
    if (::chdir(dir_s.c_str()) != 0) ::_exit(126);
    const int out = ::open(log_s.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    const int in = ::open("/dev/null", O_RDONLY);
    if (out < 0 || in < 0) ::_exit(126);
    ::dup2(in, 0);
    ::dup2(out, 1);
    ::dup2(out, 2);
    ::execv(argv[0], argv.data());
    ::_exit(127);
  }

  ChildOutcome outcome;
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  int status = 0;
  for (;;) {
    const pid_t r = ::waitpid(pid, &status, WNOHANG);
    if (r == pid) break;
    if (r < 0) {
      outcome.exit_status = -1;
      return outcome;
    }
    if (std::chrono::steady_clock::now() >= deadline) {
      ::kill(-pid, SIGKILL);
      ::kill(pid, SIGKILL);
      ::waitpid(pid, &status, 0);
      outcome.timed_out = true;
      return outcome;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  outcome.exit_status = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
  return outcome;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

EvalResult NgspiceEvaluator::run(const DesignPoint& point) const {
  namespace fs = std::filesystem;
  space_.check_dimension(point.size(), "design point");
  const std::string netlist = render_netlist(tmpl_, point, space_);

  const fs::path root = settings_.work_root.empty() ? fs::temp_directory_path() : settings_.work_root;
  std::string pattern = (root / "acof-eval-XXXXXX").string();
  if (::mkdtemp(pattern.data()) == nullptr) {
    return {Measurements::invalid(), "could not create working directory under " + root.string(), {}};
  }
  const fs::path dir(pattern);
  {
    std::ofstream out(dir / "netlist.cir", std::ios::binary);
    out << netlist;
  }

  const auto child = run_child(executable_, dir, settings_.timeout);
  EvalResult result{Measurements::invalid(), {}, read_file(dir / "output.log")};
  if (!child.spawned) {
    result.reason = "could not start simulator";
  } else if (child.timed_out) {
    result.reason = "simulator timed out after " + std::to_string(settings_.timeout.count()) + " ms";
  } else if (child.exit_status != 0) {
    result.reason = "simulator exited with status " + std::to_string(child.exit_status);
  } else {
    auto parsed = parse_measurements(result.transcript, tmpl_.measurement_map);
    result.meas = parsed.meas;
    result.reason = std::move(parsed.reason);
  }

  if (!settings_.keep_workdirs) {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
  return result;
}

// ---------------------------------------------------------------------------
// factory

std::string_view to_string(EvaluatorKind kind) {
  switch (kind) {
    case EvaluatorKind::synthetic_opamp: return "synthetic_opamp";
    case EvaluatorKind::multi_pocket: return "multi_pocket";
    case EvaluatorKind::ngspice: return "ngspice";
  }
  return "?";
}

EvaluatorKind evaluator_kind_from_string(std::string_view text) {
  if (text == "synthetic_opamp") return EvaluatorKind::synthetic_opamp;
  if (text == "multi_pocket") return EvaluatorKind::multi_pocket;
  if (text == "ngspice") return EvaluatorKind::ngspice;
  throw ValidationError("unknown evaluator kind '" + std::string(text) + "'");
}

void EvaluatorSpec::validate() const {
  if (kind != EvaluatorKind::ngspice) return;
  if (ngspice.timeout.count() <= 0) throw ValidationError("evaluator.timeout_s must be > 0");
  if (template_path.empty()) throw ValidationError("evaluator.template is required for ngspice");
  if (measurement_map.empty()) throw ValidationError("evaluator.measurements is required for ngspice");
}

std::unique_ptr<Evaluator> make_evaluator(const EvaluatorSpec& spec, const ParameterSpace& space,
                                          const SpecTargets& targets) {
  spec.validate();
  switch (spec.kind) {
    case EvaluatorKind::synthetic_opamp: return std::make_unique<SyntheticOpamp>(space);
    case EvaluatorKind::multi_pocket: return std::make_unique<MultiPocket>(space, targets);
    case EvaluatorKind::ngspice: {
      std::ifstream in(spec.template_path, std::ios::binary);
      if (!in) throw ConfigError("cannot read netlist template " + spec.template_path.string());
      std::ostringstream os;
      os << in.rdbuf();
      auto tmpl = NetlistTemplate::from_body(os.str(), spec.measurement_map);
      return std::make_unique<NgspiceEvaluator>(space, std::move(tmpl), spec.ngspice);
    }
  }
  throw ValidationError("unknown evaluator kind");
}

}  // namespace acof::eval
