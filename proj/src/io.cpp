#include "msm/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace msm {

using nlohmann::json;
using nlohmann::ordered_json;

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

StateSet parse_state_set(const std::string& text, int line_no) {
  auto bad = [&](const std::string& why) {
    throw std::runtime_error("panel csv line " + std::to_string(line_no) + ": " + why + " ('" +
                             text + "')");
  };
  StateSet set = 0;
  std::string body = text;
  if (!body.empty() && body.front() == '[') {
    if (body.back() != ']') bad("unterminated state set");
    body = body.substr(1, body.size() - 2);
  }
  std::stringstream ss(body);
  std::string tok;
  while (std::getline(ss, tok, '|')) {
    int s = 0;
    try {
      s = std::stoi(tok);
    } catch (...) {
      bad("state labels must be integers");
    }
    if (s < 1 || s > 32) bad("state out of range 1..32");
    set |= set_of(s - 1);
  }
  if (set == 0) bad("empty state set");
  return set;
}

std::string state_set_to_string(StateSet set) {
  std::vector<int> states;
  for (int s = 0; s < 32; ++s)
    if (contains(set, s)) states.push_back(s + 1);
  if (states.size() == 1) return std::to_string(states[0]);
  std::string out = "[";
  for (size_t i = 0; i < states.size(); ++i) {
    if (i) out += "|";
    out += std::to_string(states[i]);
  }
  return out + "]";
}

double parse_double(const std::string& s, int line_no, const std::string& what) {
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (...) {
    throw std::runtime_error("panel csv line " + std::to_string(line_no) + ": bad " + what +
                             " value '" + s + "'");
  }
}

}  // namespace

std::vector<SubjectData> read_panel_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open data file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty data file: " + path);
  auto header = split_csv_line(line);
  const std::vector<std::string> fixed = {"id", "tstart", "tstop", "statefrom", "stateto",
                                          "obstype"};
  if (header.size() < fixed.size())
    throw std::runtime_error("panel csv: expected header id,tstart,tstop,statefrom,stateto,obstype");
  for (size_t i = 0; i < fixed.size(); ++i)
    if (header[i] != fixed[i])
      throw std::runtime_error("panel csv: column " + std::to_string(i + 1) + " must be '" +
                               fixed[i] + "', found '" + header[i] + "'");
  std::vector<std::string> cov_names(header.begin() + fixed.size(), header.end());

  std::vector<SubjectData> subjects;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw std::runtime_error("panel csv line " + std::to_string(line_no) +
                               ": wrong number of columns");
    DataRecord rec;
    rec.tstart = parse_double(cells[1], line_no, "tstart");
    rec.tstop = parse_double(cells[2], line_no, "tstop");
    rec.from = parse_state_set(cells[3], line_no);
    rec.to = parse_state_set(cells[4], line_no);
    rec.obstype = static_cast<int>(parse_double(cells[5], line_no, "obstype"));
    if (subjects.empty() || subjects.back().id != cells[0]) {
      SubjectData s;
      s.id = cells[0];
      for (size_t j = 0; j < cov_names.size(); ++j)
        s.covariates[cov_names[j]] = parse_double(cells[6 + j], line_no, cov_names[j]);
      subjects.push_back(std::move(s));
    }
    subjects.back().records.push_back(rec);
  }
  return subjects;
}

void write_panel_csv(const std::string& path, const std::vector<SubjectData>& subjects) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write data file: " + path);
  std::vector<std::string> cov_names;
  if (!subjects.empty())
    for (const auto& [k, v] : subjects.front().covariates) cov_names.push_back(k);
  out << "id,tstart,tstop,statefrom,stateto,obstype";
  for (const auto& c : cov_names) out << "," << c;
  out << "\n";
  for (const auto& s : subjects)
    for (const auto& r : s.records) {
      out << s.id << "," << format_double(r.tstart) << "," << format_double(r.tstop) << ","
          << state_set_to_string(r.from) << "," << state_set_to_string(r.to) << "," << r.obstype;
      for (const auto& c : cov_names) out << "," << format_double(s.covariates.at(c));
      out << "\n";
    }
}

void write_truth_csv(const std::string& path, const std::vector<SamplePath>& paths,
                     const std::vector<std::string>& ids) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write truth file: " + path);
  out << "id,entry_time,state,censor_time\n";
  for (size_t i = 0; i < paths.size(); ++i)
    for (size_t n = 0; n < paths[i].times.size(); ++n)
      out << ids[i] << "," << format_double(paths[i].times[n]) << "," << paths[i].states[n] + 1
          << "," << format_double(paths[i].censor_time) << "\n";
}

namespace {

void check_keys(const json& j, const std::vector<std::string>& allowed, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      throw std::runtime_error("model config: unknown key '" + it.key() + "' in " + where);
  }
}

}  // namespace

Model parse_model_config(const json& config, const std::vector<SubjectData>* data) {
  check_keys(config, {"n_states", "labels", "transitions"}, "top level");
  if (!config.contains("n_states") || !config.contains("transitions"))
    throw std::runtime_error("model config: 'n_states' and 'transitions' are required");
  const int K = config.at("n_states").get<int>();
  std::vector<std::string> labels;
  if (config.contains("labels")) labels = config.at("labels").get<std::vector<std::string>>();

  double max_tstop = 0.0;
  if (data)
    for (const auto& s : *data)
      for (const auto& r : s.records) max_tstop = std::max(max_tstop, r.tstop);

  std::vector<Transition> trans;
  std::vector<HazardSpec> hazards;
  for (const auto& tj : config.at("transitions")) {
    check_keys(tj,
               {"from", "to", "family", "covariates", "degree", "interior_knots", "boundary_left",
                "boundary_right"},
               "transition");
    HazardSpec h;
    h.trans.from = tj.at("from").get<int>() - 1;
    h.trans.to = tj.at("to").get<int>() - 1;
    std::string fam = tj.value("family", "exponential");
    if (fam == "exponential") {
      h.family = HazardFamily::Exponential;
    } else if (fam == "weibull") {
      h.family = HazardFamily::Weibull;
    } else if (fam == "bspline") {
      h.family = HazardFamily::BSpline;
      h.degree = tj.value("degree", 1);
      h.interior_knots = tj.value("interior_knots", std::vector<double>{});
      h.boundary_left = tj.value("boundary_left", 0.0);
      if (tj.contains("boundary_right")) {
        h.boundary_right = tj.at("boundary_right").get<double>();
      } else if (data) {
        h.boundary_right = max_tstop;
      } else {
        throw std::runtime_error(
            "model config: bspline transition needs 'boundary_right' (or panel data to derive it)");
      }
    } else {
      throw std::runtime_error("model config: unknown family '" + fam + "'");
    }
    if (tj.contains("covariates"))
      h.covariates = tj.at("covariates").get<std::vector<std::string>>();
    trans.push_back(h.trans);
    hazards.push_back(std::move(h));
  }
  return Model(StateSpace(K, trans, labels), hazards);
}

Model read_model_config(const std::string& path, const std::vector<SubjectData>* data) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model config: " + path);
  json j;
  in >> j;
  return parse_model_config(j, data);
}

ordered_json model_to_config(const Model& model) {
  ordered_json out;
  out["n_states"] = model.space().n_states();
  std::vector<std::string> labels;
  for (int s = 0; s < model.space().n_states(); ++s) labels.push_back(model.space().label(s));
  out["labels"] = labels;
  ordered_json trans = ordered_json::array();
  for (const auto& h : model.hazards()) {
    ordered_json tj;
    tj["from"] = h.trans.from + 1;
    tj["to"] = h.trans.to + 1;
    tj["family"] = family_name(h.family);
    tj["covariates"] = h.covariates;
    if (h.family == HazardFamily::BSpline) {
      tj["degree"] = h.degree;
      tj["interior_knots"] = h.interior_knots;
      tj["boundary_left"] = h.boundary_left;
      tj["boundary_right"] = h.boundary_right;
    }
    trans.push_back(tj);
  }
  out["transitions"] = trans;
  return out;
}

namespace {

std::vector<double> to_vec(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}
Eigen::VectorXd from_vec(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

ordered_json fit_to_json(const FitResult& fit) {
  ordered_json j;
  j["method"] = fit.method;
  j["converged"] = fit.converged;
  j["message"] = fit.message;
  j["n_subjects"] = fit.n_subjects;
  j["n_params"] = fit.n_params;
  j["model"] = model_to_config(fit.model);
  j["parameters"]["names"] = fit.model.layout().names();
  j["parameters"]["unconstrained"] = to_vec(fit.theta_u);
  j["parameters"]["constrained"] = to_vec(fit.model.layout().to_constrained(fit.theta_u));
  {
    ordered_json rows = ordered_json::array();
    for (int r = 0; r < fit.covariance.rows(); ++r) {
      std::vector<double> row(fit.covariance.cols());
      for (int c = 0; c < fit.covariance.cols(); ++c) row[c] = fit.covariance(r, c);
      rows.push_back(row);
    }
    j["covariance"] = rows;
    j["cov_warning"] = fit.cov_warning;
  }
  j["loglik"] = {{"value", fit.loglik.value}, {"mc_se", fit.loglik.se}};
  j["aic"] = fit.aic;
  j["aic_mc_se"] = fit.aic_se;
  j["bic"] = fit.bic;
  j["surrogate"]["model"] = model_to_config(fit.surrogate.model());
  j["surrogate"]["unconstrained"] = to_vec(fit.surrogate.theta_u());
  if (fit.subject_ess.size() > 0) {
    j["diagnostics"]["subject_ess"] = to_vec(fit.subject_ess);
    std::vector<double> kh = to_vec(fit.subject_khat);
    for (auto& v : kh)
      if (!std::isfinite(v)) v = -1.0;  // JSON has no NaN; -1 marks unavailable
    j["diagnostics"]["subject_khat"] = kh;
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fit.data_fingerprint));
  j["fingerprints"]["data"] = buf;
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fit.surrogate_fingerprint));
  j["fingerprints"]["surrogate"] = buf;
  return j;
}

void write_fit_result(const std::string& path, const FitResult& fit) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write fit result: " + path);
  out << fit_to_json(fit).dump(2) << "\n";
}

FitResult read_fit_result(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open fit result: " + path);
  json j;
  in >> j;
  FitResult fit;
  fit.method = j.at("method").get<std::string>();
  fit.converged = j.at("converged").get<bool>();
  fit.message = j.value("message", "");
  fit.n_subjects = j.at("n_subjects").get<int>();
  fit.n_params = j.at("n_params").get<int>();
  fit.model = parse_model_config(j.at("model"), nullptr);
  fit.theta_u = from_vec(j.at("parameters").at("unconstrained").get<std::vector<double>>());
  {
    const auto& rows = j.at("covariance");
    fit.covariance.resize(rows.size(), rows.empty() ? 0 : rows[0].size());
    for (size_t r = 0; r < rows.size(); ++r)
      for (size_t c = 0; c < rows[r].size(); ++c) fit.covariance(r, c) = rows[r][c].get<double>();
    fit.cov_warning = j.at("cov_warning").get<bool>();
  }
  fit.loglik.value = j.at("loglik").at("value").get<double>();
  fit.loglik.se = j.at("loglik").at("mc_se").get<double>();
  fit.aic = j.at("aic").get<double>();
  fit.aic_se = j.at("aic_mc_se").get<double>();
  fit.bic = j.at("bic").get<double>();
  {
    Model smodel = parse_model_config(j.at("surrogate").at("model"), nullptr);
    Eigen::VectorXd stheta =
        from_vec(j.at("surrogate").at("unconstrained").get<std::vector<double>>());
    fit.surrogate = MarkovSurrogate(std::move(smodel), std::move(stheta));
  }
  fit.data_fingerprint = std::stoull(j.at("fingerprints").at("data").get<std::string>(), nullptr, 16);
  fit.surrogate_fingerprint =
      std::stoull(j.at("fingerprints").at("surrogate").get<std::string>(), nullptr, 16);
  return fit;
}

void write_trace_ndjson(const std::string& path, const std::vector<McemIteration>& trace) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trace: " + path);
  for (const auto& it : trace) {
    ordered_json j;
    j["iter"] = it.iter;
    j["q"] = it.q;
    j["dq"] = it.dq;
    j["ase"] = it.ase;
    j["accepted"] = it.accepted;
    j["stopped"] = it.stopped;
    j["n_paths"] = it.n_paths;
    j["ess"] = {{"min", it.ess_min},
                {"q25", it.ess_q25},
                {"med", it.ess_med},
                {"q75", it.ess_q75},
                {"max", it.ess_max}};
    j["khat"] = {{"med", std::isfinite(it.khat_med) ? it.khat_med : -1.0},
                 {"max", std::isfinite(it.khat_max) ? it.khat_max : -1.0}};
    out << j.dump() << "\n";
  }
}

void write_bootstrap_csv(const std::string& path, const BootstrapResult& boot) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write bootstrap draws: " + path);
  out << "replicate";
  for (const auto& n : boot.names) out << "," << n;
  out << "\n";
  for (int b = 0; b < boot.draws.rows(); ++b) {
    out << b + 1;
    for (int c = 0; c < boot.draws.cols(); ++c) out << "," << format_double(boot.draws(b, c));
    out << "\n";
  }
}

}  // namespace msm
