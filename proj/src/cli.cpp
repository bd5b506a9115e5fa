#include "psychoprobe/cli.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "psychoprobe/analysis.hpp"
#include "psychoprobe/digest.hpp"
#include "psychoprobe/error.hpp"
#include "psychoprobe/gateway.hpp"
#include "psychoprobe/persona.hpp"
#include "psychoprobe/prompt.hpp"
#include "psychoprobe/raw_response.hpp"
#include "psychoprobe/respondent.hpp"
#include "psychoprobe/response_parser.hpp"
#include "psychoprobe/scale_bank.hpp"
#include "psychoprobe/scores.hpp"

namespace psychoprobe {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

class PartialFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void log(std::ostream& err, const std::string& msg) {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  err << "[" << buf << "] " << msg << "\n";
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kMalformedFile, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string file_digest(const fs::path& path) { return sha256_hex(read_file(path)); }

json dir_digest(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  json out = json::object();
  for (const auto& f : files) out[f.filename().string()] = file_digest(f);
  return out;
}

std::ofstream open_out(const fs::path& path) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kInvalidInput, "cannot write " + path.string());
  return out;
}

// run_id: digest of the resolved configuration, which lists input file
// digests rather than paths so that moving inputs keeps the id.
std::string finalize_config(json& config) {
  const std::string id = sha256_hex(config.dump()).substr(0, 16);
  config["run_id"] = id;
  return id;
}

void write_json(const fs::path& path, const json& j) { open_out(path) << j.dump(2) << "\n"; }

// ---- batch construction shared by simulate and administer ----------------

struct BatchArgs {
  fs::path instruments = "data/instruments";
  fs::path prompt_template = "data/prompt_template.json";
  fs::path personas;
  fs::path silicon;
  fs::path silicon_templates = "data/silicon_templates.json";
  std::size_t n = 150;
  std::uint64_t seed = 1;
  std::string model = "gpt-3.5-turbo";
  double temperature = 0.0;
  int max_tokens = 0;  // 0: model profile default

  void add_to(CLI::App* app) {
    app->add_option("--instruments", instruments, "Instrument definition directory");
    app->add_option("--template", prompt_template, "Prompt template JSON");
    auto* p = app->add_option("--personas", personas, "Generic persona corpus");
    auto* s = app->add_option("--silicon", silicon, "Demographic record CSV");
    p->excludes(s);
    app->add_option("--silicon-templates", silicon_templates, "Sentence templates for --silicon");
    app->add_option("--n", n, "Number of personas to sample");
    app->add_option("--seed", seed, "Sampling and generator seed");
    app->add_option("--model", model, "Model name");
    app->add_option("--temperature", temperature, "Sampling temperature")->check(CLI::Range(0.0, 2.0));
    app->add_option("--max-tokens", max_tokens, "Completion token cap (default per model)")
        ->check(CLI::NonNegativeNumber);
  }
};

struct BuiltBatch {
  std::vector<Instrument> instruments;
  std::vector<PromptJob> jobs;
  json config;
};

BuiltBatch build(const BatchArgs& a) {
  if (a.personas.empty() == a.silicon.empty()) {
    throw Error(ErrorCode::kConfigInvalid, "exactly one of --personas or --silicon is required");
  }
  BuiltBatch b;
  b.instruments = load_instrument_dir(a.instruments);
  const PromptTemplate tmpl = load_prompt_template(a.prompt_template);
  std::vector<PersonaText> personas;
  json persona_cfg;
  if (!a.personas.empty()) {
    personas = load_generic_personas(a.personas, a.n, a.seed);
    persona_cfg = {{"kind", "generic"}, {"corpus", file_digest(a.personas)}};
  } else {
    const auto templates = load_silicon_templates(a.silicon_templates);
    for (const auto& rec : sample_records(a.silicon, a.n, a.seed, templates)) {
      personas.push_back(render_silicon_persona(rec, templates));
    }
    persona_cfg = {{"kind", "silicon"},
                   {"records", file_digest(a.silicon)},
                   {"templates", file_digest(a.silicon_templates)}};
  }
  persona_cfg["n"] = a.n;
  persona_cfg["seed"] = a.seed;
  ModelConfig mc = model_profile(a.model);
  mc.temperature = a.temperature;
  if (a.max_tokens > 0) mc.max_tokens = a.max_tokens;
  b.jobs = build_batch(tmpl, personas, b.instruments, {mc});
  b.config = {{"instruments", dir_digest(a.instruments)},
              {"template", file_digest(a.prompt_template)},
              {"personas", persona_cfg},
              {"model", {{"name", mc.model}, {"temperature", mc.temperature}, {"max_tokens", mc.max_tokens}}}};
  return b;
}

void write_run(const fs::path& out_dir, const std::vector<PromptJob>& jobs,
               const std::vector<RawResponse>& responses, const json& config,
               const std::string& run_id) {
  {
    auto f = open_out(out_dir / "batch.jsonl");
    write_batch_jsonl(f, jobs, run_id);
  }
  {
    auto f = open_out(out_dir / "responses.jsonl");
    for (const auto& r : responses) write_response_jsonl(f, r, run_id);
  }
  write_json(out_dir / "run_config.json", config);
}

std::size_t count_failures(const std::vector<RawResponse>& responses) {
  return static_cast<std::size_t>(
      std::count_if(responses.begin(), responses.end(), [](const RawResponse& r) { return !r.ok; }));
}

// ---- subcommands -----------------------------------------------------------

struct SimulateArgs {
  BatchArgs batch;
  fs::path out;
  fs::path synthetic_config;
  double loading = 0.8;
  double factor_correlation = 0.0;
  std::string wording = "bare-digit";
  double no_digit_fraction = 0.0;
  std::vector<double> thresholds{-1.5, -0.5, 0.5, 1.5};
};

int simulate(const SimulateArgs& a, std::ostream& out, std::ostream& err) {
  BuiltBatch b = build(a.batch);
  SyntheticRespondentConfig gen;
  json gen_cfg;
  if (!a.synthetic_config.empty()) {
    gen = load_synthetic_config(a.synthetic_config);
    gen_cfg = {{"config", file_digest(a.synthetic_config)}};
  } else {
    if (a.thresholds.size() != 4) throw Error(ErrorCode::kConfigInvalid, "--thresholds takes 4 values");
    SyntheticSpec spec;
    spec.loading = a.loading;
    spec.factor_correlation = a.factor_correlation;
    std::copy(a.thresholds.begin(), a.thresholds.end(), spec.thresholds.begin());
    spec.wording = parse_wording_mode(a.wording);
    spec.no_digit_fraction = a.no_digit_fraction;
    spec.seed = a.batch.seed;
    gen = synthetic_config(b.instruments, spec);
    gen_cfg = {{"loading", a.loading},
               {"factor_correlation", a.factor_correlation},
               {"thresholds", a.thresholds},
               {"wording", a.wording},
               {"no_digit_fraction", a.no_digit_fraction},
               {"seed", a.batch.seed}};
  }
  json config = b.config;
  config["command"] = "simulate";
  config["generator"] = gen_cfg;
  const std::string run_id = finalize_config(config);

  const SyntheticRespondent respondent(std::move(gen));
  const auto responses = administer(b.jobs, respondent);
  write_run(a.out, b.jobs, responses, config, run_id);
  log(err, "simulate: " + std::to_string(responses.size()) + " responses written to " + a.out.string());
  out << "run_id " << run_id << "\n" << responses.size() << " responses\n";
  return kExitOk;
}

struct AdministerArgs {
  BatchArgs batch;
  fs::path out;
  std::string endpoint = kDefaultEndpointUrl;
  fs::path replay_archive;
  fs::path cache_dir;
  std::size_t concurrency = 4;
  double rate = 0.0;
  int max_retries = 3;
};

int administer_cmd(const AdministerArgs& a, std::ostream& out, std::ostream& err) {
  BuiltBatch b = build(a.batch);
  json config = b.config;
  config["command"] = "administer";
  std::vector<RawResponse> responses;
  if (!a.replay_archive.empty()) {
    config["respondent"] = {{"kind", "replay"}, {"archive", file_digest(a.replay_archive)}};
    const std::string run_id = finalize_config(config);
    ReplayResult res = replay(b.jobs, a.replay_archive);
    if (res.extra > 0) log(err, "replay: ignored " + std::to_string(res.extra) + " archive entries with no job");
    responses = std::move(res.responses);
    write_run(a.out, b.jobs, responses, config, run_id);
    out << "run_id " << run_id << "\n";
  } else {
    config["respondent"] = {{"kind", "endpoint"}, {"url", a.endpoint}, {"max_retries", a.max_retries}};
    const std::string run_id = finalize_config(config);
    const EndpointRespondent respondent(endpoint_config_from_env(a.endpoint));
    AdministerOptions opts;
    opts.limits.max_in_flight = a.concurrency;
    opts.limits.requests_per_second = a.rate;
    opts.limits.max_retries = a.max_retries;
    if (!a.cache_dir.empty()) opts.cache_dir = a.cache_dir;
    std::size_t done = 0;
    opts.on_response = [&](const RawResponse& r) {
      if (++done % 500 == 0 || !r.ok) {
        log(err, std::to_string(done) + "/" + std::to_string(b.jobs.size()) +
                     (r.ok ? "" : " failed " + r.job_id + " (" + r.failure_reason + ")"));
      }
    };
    AdministerStats stats;
    responses = administer(b.jobs, respondent, opts, &stats);
    write_run(a.out, b.jobs, responses, config, run_id);
    log(err, "administer: " + std::to_string(stats.remote_calls) + " remote calls, " +
                 std::to_string(stats.cache_hits) + " cache hits, " + std::to_string(stats.retries) +
                 " retries");
    out << "run_id " << run_id << "\n";
  }
  out << responses.size() << " responses\n";
  if (const auto failed = count_failures(responses)) {
    throw PartialFailure(std::to_string(failed) + " of " + std::to_string(responses.size()) +
                         " jobs failed; failure records written");
  }
  return kExitOk;
}

struct ParseArgs {
  fs::path batch, responses, instruments = "data/instruments", out;
  bool strict = false;
};

int parse_cmd(const ParseArgs& a, std::ostream& out, std::ostream& err) {
  std::ifstream bin(a.batch);
  if (!bin) throw Error(ErrorCode::kMalformedFile, "cannot open " + a.batch.string());
  const BatchFile batch = read_batch_jsonl(bin);
  std::ifstream rin(a.responses);
  if (!rin) throw Error(ErrorCode::kMalformedFile, "cannot open " + a.responses.string());
  const ResponseArchive archive = read_responses_jsonl(rin);
  if (archive.run_id != batch.run_id) {
    throw Error(ErrorCode::kRunMismatch,
                "batch run " + batch.run_id + " but responses run " + archive.run_id);
  }
  std::map<std::string, Instrument> by_id;
  for (auto& inst : load_instrument_dir(a.instruments)) by_id.emplace(inst.id, std::move(inst));
  std::map<std::string, const PromptJob*> jobs;
  for (const auto& j : batch.jobs) jobs.emplace(j.job_id, &j);

  ParseOptions opts;
  opts.strict = a.strict;
  std::vector<ParsedResponse> parsed;
  for (const auto& r : archive.responses) {
    auto j = jobs.find(r.job_id);
    if (j == jobs.end()) throw Error(ErrorCode::kJobMismatch, "response for unknown job " + r.job_id);
    auto inst = by_id.find(j->second->instrument_id);
    if (inst == by_id.end()) {
      throw Error(ErrorCode::kItemInstrumentMismatch, "unknown instrument " + j->second->instrument_id);
    }
    parsed.push_back(parse_raw_response(r, inst->second.range, opts));
  }
  const ResponseMatrix matrix = build_response_matrix(parsed, batch.jobs, batch.run_id);
  {
    auto f = open_out(a.out / "matrix.csv");
    write_matrix_csv(f, matrix);
  }
  const auto& c = matrix.counts;
  json summary = {{"run_id", batch.run_id},
                  {"total", c.total()},
                  {"parsed", c.parsed},
                  {"missing", c.total() - c.parsed},
                  {"no_digit", c.no_digit},
                  {"out_of_range", c.out_of_range},
                  {"failed_job", c.failed_job},
                  {"first_token_digit", c.first_token_digit},
                  {"strict", a.strict}};
  write_json(a.out / "dispositions.json", summary);
  log(err, "parse: " + std::to_string(c.parsed) + " of " + std::to_string(c.total()) + " parsed");
  out << "run_id " << batch.run_id << "\n"
      << "parsed " << c.parsed << ", missing " << c.total() - c.parsed << " (no digit " << c.no_digit
      << ", out of range " << c.out_of_range << ", failed job " << c.failed_job << ")\n";
  return kExitOk;
}

struct ScoreArgs {
  fs::path matrix, instruments = "data/instruments", out;
  double min_fraction = 1.0;
};

int score_cmd(const ScoreArgs& a, std::ostream& out, std::ostream& err) {
  std::ifstream in(a.matrix);
  if (!in) throw Error(ErrorCode::kMalformedFile, "cannot open " + a.matrix.string());
  const ResponseMatrix matrix = read_matrix_csv(in);
  const auto instruments = load_instrument_dir(a.instruments);
  MissingPolicy policy;
  policy.min_fraction = a.min_fraction;
  const ScoreTable table = score_matrix(matrix, instruments, policy);
  {
    auto f = open_out(a.out / "scores.csv");
    write_scores_csv(f, table);
  }
  std::size_t missing = 0;
  for (const auto& r : table.rows) missing += !r.score.score;
  log(err, "score: " + std::to_string(table.rows.size()) + " subscale scores");
  out << "run_id " << table.run_id << "\n"
      << table.rows.size() << " subscale scores, " << missing << " missing\n";
  return kExitOk;
}

struct AnalyzeArgs {
  fs::path matrix, scores, instruments = "data/instruments", out;
  fs::path silicon, silicon_templates = "data/silicon_templates.json", compare_scores;
  std::string missing_policy = "listwise";
  std::uint64_t seed = 20240501;
  bool no_robust_se = false;
};

ScoreTable read_scores(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMalformedFile, "cannot open " + path.string());
  return read_scores_csv(in);
}

int analyze_cmd(const AnalyzeArgs& a, std::ostream& out, std::ostream& err) {
  std::ifstream in(a.matrix);
  if (!in) throw Error(ErrorCode::kMalformedFile, "cannot open " + a.matrix.string());
  const ResponseMatrix matrix = read_matrix_csv(in);
  const ScoreTable scores = read_scores(a.scores);
  const auto instruments = load_instrument_dir(a.instruments);

  AnalysisOptions opts;
  opts.reliability_missing =
      a.missing_policy == "pairwise" ? MissingData::kPairwise : MissingData::kListwise;
  opts.cfa.seed = a.seed;
  opts.robust_se = !a.no_robust_se;

  std::optional<HumanReference> human;
  if (!a.silicon.empty()) {
    const auto templates = load_silicon_templates(a.silicon_templates);
    human = human_reference(read_silicon_table(a.silicon, templates).records, templates);
  }
  std::optional<ScoreTable> comparison;
  if (!a.compare_scores.empty()) {
    if (!human) throw Error(ErrorCode::kConfigInvalid, "--compare-scores needs --silicon");
    comparison = read_scores(a.compare_scores);
  }
  const AnalysisReport rep = analyze(matrix, scores, instruments, opts, human ? &*human : nullptr,
                                     comparison ? &*comparison : nullptr);
  write_json(a.out / "analysis.json", report_to_json(rep));
  const auto tables = write_report_tables(rep, a.out);
  std::size_t flagged = 0;
  for (const auto& r : rep.reliability) flagged += r.below_threshold;
  std::size_t failed = 0;
  for (const auto& c : rep.cfa) failed += !c.failure.empty();
  log(err, "analyze: wrote analysis.json and " + std::to_string(tables.size()) + " tables");
  out << "run_id " << rep.run_id << "\n"
      << flagged << " of " << rep.reliability.size() << " subscales below "
      << apa_number(opts.threshold) << "\n"
      << failed << " of " << rep.cfa.size() << " CFA models failed\n";
  return kExitOk;
}

struct ReportArgs {
  fs::path analysis, scores, matrix, out;
};

std::string artifact_run_id(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMalformedFile, "cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  const std::string tag = "# run_id=";
  if (line.rfind(tag, 0) != 0) throw Error(ErrorCode::kSchemaMismatch, path.string() + " has no run_id");
  return line.substr(tag.size());
}

int report_cmd(const ReportArgs& a, std::ostream& out, std::ostream& /*err*/) {
  const ReportSummary summary = read_report_json(a.analysis);
  for (const auto& other : {a.scores, a.matrix}) {
    if (other.empty()) continue;
    const std::string id = artifact_run_id(other);
    if (id != summary.run_id) {
      throw Error(ErrorCode::kRunMismatch, other.string() + " belongs to run " + id +
                                               ", analysis to run " + summary.run_id);
    }
  }
  const std::string text = render_report(summary.document);
  out << text;
  if (!a.out.empty()) open_out(a.out / "report.txt") << text;
  return kExitOk;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Questionnaire administration and psychometric analysis for language-model personas"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Answer a batch with the synthetic latent-trait respondent");
  sim.batch.add_to(s);
  s->add_option("--out", sim.out, "Output directory")->required();
  s->add_option("--synthetic-config", sim.synthetic_config, "Generator JSON (overrides the flags below)");
  s->add_option("--loading", sim.loading, "Loading of every item on its subscale factor")
      ->check(CLI::Range(-1.0, 1.0));
  s->add_option("--factor-correlation", sim.factor_correlation, "Correlation between subscale factors");
  s->add_option("--thresholds", sim.thresholds, "Four cut points")->expected(4);
  s->add_option("--wording", sim.wording, "bare-digit | embedded-digit | no-digit-fraction");
  s->add_option("--no-digit-fraction", sim.no_digit_fraction, "Share of answers without a digit")
      ->check(CLI::Range(0.0, 1.0));

  AdministerArgs adm;
  auto* ad = app.add_subcommand("administer", "Send a batch to a chat-completion endpoint or replay an archive");
  adm.batch.add_to(ad);
  ad->add_option("--out", adm.out, "Output directory")->required();
  ad->add_option("--endpoint", adm.endpoint, "Chat-completion URL");
  ad->add_option("--replay", adm.replay_archive, "Serve responses from this JSONL archive");
  ad->add_option("--cache-dir", adm.cache_dir, "Response cache directory");
  ad->add_option("--concurrency", adm.concurrency, "Maximum requests in flight")->check(CLI::PositiveNumber);
  ad->add_option("--rate", adm.rate, "Requests per second (0: unlimited)")->check(CLI::NonNegativeNumber);
  ad->add_option("--max-retries", adm.max_retries, "Retries per job after a transient failure")
      ->check(CLI::NonNegativeNumber);

  ParseArgs par;
  auto* p = app.add_subcommand("parse", "Turn raw responses into a response matrix");
  p->add_option("--batch", par.batch, "batch.jsonl")->required();
  p->add_option("--responses", par.responses, "responses.jsonl")->required();
  p->add_option("--instruments", par.instruments, "Instrument definition directory");
  p->add_option("--out", par.out, "Output directory")->required();
  p->add_flag("--strict", par.strict, "Skip digits that are out of range or part of a number");

  ScoreArgs sc;
  auto* sco = app.add_subcommand("score", "Score subscales from a response matrix");
  sco->add_option("--matrix", sc.matrix, "matrix.csv")->required();
  sco->add_option("--instruments", sc.instruments, "Instrument definition directory");
  sco->add_option("--out", sc.out, "Output directory")->required();
  sco->add_option("--min-fraction", sc.min_fraction, "Share of a subscale's items needed for a score")
      ->check(CLI::Range(0.0, 1.0));

  AnalyzeArgs an;
  auto* a = app.add_subcommand("analyze", "Reliability, validity, CFA and trait bias");
  a->add_option("--matrix", an.matrix, "matrix.csv")->required();
  a->add_option("--scores", an.scores, "scores.csv")->required();
  a->add_option("--instruments", an.instruments, "Instrument definition directory");
  a->add_option("--out", an.out, "Output directory")->required();
  a->add_option("--silicon", an.silicon, "Demographic record CSV with human trait scores");
  a->add_option("--silicon-templates", an.silicon_templates, "Sentence templates for --silicon");
  a->add_option("--compare-scores", an.compare_scores, "scores.csv of a second model for Welch tests");
  a->add_option("--missing-policy", an.missing_policy, "Item covariance for reliability")
      ->check(CLI::IsMember({"listwise", "pairwise"}));
  a->add_option("--seed", an.seed, "CFA restart seed");
  a->add_flag("--no-robust-se", an.no_robust_se, "Skip sandwich standard errors");

  ReportArgs rp;
  auto* r = app.add_subcommand("report", "Render an analysis as text");
  r->add_option("--analysis", rp.analysis, "analysis.json")->required();
  r->add_option("--scores", rp.scores, "scores.csv to check against the analysis run");
  r->add_option("--matrix", rp.matrix, "matrix.csv to check against the analysis run");
  r->add_option("--out", rp.out, "Also write report.txt here");

  std::vector<const char*> argv{"psychoprobe"};
  for (const auto& x : args) argv.push_back(x.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitInvalid;
  }

  try {
    if (s->parsed()) return simulate(sim, out, err);
    if (ad->parsed()) return administer_cmd(adm, out, err);
    if (p->parsed()) return parse_cmd(par, out, err);
    if (sco->parsed()) return score_cmd(sc, out, err);
    if (a->parsed()) return analyze_cmd(an, out, err);
    if (r->parsed()) return report_cmd(rp, out, err);
  } catch (const PartialFailure& e) {
    err << "partial failure: " << e.what() << "\n";
    return kExitPartial;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::kEndpointUnreachable ? kExitPartial : kExitInvalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  }
  err << "error: UnknownCommand\n";
  return kExitInvalid;
}

}  // namespace psychoprobe
