#include "vgkit/cli.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "fanout.hpp"
#include "vgkit/attnviz.hpp"
#include "vgkit/core.hpp"
#include "vgkit/errors.hpp"
#include "vgkit/eval.hpp"
#include "vgkit/geom.hpp"
#include "vgkit/grpo.hpp"
#include "vgkit/parse.hpp"
#include "vgkit/reward.hpp"
#include "vgkit/rollout.hpp"
#include "vgkit/segbridge.hpp"

namespace vgkit {

namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_stop_signal(int) { g_stop.store(true); }

// ---------------------------------------------------------------- shared option groups

struct EndpointOpts {
  std::string url;
  std::string auth_env;
  double timeout_s = 60.0;
  int max_retries = 3;
  int backoff_ms = 200;
  int max_in_flight = 4;
  std::string model = "default";
  double temperature = 1.0;
  double top_p = 1.0;
  int max_tokens = 1024;

  HttpEndpoint http() const {
    HttpEndpoint ep;
    ep.base_url = url;
    ep.auth_env = auth_env;
    ep.timeout_s = timeout_s;
    ep.max_retries = max_retries;
    ep.backoff_initial_ms = backoff_ms;
    return ep;
  }

  InferenceEndpoint inference() const {
    InferenceEndpoint ep;
    ep.http = http();
    ep.model = model;
    ep.temperature = temperature;
    ep.top_p = top_p;
    ep.max_tokens = max_tokens;
    ep.max_in_flight = max_in_flight;
    return ep;
  }
};

void add_http_opts(CLI::App* sub, EndpointOpts& o) {
  sub->add_option("--endpoint", o.url, "Base URL, e.g. http://127.0.0.1:8000/v1")->required();
  sub->add_option("--auth-env", o.auth_env, "Environment variable holding a bearer token");
  sub->add_option("--timeout", o.timeout_s, "Per-attempt timeout in seconds")->capture_default_str();
  sub->add_option("--max-retries", o.max_retries, "Retries on connection errors, 429 and 5xx")->capture_default_str();
  sub->add_option("--backoff-ms", o.backoff_ms, "Initial retry backoff; doubles per retry")->capture_default_str();
  sub->add_option("--max-in-flight", o.max_in_flight, "Concurrent requests")->capture_default_str();
}

void add_chat_opts(CLI::App* sub, EndpointOpts& o) {
  add_http_opts(sub, o);
  sub->add_option("--model", o.model, "Model name sent with each request")->capture_default_str();
  sub->add_option("--temperature", o.temperature, "Sampling temperature")->capture_default_str();
  sub->add_option("--top-p", o.top_p, "Nucleus sampling mass")->capture_default_str();
  sub->add_option("--max-tokens", o.max_tokens, "Completion length limit")->capture_default_str();
}

struct PromptOpts {
  std::string kind = "i2e";
  std::string coord = "absolute_px";
  std::string shots_file;
  bool allow_plain_shots = false;
  std::string templates_file;

  std::optional<TemplateSet> templates;

  PromptTemplate make_template() const {
    std::vector<Shot> shots;
    if (!shots_file.empty()) {
      const Json j = Json::parse(read_file(shots_file));
      if (!j.is_array()) throw ValidationError(shots_file + ": shots must be a JSON array");
      for (const Json& s : j) {
        if (!s.is_object() || !s.contains("query") || !s.contains("answer")) {
          throw ValidationError(shots_file + ": every shot needs 'query' and 'answer'");
        }
        shots.push_back(Shot{s["query"].get<std::string>(), s["answer"].get<std::string>()});
      }
    }
    return PromptTemplate::make(parse_prompt_kind(kind), std::move(shots), allow_plain_shots);
  }

  const TemplateSet* load_templates() {
    if (templates_file.empty()) return nullptr;
    templates = TemplateSet::load(templates_file);
    return &*templates;
  }

  CoordMode coord_mode() const { return parse_coord_mode(coord); }
};

void add_prompt_opts(CLI::App* sub, PromptOpts& o) {
  sub->add_option("--template", o.kind, "Prompt kind: plain, cot or i2e")
      ->check(CLI::IsMember({"plain", "cot", "i2e"}))
      ->capture_default_str();
  sub->add_option("--coord", o.coord, "Box coordinate convention: absolute_px, norm_1000 or unit_interval")
      ->check(CLI::IsMember({"absolute_px", "norm_1000", "unit_interval"}))
      ->capture_default_str();
  sub->add_option("--shots", o.shots_file, "JSON array of {\"query\", \"answer\"} exemplars")
      ->check(CLI::ExistingFile);
  sub->add_flag("--allow-plain-shots", o.allow_plain_shots, "Permit exemplars with the plain template");
  sub->add_option("--templates", o.templates_file, "Template document overriding the built-in one")
      ->check(CLI::ExistingFile);
}

struct RewardOpts {
  std::string config_file;
  std::vector<std::string> overrides;

  RewardConfig make() const {
    RewardConfig cfg = config_file.empty() ? RewardConfig{} : RewardConfig::load(config_file);
    for (const std::string& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ArgumentError("--set expects key=value, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
  }
};

void add_reward_opts(CLI::App* sub, RewardOpts& o) {
  sub->add_option("--reward-config", o.config_file, "Flat JSON reward configuration")->check(CLI::ExistingFile);
  sub->add_option("--set", o.overrides, "Reward override key=value (repeatable), e.g. iou_threshold=0.6");
}

const GroundingRecord& find_record(const std::vector<GroundingRecord>& records, const std::string& id) {
  for (const auto& r : records) {
    if (r.id == id) return r;
  }
  throw ValidationError("record id '" + id + "' not found in dataset");
}

std::string read_input(const std::string& path) {
  if (path == "-") {
    std::ostringstream ss;
    ss << std::cin.rdbuf();
    return ss.str();
  }
  return read_file(path);
}

std::string dataset_digest(const std::string& path) { return sha256_hex(read_file(path)); }

// Writes through a temporary name so a watcher never sees a partial file.
void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  write_file(tmp, content);
  std::filesystem::rename(tmp, path);
}

int finish_run(const char* what, const RunSummary& s, std::ostream& out, std::ostream& err) {
  out << what << ": " << (s.total - s.failed) << "/" << s.total << " records succeeded";
  if (s.failed > 0) out << ", " << s.failed << " failed";
  out << "\n";
  if (s.threshold_breached()) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%s: failure share %.4f exceeds the allowed %.4f\n", what,
                  static_cast<double>(s.failed) / static_cast<double>(s.total), s.max_failure_fraction);
    err << buf;
    return kExitPartialFailure;
  }
  return kExitOk;
}

Heatmap mask_image(const RasterMask& m) {
  Heatmap h{m.width(), m.height(), std::vector<double>(static_cast<std::size_t>(m.width()) * m.height())};
  for (int r = 0; r < m.height(); ++r) {
    for (int c = 0; c < m.width(); ++c) h.values[static_cast<std::size_t>(r) * m.width() + c] = m.at(r, c);
  }
  return h;
}

void serve_until_stopped() {
  auto prev_int = std::signal(SIGINT, on_stop_signal);
  auto prev_term = std::signal(SIGTERM, on_stop_signal);
  while (!g_stop.load()) std::this_thread::sleep_for(std::chrono::milliseconds(20));
  std::signal(SIGINT, prev_int);
  std::signal(SIGTERM, prev_term);
}

constexpr const char* kDataSchema =
    "Dataset file: JSON lines, one record per line:\n"
    "  {\"id\", \"image_ref\", \"image_w\", \"image_h\", \"category\", \"implicit_query\",\n"
    "   \"explicit_query\", \"gt_box\": [x1,y1,x2,y2], \"gt_mask\": [[[x,y],...],...], \"split\"}\n"
    "  category: traffic|disaster|security|sport|social_activity|productive_activity; split: train|test\n";

constexpr const char* kPredSchema =
    "Predictions file: JSON lines:\n"
    "  {\"record_id\", \"query_kind\": explicit|implicit, \"raw_text\", \"box\": [x1,y1,x2,y2] | null,\n"
    "   \"mask\"?: {\"width\", \"height\", \"counts\": [...]}}\n";

constexpr const char* kGroupSchema =
    "Groups file: JSON lines, one group per line:\n"
    "  {\"prompt_id\", \"gt\": {\"explicit\", \"box\"}, \"responses\": [{\"index\", \"raw_text\", \"reward\",\n"
    "   \"advantage\", \"breakdown\"}, ...]}\n"
    "Batch file: JSON lines sorted by (prompt_id, response_index):\n"
    "  {\"version\":1, \"prompt_id\", \"response_index\", \"raw_text\", \"reward\", \"advantage\", \"gt\"}\n";

}  // namespace

void request_stop() { g_stop.store(true); }

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"vgkit: implicit-to-explicit visual grounding toolkit"};
  app.name("vgkit");
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  // validate-data
  std::string vd_data, vd_preds;
  auto* validate_data = app.add_subcommand("validate-data", "Check a dataset and/or predictions file");
  validate_data->add_option("--data", vd_data, "Dataset JSONL")->check(CLI::ExistingFile);
  validate_data->add_option("--preds", vd_preds, "Predictions JSONL")->check(CLI::ExistingFile);
  validate_data->footer(std::string(kDataSchema) + kPredSchema);

  // render-prompt
  PromptOpts rp_prompt;
  std::string rp_query, rp_data, rp_record, rp_kind = "implicit";
  auto* render = app.add_subcommand("render-prompt", "Print the prompt for a query or a dataset record");
  add_prompt_opts(render, rp_prompt);
  render->add_option("--query", rp_query, "Query text");
  render->add_option("--data", rp_data, "Dataset JSONL (with --record-id)")->check(CLI::ExistingFile);
  render->add_option("--record-id", rp_record, "Record whose query is rendered");
  render->add_option("--query-kind", rp_kind, "explicit or implicit")
      ->check(CLI::IsMember({"explicit", "implicit"}))
      ->capture_default_str();
  render->footer(
      "Shots file: JSON array of {\"query\": ..., \"answer\": ...}.\n"
      "Template document: {\"version\", \"shot_format\", \"coord_notes\": {mode: text}, \"templates\": {kind: text}}\n");

  // parse
  std::string pa_reply, pa_kind = "i2e";
  auto* parse = app.add_subcommand("parse", "Split a model reply into segments and boxes");
  parse->add_option("--reply", pa_reply, "Reply text file, or - for stdin")->required();
  parse->add_option("--template", pa_kind, "plain, cot or i2e")
      ->check(CLI::IsMember({"plain", "cot", "i2e"}))
      ->capture_default_str();
  parse->footer("Output: JSON {think, explicit, answer, boxes_raw, overall_format_ok, box_format_ok}.\n");

  // score
  PromptOpts sc_prompt;
  RewardOpts sc_reward;
  std::string sc_reply, sc_record, sc_data;
  auto* score = app.add_subcommand("score", "Score one reply against a dataset record");
  score->add_option("--reply", sc_reply, "Reply text file, or - for stdin")->required();
  score->add_option("--record-id", sc_record, "Record id")->required();
  score->add_option("--data", sc_data, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  add_prompt_opts(score, sc_prompt);
  add_reward_opts(score, sc_reward);
  score->footer(std::string(kDataSchema) +
                "Reward config keys: iou_threshold, l1_threshold_px, sim_threshold, w_format, w_perception,\n"
                "  w_reasoning, enable_format, enable_perception, enable_reasoning, l1_reduction (mean|sum),\n"
                "  jaccard_mode (words|char_ngrams), ngram_n\n");

  // rollout
  EndpointOpts ro_ep;
  PromptOpts ro_prompt;
  RewardOpts ro_reward;
  std::string ro_data, ro_groups, ro_batch, ro_errors;
  int ro_group_size = 8;
  double ro_max_fail = 0.1;
  auto* rollout = app.add_subcommand("rollout", "Sample N replies per record, score them and write a GRPO batch");
  rollout->add_option("--data", ro_data, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  add_chat_opts(rollout, ro_ep);
  add_prompt_opts(rollout, ro_prompt);
  add_reward_opts(rollout, ro_reward);
  rollout->add_option("--group-size,-n", ro_group_size, "Replies per record")->capture_default_str();
  rollout->add_option("--groups-out", ro_groups, "Scored groups JSONL")->required();
  rollout->add_option("--batch-out", ro_batch, "Training batch JSONL")->required();
  rollout->add_option("--errors-out", ro_errors, "Failed records JSONL");
  rollout->add_option("--max-failure-fraction", ro_max_fail, "Exit 3 above this failed share")->capture_default_str();
  rollout->footer(std::string(kDataSchema) + kGroupSchema);

  // grpo-batch
  std::string gb_groups, gb_out;
  GrpoConfig gb_cfg;
  auto* grpo_batch = app.add_subcommand("grpo-batch", "Recompute advantages and flatten groups into a batch");
  grpo_batch->add_option("--groups", gb_groups, "Groups JSONL")->required()->check(CLI::ExistingFile);
  grpo_batch->add_option("--out", gb_out, "Batch JSONL")->required();
  grpo_batch->add_option("--group-size,-n", gb_cfg.group_size, "Expected replies per group")->capture_default_str();
  grpo_batch->add_option("--advantage-eps", gb_cfg.advantage_eps, "Std stabilizer")->capture_default_str();
  grpo_batch->footer(kGroupSchema);

  // infer
  EndpointOpts in_ep;
  PromptOpts in_prompt;
  std::string in_data, in_out, in_errors, in_kind = "implicit";
  double in_max_fail = 0.1;
  auto* infer = app.add_subcommand("infer", "Greedy-decode one reply per record and write predictions");
  infer->add_option("--data", in_data, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  add_chat_opts(infer, in_ep);
  add_prompt_opts(infer, in_prompt);
  infer->add_option("--query-kind", in_kind, "explicit or implicit")
      ->check(CLI::IsMember({"explicit", "implicit"}))
      ->capture_default_str();
  infer->add_option("--out", in_out, "Predictions JSONL")->required();
  infer->add_option("--errors-out", in_errors, "Failed records JSONL");
  infer->add_option("--max-failure-fraction", in_max_fail, "Exit 3 above this failed share")->capture_default_str();
  infer->footer(std::string(kDataSchema) + kPredSchema);

  // eval
  std::string ev_preds, ev_data, ev_report, ev_kind, ev_label = "model";
  double ev_thr = 0.5;
  bool ev_pixel = false, ev_coverage = false;
  auto* eval = app.add_subcommand("eval", "Acc@IoU per category with macro average");
  eval->add_option("--preds", ev_preds, "Predictions JSONL")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", ev_data, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  eval->add_option("--thr", ev_thr, "IoU threshold (strict >)")->capture_default_str();
  eval->add_option("--query-kind", ev_kind, "Score only predictions of this kind")
      ->check(CLI::IsMember({"explicit", "implicit"}));
  eval->add_option("--report", ev_report, "JSON report path");
  eval->add_option("--label", ev_label, "Row label in the printed grid")->capture_default_str();
  eval->add_flag("--pixel", ev_pixel, "Also compute mIoU/oIoU from predicted masks");
  eval->add_flag("--coverage", ev_coverage, "Also compute the dataset coverage histogram");
  eval->footer(std::string(kDataSchema) + kPredSchema);

  // eval-hard
  std::string eh_explicit, eh_implicit, eh_data, eh_report;
  double eh_thr = 0.5;
  auto* eval_hard = app.add_subcommand("eval-hard", "Accuracy requiring both query kinds to be correct");
  eval_hard->add_option("--explicit", eh_explicit, "Explicit-query predictions")->required()->check(CLI::ExistingFile);
  eval_hard->add_option("--implicit", eh_implicit, "Implicit-query predictions")->required()->check(CLI::ExistingFile);
  eval_hard->add_option("--data", eh_data, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  eval_hard->add_option("--thr", eh_thr, "IoU threshold (strict >)")->capture_default_str();
  eval_hard->add_option("--report", eh_report, "JSON report path");
  eval_hard->footer(std::string(kDataSchema) + kPredSchema);

  // consistency
  std::string co_explicit, co_implicit;
  double co_thr = 0.5;
  auto* consist = app.add_subcommand("consistency", "Share of records whose two predictions agree");
  consist->add_option("--explicit", co_explicit, "Explicit-query predictions")->required()->check(CLI::ExistingFile);
  consist->add_option("--implicit", co_implicit, "Implicit-query predictions")->required()->check(CLI::ExistingFile);
  consist->add_option("--thr", co_thr, "Pairwise IoU threshold (>=)")->capture_default_str();
  consist->footer(kPredSchema);

  // seg
  EndpointOpts sg_ep;
  std::vector<double> sg_box;
  std::vector<int> sg_size;
  std::string sg_image_ref, sg_image_file, sg_mode = "box_point", sg_out, sg_pgm, sg_preds, sg_data, sg_errors;
  double sg_max_fail = 0.1;
  auto* seg = app.add_subcommand("seg", "Turn boxes into masks through a POST /segment service");
  add_http_opts(seg, sg_ep);
  seg->add_option("--mode", sg_mode, "box or box_point")
      ->check(CLI::IsMember({"box", "box_point"}))
      ->capture_default_str();
  seg->add_option("--box", sg_box, "Single request: x1,y1,x2,y2")->delimiter(',')->expected(4);
  seg->add_option("--image-size", sg_size, "Single request: width,height")->delimiter(',')->expected(2);
  seg->add_option("--image-ref", sg_image_ref, "Single request: image reference");
  seg->add_option("--image-file", sg_image_file, "Single request: image sent inline")->check(CLI::ExistingFile);
  seg->add_option("--pgm", sg_pgm, "Single request: also write the mask as PGM");
  seg->add_option("--preds", sg_preds, "Batch: predictions to segment")->check(CLI::ExistingFile);
  seg->add_option("--data", sg_data, "Batch: dataset with image refs and sizes")->check(CLI::ExistingFile);
  seg->add_option("--errors-out", sg_errors, "Batch: failed records JSONL");
  seg->add_option("--max-failure-fraction", sg_max_fail, "Batch: exit 3 above this failed share")
      ->capture_default_str();
  seg->add_option("--out", sg_out, "Single: RLE JSON; batch: predictions JSONL with masks")->required();
  seg->footer(
      "Wire protocol: POST {endpoint}/segment\n"
      "  request  {\"image_ref\" | \"image\" (base64), \"image_size\"?: [w,h], \"box\": [x1,y1,x2,y2],\n"
      "            \"point\"?: [x,y], \"mode\": \"box\"|\"box_point\"}\n"
      "  response {\"width\", \"height\", \"rle\": {\"width\", \"height\", \"counts\"}}\n"
      "  error    4xx {\"error\": {\"field\", \"message\"}}\n");

  // seg-mock-serve
  std::string sm_host = "127.0.0.1", sm_port_file;
  int sm_port = 0;
  auto* seg_mock = app.add_subcommand("seg-mock-serve", "Serve the mock segmentation protocol until interrupted");
  seg_mock->add_option("--host", sm_host, "Bind address")->capture_default_str();
  seg_mock->add_option("--port", sm_port, "Port, 0 for any free port")->capture_default_str();
  seg_mock->add_option("--port-file", sm_port_file, "Write the bound port here once listening");

  // infer-mock-serve
  std::string im_host = "127.0.0.1", im_port_file, im_script, im_log;
  int im_port = 0;
  auto* infer_mock = app.add_subcommand("infer-mock-serve", "Serve scripted chat completions until interrupted");
  infer_mock->add_option("--script", im_script, "Mock script JSON")->required()->check(CLI::ExistingFile);
  infer_mock->add_option("--host", im_host, "Bind address")->capture_default_str();
  infer_mock->add_option("--port", im_port, "Port, 0 for any free port")->capture_default_str();
  infer_mock->add_option("--port-file", im_port_file, "Write the bound port here once listening");
  infer_mock->add_option("--log", im_log, "Request log JSONL, written on shutdown");
  infer_mock->footer(
      "Script: {\"strict\": true, \"default_replies\": [...], \"rules\": [{\"contains\"?: substring,\n"
      "  \"index\"?: request number, \"replies\": [...], \"fail_times\"?: k, \"fail_status\"?: 503,\n"
      "  \"delay_ms\"?: ms}]}. The first matching rule answers; choice i gets replies[i % len].\n"
      "Serves POST /v1/chat/completions and /chat/completions.\n");

  // attn-curve
  std::string ac_trace, ac_out, ac_peaks_out;
  int ac_window = 5;
  auto* attn_curve = app.add_subcommand("attn-curve", "Per-step attention shares of image, query and generated tokens");
  attn_curve->add_option("--trace", ac_trace, "Attention trace file")->required()->check(CLI::ExistingFile);
  attn_curve->add_option("--out", ac_out, "CSV output (stdout when omitted)");
  attn_curve->add_option("--peaks-out", ac_peaks_out, "JSON list of image-ratio peak steps");
  attn_curve->add_option("--peak-window", ac_window, "Odd peak window")->capture_default_str();
  attn_curve->footer(
      "Trace file: a JSON header {num_steps, context_len[], image_range:[b,e], query_range:[b,e], grid_h,\n"
      "  grid_w, image_w, image_h, tokens?}, a blank line, then little-endian float32 attention rows.\n");

  // attn-map
  std::string am_trace, am_out;
  int am_step = 0;
  bool am_grid = false;
  auto* attn_map = app.add_subcommand("attn-map", "Attention heatmap over the image for one generated step");
  attn_map->add_option("--trace", am_trace, "Attention trace file")->required()->check(CLI::ExistingFile);
  attn_map->add_option("--step", am_step, "Generated step index")->required();
  attn_map->add_option("--out", am_out, "PGM output")->required();
  attn_map->add_flag("--grid", am_grid, "Write the patch grid without upsampling");

  // coverage-stats
  std::string cs_data, cs_ratios, cs_out;
  auto* coverage = app.add_subcommand("coverage-stats", "Histogram of target mask area over image area");
  coverage->add_option("--data", cs_data, "Dataset JSONL")->check(CLI::ExistingFile);
  coverage->add_option("--ratios", cs_ratios, "Text file with one ratio per line")->check(CLI::ExistingFile);
  coverage->add_option("--out", cs_out, "JSON output (stdout when omitted)");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    CLI::App* failed = &app;
    for (auto* s : app.get_subcommands()) failed = s;
    err << failed->help();
    return kExitValidation;
  }

  try {
    if (*validate_data) {
      if (vd_data.empty() && vd_preds.empty()) throw ArgumentError("give --data and/or --preds");
      if (!vd_data.empty()) {
        const auto records = load_dataset(vd_data);
        out << vd_data << ": " << records.size() << " records ok, sha256 " << dataset_digest(vd_data) << "\n";
      }
      if (!vd_preds.empty()) {
        const auto preds = load_predictions(vd_preds);
        out << vd_preds << ": " << preds.size() << " predictions ok\n";
      }
      return kExitOk;
    }

    if (*render) {
      std::string query = rp_query;
      if (!rp_data.empty() || !rp_record.empty()) {
        if (rp_data.empty() || rp_record.empty()) throw ArgumentError("--data and --record-id go together");
        if (!query.empty()) throw ArgumentError("--query conflicts with --record-id");
        const auto records = load_dataset(rp_data);
        query = find_record(records, rp_record).query(parse_query_kind(rp_kind));
      }
      const TemplateSet* ts = rp_prompt.load_templates();
      out << render_prompt(rp_prompt.make_template(), query, rp_prompt.coord_mode(),
                           ts ? *ts : TemplateSet::builtin());
      return kExitOk;
    }

    if (*parse) {
      out << to_json(parse_response(read_input(pa_reply), parse_prompt_kind(pa_kind))).dump(2) << "\n";
      return kExitOk;
    }

    if (*score) {
      const RewardConfig cfg = sc_reward.make();
      const auto records = load_dataset(sc_data);
      const GroundingRecord& rec = find_record(records, sc_record);
      const ParsedResponse parsed = parse_response(read_input(sc_reply), parse_prompt_kind(sc_prompt.kind));
      out << to_json(total_reward(parsed, rec, sc_prompt.coord_mode(), cfg)).dump(2) << "\n";
      return kExitOk;
    }

    if (*rollout) {
      RolloutJob job;
      job.records = load_dataset(ro_data);
      job.tpl = ro_prompt.make_template();
      job.coord = ro_prompt.coord_mode();
      job.templates = ro_prompt.load_templates();
      job.endpoint = ro_ep.inference();
      job.grpo.group_size = ro_group_size;
      job.reward = ro_reward.make();
      job.groups_out = ro_groups;
      job.batch_out = ro_batch;
      job.errors_out = ro_errors;
      job.max_failure_fraction = ro_max_fail;
      const RolloutOutput res = run_rollout(job);
      return finish_run("rollout", res.summary, out, err);
    }

    if (*grpo_batch) {
      gb_cfg.validate();
      auto groups = load_groups(gb_groups);
      for (auto& g : groups) g.assign_advantages(gb_cfg);
      const auto batch = make_training_batch(groups, gb_cfg);
      write_file(gb_out, serialize_batch(batch));
      out << "grpo-batch: " << groups.size() << " groups, " << batch.size() << " records\n";
      return kExitOk;
    }

    if (*infer) {
      InferenceJob job;
      job.records = load_dataset(in_data);
      job.tpl = in_prompt.make_template();
      job.coord = in_prompt.coord_mode();
      job.templates = in_prompt.load_templates();
      job.query_kind = parse_query_kind(in_kind);
      job.endpoint = in_ep.inference();
      job.preds_out = in_out;
      job.errors_out = in_errors;
      job.max_failure_fraction = in_max_fail;
      const InferenceOutput res = run_inference(job);
      return finish_run("infer", res.summary, out, err);
    }

    if (*eval) {
      const auto records = load_dataset(ev_data);
      const auto preds = load_predictions(ev_preds);
      std::optional<QueryKind> kind;
      if (!ev_kind.empty()) kind = parse_query_kind(ev_kind);
      EvalReport report;
      report.dataset_sha256 = dataset_digest(ev_data);
      report.config = Json{{"command", "eval"},
                           {"thr", ev_thr},
                           {"query_kind", ev_kind.empty() ? Json(nullptr) : Json(ev_kind)},
                           {"predictions_sha256", dataset_digest(ev_preds)}};
      report.accuracy = acc_at_iou(preds, records, ev_thr, kind);
      if (ev_pixel) report.pixel = mask_metrics(build_mask_samples(preds, records, kind), ev_thr);
      if (ev_coverage) report.coverage = coverage_histogram(records);
      out << format_grid(*report.accuracy, ev_label);
      if (report.pixel) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "mIoU %.2f  oIoU %.2f  mask Acc %.2f  (n=%zu)\n", 100 * report.pixel->miou,
                      100 * report.pixel->oiou, 100 * report.pixel->acc05, report.pixel->n);
        out << buf;
      }
      if (!ev_report.empty()) write_file(ev_report, to_json(report).dump(2) + "\n");
      return kExitOk;
    }

    if (*eval_hard) {
      const auto records = load_dataset(eh_data);
      const auto pe = load_predictions(eh_explicit);
      const auto pi = load_predictions(eh_implicit);
      EvalReport report;
      report.dataset_sha256 = dataset_digest(eh_data);
      report.config = Json{{"command", "eval-hard"}, {"thr", eh_thr}};
      report.hard = hard_protocol(pe, pi, records, eh_thr);
      out << format_grid(*report.hard, "hard");
      if (!eh_report.empty()) write_file(eh_report, to_json(report).dump(2) + "\n");
      return kExitOk;
    }

    if (*consist) {
      const auto pe = load_predictions(co_explicit);
      const auto pi = load_predictions(co_implicit);
      char buf[64];
      std::snprintf(buf, sizeof(buf), "consistency %.4f\n", consistency(pe, pi, co_thr));
      out << buf;
      return kExitOk;
    }

    if (*seg) {
      const HttpEndpoint http = sg_ep.http();
      http.validate();
      const SegMode mode = parse_seg_mode(sg_mode);
      const bool batch = !sg_preds.empty() || !sg_data.empty();
      if (batch) {
        if (sg_preds.empty() || sg_data.empty()) throw ArgumentError("batch seg needs both --preds and --data");
        if (!sg_box.empty() || !sg_image_ref.empty() || !sg_image_file.empty()) {
          throw ArgumentError("--box/--image-ref/--image-file apply to single requests only");
        }
        const auto records = load_dataset(sg_data);
        auto preds = load_predictions(sg_preds);
        std::map<std::string, const GroundingRecord*> by_id;
        for (const auto& r : records) by_id[r.id] = &r;
        for (const auto& p : preds) {
          if (!by_id.count(p.record_id)) throw ValidationError("prediction for unknown record '" + p.record_id + "'");
        }
        std::vector<std::string> errors(preds.size());
        detail::parallel_for(preds.size(), sg_ep.max_in_flight, [&](std::size_t i) {
          Prediction& p = preds[i];
          p.mask.reset();
          if (!p.box) return;
          const GroundingRecord& rec = *by_id[p.record_id];
          try {
            const SegPrompt prompt = derive_prompt(*p.box, mode);
            SegRequest req;
            req.image_ref = rec.image_ref;
            req.image_size = std::array<int, 2>{rec.image_w, rec.image_h};
            req.box = prompt.box;
            req.point = prompt.point;
            req.mode = prompt.mode;
            p.mask = segment(http, req);
          } catch (const std::exception& e) {
            errors[i] = e.what();
          }
        });
        RunSummary summary;
        summary.total = preds.size();
        summary.max_failure_fraction = sg_max_fail;
        std::string error_lines;
        for (std::size_t i = 0; i < preds.size(); ++i) {
          if (errors[i].empty()) continue;
          ++summary.failed;
          error_lines += Json{{"record_id", preds[i].record_id}, {"error", errors[i]}}.dump() + "\n";
        }
        write_predictions(sg_out, preds);
        if (!sg_errors.empty()) write_file(sg_errors, error_lines);
        return finish_run("seg", summary, out, err);
      }
      if (sg_box.size() != 4) throw ArgumentError("--box x1,y1,x2,y2 is required");
      SegRequest req;
      req.image_ref = sg_image_ref;
      if (!sg_image_file.empty()) req.image = base64_encode(read_file(sg_image_file));
      if (!sg_size.empty()) req.image_size = std::array<int, 2>{sg_size[0], sg_size[1]};
      const SegPrompt prompt = derive_prompt(Box{sg_box[0], sg_box[1], sg_box[2], sg_box[3]}, mode);
      req.box = prompt.box;
      req.point = prompt.point;
      req.mode = prompt.mode;
      const RasterMask mask = segment(http, req);
      write_file(sg_out, to_json(rle_encode(mask)).dump() + "\n");
      if (!sg_pgm.empty()) write_file(sg_pgm, encode_pgm(mask_image(mask)));
      char buf[96];
      std::snprintf(buf, sizeof(buf), "mask %dx%d, %zu foreground pixels\n", mask.width(), mask.height(),
                    mask.foreground_count());
      out << buf;
      return kExitOk;
    }

    if (*seg_mock) {
      g_stop.store(false);
      MockSegServer server;
      const int port = server.start(sm_host, sm_port);
      out << "seg-mock-serve listening on " << sm_host << ":" << port << std::endl;
      if (!sm_port_file.empty()) write_file_atomic(sm_port_file, std::to_string(port) + "\n");
      serve_until_stopped();
      server.stop();
      return kExitOk;
    }

    if (*infer_mock) {
      g_stop.store(false);
      MockInferenceServer server(MockScript::load(im_script), im_log);
      const int port = server.start(im_host, im_port);
      out << "infer-mock-serve listening on " << im_host << ":" << port << std::endl;
      if (!im_port_file.empty()) write_file_atomic(im_port_file, std::to_string(port) + "\n");
      serve_until_stopped();
      server.stop();
      return kExitOk;
    }

    if (*attn_curve) {
      const AttentionTrace trace = load_trace(ac_trace);
      const RatioCurve curve = ratio_curve(trace);
      const std::string csv = format_curve_csv(curve);
      if (ac_out.empty()) {
        out << csv;
      } else {
        write_file(ac_out, csv);
      }
      if (!ac_peaks_out.empty()) write_file(ac_peaks_out, Json(find_peaks(curve, ac_window)).dump() + "\n");
      return kExitOk;
    }

    if (*attn_map) {
      const AttentionTrace trace = load_trace(am_trace);
      const Heatmap map = am_grid ? patch_grid(trace, am_step) : heatmap(trace, am_step);
      write_file(am_out, encode_pgm(map));
      out << "attn-map: " << map.width << "x" << map.height << " written to " << am_out << "\n";
      return kExitOk;
    }

    if (*coverage) {
      if (cs_data.empty() == cs_ratios.empty()) throw ArgumentError("give exactly one of --data and --ratios");
      CoverageHistogram h;
      if (!cs_data.empty()) {
        h = coverage_histogram(load_dataset(cs_data));
      } else {
        std::vector<double> ratios;
        std::istringstream in(read_file(cs_ratios));
        std::string line;
        for (int n = 1; std::getline(in, line); ++n) {
          if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
          try {
            std::size_t used = 0;
            const double v = std::stod(line, &used);
            if (line.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument("trailing");
            ratios.push_back(v);
          } catch (const std::logic_error&) {
            throw ValidationError("line " + std::to_string(n) + ": not a number");
          }
        }
        h = coverage_histogram(ratios);
      }
      EvalReport r;
      r.coverage = h;
      const std::string text = to_json(r)["coverage"].dump(2) + "\n";
      if (cs_out.empty()) {
        out << text;
      } else {
        write_file(cs_out, text);
      }
      return kExitOk;
    }
  } catch (const TransportError& e) {
    err << "error: " << e.what() << "\n";
    for (const auto& a : e.attempts()) err << "  " << a << "\n";
    return kExitTransport;
  } catch (const ProtocolError& e) {
    err << "error: " << e.what() << "\n";
    return kExitTransport;
  } catch (const Json::exception& e) {
    err << "error: malformed JSON: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitValidation;
}

}  // namespace vgkit
