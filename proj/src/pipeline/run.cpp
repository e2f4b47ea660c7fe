#include "wm/pipeline/run.hpp"

#include <spdlog/spdlog.h>

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "wm/core/csv.hpp"
#include "wm/core/io.hpp"
#include "wm/mdn/latent.hpp"

namespace wm::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t stage_seed(std::uint64_t seed, const std::string& what) {
  return core::mix_seed(seed, core::hash_name(what));
}

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  core::write_file_atomic(path, [&](std::ostream& os) { os << text; });
}

void write_ppm(const fs::path& path, const envs::Observation& obs) {
  core::write_file_atomic(path, [&](std::ostream& os) {
    os << "P6\n" << obs.width << ' ' << obs.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(obs.pixels.data()), static_cast<std::streamsize>(obs.pixels.size()));
  });
}

EvaluationSummary summarize(const std::string& name, const dream::ReturnStats& st, std::size_t params) {
  return {name, st.returns.size(), st.mean(), st.stddev(), st.standard_error(), params};
}

std::pair<double, double> return_range(const ExperimentConfig& c, bool in_dream) {
  if (in_dream) return {0.0, static_cast<double>(c.dream.max_steps)};
  if (c.env.kind == "dodgeworld") return {0.0, static_cast<double>(c.env.dodge.max_steps)};
  return {-c.env.track.step_penalty * static_cast<double>(c.env.track.max_steps), 100.0};
}

}  // namespace

Run::Run(fs::path dir, ExperimentConfig config, std::size_t workers)
    : dir_(std::move(dir)),
      config_(std::move(config)),
      hash_((config_.validate(), config_hash(config_))),
      workers_(std::max<std::size_t>(workers, 1)),
      manifest_(RunManifest::load_or_create(dir_, hash_)) {
  fs::create_directories(dir_);
  const fs::path cfg = dir_ / "config.json";
  if (fs::exists(cfg)) {
    const std::string stored = config_hash(load_config(cfg));
    if (stored != hash_)
      throw ConfigError("run directory " + dir_.string() + " holds config " + stored + ", not " + hash_ +
                        "; use a fresh --run directory");
  } else {
    write_text(cfg, to_json_text(config_));
  }
  manifest_.save();
}

void Run::require(const fs::path& p, const std::string& stage) const {
  if (!fs::exists(p))
    throw MissingArtifact("missing " + manifest_.relative(p) + "; run `wm " + stage + " --run " + dir_.string() +
                          "` first");
}

vae::Vae Run::load_vae() const {
  require(vae_path(), "train-vae");
  return vae::Vae::load(vae_path());
}

mdn::MdnRnn Run::load_mdn() const {
  require(mdn_path(), "train-rnn");
  return mdn::MdnRnn::load(mdn_path());
}

dream::InitialPool Run::load_pool() const {
  require(latents_path(), "train-rnn");
  return dream::InitialPool::from_latents(mdn::load_latents(latents_path()));
}

void Run::collect(bool force) {
  const std::string key = "collect";
  if (!force && manifest_.up_to_date(key, {})) {
    spdlog::info("collect: up to date");
    return;
  }
  manifest_.begin(key, {});
  spdlog::info("collect: {} random rollouts of {}", config_.collect.rollouts, config_.env.kind);
  const auto data = envs::collect_random_rollouts(envs::environment_factory(config_.env), config_.collect.rollouts,
                                                  stage_seed(config_.seed, "collect"), config_.collect.action_repeat,
                                                  workers_);
  envs::save_episodes(episodes_path(), data);
  const fs::path csv_path = dir_ / "collect" / "returns.csv";
  {
    core::CsvWriter csv(csv_path, {"episode", "seed", "return", "steps"}, {{"config_hash", hash_}});
    for (std::size_t i = 0; i < data.episodes.size(); ++i) {
      const auto& e = data.episodes[i];
      csv.row({std::to_string(i), std::to_string(e.seed), core::format_number(e.total_return()),
               std::to_string(e.n_steps())});
    }
  }
  spdlog::info("collect: {} frames", data.total_frames());
  manifest_.finish(key, {episodes_path()}, {csv_path});
}

void Run::train_vae(bool force) {
  const std::string key = "train-vae";
  require(episodes_path(), "collect");
  if (!force && manifest_.up_to_date(key, {episodes_path()})) {
    spdlog::info("train-vae: up to date");
    return;
  }
  manifest_.begin(key, {episodes_path()});
  const auto data = envs::load_episodes(episodes_path());
  vae::Vae model(config_.vae, stage_seed(config_.seed, "vae_init"));
  spdlog::info("train-vae: {} parameters, {} frames available", model.parameter_count(), data.total_frames());
  const fs::path csv_path = dir_ / "vae" / "metrics.csv";
  const auto res = vae::train_vae(model, data, config_.vae_train, {csv_path, vae_path(), hash_});
  spdlog::info("train-vae: final epoch loss {:.4f} (recon {:.4f}, kl {:.4f})", res.epoch_loss.back(),
               res.epoch_recon.back(), res.epoch_kl.back());
  manifest_.finish(key, {vae_path()}, {csv_path});
}

void Run::train_rnn(bool force) {
  const std::string key = "train-rnn";
  require(episodes_path(), "collect");
  require(vae_path(), "train-vae");
  if (!force && manifest_.up_to_date(key, {episodes_path(), vae_path()})) {
    spdlog::info("train-rnn: up to date");
    return;
  }
  manifest_.begin(key, {episodes_path(), vae_path()});
  const vae::Vae v = load_vae();
  mdn::LatentDataset latents;
  {
    const auto data = envs::load_episodes(episodes_path());
    latents = mdn::encode_episodes(v, data, workers_);
  }
  mdn::save_latents(latents_path(), latents);
  mdn::MdnRnn model(config_.rnn, stage_seed(config_.seed, "rnn_init"));
  spdlog::info("train-rnn: {} parameters, {} steps", model.parameter_count(), latents.total_steps());
  const fs::path csv_path = dir_ / "rnn" / "metrics.csv";
  const auto res = mdn::train_mdnrnn(model, latents, config_.rnn_train, {csv_path, mdn_path(), hash_});
  spdlog::info("train-rnn: final epoch loss {:.4f} (nll {:.3f}, bce {:.4f})", res.epoch_loss.back(),
               res.epoch_nll.back(), res.epoch_bce.back());
  manifest_.finish(key, {latents_path(), mdn_path()}, {csv_path});
}

EvolveRequest Run::default_request() const {
  EvolveRequest r;
  r.features = config_.controller.features;
  r.hidden_width = config_.controller.hidden_width;
  r.in_dream = config_.evolve.in_dream;
  r.temperature = config_.dream.temperature;
  r.name = request_name(r);
  return r;
}

std::string Run::request_name(const EvolveRequest& r) {
  if (!r.name.empty()) return r.name;
  std::string name = controller::to_string(r.features);
  if (r.hidden_width) name += "_hidden" + std::to_string(r.hidden_width);
  if (r.in_dream) name = "dream_tau_" + fixed2(r.temperature) + "_" + name;
  return name;
}

std::string Run::evolve(const EvolveRequest& request, bool force) {
  const std::string name = request_name(request);
  const std::string key = "evolve/" + name;
  const fs::path out = controller_path(name);
  if (!force && (fs::exists(out) || manifest_.stage(key)))
    throw RefusedRerun("evolve: " + manifest_.relative(out) + " already exists for config " + hash_ +
                       "; pass --force to retrain");
  const bool memory = request.features != controller::FeatureMode::z_only;
  if (request.in_dream && !memory) throw ConfigError("evolve: dream training needs M's hidden state (features z_h or z_h_c)");

  std::vector<fs::path> inputs{vae_path()};
  require(vae_path(), "train-vae");
  if (memory || request.in_dream) {
    require(mdn_path(), "train-rnn");
    inputs.push_back(mdn_path());
  }
  if (request.in_dream) inputs.push_back(latents_path());
  manifest_.begin(key, inputs);

  const vae::Vae v = load_vae();
  std::optional<mdn::MdnRnn> m;
  if (memory || request.in_dream) m = load_mdn();
  const std::size_t n_hidden = m ? m->config().n_hidden : config_.rnn.n_hidden;
  controller::ControllerConfig cc{controller::feature_dim(request.features, v.config().n_z, n_hidden),
                                  config_.action_dim(), request.hidden_width, config_.controller.use_bias};
  dream::Agent agent{&v, m ? &*m : nullptr, controller::Controller(cc, config_.action_spec()), request.features};

  cmaes::EvolveConfig ec;
  ec.generations = config_.evolve.generations;
  ec.popsize = config_.evolve.population;
  ec.n_rollouts = config_.evolve.rollouts_per_candidate;
  ec.eval_every = config_.evolve.eval_every;
  ec.eval_rollouts = config_.evolve.eval_rollouts;
  ec.eval_target = config_.evolve.eval_target;
  ec.sigma0 = config_.evolve.sigma0;
  ec.seed = stage_seed(config_.seed, key);
  ec.mean0 = controller::initial_params(cc, ec.seed);
  ec.workers = workers_;

  const fs::path csv_path = dir_ / "evolve" / name / "es.csv";
  spdlog::info("evolve {}: {} parameters, {} generations x {} candidates x {} rollouts{}", name, cc.param_count(),
               ec.generations, ec.popsize, ec.n_rollouts,
               request.in_dream ? " in the dream at tau " + fixed2(request.temperature) : std::string());
  cmaes::EvolveResult res;
  if (request.in_dream) {
    dream::DreamConfig dc = config_.dream;
    dc.temperature = request.temperature;
    const auto pool = load_pool();
    dream::DreamRolloutPool rollouts(agent.controller, request.features, *m, pool, dc, workers_);
    ec.crash_score = 0.0;
    res = cmaes::evolve(cc.param_count(), rollouts.fn(), ec, {csv_path, hash_});
  } else {
    dream::RealRolloutPool rollouts(agent, envs::environment_factory(config_.env), workers_);
    ec.crash_score = rollouts.min_return();
    res = cmaes::evolve(cc.param_count(), rollouts.fn(), ec, {csv_path, hash_});
  }
  if (res.crashed_rollouts) spdlog::warn("evolve {}: {} rollouts crashed", name, res.crashed_rollouts);
  spdlog::info("evolve {}: selected candidate fitness {:.2f}", name, res.best.fitness);

  controller::save_controller(out, agent.controller, res.best.params,
                              {{"config_hash", hash_},
                               {"name", name},
                               {"features", controller::to_string(request.features)},
                               {"in_dream", request.in_dream ? "1" : "0"},
                               {"temperature", core::format_number(request.temperature)},
                               {"selected_fitness", core::format_number(res.best.fitness)}});
  manifest_.finish(key, {out}, {csv_path});
  return name;
}

EvaluationSummary Run::evaluate(const std::string& name, bool in_dream, std::optional<double> temperature,
                                bool force) {
  const double tau = temperature.value_or(config_.dream.temperature);
  const std::string out_name = in_dream ? name + "_dream_tau_" + fixed2(tau) : name;
  const std::string key = "evaluate/" + out_name;
  const fs::path out_dir = dir_ / "evaluate" / out_name;
  const fs::path returns_csv = out_dir / "returns.csv", hist_csv = out_dir / "histogram.csv",
                 summary_json = out_dir / "summary.json";
  const std::uint64_t base_seed = stage_seed(config_.seed, in_dream ? "evaluate_dream" : "evaluate");
  const std::size_t n = config_.evaluate_rollouts;

  std::vector<fs::path> inputs;
  dream::ReturnStats st;
  std::size_t params = 0;
  const bool random = name == "random";
  if (!random) {
    require(controller_path(name), "evolve");
    inputs.push_back(controller_path(name));
  }
  if (!force && manifest_.up_to_date(key, inputs) && fs::exists(summary_json)) {
    std::ifstream in(summary_json);
    const json j = json::parse(in);
    spdlog::info("evaluate {}: up to date", out_name);
    return {out_name, j.at("n").get<std::size_t>(), j.at("mean").get<double>(), j.at("std").get<double>(),
            j.at("standard_error").get<double>(), j.at("param_count").get<std::size_t>()};
  }
  manifest_.begin(key, inputs);
  if (random) {
    if (in_dream) throw ConfigError("evaluate: the random policy is only evaluated in the real environment");
    st = dream::evaluate_random(envs::environment_factory(config_.env), n, base_seed, workers_);
  } else {
    const auto loaded = controller::load_controller(controller_path(name));
    params = loaded.params.size();
    const auto mode = controller::parse_feature_mode(loaded.meta.at("features"));
    const vae::Vae v = load_vae();
    std::optional<mdn::MdnRnn> m;
    if (mode != controller::FeatureMode::z_only || in_dream) m = load_mdn();
    if (in_dream) {
      dream::DreamConfig dc = config_.dream;
      dc.temperature = tau;
      st = dream::evaluate_dream(loaded.controller, mode, *m, load_pool(), dc, loaded.params, n, base_seed, workers_);
    } else {
      dream::Agent agent{&v, m ? &*m : nullptr, loaded.controller, mode};
      st = dream::transfer_evaluate(agent, envs::environment_factory(config_.env), loaded.params, n, base_seed,
                                    workers_);
    }
  }
  const auto summary = summarize(out_name, st, params);
  dream::write_returns_csv(returns_csv, st, hash_);
  const auto [lo, hi] = return_range(config_, in_dream);
  dream::write_histogram_csv(hist_csv, st.returns, lo, hi, 20, hash_);
  write_text(summary_json, json{{"config_hash", hash_},
                                {"name", out_name},
                                {"n", summary.n},
                                {"mean", summary.mean},
                                {"std", summary.stddev},
                                {"standard_error", summary.standard_error},
                                {"param_count", summary.param_count}}
                                   .dump(2) +
                               "\n");
  spdlog::info("evaluate {}: {:.2f} +- {:.2f} over {} rollouts", out_name, summary.mean, summary.stddev, summary.n);
  manifest_.finish(key, {summary_json}, {returns_csv, hist_csv});
  return summary;
}

fs::path Run::dream_rollout(const std::string& name, std::uint64_t seed, bool decode_frames,
                            std::optional<double> temperature) {
  const mdn::MdnRnn m = load_mdn();
  const auto pool = load_pool();
  dream::DreamConfig dc = config_.dream;
  dc.temperature = temperature.value_or(config_.dream.temperature);
  std::optional<controller::LoadedController> loaded;
  controller::FeatureMode mode = controller::FeatureMode::z_h;
  if (name != "zero") {
    require(controller_path(name), "evolve");
    loaded = controller::load_controller(controller_path(name));
    mode = controller::parse_feature_mode(loaded->meta.at("features"));
  }
  const controller::ControllerConfig zero_cc{controller::feature_dim(mode, m.config().n_z, m.config().n_hidden),
                                             config_.action_dim(), 0, true};
  const controller::Controller ctrl = loaded ? loaded->controller : controller::Controller(zero_cc, config_.action_spec());
  const std::vector<double> params = loaded ? loaded->params : std::vector<double>(zero_cc.param_count(), 0.0);

  std::optional<vae::Vae> v;
  if (decode_frames) v = load_vae();
  const fs::path out_dir = dir_ / "dream" / name;
  const fs::path trace = out_dir / ("trace_" + std::to_string(seed) + ".csv");
  const fs::path frames = out_dir / ("frames_" + std::to_string(seed));
  if (decode_frames) fs::create_directories(frames);

  std::vector<std::string> cols{"step", "reward", "done"};
  for (std::size_t k = 0; k < m.config().action_dim; ++k) cols.push_back("a" + std::to_string(k));
  for (std::size_t d = 0; d < m.config().n_z; ++d) cols.push_back("z" + std::to_string(d));
  core::CsvWriter csv(trace, cols, {{"config_hash", hash_}});

  dream::DreamEnv env(m, pool, dc);
  env.reset(seed);
  std::size_t t = 0;
  auto frame = [&](std::size_t step) {
    if (!v) return;
    char file[32];
    std::snprintf(file, sizeof file, "step_%05zu.ppm", step);
    write_ppm(frames / file, v->decode_observation(env.z()));
  };
  frame(0);
  while (!env.done()) {
    const std::vector<double> z = env.z();
    const auto action = ctrl.act(controller::build_features(z, env.rnn_state(), mode), params);
    const auto r = env.step(action);
    std::vector<std::string> row{std::to_string(t), core::format_number(r.reward), r.done ? "1" : "0"};
    for (double a : action) row.push_back(core::format_number(a));
    for (double zd : z) row.push_back(core::format_number(zd));
    csv.row(row);
    ++t;
    frame(t);
  }
  spdlog::info("dream-rollout {}: {} steps at tau {}", name, t, dc.temperature);
  return trace;
}

std::vector<SweepRow> Run::sweep_temperature(bool force) {
  const fs::path table_csv = dir_ / "sweep" / "table.csv", table_md = dir_ / "sweep" / "table.md";
  if (!force && fs::exists(table_csv))
    throw RefusedRerun("sweep-temperature: " + manifest_.relative(table_csv) + " already exists; pass --force to redo");
  const std::string key = "sweep-temperature";
  manifest_.begin(key, {});
  std::vector<SweepRow> rows;
  for (double tau : config_.sweep_temperatures) {
    EvolveRequest r;
    r.features = config_.controller.features == controller::FeatureMode::z_only ? controller::FeatureMode::z_h
                                                                                : config_.controller.features;
    r.hidden_width = config_.controller.hidden_width;
    r.in_dream = true;
    r.temperature = tau;
    const std::string name = evolve(r, force);
    SweepRow row;
    row.temperature = tau;
    row.virtual_score = evaluate(name, true, tau, force);
    row.actual_score = evaluate(name, false, {}, force);
    rows.push_back(row);
  }
  const auto random = evaluate("random", false, {}, force);

  {
    core::CsvWriter csv(table_csv, {"temperature", "virtual_mean", "virtual_std", "actual_mean", "actual_std"},
                        {{"config_hash", hash_}});
    for (const auto& r : rows)
      csv.row(std::vector<double>{r.temperature, r.virtual_score.mean, r.virtual_score.stddev, r.actual_score.mean,
                                  r.actual_score.stddev});
  }
  std::ostringstream md;
  md << "| Temperature | Virtual score | Actual score |\n|---|---|---|\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "| %.2f | %.0f ± %.0f | %.0f ± %.0f |\n", r.temperature, r.virtual_score.mean,
                  r.virtual_score.stddev, r.actual_score.mean, r.actual_score.stddev);
    md << buf;
  }
  std::snprintf(buf, sizeof buf, "| Random policy | N/A | %.0f ± %.0f |\n", random.mean, random.stddev);
  md << buf;
  md << "\nconfig " << hash_ << ", " << config_.evaluate_rollouts << " rollouts per cell\n";
  write_text(table_md, md.str());
  manifest_.finish(key, {table_md}, {table_csv});
  return rows;
}

std::vector<AblationRow> Run::ablation(bool force) {
  const fs::path report_csv = dir_ / "ablation" / "report.csv", report_md = dir_ / "ablation" / "report.md";
  if (!force && fs::exists(report_csv))
    throw RefusedRerun("ablation: " + manifest_.relative(report_csv) + " already exists; pass --force to redo");
  const std::string key = "ablation";
  manifest_.begin(key, {});
  struct Spec {
    std::string label;
    controller::FeatureMode mode;
    std::size_t hidden;
  };
  const std::vector<Spec> specs{{"V model", controller::FeatureMode::z_only, 0},
                                {"V model with hidden layer", controller::FeatureMode::z_only,
                                 config_.ablation_hidden_width},
                                {"Full World Model", controller::FeatureMode::z_h, 0}};
  std::vector<AblationRow> rows;
  for (const auto& s : specs) {
    EvolveRequest r;
    r.features = s.mode;
    r.hidden_width = s.hidden;
    const std::string name = evolve(r, force);
    rows.push_back({s.label, evaluate(name, false, {}, force)});
  }
  rows.push_back({"Random policy", evaluate("random", false, {}, force)});

  {
    core::CsvWriter csv(report_csv, {"model", "controller", "params", "mean", "std", "standard_error", "rollouts"},
                        {{"config_hash", hash_}});
    for (const auto& r : rows)
      csv.row({r.label, r.score.name, std::to_string(r.score.param_count), core::format_number(r.score.mean),
               core::format_number(r.score.stddev), core::format_number(r.score.standard_error),
               std::to_string(r.score.n)});
  }
  std::ostringstream md;
  md << "| Method | Average score over " << config_.evaluate_rollouts << " random tracks |\n|---|---|\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "| %s | %.1f ± %.1f |\n", r.label.c_str(), r.score.mean, r.score.stddev);
    md << buf;
  }
  md << "\nconfig " << hash_ << "\n";
  write_text(report_md, md.str());
  manifest_.finish(key, {report_md}, {report_csv});
  return rows;
}

std::string params_report(const ExperimentConfig& config) {
  ExperimentConfig c = config;
  c.validate();
  std::ostringstream os;
  auto counts = [&](const ExperimentConfig& e, const char* title) {
    vae::Vae v(e.vae, 0);
    mdn::MdnRnn m(e.rnn, 0);
    controller::ControllerConfig cc{controller::feature_dim(e.controller.features, e.vae.n_z, e.rnn.n_hidden),
                                    e.action_dim(), e.controller.hidden_width, e.controller.use_bias};
    os << title << " (" << e.preset << ")\n";
    os << "  V  " << v.parameter_count() << "\n";
    os << "  M  " << m.parameter_count() << "\n";
    os << "  C  " << cc.param_count() << " (" << controller::to_string(e.controller.features) << ", feature_dim "
       << cc.feature_dim << ", action_dim " << cc.action_dim << ", bias " << (cc.use_bias ? "on" : "off") << ")\n";
    return std::tuple{v.parameter_count(), m.parameter_count(), cc};
  };
  counts(c, "this config");
  os << "\nreference configurations\n";
  counts(preset("car-paper"), "car racing");
  os << "  published: V 4,348,547  M 422,368  C 867\n";
  const controller::ControllerConfig hidden{32, 3, 40, true};
  os << "  V-only controller with 40 hidden units: " << hidden.param_count() << " (published 1,443)\n";
  const auto [dv, dm, dc] = counts(preset("doom-paper"), "doom take cover");
  (void)dv;
  auto dc_bias = dc;
  dc_bias.use_bias = true;
  os << "  published: V 4,446,915  M 1,678,785  C 1,088\n";
  os << "  C with a bias term would have " << dc_bias.param_count()
     << " parameters; the published 1,088 equals the feature length (z 64 + h 512 + c 512) times one action,\n"
        "  so the preset turns the bias off. Both readings are supported via controller.use_bias.\n";
  os << "  M here has " << dm << "; the published 1,678,785 is " << (1678785 - static_cast<long>(dm))
     << " more, which is exactly one more LSTM input (4 x 512 weights), i.e. a two-dimensional action input.\n";
  return os.str();
}

}  // namespace wm::pipeline
