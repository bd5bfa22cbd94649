// tomodiff command-line tool. Every stage reads a TOML-style config plus
// overrides, and writes a JSON manifest beside its outputs that `rerun` can
// replay.

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tomodiff/tomodiff.hpp"

namespace fs = std::filesystem;
using namespace tomodiff;

namespace {

const std::set<std::string> kKnownKeys = {
    "routing.topology", "routing.policy", "routing.out",
    "loads.routing", "loads.tm", "loads.out",
    "toy.timepoints", "toy.seed", "toy.noise", "toy.tm_out", "toy.routing_out",
    "data.tm", "data.interval", "data.train_begin", "data.train_count",
    "model.preset", "model.latent", "model.encoder_hidden", "model.denoiser_width", "model.step_embedding",
    "model.diffusion_steps", "model.beta_start", "model.beta_end",
    "train.pretrain_epochs", "train.joint_epochs", "train.batch_size", "train.learning_rate", "train.lr_decay",
    "train.lr_decay_start", "train.lr_decay_end", "train.seed", "train.out", "train.resume", "train.loss_out",
    "sampler.mode", "sampler.ddim_steps", "sampler.eta", "sampler.ddpm_variance",
    "synth.checkpoint", "synth.count", "synth.seed", "synth.out",
    "estimate.checkpoint", "estimate.routing", "estimate.loads", "estimate.out", "estimate.trajectory_out",
    "estimate.baseline_out", "estimate.opt_epochs", "estimate.init_candidates", "estimate.norm",
    "estimate.step_size", "estimate.seed", "estimate.stall_tolerance",
    "eval.truth", "eval.estimate", "eval.out_dir", "eval.aggregate", "eval.group",
    "project.real", "project.synthetic", "project.method", "project.perplexity", "project.theta",
    "project.iterations", "project.seed", "project.out",
    "plot.projection", "plot.eval_dir", "plot.out_dir",
};

int ExitCode(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kIo: return 3;
    case ErrorKind::kShape:
    case ErrorKind::kRange: return 4;
    case ErrorKind::kParse:
    case ErrorKind::kValidation:
    case ErrorKind::kTopology:
    case ErrorKind::kUndefinedMetric: return 5;
    case ErrorKind::kTraining:
    case ErrorKind::kOptimization: return 6;
    case ErrorKind::kIntegrity:
    case ErrorKind::kUnsupportedVersion: return 7;
    case ErrorKind::kConfig: return 8;
  }
  return 1;
}

Matrix ReadMatrix(const std::string& path, const std::string& what) {
  return csv::ToMatrix(csv::ReadNumeric(path), std::nullopt, what + " '" + path + "'");
}

void EnsureParent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

std::string ManifestBeside(const std::string& output) { return output + ".manifest.json"; }

diffusion::SamplerConfig SamplerFrom(const config::Config& c) {
  diffusion::SamplerConfig s;
  const std::string mode = c.String("sampler.mode", "ddim");
  if (mode == "ddim") {
    s.mode = diffusion::SamplerMode::kDdim;
  } else if (mode == "ddpm") {
    s.mode = diffusion::SamplerMode::kDdpm;
  } else {
    throw ConfigError("sampler.mode must be ddim or ddpm, got '" + mode + "'");
  }
  s.ddim_steps = static_cast<int>(c.Int("sampler.ddim_steps", 50));
  s.eta = c.Double("sampler.eta", 0.0);
  const std::string var = c.String("sampler.ddpm_variance", "beta");
  if (var == "beta") {
    s.ddpm_variance = diffusion::DdpmVariance::kBeta;
  } else if (var == "posterior") {
    s.ddpm_variance = diffusion::DdpmVariance::kPosterior;
  } else {
    throw ConfigError("sampler.ddpm_variance must be beta or posterior, got '" + var + "'");
  }
  return s;
}

manifest::Manifest BuildRouting(const config::Config& c) {
  const std::string topo_path = c.RequireString("routing.topology");
  const std::string out = c.RequireString("routing.out");
  const std::string policy = c.String("routing.policy", "shortest");
  data::RoutingPolicy p;
  if (policy == "shortest") {
    p = data::RoutingPolicy::kDeterministic;
  } else if (policy == "ecmp") {
    p = data::RoutingPolicy::kEcmp;
  } else {
    throw ConfigError("routing.policy must be shortest or ecmp, got '" + policy + "'");
  }
  const data::Topology topo = data::Topology::Load(topo_path);
  const data::RoutingMatrix a = data::BuildRoutingMatrix(topo, p);
  EnsureParent(out);
  data::SaveRoutingMatrix(out, a);

  manifest::Manifest m;
  m.AddInput("topology", topo_path);
  m.AddOutput("routing", out);
  m.extra["links"] = a.links();
  m.extra["flows"] = a.flows();
  m.extra["rank"] = a.Rank();
  std::cerr << "routing matrix " << a.links() << " x " << a.flows() << ", rank " << a.Rank() << '\n';
  return m;
}

manifest::Manifest LinkLoads(const config::Config& c) {
  const std::string routing = c.RequireString("loads.routing");
  const std::string tm = c.RequireString("loads.tm");
  const std::string out = c.RequireString("loads.out");
  const data::RoutingMatrix a = data::LoadRoutingMatrix(routing);
  data::TmLayout layout;
  layout.interval_seconds = c.Double("data.interval", 300.0);
  const data::TrafficMatrixSeries x = data::LoadTmSeries(tm, layout);
  const data::LinkLoadSeries y = data::ComputeLinkLoads(a, x);
  EnsureParent(out);
  csv::WriteMatrix(out, y.values);
  manifest::Manifest m;
  m.AddInput("routing", routing);
  m.AddInput("tm", tm);
  m.AddOutput("loads", out);
  return m;
}

manifest::Manifest Toy(const config::Config& c) {
  toy::ProcessConfig p;
  p.seed = c.Uint("toy.seed", 1);
  p.noise = c.Double("toy.noise", p.noise);
  p.interval_seconds = c.Double("data.interval", p.interval_seconds);
  const auto series = toy::TwoRegimeSeries(c.Int("toy.timepoints", 576), p);
  const std::string tm_out = c.RequireString("toy.tm_out");
  EnsureParent(tm_out);
  data::SaveTmSeries(tm_out, series);
  manifest::Manifest m;
  m.AddOutput("tm", tm_out);
  if (c.Has("toy.routing_out")) {
    const std::string r = c.RequireString("toy.routing_out");
    EnsureParent(r);
    data::SaveRoutingMatrix(r, data::BuildRoutingMatrix(toy::FourNodeTopology(), data::RoutingPolicy::kDeterministic));
    m.AddOutput("routing", r);
  }
  return m;
}

trainer::ModelConfig ModelFrom(const config::Config& c, Index flows) {
  const std::string preset = c.String("model.preset", "none");
  trainer::ModelConfig m;
  if (preset == "abilene") {
    m = trainer::ModelConfig::Abilene();
  } else if (preset == "geant") {
    m = trainer::ModelConfig::Geant();
  } else if (preset != "none") {
    throw ConfigError("model.preset must be none, abilene or geant");
  }
  if (preset != "none" && m.flows != flows) {
    throw ShapeError("preset '" + preset + "' expects " + std::to_string(m.flows) + " flows, data has " +
                     std::to_string(flows));
  }
  m.flows = flows;
  m.latent = c.Int("model.latent", m.latent);
  m.encoder_hidden = c.Int("model.encoder_hidden", m.encoder_hidden);
  m.denoiser_width = c.Int("model.denoiser_width", m.denoiser_width);
  m.step_embedding = c.Int("model.step_embedding", m.step_embedding);
  m.diffusion_steps = static_cast<int>(c.Int("model.diffusion_steps", m.diffusion_steps));
  m.beta_start = c.Double("model.beta_start", m.beta_start);
  m.beta_end = c.Double("model.beta_end", m.beta_end);
  return m;
}

trainer::TrainConfig TrainFrom(const config::Config& c) {
  trainer::TrainConfig t;
  t.pretrain_epochs = static_cast<int>(c.Int("train.pretrain_epochs", t.pretrain_epochs));
  t.joint_epochs = static_cast<int>(c.Int("train.joint_epochs", t.joint_epochs));
  t.batch_size = c.Int("train.batch_size", t.batch_size);
  t.learning_rate = c.Double("train.learning_rate", t.learning_rate);
  t.lr_decay = c.Bool("train.lr_decay", t.lr_decay);
  t.lr_decay_start = c.Double("train.lr_decay_start", t.lr_decay_start);
  t.lr_decay_end = c.Double("train.lr_decay_end", t.lr_decay_end);
  t.seed = c.Uint("train.seed", t.seed);
  return t;
}

Matrix TrainingRows(const config::Config& c, manifest::Manifest& m) {
  const std::string tm = c.RequireString("data.tm");
  data::TmLayout layout;
  layout.interval_seconds = c.Double("data.interval", 300.0);
  const data::TrafficMatrixSeries series = data::LoadTmSeries(tm, layout);
  m.AddInput("tm", tm);
  const Index begin = c.Int("data.train_begin", 0);
  const Index count = c.Int("data.train_count", series.timepoints() - begin);
  if (begin < 0 || count < 1 || begin + count > series.timepoints()) {
    throw RangeError("training slice [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside a series of " + std::to_string(series.timepoints()) + " rows");
  }
  return series.values.middleRows(begin, count);
}

manifest::Manifest Train(const config::Config& c) {
  manifest::Manifest m;
  const Matrix rows = TrainingRows(c, m);
  const std::string out = c.RequireString("train.out");
  trainer::ModelCheckpoint ckpt;
  if (c.Has("train.resume")) {
    const std::string resume = c.RequireString("train.resume");
    ckpt = checkpoint::Load(resume);
    m.AddInput("resume", resume);
    const trainer::TrainConfig t = TrainFrom(c);
    ckpt.train.pretrain_epochs = t.pretrain_epochs;
    ckpt.train.joint_epochs = t.joint_epochs;
    trainer::TrainToCompletion(ckpt, rows);
  } else {
    ckpt = trainer::Train(ModelFrom(c, rows.cols()), TrainFrom(c), rows);
  }
  EnsureParent(out);
  checkpoint::Save(ckpt, out);
  m.AddOutput("checkpoint", out);
  if (c.Has("train.loss_out")) {
    const std::string loss_out = c.RequireString("train.loss_out");
    const auto& meta = ckpt.meta;
    Matrix losses = Matrix::Constant(static_cast<Index>(meta.pretrain_loss.size() + meta.joint_recon_loss.size()), 4,
                                     std::numeric_limits<double>::quiet_NaN());
    Index r = 0;
    for (std::size_t e = 0; e < meta.pretrain_loss.size(); ++e, ++r) losses.row(r).head(3) << 1, double(e + 1), meta.pretrain_loss[e];
    for (std::size_t e = 0; e < meta.joint_recon_loss.size(); ++e, ++r) {
      losses.row(r) << 2, double(e + 1), meta.joint_recon_loss[e], meta.joint_diffusion_loss[e];
    }
    EnsureParent(loss_out);
    csv::WriteMatrix(loss_out, losses, {"phase", "epoch", "reconstruction", "diffusion"});
    m.AddOutput("losses", loss_out);
  }
  m.extra["parameter_crc32"] = checkpoint::ParameterChecksum(ckpt);
  m.extra["seed"] = ckpt.train.seed;
  if (!ckpt.meta.joint_diffusion_loss.empty()) m.extra["final_diffusion_loss"] = ckpt.meta.joint_diffusion_loss.back();
  return m;
}

manifest::Manifest Synth(const config::Config& c) {
  const std::string path = c.RequireString("synth.checkpoint");
  const std::string out = c.RequireString("synth.out");
  const trainer::ModelCheckpoint ckpt = checkpoint::Load(path);
  const diffusion::SamplerConfig sampler = SamplerFrom(c);
  const Index count = c.Int("synth.count", 64);
  if (count < 1) throw ValidationError("synth.count must be >= 1");
  std::mt19937_64 rng(c.Uint("synth.seed", 0));
  const auto s = ckpt.schedule();
  const diffusion::NoiseBundle bundle = diffusion::RandomBundle(s, sampler, ckpt.model.latent, count, rng);
  const Matrix x = diffusion::Sample(s, ckpt.denoiser, ckpt.autoencoder, bundle, sampler);
  EnsureParent(out);
  csv::WriteMatrix(out, x.transpose());
  manifest::Manifest m;
  m.AddInput("checkpoint", path);
  m.AddOutput("samples", out);
  m.extra["parameter_crc32"] = checkpoint::ParameterChecksum(ckpt);
  return m;
}

manifest::Manifest Estimate(const config::Config& c) {
  const std::string ckpt_path = c.RequireString("estimate.checkpoint");
  const std::string routing = c.RequireString("estimate.routing");
  const std::string loads = c.RequireString("estimate.loads");
  const std::string out = c.RequireString("estimate.out");
  const trainer::ModelCheckpoint ckpt = checkpoint::Load(ckpt_path);
  const data::RoutingMatrix a = data::LoadRoutingMatrix(routing);
  const data::LinkLoadSeries y = data::LoadLinkLoads(loads);

  estimator::EstimateConfig e;
  e.opt_epochs = static_cast<int>(c.Int("estimate.opt_epochs", e.opt_epochs));
  e.init_candidates = static_cast<int>(c.Int("estimate.init_candidates", e.init_candidates));
  e.step_size = c.Double("estimate.step_size", e.step_size);
  e.seed = c.Uint("estimate.seed", e.seed);
  e.stall_tolerance = c.Double("estimate.stall_tolerance", e.stall_tolerance);
  const std::string norm = c.String("estimate.norm", "l2");
  if (norm == "l2") {
    e.norm = estimator::Norm::kL2;
  } else if (norm == "l1") {
    e.norm = estimator::Norm::kL1;
  } else {
    throw ConfigError("estimate.norm must be l2 or l1, got '" + norm + "'");
  }
  e.sampler = SamplerFrom(c);

  const std::uint32_t before = checkpoint::ParameterChecksum(ckpt);
  const estimator::EstimateResult r = estimator::Estimate(ckpt, a, y.values, e);
  if (checkpoint::ParameterChecksum(ckpt) != before) throw IntegrityError("model parameters changed during estimation");

  manifest::Manifest m;
  m.AddInput("checkpoint", ckpt_path);
  m.AddInput("routing", routing);
  m.AddInput("loads", loads);
  EnsureParent(out);
  csv::WriteMatrix(out, r.estimates);
  m.AddOutput("estimates", out);
  if (c.Has("estimate.trajectory_out")) {
    const std::string traj = c.RequireString("estimate.trajectory_out");
    Matrix t(static_cast<Index>(r.trajectory.size()), 2);
    for (std::size_t i = 0; i < r.trajectory.size(); ++i) t.row(static_cast<Index>(i)) << double(i), r.trajectory[i];
    EnsureParent(traj);
    csv::WriteMatrix(traj, t, {"epoch", "residual"});
    m.AddOutput("trajectory", traj);
  }
  if (c.Has("estimate.baseline_out")) {
    const std::string base = c.RequireString("estimate.baseline_out");
    EnsureParent(base);
    csv::WriteMatrix(base, estimator::BaselineLeastNorm(a, y.values));
    m.AddOutput("baseline", base);
  }
  std::vector<Index> hidden;
  for (std::size_t j = 0; j < r.unobservable.size(); ++j) {
    if (r.unobservable[j]) hidden.push_back(static_cast<Index>(j));
  }
  m.extra["unobservable_flows"] = hidden;
  m.extra["init_choice"] = r.init_choice;
  m.extra["residual_init"] = r.trajectory.front();
  m.extra["residual_final"] = r.trajectory.back();
  m.extra["epochs_run"] = r.epochs_run;
  m.extra["parameter_crc32"] = before;
  std::cerr << "residual " << r.trajectory.front() << " -> " << r.trajectory.back() << " after " << r.epochs_run
            << " epochs\n";
  return m;
}

void WriteSeries(const std::string& path, const std::string& index_name, const std::string& value_name,
                 const metrics::MetricSeries& s) {
  Matrix out(static_cast<Index>(s.values.size()), 2);
  for (std::size_t i = 0; i < s.values.size(); ++i) out.row(static_cast<Index>(i)) << double(s.index[i]), s.values[i];
  csv::WriteMatrix(path, out, {index_name, value_name});
}

manifest::Manifest Eval(const config::Config& c) {
  const std::string truth_path = c.RequireString("eval.truth");
  const std::string est_path = c.RequireString("eval.estimate");
  const std::string dir = c.RequireString("eval.out_dir");
  Matrix truth = ReadMatrix(truth_path, "true series");
  Matrix est = ReadMatrix(est_path, "estimated series");
  const std::string agg = c.String("eval.aggregate", "none");
  if (agg != "none") {
    if (agg != "mean" && agg != "sum") throw ConfigError("eval.aggregate must be none, mean or sum");
    const auto how = agg == "mean" ? metrics::Aggregation::kMean : metrics::Aggregation::kSum;
    const Index group = c.Int("eval.group", 12);
    truth = metrics::AggregateRows(truth, group, how);
    est = metrics::AggregateRows(est, group, how);
  }
  const metrics::MetricReport r = metrics::Evaluate(truth, est);
  const metrics::EmpiricalCdf cdf(metrics::NormalizedAbsoluteErrors(truth, est));

  fs::create_directories(dir);
  const std::string summary_path = (fs::path(dir) / "metrics.csv").string();
  {
    std::ofstream out(summary_path);
    if (!out) throw IoError("cannot write '" + summary_path + "'");
    out << "metric,mean,median,std,max,count,excluded\n";
    for (const auto& [name, s] : {std::pair{"rmse", &r.rmse}, std::pair{"tre", &r.tre}, std::pair{"sre", &r.sre}}) {
      out << name << ',' << csv::FormatDouble(s->summary.mean) << ',' << csv::FormatDouble(s->summary.median) << ','
          << csv::FormatDouble(s->summary.stddev) << ',' << csv::FormatDouble(s->summary.max) << ','
          << s->summary.count << ',' << s->excluded.size() << '\n';
    }
  }
  const auto in_dir = [&](const char* name) { return (fs::path(dir) / name).string(); };
  WriteSeries(in_dir("rmse.csv"), "timepoint", "rmse", r.rmse);
  WriteSeries(in_dir("tre.csv"), "timepoint", "tre", r.tre);
  WriteSeries(in_dir("sre.csv"), "flow", "sre", r.sre);
  const auto steps = cdf.Steps();
  Matrix cdf_rows(static_cast<Index>(steps.size()), 2);
  for (std::size_t i = 0; i < steps.size(); ++i) cdf_rows.row(static_cast<Index>(i)) << steps[i].first, steps[i].second;
  csv::WriteMatrix(in_dir("cdf.csv"), cdf_rows, {"normalized_error", "cdf"});

  manifest::Manifest m;
  m.AddInput("truth", truth_path);
  m.AddInput("estimate", est_path);
  for (const char* f : {"metrics.csv", "rmse.csv", "tre.csv", "sre.csv", "cdf.csv"}) m.AddOutput(f, in_dir(f));
  m.extra["excluded"] = {{"tre", r.tre.excluded}, {"sre", r.sre.excluded}};
  std::cout << "metric   mean      median    std       max\n";
  for (const auto& [name, s] : {std::pair{"RMSE", &r.rmse}, std::pair{"TRE ", &r.tre}, std::pair{"SRE ", &r.sre}}) {
    std::printf("%s     %-9.4g %-9.4g %-9.4g %-9.4g\n", name, s->summary.mean, s->summary.median, s->summary.stddev,
                s->summary.max);
  }
  return m;
}

manifest::Manifest Project(const config::Config& c) {
  const std::string real_path = c.RequireString("project.real");
  const std::string synth_path = c.RequireString("project.synthetic");
  const std::string out = c.RequireString("project.out");
  const std::string method = c.String("project.method", "pca");
  projection::TsneParams p;
  p.perplexity = c.Double("project.perplexity", p.perplexity);
  p.theta = c.Double("project.theta", p.theta);
  p.iterations = static_cast<int>(c.Int("project.iterations", p.iterations));
  p.seed = c.Uint("project.seed", p.seed);
  projection::Method mth;
  if (method == "pca") {
    mth = projection::Method::kPca;
  } else if (method == "tsne") {
    mth = projection::Method::kTsne;
  } else {
    throw ConfigError("project.method must be pca or tsne, got '" + method + "'");
  }
  // Volumes span orders of magnitude, so both sets are compared in log space.
  const Matrix real = ReadMatrix(real_path, "real samples").array().log1p().matrix();
  const Matrix synth = ReadMatrix(synth_path, "synthetic samples").array().log1p().matrix();
  const projection::ProjectionResult r = projection::Project2d(real, synth, mth, p);
  Matrix rows(r.real.rows() + r.synthetic.rows(), 3);
  rows.topLeftCorner(r.real.rows(), 1).setZero();
  rows.bottomLeftCorner(r.synthetic.rows(), 1).setOnes();
  rows.topRightCorner(r.real.rows(), 2) = r.real;
  rows.bottomRightCorner(r.synthetic.rows(), 2) = r.synthetic;
  EnsureParent(out);
  csv::WriteMatrix(out, rows, {"set", "x", "y"});
  manifest::Manifest m;
  m.AddInput("real", real_path);
  m.AddInput("synthetic", synth_path);
  m.AddOutput("projection", out);
  m.extra["method"] = method;
  if (mth == projection::Method::kTsne) m.extra["tsne"] = {{"perplexity", p.perplexity}, {"seed", p.seed}};
  return m;
}

manifest::Manifest Plot(const config::Config& c) {
  const std::string dir = c.RequireString("plot.out_dir");
  fs::create_directories(dir);
  manifest::Manifest m;
  bool any = false;
  if (c.Has("plot.projection")) {
    const std::string path = c.RequireString("plot.projection");
    const Matrix rows = ReadMatrix(path, "projection");
    if (rows.cols() != 3) throw ShapeError("projection file needs columns set,x,y");
    plot::Chart chart;
    chart.title = "2-D projection of real and synthetic TMs";
    chart.x_label = "component 1";
    chart.y_label = "component 2";
    chart.series = {{"real", "#1f77b4", {}, false}, {"synthetic", "#d62728", {}, false}};
    for (Index i = 0; i < rows.rows(); ++i) chart.series[rows(i, 0) > 0.5 ? 1 : 0].points.emplace_back(rows(i, 1), rows(i, 2));
    const std::string svg = (fs::path(dir) / "projection.svg").string();
    const std::string raw = (fs::path(dir) / "projection.csv").string();
    plot::WriteSvg(svg, chart);
    csv::WriteMatrix(raw, rows, {"set", "x", "y"});
    m.AddInput("projection", path);
    m.AddOutput("projection.svg", svg);
    m.AddOutput("projection.csv", raw);
    any = true;
  }
  if (c.Has("plot.eval_dir")) {
    const fs::path eval_dir = c.RequireString("plot.eval_dir");
    const std::string cdf_path = (eval_dir / "cdf.csv").string();
    const std::string tre_path = (eval_dir / "tre.csv").string();
    const Matrix cdf = ReadMatrix(cdf_path, "error CDF");
    const Matrix tre = ReadMatrix(tre_path, "TRE series");
    plot::Chart cdf_chart;
    cdf_chart.title = "CDF of normalized absolute error";
    cdf_chart.x_label = "|x - x_hat| / max x";
    cdf_chart.y_label = "CDF";
    std::vector<std::pair<double, double>> steps;
    for (Index i = 0; i < cdf.rows(); ++i) steps.emplace_back(cdf(i, 0), cdf(i, 1));
    cdf_chart.series.push_back({"estimate", "#2ca02c", plot::Staircase(steps), true});
    plot::Chart tre_chart;
    tre_chart.title = "Temporal relative error";
    tre_chart.x_label = "timepoint";
    tre_chart.y_label = "TRE";
    plot::Series tre_series{"TRE", "#9467bd", {}, true};
    for (Index i = 0; i < tre.rows(); ++i) tre_series.points.emplace_back(tre(i, 0), tre(i, 1));
    tre_chart.series.push_back(std::move(tre_series));
    const std::string cdf_svg = (fs::path(dir) / "error_cdf.svg").string();
    const std::string cdf_raw = (fs::path(dir) / "error_cdf.csv").string();
    const std::string tre_svg = (fs::path(dir) / "tre.svg").string();
    const std::string tre_raw = (fs::path(dir) / "tre.csv").string();
    plot::WriteSvg(cdf_svg, cdf_chart);
    plot::WriteSvg(tre_svg, tre_chart);
    csv::WriteMatrix(cdf_raw, cdf, {"normalized_error", "cdf"});
    csv::WriteMatrix(tre_raw, tre, {"timepoint", "tre"});
    m.AddInput("cdf", cdf_path);
    m.AddInput("tre", tre_path);
    m.AddOutput("error_cdf.svg", cdf_svg);
    m.AddOutput("error_cdf.csv", cdf_raw);
    m.AddOutput("tre.svg", tre_svg);
    m.AddOutput("tre.csv", tre_raw);
    any = true;
  }
  if (!any) throw ConfigError("plot needs plot.projection and/or plot.eval_dir");
  return m;
}

struct Stage {
  std::function<manifest::Manifest(const config::Config&)> run;
  std::function<std::string(const config::Config&)> manifest_path;
};

const std::map<std::string, Stage>& Stages() {
  static const std::map<std::string, Stage> stages = {
      {"data build-routing", {BuildRouting, [](const config::Config& c) { return ManifestBeside(c.RequireString("routing.out")); }}},
      {"data link-loads", {LinkLoads, [](const config::Config& c) { return ManifestBeside(c.RequireString("loads.out")); }}},
      {"data toy", {Toy, [](const config::Config& c) { return ManifestBeside(c.RequireString("toy.tm_out")); }}},
      {"train", {Train, [](const config::Config& c) { return ManifestBeside(c.RequireString("train.out")); }}},
      {"synth", {Synth, [](const config::Config& c) { return ManifestBeside(c.RequireString("synth.out")); }}},
      {"estimate", {Estimate, [](const config::Config& c) { return ManifestBeside(c.RequireString("estimate.out")); }}},
      {"eval", {Eval, [](const config::Config& c) { return (fs::path(c.RequireString("eval.out_dir")) / "manifest.json").string(); }}},
      {"project", {Project, [](const config::Config& c) { return ManifestBeside(c.RequireString("project.out")); }}},
      {"plot", {Plot, [](const config::Config& c) { return (fs::path(c.RequireString("plot.out_dir")) / "manifest.json").string(); }}},
  };
  return stages;
}

void RunStage(const std::string& command, const config::Config& c) {
  c.RequireKnown(kKnownKeys);
  const Stage& stage = Stages().at(command);
  manifest::Manifest m = stage.run(c);
  m.command = command;
  m.config = c;
  m.extra["cwd"] = fs::current_path().string();
  const std::string path = stage.manifest_path(c);
  manifest::Write(path, m);
  std::cerr << "wrote " << path << '\n';
}

void Rerun(const std::string& manifest_path, bool verify) {
  const manifest::Manifest m = manifest::Read(manifest_path);
  if (!Stages().contains(m.command)) throw ParseError("manifest names unknown command '" + m.command + "'");
  if (m.extra.contains("cwd")) fs::current_path(m.extra["cwd"].get<std::string>());
  for (const auto& in : m.inputs) {
    if (manifest::FileCrc32(in.path) != in.crc32) throw IntegrityError("input '" + in.path + "' changed since the recorded run");
  }
  RunStage(m.command, m.config);
  if (!verify) return;
  for (const auto& out : m.outputs) {
    if (manifest::FileCrc32(out.path) != out.crc32) throw IntegrityError("output '" + out.path + "' differs from the recorded run");
  }
  std::cerr << "reproduced " << m.outputs.size() << " output(s)\n";
}

// Options shared by every stage: --config, --set, plus per-stage shortcuts
// that write straight into config keys.
struct StageArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;
};

CLI::App* AddStage(CLI::App& parent, const std::string& name, const std::string& help, StageArgs& args,
                   const std::vector<std::pair<std::string, std::string>>& shortcuts) {
  CLI::App* sub = parent.add_subcommand(name, help);
  sub->add_option("-c,--config", args.config_path, "config file")->check(CLI::ExistingFile);
  sub->add_option("--set", args.sets, "override, key=value (repeatable)");
  for (const auto& [flag, key] : shortcuts) sub->add_option(flag, args.flags[key], "sets " + key);
  return sub;
}

config::Config Resolve(const StageArgs& args) {
  config::Config c = args.config_path.empty() ? config::Config{} : config::Config::Load(args.config_path);
  for (const auto& s : args.sets) c.Override(s);
  for (const auto& [key, value] : args.flags) {
    if (!value.empty()) c.Set(key, value);
  }
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tomodiff: traffic matrix estimation with a latent diffusion prior"};
  app.require_subcommand(1);
  std::map<std::string, StageArgs> args;

  CLI::App* data_cmd = app.add_subcommand("data", "topology, routing and link-load preparation");
  data_cmd->require_subcommand(1);
  std::vector<std::pair<std::string, CLI::App*>> stages;
  stages.emplace_back("data build-routing",
                      AddStage(*data_cmd, "build-routing", "build A from a topology file", args["data build-routing"],
                               {{"--topology", "routing.topology"}, {"--policy", "routing.policy"}, {"-o,--out", "routing.out"}}));
  stages.emplace_back("data link-loads",
                      AddStage(*data_cmd, "link-loads", "compute Y = A X for a TM series", args["data link-loads"],
                               {{"--routing", "loads.routing"}, {"--tm", "loads.tm"}, {"-o,--out", "loads.out"}}));
  stages.emplace_back("data toy", AddStage(*data_cmd, "toy", "write the synthetic 4-node TM series", args["data toy"],
                                           {{"--timepoints", "toy.timepoints"}, {"--seed", "toy.seed"},
                                            {"-o,--out", "toy.tm_out"}, {"--routing-out", "toy.routing_out"}}));
  stages.emplace_back("train", AddStage(app, "train", "train autoencoder and denoiser", args["train"],
                                        {{"--tm", "data.tm"}, {"-o,--out", "train.out"}, {"--resume", "train.resume"},
                                         {"--seed", "train.seed"}}));
  stages.emplace_back("synth", AddStage(app, "synth", "sample synthetic TMs from a checkpoint", args["synth"],
                                        {{"--checkpoint", "synth.checkpoint"}, {"-n,--count", "synth.count"},
                                         {"--seed", "synth.seed"}, {"-o,--out", "synth.out"}}));
  stages.emplace_back("estimate", AddStage(app, "estimate", "estimate TMs from link loads", args["estimate"],
                                           {{"--checkpoint", "estimate.checkpoint"}, {"--routing", "estimate.routing"},
                                            {"--loads", "estimate.loads"}, {"-o,--out", "estimate.out"},
                                            {"--opt-epochs", "estimate.opt_epochs"}, {"--seed", "estimate.seed"}}));
  stages.emplace_back("eval", AddStage(app, "eval", "RMSE/TRE/SRE report and error CDF", args["eval"],
                                       {{"--truth", "eval.truth"}, {"--estimate", "eval.estimate"},
                                        {"-o,--out-dir", "eval.out_dir"}, {"--aggregate", "eval.aggregate"}}));
  stages.emplace_back("project", AddStage(app, "project", "joint 2-D projection of real and synthetic TMs", args["project"],
                                          {{"--real", "project.real"}, {"--synthetic", "project.synthetic"},
                                           {"--method", "project.method"}, {"-o,--out", "project.out"}}));
  stages.emplace_back("plot", AddStage(app, "plot", "SVG charts from eval and project outputs", args["plot"],
                                       {{"--projection", "plot.projection"}, {"--eval-dir", "plot.eval_dir"},
                                        {"-o,--out-dir", "plot.out_dir"}}));

  std::string manifest_path;
  bool no_verify = false;
  CLI::App* rerun = app.add_subcommand("rerun", "replay a stage from its manifest");
  rerun->add_option("manifest", manifest_path, "manifest JSON")->required();
  rerun->add_flag("--no-verify", no_verify, "skip comparing outputs with the recorded checksums");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (rerun->parsed()) {
      Rerun(manifest_path, !no_verify);
      return 0;
    }
    for (const auto& [name, sub] : stages) {
      if (sub->parsed()) {
        RunStage(name, Resolve(args[name]));
        return 0;
      }
    }
    return 2;
  } catch (const Error& e) {
    std::cerr << "tomodiff: " << e.what() << '\n';
    return ExitCode(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "tomodiff: " << e.what() << '\n';
    return 1;
  }
}
