use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use rowfollow::geometry::{
    ground_truth, render_annotations, AnnotationRecord, CameraAttitude, CameraIntrinsics,
    CameraPoseInRow, LabelRecord,
};
use rowfollow::simulation::export::{
    path_points, read_record_csv, record_csv, suite_table_csv, summary_json, trajectory_svg,
    write_atomic, PathPoint,
};
use rowfollow::simulation::{aggregate, run_suite_with_jobs, run_trial, TrialConfig};

/// Exit status when some records or trials failed.
const EXIT_PARTIAL: u8 = 1;
/// Exit status for invalid invocations, inputs or configurations.
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "rowfollow", version, about = "Under-canopy row following: ground truthing and closed-loop trials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Recover heading and distance-ratio labels from line annotations.
    Groundtruth(GroundtruthArgs),
    /// Run one closed-loop trial.
    Trial(TrialArgs),
    /// Run a list of configurations, optionally over a batch of seeds.
    Suite(SuiteArgs),
    /// Cross-product sweep over configuration axes and seeds.
    Sweep(SweepArgs),
    /// Render an SVG trajectory plot from a trial record.
    Plot(PlotArgs),
    /// Print configuration.
    Config(ConfigArgs),
    /// Render random poses and check that ground truthing recovers them.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct GroundtruthArgs {
    /// JSON-lines annotation file.
    #[arg(long)]
    annotations: PathBuf,
    /// JSON-lines label output.
    #[arg(long)]
    out: PathBuf,
    /// Override every record's focal length (px).
    #[arg(long)]
    focal: Option<f64>,
    /// Override every record's image width (px).
    #[arg(long)]
    width: Option<u32>,
    /// Override every record's image height (px).
    #[arg(long)]
    height: Option<u32>,
    /// Also write per-record failures as JSON lines.
    #[arg(long)]
    errors: Option<PathBuf>,
}

#[derive(Args)]
struct ConfigSource {
    /// TOML configuration; defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` applied after the file, dotted keys, last one wins.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct TrialArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Output directory for record.csv, summary.json and trajectory.svg.
    #[arg(long)]
    out: PathBuf,
    /// Also write trajectory.svg.
    #[arg(long)]
    plot: bool,
}

#[derive(Args)]
struct JobsArgs {
    /// Worker threads.
    #[arg(long, env = "ROWFOLLOW_JOBS")]
    jobs: Option<usize>,
}

#[derive(Args)]
struct SuiteArgs {
    /// TOML configurations, one suite entry each.
    #[arg(long = "config", required = true)]
    configs: Vec<PathBuf>,
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seeds as `a..b` (inclusive) or a comma list; each config keeps its
    /// own seed when absent.
    #[arg(long)]
    seeds: Option<String>,
    /// Table output (CSV).
    #[arg(long)]
    out: PathBuf,
    /// Per-configuration aggregates (JSON).
    #[arg(long)]
    aggregate: Option<PathBuf>,
    #[command(flatten)]
    jobs: JobsArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// `key=v1,v2,...`; repeated axes form a cross product.
    #[arg(long = "axis", value_name = "KEY=VALUES")]
    axes: Vec<String>,
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    aggregate: Option<PathBuf>,
    #[command(flatten)]
    jobs: JobsArgs,
}

#[derive(Args)]
struct PlotArgs {
    /// record.csv written by `trial`.
    #[arg(long)]
    record: PathBuf,
    /// Configuration the trial ran with (for the field geometry).
    #[command(flatten)]
    source: ConfigSource,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    /// Print the built-in defaults.
    #[arg(long, conflicts_with_all = ["config", "overrides"])]
    defaults: bool,
    #[command(flatten)]
    source: ConfigSource,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Use stalk lines instead of a direct horizon annotation.
    #[arg(long)]
    stalks: bool,
    /// Write the rendered annotations as JSON lines.
    #[arg(long)]
    emit_annotations: Option<PathBuf>,
    /// Write the generating poses as labels.
    #[arg(long)]
    emit_labels: Option<PathBuf>,
    /// Maximum tolerated label error (rad / ratio).
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
}

/// Error carrying the exit status it should produce.
#[derive(Debug)]
struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait ExitWith<T> {
    fn usage(self) -> std::result::Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ExitWith<T> for std::result::Result<T, E> {
    fn usage(self) -> std::result::Result<T, Failure> {
        self.map_err(|e| Failure {
            code: EXIT_USAGE,
            error: e.into(),
        })
    }
}

type CmdResult = std::result::Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Groundtruth(a) => cmd_groundtruth(&a),
        Command::Trial(a) => cmd_trial(&a),
        Command::Suite(a) => cmd_suite(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Plot(a) => cmd_plot(&a),
        Command::Config(a) => cmd_config(&a),
        Command::Selftest(a) => cmd_selftest(&a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(source: &ConfigSource) -> Result<TrialConfig> {
    let base = match &source.config {
        Some(p) => TrialConfig::load(p)?,
        None => TrialConfig::default(),
    };
    let cfg = base.with_overrides(&source.overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    write_atomic(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

#[derive(Serialize)]
struct RecordError {
    line: usize,
    image_id: Option<String>,
    error: String,
}

fn cmd_groundtruth(a: &GroundtruthArgs) -> CmdResult {
    let file = fs::File::open(&a.annotations)
        .with_context(|| format!("cannot read {}", a.annotations.display()))
        .usage()?;
    let mut labels = String::new();
    let mut errors = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line
            .with_context(|| format!("cannot read {}", a.annotations.display()))
            .usage()?;
        if line.trim().is_empty() {
            continue;
        }
        let mut image_id = None;
        let outcome = (|| -> Result<LabelRecord> {
            let mut rec: AnnotationRecord = serde_json::from_str(&line)?;
            image_id = Some(rec.image_id.clone());
            if let Some(f) = a.focal {
                rec.f_px = f;
            }
            if let Some(w) = a.width {
                rec.width = w;
            }
            if let Some(h) = a.height {
                rec.height = h;
            }
            let cam = rec.intrinsics()?;
            let set = rec.to_annotation_set()?;
            let label = ground_truth(&set, &cam)?;
            Ok(LabelRecord::new(rec.image_id, &label))
        })();
        match outcome {
            Ok(label) => {
                labels.push_str(&serde_json::to_string(&label).expect("label serializes"));
                labels.push('\n');
            }
            Err(e) => {
                eprintln!(
                    "record {} ({}): {e:#}",
                    i + 1,
                    image_id.as_deref().unwrap_or("?")
                );
                errors.push(RecordError {
                    line: i + 1,
                    image_id,
                    error: format!("{e:#}"),
                });
            }
        }
    }
    write_file(&a.out, labels.as_bytes()).usage()?;
    if let Some(path) = &a.errors {
        let mut text = String::new();
        for e in &errors {
            text.push_str(&serde_json::to_string(e).expect("error record serializes"));
            text.push('\n');
        }
        write_file(path, text.as_bytes()).usage()?;
    }
    if errors.is_empty() {
        Ok(0)
    } else {
        eprintln!("{} record(s) failed", errors.len());
        Ok(EXIT_PARTIAL)
    }
}

fn cmd_trial(a: &TrialArgs) -> CmdResult {
    let cfg = load_config(&a.source).usage()?;
    let record = run_trial(&cfg).usage()?;
    fs::create_dir_all(&a.out)
        .with_context(|| format!("cannot create {}", a.out.display()))
        .usage()?;
    let csv = record_csv(&record).usage()?;
    write_file(&a.out.join("record.csv"), &csv).usage()?;
    let json = summary_json(&record).usage()?;
    write_file(&a.out.join("summary.json"), json.as_bytes()).usage()?;
    if a.plot {
        let svg = trajectory_svg(&cfg.field, &path_points(&record));
        write_file(&a.out.join("trajectory.svg"), svg.as_bytes()).usage()?;
    }
    let s = &record.summary;
    println!(
        "distance_m={:.3} interventions={} mean_abs_cte_m={:.6} max_abs_cte_m={:.6}",
        s.distance_m, s.interventions, s.mean_abs_cte_m, s.max_abs_cte_m
    );
    Ok(0)
}

/// Parses `a..b` (inclusive) or `a,b,c`.
fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let text = text.trim();
    if let Some((lo, hi)) = text.split_once("..") {
        let lo: u64 = lo.trim().parse().with_context(|| format!("bad seed range `{text}`"))?;
        let hi: u64 = hi
            .trim()
            .trim_start_matches('=')
            .parse()
            .with_context(|| format!("bad seed range `{text}`"))?;
        if hi < lo {
            bail!("empty seed range `{text}`");
        }
        return Ok((lo..=hi).collect());
    }
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .with_context(|| format!("bad seed `{s}` in `{text}`"))
        })
        .collect()
}

/// Expands each configuration over the seed batch, config-major.
fn expand_seeds(configs: Vec<TrialConfig>, seeds: &Option<String>) -> Result<(Vec<TrialConfig>, Vec<usize>)> {
    let seeds = seeds.as_deref().map(parse_seeds).transpose()?;
    let mut suite = Vec::new();
    let mut index = Vec::new();
    for (i, cfg) in configs.into_iter().enumerate() {
        match &seeds {
            Some(list) => {
                for &s in list {
                    suite.push(TrialConfig { seed: s, ..cfg.clone() });
                    index.push(i);
                }
            }
            None => {
                suite.push(cfg);
                index.push(i);
            }
        }
    }
    Ok((suite, index))
}

fn run_and_write(
    suite: &[TrialConfig],
    index: &[usize],
    jobs: Option<usize>,
    axis_names: &[String],
    axis_values: &[Vec<String>],
    out: &Path,
    aggregate_out: Option<&Path>,
) -> CmdResult {
    let mut rows = run_suite_with_jobs(suite, jobs);
    for (row, &i) in rows.iter_mut().zip(index) {
        row.config_index = i;
    }
    let table = suite_table_csv(&rows, axis_names, axis_values).usage()?;
    write_file(out, &table).usage()?;
    if let Some(path) = aggregate_out {
        let agg = serde_json::to_string_pretty(&aggregate(&rows)).usage()?;
        write_file(path, agg.as_bytes()).usage()?;
    }
    let failed: Vec<_> = rows.iter().filter(|r| r.result.is_err()).collect();
    for r in &failed {
        if let Err(e) = &r.result {
            eprintln!("config {} seed {}: {e}", r.config_index, r.seed);
        }
    }
    println!("{} trial(s), {} failed", rows.len(), failed.len());
    Ok(if failed.is_empty() { 0 } else { EXIT_PARTIAL })
}

fn cmd_suite(a: &SuiteArgs) -> CmdResult {
    let configs = a
        .configs
        .iter()
        .map(|p| {
            let cfg = TrialConfig::load(p)?.with_overrides(&a.overrides)?;
            Ok(cfg)
        })
        .collect::<Result<Vec<_>>>()
        .usage()?;
    let (suite, index) = expand_seeds(configs, &a.seeds).usage()?;
    let names = vec!["config".to_string()];
    let values: Vec<Vec<String>> = a
        .configs
        .iter()
        .map(|p| vec![p.display().to_string()])
        .collect();
    run_and_write(
        &suite,
        &index,
        a.jobs.jobs,
        &names,
        &values,
        &a.out,
        a.aggregate.as_deref(),
    )
}

fn parse_axis(text: &str) -> Result<(String, Vec<String>)> {
    let (key, values) = text
        .split_once('=')
        .with_context(|| format!("axis must be key=v1,v2,..., got `{text}`"))?;
    let key = key.trim();
    if key.is_empty() {
        bail!("axis `{text}` has an empty key");
    }
    let values: Vec<String> = values
        .split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        bail!("axis `{key}` has no values");
    }
    Ok((key.to_string(), values))
}

fn cmd_sweep(a: &SweepArgs) -> CmdResult {
    let base = load_config(&a.source).usage()?;
    let axes = a
        .axes
        .iter()
        .map(|s| parse_axis(s))
        .collect::<Result<Vec<_>>>()
        .usage()?;

    // Cross product, first axis outermost.
    let mut combos: Vec<Vec<String>> = vec![Vec::new()];
    for (_, values) in &axes {
        combos = combos
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut next = prefix.clone();
                    next.push(v.clone());
                    next
                })
            })
            .collect();
    }
    let names: Vec<String> = axes.iter().map(|(k, _)| k.clone()).collect();
    let configs = combos
        .iter()
        .map(|combo| {
            let overrides: Vec<String> = names
                .iter()
                .zip(combo)
                .map(|(k, v)| format!("{k}={v}"))
                .collect();
            let cfg = base.with_overrides(&overrides)?;
            cfg.validate()?;
            Ok(cfg)
        })
        .collect::<Result<Vec<_>>>()
        .usage()?;
    let (suite, index) = expand_seeds(configs, &a.seeds).usage()?;
    run_and_write(
        &suite,
        &index,
        a.jobs.jobs,
        &names,
        &combos,
        &a.out,
        a.aggregate.as_deref(),
    )
}

fn cmd_plot(a: &PlotArgs) -> CmdResult {
    let cfg = load_config(&a.source).usage()?;
    let rows = read_record_csv(&a.record)
        .with_context(|| format!("cannot read {}", a.record.display()))
        .usage()?;
    let points: Vec<PathPoint> = rows.iter().map(PathPoint::from).collect();
    write_file(&a.out, trajectory_svg(&cfg.field, &points).as_bytes()).usage()?;
    Ok(0)
}

fn cmd_config(a: &ConfigArgs) -> CmdResult {
    let cfg = if a.defaults {
        TrialConfig::default()
    } else {
        load_config(&a.source).usage()?
    };
    print!("{}", cfg.to_toml_string());
    Ok(0)
}

fn cmd_selftest(a: &SelftestArgs) -> CmdResult {
    let cam = CameraIntrinsics::new(400.0, 1280, 960).usage()?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut annotations = String::new();
    let mut labels = String::new();
    let (mut worst, mut failures) = (0.0f64, 0usize);
    for i in 0..a.count {
        let deg = |rng: &mut ChaCha8Rng, m: f64| rng.random_range(-m..=m).to_radians();
        let attitude = CameraAttitude::new(deg(&mut rng, 15.0), deg(&mut rng, 30.0), deg(&mut rng, 35.0))
            .usage()?;
        let ratio = rng.random_range(0.1..=0.9);
        let pose = CameraPoseInRow::from_ratio(attitude, 0.3, 0.75, ratio).usage()?;
        let id = format!("synthetic-{i:05}");
        let stalk_count = if a.stalks { 6 } else { 0 };
        let outcome = render_annotations(&pose, &cam, stalk_count)
            .map_err(anyhow::Error::from)
            .and_then(|set| {
                annotations.push_str(
                    &serde_json::to_string(&AnnotationRecord::from_annotation_set(&id, &set, &cam))
                        .expect("record serializes"),
                );
                annotations.push('\n');
                Ok(ground_truth(&set, &cam)?)
            });
        let truth = rowfollow::geometry::GroundTruthLabel {
            heading: attitude.heading,
            distance_ratio: ratio,
            attitude,
        };
        labels.push_str(&serde_json::to_string(&LabelRecord::new(&id, &truth)).expect("label serializes"));
        labels.push('\n');
        match outcome {
            Ok(label) => {
                let err = [
                    (label.heading - attitude.heading).abs(),
                    (label.distance_ratio - ratio).abs(),
                    (label.attitude.roll - attitude.roll).abs(),
                    (label.attitude.pitch - attitude.pitch).abs(),
                ]
                .into_iter()
                .fold(0.0, f64::max);
                worst = worst.max(err);
            }
            Err(e) => {
                failures += 1;
                eprintln!("{id}: {e:#}");
            }
        }
    }
    if let Some(p) = &a.emit_annotations {
        write_file(p, annotations.as_bytes()).usage()?;
    }
    if let Some(p) = &a.emit_labels {
        write_file(p, labels.as_bytes()).usage()?;
    }
    let pass = failures == 0 && worst <= a.tolerance;
    println!(
        "poses={} failures={failures} max_error={worst:.3e} tolerance={:.1e} {}",
        a.count,
        a.tolerance,
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(if pass { 0 } else { EXIT_PARTIAL })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_specs() {
        assert_eq!(parse_seeds("1..20").unwrap().len(), 20);
        assert_eq!(parse_seeds("3..=5").unwrap(), vec![3, 4, 5]);
        assert_eq!(parse_seeds("4, 9").unwrap(), vec![4, 9]);
        assert!(parse_seeds("5..1").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn axis_specs() {
        let (k, v) = parse_axis("perception.updateRate=22,10,5,2.3").unwrap();
        assert_eq!(k, "perception.updateRate");
        assert_eq!(v, vec!["22", "10", "5", "2.3"]);
        assert!(parse_axis("speed").is_err());
        assert!(parse_axis("speed=").is_err());
    }
}
