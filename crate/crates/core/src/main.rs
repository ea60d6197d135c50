use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use cfmargin::agents::{PolicyName, PolicySpec};
use cfmargin::analytics::{
    aggregate, parse_weights, rank_agents, write_curve_plot, write_margins, write_probabilities, write_ranking,
    write_severity_plot, Aggregate, OutputFormat, SPEED_SPLIT,
};
use cfmargin::io::{parse_episode, parse_scenario_with_warnings, write_episode, write_scenario, ScenarioFormat};
use cfmargin::counterfactual::ego_idm_params;
use cfmargin::error::MarginError;
use cfmargin::margin::{safety_margin, EgoMode, MarginConfig, MarginResult};
use cfmargin::model::{CounterfactualKind, Episode};
use cfmargin::severity::SeverityModel;
use cfmargin::sim::{simulate, PolicyAssignment};
use cfmargin::suite::{generate_suite, SuiteConfig};

#[derive(Parser)]
#[command(name = "cfmargin", version, about = "Counterfactual safety margins for driving policies")]
struct Cli {
    /// Worker threads; output does not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario closed loop and write its episode log.
    Simulate {
        #[arg(long, required = true, num_args = 1..)]
        scenario: Vec<PathBuf>,
        #[arg(long = "scenario-format")]
        scenario_format: Option<String>,
        /// Overrides the seed stored in the scenario.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Safety margins of episodes under counterfactual sweeps.
    Sweep {
        #[command(flatten)]
        input: EpisodeInput,
        #[command(flatten)]
        margin: MarginArgs,
        /// replay, policy:NAME or best-response.
        #[arg(long = "ego-mode", default_value = "replay")]
        ego_mode: String,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Non-reactive and best-response margins, and their ordering.
    Bounds {
        #[command(flatten)]
        input: EpisodeInput,
        #[command(flatten)]
        margin: MarginArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Curves, histograms, rankings and plot tables from sweep results.
    Aggregate {
        /// A results.json from sweep or bounds, optionally as LABEL=PATH.
        #[arg(long, required = true, num_args = 1..)]
        results: Vec<String>,
        /// episode_id,weight rows.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Episodes to split by mean initial speed.
        #[arg(long, num_args = 1..)]
        episode: Vec<PathBuf>,
        #[arg(long, default_value_t = SPEED_SPLIT)]
        split: f64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Write the synthetic evaluation suite as scenarios and episodes.
    Suite {
        #[arg(long, default_value_t = SuiteConfig::default().seed)]
        seed: u64,
        #[arg(long = "per-band", default_value_t = SuiteConfig::default().per_band)]
        per_band: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct EpisodeInput {
    /// Episode log, or a directory of *.episode files.
    #[arg(long, num_args = 1..)]
    episode: Vec<PathBuf>,
    /// Scenario to simulate first.
    #[arg(long, num_args = 1..)]
    scenario: Vec<PathBuf>,
    #[arg(long = "scenario-format")]
    scenario_format: Option<String>,
}

#[derive(Args)]
struct MarginArgs {
    /// Counterfactual kind; repeat for several. All kinds by default.
    #[arg(long)]
    kind: Vec<String>,
    #[arg(long, default_value_t = 11)]
    grid: usize,
    #[arg(long, default_value_t = 4)]
    refine: usize,
    #[arg(long, default_value_t = 0.05)]
    eps: f64,
    #[arg(long, default_value_t = 50)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Severity coefficients as JSON.
    #[arg(long)]
    severity: Option<PathBuf>,
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Structured,
}

impl OutputArgs {
    fn format(&self) -> OutputFormat {
        match self.format {
            Format::Csv => OutputFormat::Csv,
            Format::Structured => OutputFormat::Structured,
        }
    }

    fn path(&self, stem: &str) -> PathBuf {
        let ext = match self.format {
            Format::Csv => "csv",
            Format::Structured => "jsonl",
        };
        self.out.join(format!("{stem}.{ext}"))
    }
}

enum Failure {
    Input(String),
    Simulation(String),
    Output(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Simulation(_) => 3,
            Failure::Output(_) => 1,
        }
    }
}

impl From<MarginError> for Failure {
    fn from(e: MarginError) -> Self {
        match e {
            MarginError::Config(_) | MarginError::Model(_) => Failure::Input(e.to_string()),
            _ => Failure::Simulation(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn input<E: std::fmt::Display>(what: &Path) -> impl FnOnce(E) -> Failure + '_ {
    move |e| Failure::Input(format!("{}: {e}", what.display()))
}

fn output<E: std::fmt::Display>(what: &Path) -> impl FnOnce(E) -> Failure + '_ {
    move |e| Failure::Output(format!("{}: {e}", what.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(output(dir))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(output(path))
}

fn write_table(path: &Path, f: impl FnOnce(BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let file = fs::File::create(path).map_err(output(path))?;
    f(BufWriter::new(file)).map_err(output(path))
}

fn scenario_format(path: &Path, flag: Option<&str>) -> Result<ScenarioFormat> {
    match flag {
        Some(f) => f.parse().map_err(|e| Failure::Input(format!("--scenario-format: {e}"))),
        None if path.extension().is_some_and(|x| x == "xml") => Ok(ScenarioFormat::CommonRoadXml),
        None => Ok(ScenarioFormat::Native),
    }
}

fn load_scenario_episode(path: &Path, flag: Option<&str>, seed: Option<u64>) -> Result<Episode> {
    let bytes = fs::read(path).map_err(input(path))?;
    let parsed = parse_scenario_with_warnings(&bytes, scenario_format(path, flag)?).map_err(input(path))?;
    for w in &parsed.warnings {
        eprintln!("warning: {}: {w}", path.display());
    }
    let s = parsed.scenario;
    simulate(&s, &PolicyAssignment::from_scenario(&s), seed.unwrap_or(s.seed), None)
        .map_err(|f| Failure::Simulation(format!("{}: {}", path.display(), f.error)))
}

fn episode_files(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(input(path))?
        .filter_map(|d| d.ok().map(|d| d.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "episode"))
        .collect();
    files.sort();
    Ok(files)
}

fn load_episodes(paths: &[PathBuf]) -> Result<Vec<Episode>> {
    let mut out = Vec::new();
    for p in paths {
        for f in episode_files(p)? {
            let bytes = fs::read(&f).map_err(input(&f))?;
            out.push(parse_episode(&bytes).map_err(input(&f))?);
        }
    }
    Ok(out)
}

fn gather(inp: &EpisodeInput) -> Result<Vec<Episode>> {
    let mut eps = load_episodes(&inp.episode)?;
    for s in &inp.scenario {
        eps.push(load_scenario_episode(s, inp.scenario_format.as_deref(), None)?);
    }
    if eps.is_empty() {
        return Err(Failure::Input("no episodes: pass --episode or --scenario".into()));
    }
    Ok(eps)
}

fn margin_config(m: &MarginArgs) -> Result<(MarginConfig, Vec<CounterfactualKind>)> {
    let severity = match &m.severity {
        Some(p) => SeverityModel::from_json(&fs::read_to_string(p).map_err(input(p))?).map_err(input(p))?,
        None => SeverityModel::default(),
    };
    let cfg = MarginConfig {
        eps: m.eps,
        grid: m.grid,
        refine: m.refine,
        reps: m.reps,
        seed: m.seed,
        severity,
    };
    cfg.validate()?;
    let kinds = if m.kind.is_empty() {
        CounterfactualKind::ALL.to_vec()
    } else {
        m.kind
            .iter()
            .map(|k| k.parse().map_err(|e| Failure::Input(format!("--kind: {e}"))))
            .collect::<Result<_>>()?
    };
    Ok((cfg, kinds))
}

#[derive(Clone)]
enum EgoArg {
    Replay,
    Policy(PolicyName),
    BestResponse,
}

fn parse_ego_mode(s: &str) -> Result<EgoArg> {
    match s {
        "replay" => Ok(EgoArg::Replay),
        "best-response" => Ok(EgoArg::BestResponse),
        _ => match s.strip_prefix("policy:") {
            Some(name) => name
                .parse()
                .map(EgoArg::Policy)
                .map_err(|e| Failure::Input(format!("--ego-mode: {e}"))),
            None => Err(Failure::Input(format!("--ego-mode: expected replay, policy:NAME or best-response, got {s:?}"))),
        },
    }
}

fn ego_mode(arg: &EgoArg, e: &Episode) -> Result<EgoMode> {
    Ok(match arg {
        EgoArg::Replay => EgoMode::NonReactive,
        EgoArg::BestResponse => EgoMode::BestResponse,
        EgoArg::Policy(name) => EgoMode::Reactive(match PolicySpec::idm_variant(*name, ego_idm_params(e)) {
            Ok(p) => p,
            Err(err) => return Err(Failure::Input(format!("--ego-mode: {err}"))),
        }),
    })
}

/// Margins for every (episode, kind, mode), in that nesting order.
fn run_margins(eps: &[Episode], kinds: &[CounterfactualKind], modes: &[EgoArg], cfg: &MarginConfig) -> Result<Vec<MarginResult>> {
    let jobs: Vec<(&Episode, CounterfactualKind, &EgoArg)> = eps
        .iter()
        .flat_map(|e| kinds.iter().flat_map(move |k| modes.iter().map(move |m| (e, *k, m))))
        .collect();
    jobs.par_iter()
        .map(|(e, k, m)| {
            let mode = ego_mode(m, e)?;
            safety_margin(e, *k, mode, cfg).map_err(|err| match Failure::from(err) {
                Failure::Simulation(msg) => Failure::Simulation(format!("episode {} {k}: {msg}", e.id)),
                other => other,
            })
        })
        .collect()
}

fn write_results(out: &OutputArgs, results: &[MarginResult]) -> Result<()> {
    create_dir(&out.out)?;
    let f = out.format();
    write_table(&out.path("probabilities"), |w| write_probabilities(w, results, f))?;
    write_table(&out.path("margins"), |w| write_margins(w, results, f))?;
    let json = serde_json::to_vec_pretty(results).map_err(|e| Failure::Output(e.to_string()))?;
    write_file(&out.out.join("results.json"), &json)
}

fn cmd_simulate(scenarios: &[PathBuf], flag: Option<&str>, seed: Option<u64>, out: &Path) -> Result<()> {
    create_dir(out)?;
    for s in scenarios {
        let e = load_scenario_episode(s, flag, seed)?;
        let stem = s.file_stem().map(|x| x.to_string_lossy().into_owned()).unwrap_or_else(|| e.id.clone());
        write_file(&out.join(format!("{stem}.episode")), &write_episode(&e))?;
    }
    Ok(())
}

fn cmd_sweep(inp: &EpisodeInput, m: &MarginArgs, ego: &str, out: &OutputArgs) -> Result<()> {
    let ego = parse_ego_mode(ego)?;
    let (cfg, kinds) = margin_config(m)?;
    let eps = gather(inp)?;
    let results = run_margins(&eps, &kinds, &[ego], &cfg)?;
    write_results(out, &results)
}

fn cmd_bounds(inp: &EpisodeInput, m: &MarginArgs, out: &OutputArgs) -> Result<()> {
    let (cfg, kinds) = margin_config(m)?;
    let eps = gather(inp)?;
    let results = run_margins(&eps, &kinds, &[EgoArg::Replay, EgoArg::BestResponse], &cfg)?;
    write_results(out, &results)?;
    let mut violations = 0;
    let mut rows = Vec::new();
    for pair in results.chunks(2) {
        let (lo, hi) = (&pair[0], &pair[1]);
        let ordered = lo.margin_or_inf() <= hi.margin_or_inf();
        violations += usize::from(!ordered);
        let show = |r: &MarginResult| r.margin.map(cfmargin::io::text::fmt_f64).unwrap_or_default();
        rows.push(vec![lo.episode_id.clone(), lo.kind.as_str().into(), show(lo), show(hi), ordered.to_string()]);
    }
    write_table(&out.path("bounds"), |w| {
        cfmargin::analytics::write_rows(w, out.format(), &["episode_id", "kind", "sigma_non_reactive", "sigma_best_response", "ordered"], rows)
    })?;
    eprintln!("{} bound pairs, {violations} ordering violations", results.len() / 2);
    Ok(())
}

fn cmd_aggregate(specs: &[String], weights: Option<&Path>, episodes: &[PathBuf], split: f64, out: &OutputArgs) -> Result<()> {
    let mut series: Vec<(String, Vec<MarginResult>)> = Vec::new();
    for spec in specs {
        let (label, path) = match spec.split_once('=') {
            Some((l, p)) => (l.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(spec);
                let label = p
                    .parent()
                    .and_then(|d| d.file_name())
                    .map(|d| d.to_string_lossy().into_owned())
                    .unwrap_or_else(|| spec.clone());
                (label, p)
            }
        };
        let text = fs::read(&path).map_err(input(&path))?;
        let rs: Vec<MarginResult> = serde_json::from_slice(&text).map_err(input(&path))?;
        let mut modes: Vec<_> = rs.iter().map(|r| r.mode).collect();
        modes.dedup();
        modes.sort_by_key(|m| m.as_str());
        modes.dedup();
        if modes.len() < 2 {
            series.push((label, rs));
        } else {
            for m in modes {
                let part = rs.iter().filter(|r| r.mode == m).cloned().collect();
                series.push((format!("{label}/{m}"), part));
            }
        }
    }
    let weights = match weights {
        Some(p) => Some(parse_weights(&fs::read_to_string(p).map_err(input(p))?).map_err(input(p))?),
        None => None,
    };
    let speeds: Vec<(String, bool)> = load_episodes(episodes)?
        .iter()
        .map(|e| (e.id.clone(), e.mean_initial_speed() > split))
        .collect();

    let weigh = |rs: &[&MarginResult]| -> Result<Option<Vec<f64>>> {
        let Some(w) = &weights else { return Ok(None) };
        rs.iter()
            .map(|r| {
                w.iter()
                    .find(|(id, _)| *id == r.episode_id)
                    .map(|(_, x)| *x)
                    .ok_or_else(|| Failure::Input(format!("--weights: no weight for episode {}", r.episode_id)))
            })
            .collect::<Result<Vec<f64>>>()
            .map(Some)
    };
    let mut curves: Vec<(String, Aggregate)> = Vec::new();
    let mut summary = Vec::new();
    for (label, rs) in &series {
        for kind in CounterfactualKind::ALL {
            let of_kind: Vec<&MarginResult> = rs.iter().filter(|r| r.kind == kind).collect();
            let mut parts: Vec<(String, Vec<&MarginResult>)> = vec![(label.clone(), of_kind.clone())];
            if !speeds.is_empty() {
                let high = |r: &&MarginResult| speeds.iter().any(|(id, h)| *id == r.episode_id && *h);
                parts.push((format!("{label}/high"), of_kind.iter().copied().filter(high).collect()));
                parts.push((format!("{label}/low"), of_kind.iter().copied().filter(|r| !high(r)).collect()));
            }
            for (name, part) in parts {
                if part.is_empty() {
                    continue;
                }
                let owned: Vec<MarginResult> = part.iter().map(|r| (*r).clone()).collect();
                let w = weigh(&part)?;
                let agg = aggregate(&owned, w.as_deref()).map_err(|e| Failure::Input(format!("{name} {kind}: {e}")))?;
                summary.push(serde_json::json!({ "series": name, "aggregate": agg }));
                curves.push((name, agg));
            }
        }
    }
    create_dir(&out.out)?;
    let f = out.format();
    write_table(&out.path("curves"), |w| write_curve_plot(w, &curves, f))?;
    write_table(&out.path("severity"), |w| write_severity_plot(w, &series, f))?;
    write_table(&out.path("ranking"), |w| write_ranking(w, &rank_agents(&series), f))?;
    let json = serde_json::to_vec_pretty(&summary).map_err(|e| Failure::Output(e.to_string()))?;
    write_file(&out.out.join("summary.json"), &json)
}

fn cmd_suite(seed: u64, per_band: usize, out: &Path) -> Result<()> {
    let (sc, ep) = (out.join("scenarios"), out.join("episodes"));
    create_dir(&sc)?;
    create_dir(&ep)?;
    for s in generate_suite(&SuiteConfig {
        seed,
        per_band,
        ..SuiteConfig::default()
    }) {
        write_file(&sc.join(format!("{}.scenario", s.episode.id)), write_scenario(&s.scenario).as_bytes())?;
        write_file(&ep.join(format!("{}.episode", s.episode.id)), &write_episode(&s.episode))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Failure::Input("--workers must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Output(e.to_string()))?;
    }
    match &cli.command {
        Command::Simulate {
            scenario,
            scenario_format,
            seed,
            out,
        } => cmd_simulate(scenario, scenario_format.as_deref(), *seed, out),
        Command::Sweep {
            input,
            margin,
            ego_mode,
            output,
        } => cmd_sweep(input, margin, ego_mode, output),
        Command::Bounds { input, margin, output } => cmd_bounds(input, margin, output),
        Command::Aggregate {
            results,
            weights,
            episode,
            split,
            output,
        } => cmd_aggregate(results, weights.as_deref(), episode, *split, output),
        Command::Suite { seed, per_band, out } => cmd_suite(*seed, *per_band, out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Input(m) | Failure::Simulation(m) | Failure::Output(m)) = &f;
            eprintln!("error: {m}");
            ExitCode::from(f.code())
        }
    }
}
