//! End-to-end acceptance checks on the shipped synthetic suite. Runs as a
//! plain binary so every criterion prints its verdict line.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cfmargin::agents::{PolicyName, PolicySpec};
use cfmargin::analytics::{aggregate, rank_agents, SPEED_SPLIT};
use cfmargin::counterfactual::{
    build_counterfactual, non_reactive_ego, realize, seed, CounterfactualAssignment, ObservationFilter, SignalViolationFilter,
};
use cfmargin::geometry::{Obb, Vec2};
use cfmargin::margin::{estimate_collision_prob, safety_margin, EgoMode, MarginConfig, MarginResult};
use cfmargin::model::{AgentState, CounterfactualKind, Episode, Footprint, SignalKind, SignalState};
use cfmargin::severity::SeverityModel;
use cfmargin::sim::contact::contact_between;
use cfmargin::sim::{check_contacts, ImpactClass, Observation, ObservedSignal};
use cfmargin::suite::{generate_suite, nominal_episode, stop_sign_fixture, two_car_fixture, SuiteConfig};

const SPEARMAN_MIN: f64 = 0.9;
const RISE_MIN: f64 = 0.2;
const BOOTSTRAP_P: f64 = 0.05;
const BOOTSTRAP_SAMPLES: usize = 10_000;
const MIN_NON_CENSORED: usize = 10;
const SEVERITY_SPREAD: f64 = 0.1;
const IDENTITY_TOL: f64 = 1e-9;
const IDENTITY_REPS: usize = 3;
const ORACLE_PAIRS: usize = 1000;
const ORACLE_STEP: f64 = 0.01;
const TANGENCY_BAND: f64 = 0.01;
const FINE_STEP: f64 = 0.01;
const PRECEDENCE_REPS: usize = 1000;
const PRECEDENCE_TOL: f64 = 0.04;
const PRECEDENCE_CHECK_TIME: f64 = 1.5;
const PRECEDENCE_MOVE: f64 = 0.5;
const SEVERITY_GRID_STEP: f64 = 0.5;
const SEVERITY_GRID_MAX: f64 = 60.0;
const NO_IMPACT_MAX: f64 = 0.01;
const AGENTS: [PolicyName; 3] = [PolicyName::IdmAgent, PolicyName::IdmLatency2, PolicyName::IdmShortsighted10];

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

struct Context {
    episodes: Vec<Episode>,
    cfg: MarginConfig,
    reactive: std::collections::HashMap<PolicyName, Vec<MarginResult>>,
}

fn reactive_results(episodes: &[Episode], agent: PolicyName, cfg: &MarginConfig) -> Vec<MarginResult> {
    let mut out = Vec::new();
    for kind in CounterfactualKind::ALL {
        for e in episodes {
            let p = *e.agents[e.ego].policy.idm_params().expect("suite egos are IDM");
            let ego = EgoMode::Reactive(PolicySpec::idm_variant(agent, p).unwrap());
            out.push(safety_margin(e, kind, ego, cfg).expect("margin"));
        }
    }
    out
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|a, b| x[*a].total_cmp(&x[*b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        for k in &idx[i..=j] {
            r[*k] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

fn of_kind(rs: &[MarginResult], kind: CounterfactualKind) -> Vec<MarginResult> {
    rs.iter().filter(|r| r.kind == kind).cloned().collect()
}

fn monotone_on_average(ctx: &Context) -> Verdict {
    let rs = &ctx.reactive[&PolicyName::IdmAgent];
    let mut ok = true;
    let mut parts = Vec::new();
    for kind in CounterfactualKind::ALL {
        let agg = aggregate(&of_kind(rs, kind), None).unwrap();
        let c = &agg.curve;
        let rho = spearman(&c.intensities, &c.mean);
        let rise = c.mean[c.mean.len() - 1] - c.mean[0];
        ok &= rho >= SPEARMAN_MIN && rise >= RISE_MIN;
        parts.push(format!("{kind} rho={rho:.3} rise={rise:.3}"));
    }
    verdict(ok, parts.join("; "))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn severity_ordering(ctx: &Context) -> Verdict {
    let rs = &ctx.reactive[&PolicyName::IdmAgent];
    let high: BTreeMap<&str, bool> = ctx
        .episodes
        .iter()
        .map(|e| (e.id.as_str(), e.mean_initial_speed() > SPEED_SPLIT))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut ok = true;
    let mut parts = Vec::new();
    for kind in [CounterfactualKind::Distraction, CounterfactualKind::ImpairedReflexes, CounterfactualKind::Unseen] {
        let (mut hi, mut lo) = (Vec::new(), Vec::new());
        for r in rs.iter().filter(|r| r.kind == kind && !r.censored()) {
            let v = r.severity_at_margin.p_mais3plus;
            if high[r.episode_id.as_str()] {
                hi.push(v)
            } else {
                lo.push(v)
            }
        }
        if hi.is_empty() || lo.is_empty() {
            ok = false;
            parts.push(format!("{kind} has an empty split"));
            continue;
        }
        let diff = mean(&hi) - mean(&lo);
        let mut not_above = 0;
        for _ in 0..BOOTSTRAP_SAMPLES {
            let draw = |xs: &[f64], rng: &mut ChaCha8Rng| (0..xs.len()).map(|_| xs[rng.random_range(0..xs.len())]).sum::<f64>() / xs.len() as f64;
            if draw(&hi, &mut rng) - draw(&lo, &mut rng) <= 0.0 {
                not_above += 1;
            }
        }
        let p = not_above as f64 / BOOTSTRAP_SAMPLES as f64;
        ok &= diff > 0.0 && p < BOOTSTRAP_P;
        parts.push(format!(
            "{kind} high={:.3} (n={}) low={:.3} (n={}) p={p:.4}",
            mean(&hi),
            hi.len(),
            mean(&lo),
            lo.len()
        ));
    }
    verdict(ok, parts.join("; "))
}

fn agent_ranking(ctx: &Context) -> Verdict {
    let per_agent: Vec<(String, Vec<MarginResult>)> =
        AGENTS.iter().map(|a| (a.to_string(), ctx.reactive[a].clone())).collect();
    let mut ok = true;
    let mut parts = Vec::new();
    for k in rank_agents(&per_agent) {
        let row = |a: PolicyName| k.rows.iter().find(|r| r.agent == a.to_string()).unwrap();
        let (base, lat, short) = (row(AGENTS[0]), row(AGENTS[1]), row(AGENTS[2]));
        let counted = [base, lat, short].iter().all(|r| r.non_censored >= MIN_NON_CENSORED);
        if !counted {
            parts.push(format!("{} skipped (too few non-censored)", k.kind));
            continue;
        }
        let order = base.mean_margin >= lat.mean_margin && base.mean_margin >= short.mean_margin;
        let mut spread: f64 = 0.0;
        for a in [base, lat, short] {
            for b in [base, lat, short] {
                for (x, y) in a.severity.as_array().iter().zip(b.severity.as_array()) {
                    spread = spread.max((x - y).abs());
                }
            }
        }
        ok &= order && spread < SEVERITY_SPREAD;
        parts.push(format!(
            "{} margin {:.3}/{:.3}/{:.3} severity spread {spread:.3}",
            k.kind, base.mean_margin, lat.mean_margin, short.mean_margin
        ));
    }
    verdict(ok, parts.join("; "))
}

fn bound_ordering(ctx: &Context) -> (Verdict, Vec<MarginResult>) {
    let mut violations = Vec::new();
    let mut lower = Vec::new();
    let mut pairs = 0;
    for e in &ctx.episodes {
        for kind in CounterfactualKind::ALL {
            let lo = safety_margin(e, kind, EgoMode::NonReactive, &ctx.cfg).unwrap();
            let hi = safety_margin(e, kind, EgoMode::BestResponse, &ctx.cfg).unwrap();
            pairs += 1;
            if lo.margin_or_inf() > hi.margin_or_inf() {
                violations.push(format!("{} {kind}", e.id));
            }
            lower.push(lo);
        }
    }
    let v = verdict(
        violations.is_empty(),
        format!("{pairs} pairs, {} violations {:?}", violations.len(), violations),
    );
    (v, lower)
}

fn max_state_diff(a: &[AgentState], b: &[AgentState]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            [
                (x.position - y.position).norm(),
                (x.heading - y.heading).abs(),
                (x.speed - y.speed).abs(),
                (x.steering - y.steering).abs(),
            ]
            .into_iter()
            .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

fn identity_at_zero(ctx: &Context, lower: &[MarginResult]) -> Verdict {
    let mut worst: f64 = 0.0;
    let mut collided = 0;
    for e in &ctx.episodes {
        let egos = [non_reactive_ego(e), e.agents[e.ego].policy.clone()];
        for kind in CounterfactualKind::ALL {
            for ego in &egos {
                let assign = CounterfactualAssignment {
                    kind,
                    intensity: 0.0,
                    ego: e.ego,
                };
                let setup = build_counterfactual(e, &assign, ego, ctx.cfg.seed).unwrap();
                for rep in 0..IDENTITY_REPS {
                    let c = realize(&setup, rep).unwrap();
                    for (t, u) in c.trajectories.iter().zip(&e.trajectories) {
                        worst = worst.max(max_state_diff(t, u));
                    }
                    collided += usize::from(!check_contacts(&c).is_empty());
                }
            }
        }
    }
    // The suite records IDMAgent egos, so only that policy must reproduce
    // the nominal run; the other agents may well collide at zero.
    let nonzero = ctx.reactive[&PolicyName::IdmAgent]
        .iter()
        .chain(lower)
        .filter(|r| r.curve[0].intensity != 0.0 || r.curve[0].p_hat != 0.0)
        .count();
    verdict(
        worst <= IDENTITY_TOL && collided == 0 && nonzero == 0,
        format!("max state deviation {worst:.3e}, {collided} colliding runs, {nonzero} results with theta(0) != 0"),
    )
}

/// Overlap by dense sampling of both boundaries.
fn sampled_overlap(a: &Obb, b: &Obb) -> bool {
    let boundary = |o: &Obb| {
        let c = o.corners();
        let mut pts = Vec::new();
        for k in 0..4 {
            let (p, q) = (c[k], c[(k + 1) % 4]);
            let n = ((q - p).norm() / ORACLE_STEP).ceil() as usize;
            for i in 0..=n {
                pts.push(p + (q - p) * (i as f64 / n as f64));
            }
        }
        pts
    };
    boundary(a).iter().any(|p| b.contains(*p)) || boundary(b).iter().any(|p| a.contains(*p))
}

fn grown(o: &Obb, d: f64) -> Obb {
    Obb::new(o.center, o.heading, 2.0 * o.half_length + 2.0 * d, 2.0 * o.half_width + 2.0 * d)
}

fn collision_oracle() -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut disagreements, mut banded) = (0, 0);
    for _ in 0..ORACLE_PAIRS {
        let state = |rng: &mut ChaCha8Rng| AgentState {
            position: Vec2::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)),
            heading: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            speed: rng.random_range(0.0..20.0),
            steering: 0.0,
            footprint: Footprint {
                length: rng.random_range(1.0..6.0),
                width: rng.random_range(0.5..3.0),
            },
        };
        let (a, b) = (state(&mut rng), state(&mut rng));
        let (oa, ob) = (a.obb(), b.obb());
        let inner = sampled_overlap(&grown(&oa, -TANGENCY_BAND), &grown(&ob, -TANGENCY_BAND));
        let outer = sampled_overlap(&grown(&oa, TANGENCY_BAND), &grown(&ob, TANGENCY_BAND));
        if inner != outer {
            banded += 1;
            continue;
        }
        if contact_between(0, 0, 1, &a, &b).is_some() != inner {
            disagreements += 1;
        }
    }
    (disagreements, banded)
}

fn fine_grid_oracle(cfg: &MarginConfig) -> (bool, String) {
    let e = nominal_episode(&two_car_fixture(15.0, 1.0));
    let kind = CounterfactualKind::Distraction;
    let r = lower_margin(&e, kind, cfg);
    let max = kind.max_intensity();
    let steps = (max / FINE_STEP).round() as usize;
    let mut oracle = None;
    for i in 0..=steps {
        let gamma = i as f64 * FINE_STEP;
        let assign = CounterfactualAssignment {
            kind,
            intensity: gamma,
            ego: e.ego,
        };
        let setup = build_counterfactual(&e, &assign, &non_reactive_ego(&e), cfg.seed).unwrap();
        let p = estimate_collision_prob(&setup, cfg.reps_for(kind), &cfg.severity).unwrap();
        if p.p_hat > cfg.eps {
            oracle = Some(gamma);
            break;
        }
    }
    let cell = (max / (cfg.grid - 1) as f64) / f64::powi(2.0, cfg.refine as i32);
    match (r.margin, oracle) {
        (Some(m), Some(o)) => ((m - o).abs() <= cell, format!("sigma={m:.4} oracle={o:.2} cell={cell:.4}")),
        (m, o) => (false, format!("sigma={m:?} oracle={o:?}")),
    }
}

fn lower_margin(e: &Episode, kind: CounterfactualKind, cfg: &MarginConfig) -> MarginResult {
    safety_margin(e, kind, EgoMode::NonReactive, cfg).unwrap()
}

/// Share of reps in which the car waiting at a stop sign drives off while
/// the ego is still approaching, i.e. ignores the sign.
fn precedence_frequency(cfg: &MarginConfig) -> (f64, f64) {
    let e = nominal_episode(&stop_sign_fixture(10.0, 3.0));
    let waiting = 1 - e.ego;
    let assign = CounterfactualAssignment {
        kind: CounterfactualKind::IllegalPrecedence,
        intensity: 0.5,
        ego: e.ego,
    };
    let setup = build_counterfactual(&e, &assign, &non_reactive_ego(&e), cfg.seed).unwrap();
    let check_step = (PRECEDENCE_CHECK_TIME / e.dt).round() as usize;
    let start = e.trajectories[waiting][0].position;
    let (mut moved, mut drawn) = (0, 0);
    for rep in 0..PRECEDENCE_REPS {
        let c = realize(&setup, rep).unwrap();
        moved += usize::from((c.trajectories[waiting][check_step].position - start).norm() > PRECEDENCE_MOVE);
        let stream = seed::agent_stream(setup.rep_seed(rep), waiting);
        let mut f = SignalViolationFilter::new(0.5, stream);
        let obs = Observation {
            step: 0,
            time: 0.0,
            agent: waiting,
            own: e.trajectories[waiting][0],
            nearby: vec![],
            signals: vec![ObservedSignal {
                id: e.map.signals[0].id,
                kind: SignalKind::StopSign,
                state: SignalState::Stop,
                distance: 1.0,
                position: start,
            }],
        };
        f.filter(obs);
        drawn += usize::from(f.violated().count() > 0);
    }
    (moved as f64 / PRECEDENCE_REPS as f64, drawn as f64 / PRECEDENCE_REPS as f64)
}

fn oracle_equivalence(cfg: &MarginConfig) -> Verdict {
    let (dis, banded) = collision_oracle();
    let (fine_ok, fine) = fine_grid_oracle(cfg);
    let (freq, drawn) = precedence_frequency(cfg);
    let freq_ok = (freq - 0.5).abs() <= PRECEDENCE_TOL;
    verdict(
        dis == 0 && fine_ok && freq_ok,
        format!("collision: {dis} disagreements ({banded} in tangency band); fine grid: {fine}; precedence frequency {freq:.3} (draws {drawn:.3})"),
    )
}

fn tree_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn cli_determinism() -> Verdict {
    let bin = env!("CARGO_BIN_EXE_cfmargin");
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let scenario = root.join("two_car.scenario");
    std::fs::write(&scenario, cfmargin::io::write_scenario(&two_car_fixture(15.0, 1.0))).unwrap();
    let run = |out: &Path, workers: usize, args: &[&str]| {
        let subst = |a: &&str| a.replace("{out}", out.to_str().unwrap()).replace("{root}", root.to_str().unwrap());
        let args: Vec<String> = args.iter().map(subst).collect();
        let status = Command::new(bin)
            .arg("--workers")
            .arg(workers.to_string())
            .args(&args)
            .output()
            .unwrap();
        (status.status.success(), String::from_utf8_lossy(&status.stderr).into_owned())
    };
    let commands: [&[&str]; 6] = [
        &["suite", "--per-band", "2", "--out", "{out}/suite"],
        &["simulate", "--scenario", "{root}/two_car.scenario", "--out", "{out}/sim"],
        &["sweep", "--episode", "{out}/suite/episodes", "--reps", "8", "--ego-mode", "policy:IDMAgent", "--out", "{out}/sweep"],
        &["sweep", "--scenario", "{root}/two_car.scenario", "--reps", "8", "--format", "structured", "--out", "{out}/sweep_s"],
        &["bounds", "--episode", "{out}/suite/episodes", "--reps", "4", "--out", "{out}/bounds"],
        &["aggregate", "--results", "{out}/sweep/results.json", "--results", "{out}/bounds/results.json", "--episode", "{out}/suite/episodes", "--out", "{out}/agg"],
    ];
    let mut trees = Vec::new();
    for (tag, workers) in [("w1", 1), ("w4", 4), ("w16", 16), ("w4-again", 4)] {
        let out = root.join(tag);
        for cmd in commands {
            let (ok, err) = run(&out, workers, cmd);
            if !ok {
                return verdict(false, format!("{cmd:?} at {workers} workers failed: {err}"));
            }
        }
        trees.push(tree_bytes(&out));
    }
    let files = trees[0].len();
    let same = trees.iter().all(|t| *t == trees[0]);
    verdict(same && files > 0, format!("{} commands, {files} output files, identical across 1/4/16 workers and a repeat: {same}", commands.len()))
}

fn severity_properties() -> Verdict {
    let m = SeverityModel::default();
    let classes = [ImpactClass::Front, ImpactClass::Side, ImpactClass::Rear];
    let (mut nested, mut monotone, mut zero_ok) = (true, true, true);
    let steps = (SEVERITY_GRID_MAX / SEVERITY_GRID_STEP).round() as usize;
    for class in classes {
        let mut prev: Option<[f64; 3]> = None;
        for i in 0..=steps {
            let p = m.profile(i as f64 * SEVERITY_GRID_STEP, class).unwrap();
            nested &= p.is_nested();
            let a = p.as_array();
            if let Some(q) = prev {
                monotone &= a.iter().zip(q).all(|(x, y)| *x >= y);
            }
            if i == 0 {
                zero_ok &= a.iter().all(|x| *x < NO_IMPACT_MAX);
            }
            prev = Some(a);
        }
    }
    verdict(nested && monotone && zero_ok, format!("nested={nested} monotone={monotone} zero<{NO_IMPACT_MAX}={zero_ok}"))
}

fn main() {
    let started = Instant::now();
    let suite = generate_suite(&SuiteConfig::default());
    let episodes: Vec<Episode> = suite.into_iter().map(|s| s.episode).collect();
    let cfg = MarginConfig::default();
    let reactive = AGENTS.iter().map(|a| (*a, reactive_results(&episodes, *a, &cfg))).collect();
    let ctx = Context { episodes, cfg, reactive };

    let mut verdicts = vec![
        ("1 monotone on average", monotone_on_average(&ctx)),
        ("2 severity by speed", severity_ordering(&ctx)),
        ("3 agent ranking", agent_ranking(&ctx)),
    ];
    let (bounds, lower) = bound_ordering(&ctx);
    verdicts.push(("4 bound ordering", bounds));
    verdicts.push(("5 identity at zero", identity_at_zero(&ctx, &lower)));
    verdicts.push(("6 oracle equivalence", oracle_equivalence(&ctx.cfg)));
    verdicts.push(("7 cli determinism", cli_determinism()));
    verdicts.push(("8 severity properties", severity_properties()));

    let mut failed = 0;
    for (name, v) in &verdicts {
        println!("{} criterion {name}: {}", if v.passed { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.passed);
    }
    println!("acceptance: {} passed, {failed} failed in {:.0?}", verdicts.len() - failed, started.elapsed());
    if failed > 0 {
        std::process::exit(1);
    }
}
