//! ODD-level statistics over margin results: splits, averaged curves,
//! histograms, agent rankings and the output tables.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::AnalyticsError;
use crate::io::text::fmt_f64;
use crate::margin::{MarginResult, Z95};
use crate::model::{CounterfactualKind, OddDataset};
use crate::severity::SeverityProfile;

/// Speed separating the high- and low-speed parts of an ODD, m/s.
pub const SPEED_SPLIT: f64 = 12.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OddSplit {
    pub predicate: String,
    pub threshold: f64,
    pub high: Vec<String>,
    pub low: Vec<String>,
}

impl OddSplit {
    pub fn is_high(&self, episode_id: &str) -> bool {
        self.high.iter().any(|h| h == episode_id)
    }
}

/// HIGH iff the mean initial speed over agents exceeds `threshold`.
pub fn split_by_speed(ds: &OddDataset, threshold: f64) -> OddSplit {
    let (mut high, mut low) = (Vec::new(), Vec::new());
    for e in ds.episodes() {
        if e.mean_initial_speed() > threshold {
            high.push(e.id.clone());
        } else {
            low.push(e.id.clone());
        }
    }
    OddSplit {
        predicate: "mean_initial_speed".into(),
        threshold,
        high,
        low,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateCurve {
    pub kind: CounterfactualKind,
    pub intensities: Vec<f64>,
    pub mean: Vec<f64>,
    /// 95% normal-approximation half-widths across episodes.
    pub ci_half: Vec<f64>,
    pub count: usize,
    pub weights: Option<Vec<f64>>,
}

/// Margins per base-grid cell: bin `j` holds margins in `(g[j-1], g[j]]`,
/// bin 0 margins equal to `g[0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginHistogram {
    pub upper_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub censored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeveritySummary {
    /// Mean severity at margin over non-censored episodes.
    pub mean: SeverityProfile,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub curve: AggregateCurve,
    pub histogram: MarginHistogram,
    pub severity: SeveritySummary,
}

fn weighted_stats(xs: &[f64], w: Option<&[f64]>) -> (f64, f64) {
    let n = xs.len();
    match w {
        None => {
            let mean = xs.iter().sum::<f64>() / n as f64;
            if n < 2 {
                return (mean, 0.0);
            }
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (mean, Z95 * (var / n as f64).sqrt())
        }
        Some(w) => {
            let sw: f64 = w.iter().sum();
            let mean = xs.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / sw;
            let n_eff = sw * sw / w.iter().map(|w| w * w).sum::<f64>();
            if n_eff <= 1.0 + 1e-12 {
                return (mean, 0.0);
            }
            let var = xs.iter().zip(w).map(|(x, w)| w * (x - mean).powi(2)).sum::<f64>() / sw * n_eff / (n_eff - 1.0);
            (mean, Z95 * (var / n_eff).sqrt())
        }
    }
}

/// Averages the base-grid curves of `results` (one per episode, same kind
/// and grid). Equal weights take the unweighted path, so they reproduce the
/// unweighted result exactly.
pub fn aggregate(results: &[MarginResult], weights: Option<&[f64]>) -> Result<Aggregate, AnalyticsError> {
    let first = results.first().ok_or(AnalyticsError::Empty)?;
    let kind = first.kind;
    let intensities: Vec<f64> = first.grid_curve().map(|p| p.intensity).collect();
    for r in results {
        if r.kind != kind {
            return Err(AnalyticsError::Mixed("kinds"));
        }
        let g: Vec<f64> = r.grid_curve().map(|p| p.intensity).collect();
        if g != intensities {
            return Err(AnalyticsError::Mixed("grids"));
        }
    }
    if let Some(w) = weights {
        if w.len() != results.len() {
            return Err(AnalyticsError::Weights(format!("{} weights for {} results", w.len(), results.len())));
        }
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
            return Err(AnalyticsError::Weights("weights must be finite, >= 0 and not all zero".into()));
        }
    }
    let uniform = weights.is_none_or(|w| w.iter().all(|x| *x == w[0]));
    let w = if uniform { None } else { weights };

    let (mut mean, mut ci_half) = (Vec::new(), Vec::new());
    for j in 0..intensities.len() {
        let xs: Vec<f64> = results.iter().map(|r| r.grid_curve().nth(j).map(|p| p.p_hat).unwrap_or(0.0)).collect();
        let (m, h) = weighted_stats(&xs, w);
        mean.push(m.clamp(0.0, 1.0));
        ci_half.push(h);
    }

    let mut counts = vec![0; intensities.len()];
    let mut censored = 0;
    for r in results {
        match r.margin {
            None => censored += 1,
            Some(m) => {
                let j = intensities.iter().position(|g| m <= *g + 1e-12).unwrap_or(intensities.len() - 1);
                counts[j] += 1;
            }
        }
    }
    let hit: Vec<&SeverityProfile> = results.iter().filter(|r| !r.censored()).map(|r| &r.severity_at_margin).collect();
    Ok(Aggregate {
        curve: AggregateCurve {
            kind,
            intensities: intensities.clone(),
            mean,
            ci_half,
            count: results.len(),
            weights: weights.map(|w| w.to_vec()),
        },
        histogram: MarginHistogram {
            upper_edges: intensities,
            counts,
            censored,
        },
        severity: SeveritySummary {
            count: hit.len(),
            mean: SeverityProfile::mean(hit),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub agent: String,
    /// Mean over non-censored episodes; +∞ when every episode is censored.
    pub mean_margin: f64,
    pub non_censored: usize,
    pub episodes: usize,
    pub censored_fraction: f64,
    /// Every episode censored: no tested intensity made this agent collide.
    pub insensitive: bool,
    pub severity: SeverityProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindRanking {
    pub kind: CounterfactualKind,
    /// Safest first. Ties keep input order.
    pub rows: Vec<RankRow>,
}

/// Ranks agents per kind by mean non-censored margin, descending.
/// `per_agent` pairs an agent name with its results over any mix of kinds.
pub fn rank_agents(per_agent: &[(String, Vec<MarginResult>)]) -> Vec<KindRanking> {
    let mut kinds: Vec<CounterfactualKind> = per_agent.iter().flat_map(|(_, rs)| rs.iter().map(|r| r.kind)).collect();
    kinds.sort();
    kinds.dedup();
    kinds
        .into_iter()
        .map(|kind| {
            let mut rows: Vec<RankRow> = per_agent
                .iter()
                .map(|(agent, rs)| {
                    let of_kind: Vec<&MarginResult> = rs.iter().filter(|r| r.kind == kind).collect();
                    let hit: Vec<&MarginResult> = of_kind.iter().copied().filter(|r| !r.censored()).collect();
                    let mean_margin = if hit.is_empty() {
                        f64::INFINITY
                    } else {
                        hit.iter().map(|r| r.margin_or_inf()).sum::<f64>() / hit.len() as f64
                    };
                    let episodes = of_kind.len();
                    RankRow {
                        agent: agent.clone(),
                        mean_margin,
                        non_censored: hit.len(),
                        episodes,
                        censored_fraction: if episodes == 0 {
                            0.0
                        } else {
                            (episodes - hit.len()) as f64 / episodes as f64
                        },
                        insensitive: episodes > 0 && hit.is_empty(),
                        severity: SeverityProfile::mean(hit.iter().map(|r| &r.severity_at_margin)),
                    }
                })
                .collect();
            rows.sort_by(|a, b| b.mean_margin.total_cmp(&a.mean_margin));
            KindRanking { kind, rows }
        })
        .collect()
}

pub const PROBABILITY_COLUMNS: [&str; 9] = [
    "episode_id",
    "kind",
    "intensity",
    "reps",
    "collisions",
    "p_hat",
    "ci_low",
    "ci_high",
    "failures",
];

pub const MARGIN_COLUMNS: [&str; 9] = [
    "episode_id",
    "kind",
    "mode",
    "margin",
    "censored",
    "grid_resolution",
    "p_fatal_at_margin",
    "p_mais3_at_margin",
    "p_mais2_at_margin",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    /// One JSON object per line.
    Structured,
}

fn csv_err(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}

fn emit<W: Write>(out: W, format: OutputFormat, header: &[&str], rows: Vec<Vec<String>>) -> std::io::Result<()> {
    match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(header).map_err(csv_err)?;
            for r in rows {
                w.write_record(&r).map_err(csv_err)?;
            }
            w.flush()
        }
        OutputFormat::Structured => {
            let mut out = out;
            for r in rows {
                let obj: serde_json::Map<String, serde_json::Value> = header
                    .iter()
                    .zip(r)
                    .map(|(k, v)| {
                        let val = match v.parse::<f64>() {
                            Ok(x) if x.is_finite() && !v.is_empty() => serde_json::Number::from_f64(x)
                                .map(serde_json::Value::Number)
                                .unwrap_or(serde_json::Value::String(v)),
                            _ if v == "true" || v == "false" => serde_json::Value::Bool(v == "true"),
                            _ if v.is_empty() => serde_json::Value::Null,
                            _ => serde_json::Value::String(v),
                        };
                        (k.to_string(), val)
                    })
                    .collect();
                serde_json::to_writer(&mut out, &obj)?;
                out.write_all(b"\n")?;
            }
            Ok(())
        }
    }
}

/// Any table, in the same encodings as the fixed ones.
pub fn write_rows<W: Write>(out: W, format: OutputFormat, header: &[&str], rows: Vec<Vec<String>>) -> std::io::Result<()> {
    emit(out, format, header, rows)
}

pub fn write_probabilities<W: Write>(out: W, results: &[MarginResult], format: OutputFormat) -> std::io::Result<()> {
    let rows = results
        .iter()
        .flat_map(|r| {
            r.curve.iter().map(move |p| {
                vec![
                    r.episode_id.clone(),
                    r.kind.as_str().to_string(),
                    fmt_f64(p.intensity),
                    p.reps.to_string(),
                    p.collisions.to_string(),
                    fmt_f64(p.p_hat),
                    fmt_f64(p.ci_low),
                    fmt_f64(p.ci_high),
                    p.failures.to_string(),
                ]
            })
        })
        .collect();
    emit(out, format, &PROBABILITY_COLUMNS, rows)
}

pub fn write_margins<W: Write>(out: W, results: &[MarginResult], format: OutputFormat) -> std::io::Result<()> {
    let rows = results
        .iter()
        .map(|r| {
            let s = &r.severity_at_margin;
            vec![
                r.episode_id.clone(),
                r.kind.as_str().to_string(),
                r.mode.as_str().to_string(),
                r.margin.map(fmt_f64).unwrap_or_default(),
                r.censored().to_string(),
                fmt_f64(r.grid_resolution),
                fmt_f64(s.p_fatal),
                fmt_f64(s.p_mais3plus),
                fmt_f64(s.p_mais2plus),
            ]
        })
        .collect();
    emit(out, format, &MARGIN_COLUMNS, rows)
}

pub const CURVE_PLOT_COLUMNS: [&str; 6] = ["series", "kind", "intensity", "mean_p_collision", "ci_half", "episodes"];

/// Long-format rows: intensity against mean collision probability.
pub fn write_curve_plot<W: Write>(out: W, series: &[(String, Aggregate)], format: OutputFormat) -> std::io::Result<()> {
    let rows = series
        .iter()
        .flat_map(|(name, a)| {
            let c = &a.curve;
            (0..c.intensities.len()).map(move |j| {
                vec![
                    name.clone(),
                    c.kind.as_str().to_string(),
                    fmt_f64(c.intensities[j]),
                    fmt_f64(c.mean[j]),
                    fmt_f64(c.ci_half[j]),
                    c.count.to_string(),
                ]
            })
        })
        .collect();
    emit(out, format, &CURVE_PLOT_COLUMNS, rows)
}

pub const SEVERITY_PLOT_COLUMNS: [&str; 5] = ["series", "kind", "episode_id", "margin", "level"];

/// Long-format rows: margin intensity against each severity level, one row
/// per (non-censored episode, level); the probability is the last column.
pub fn write_severity_plot<W: Write>(
    out: W,
    series: &[(String, Vec<MarginResult>)],
    format: OutputFormat,
) -> std::io::Result<()> {
    let mut header: Vec<&str> = SEVERITY_PLOT_COLUMNS.to_vec();
    header.push("probability");
    let mut rows = Vec::new();
    for (name, results) in series {
        for r in results {
            let Some(m) = r.margin else { continue };
            let s = &r.severity_at_margin;
            for (level, p) in [("fatal", s.p_fatal), ("mais3plus", s.p_mais3plus), ("mais2plus", s.p_mais2plus)] {
                rows.push(vec![
                    name.clone(),
                    r.kind.as_str().to_string(),
                    r.episode_id.clone(),
                    fmt_f64(m),
                    level.to_string(),
                    fmt_f64(p),
                ]);
            }
        }
    }
    emit(out, format, &header, rows)
}

pub const RANKING_COLUMNS: [&str; 10] = [
    "kind",
    "rank",
    "agent",
    "mean_margin",
    "non_censored",
    "episodes",
    "censored_fraction",
    "insensitive",
    "p_fatal",
    "p_mais3",
];

pub fn write_ranking<W: Write>(out: W, ranking: &[KindRanking], format: OutputFormat) -> std::io::Result<()> {
    let mut header = RANKING_COLUMNS.to_vec();
    header.push("p_mais2");
    let rows = ranking
        .iter()
        .flat_map(|k| {
            k.rows.iter().enumerate().map(move |(i, r)| {
                vec![
                    k.kind.as_str().to_string(),
                    (i + 1).to_string(),
                    r.agent.clone(),
                    if r.mean_margin.is_finite() {
                        fmt_f64(r.mean_margin)
                    } else {
                        String::new()
                    },
                    r.non_censored.to_string(),
                    r.episodes.to_string(),
                    fmt_f64(r.censored_fraction),
                    r.insensitive.to_string(),
                    fmt_f64(r.severity.p_fatal),
                    fmt_f64(r.severity.p_mais3plus),
                    fmt_f64(r.severity.p_mais2plus),
                ]
            })
        })
        .collect();
    emit(out, format, &header, rows)
}

/// Reads `episode_id,weight` lines (header optional).
pub fn parse_weights(text: &str) -> Result<Vec<(String, f64)>, AnalyticsError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| AnalyticsError::Weights(e.to_string()))?;
        if rec.len() != 2 {
            return Err(AnalyticsError::Weights(format!("row {}: expected episode_id,weight", i + 1)));
        }
        match rec[1].parse::<f64>() {
            Ok(w) => out.push((rec[0].to_string(), w)),
            Err(_) if i == 0 => {}
            Err(_) => return Err(AnalyticsError::Weights(format!("row {}: bad weight {:?}", i + 1, &rec[1]))),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::margin::{MarginMode, ProbabilityPoint};

    fn result(id: &str, kind: CounterfactualKind, ps: &[f64], margin: Option<f64>) -> MarginResult {
        let n = ps.len();
        MarginResult {
            episode_id: id.into(),
            kind,
            mode: MarginMode::Reactive,
            margin,
            grid_resolution: 0.1,
            curve: ps
                .iter()
                .enumerate()
                .map(|(j, p)| {
                    let k = (p * 10.0).round() as usize;
                    ProbabilityPoint::new(j as f64 / (n - 1) as f64, 10, k, 0, true)
                })
                .collect(),
            severity_at_margin: SeverityProfile {
                p_fatal: 0.01,
                p_mais3plus: 0.1,
                p_mais2plus: 0.3,
            },
        }
    }

    const K: CounterfactualKind = CounterfactualKind::Aggressiveness;

    #[test]
    fn single_result_has_zero_width() {
        let a = aggregate(&[result("a", K, &[0.0, 0.3, 1.0], Some(0.5))], None).unwrap();
        assert_eq!(a.curve.mean, vec![0.0, 0.3, 1.0]);
        assert_eq!(a.curve.ci_half, vec![0.0; 3]);
        assert_eq!(a.histogram.counts, vec![0, 1, 0]);
    }

    #[test]
    fn weighted_means() {
        let rs = [result("a", K, &[0.0, 0.0], None), result("b", K, &[0.0, 1.0], Some(1.0))];
        assert_eq!(aggregate(&rs, None).unwrap().curve.mean[1], 0.5);
        assert_eq!(aggregate(&rs, Some(&[1.0, 3.0])).unwrap().curve.mean[1], 0.75);
        let u = aggregate(&rs, Some(&[3.0, 3.0])).unwrap();
        assert_eq!(u.curve.mean, aggregate(&rs, None).unwrap().curve.mean);
        assert_eq!(u.histogram.censored, 1);
        assert_eq!(u.severity.count, 1);
        assert!(aggregate(&rs, Some(&[1.0])).is_err());
        assert!(aggregate(&rs, Some(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn ci_is_normal_approximation() {
        let rs = [result("a", K, &[0.0, 0.0], None), result("b", K, &[0.0, 1.0], None)];
        let h = aggregate(&rs, None).unwrap().curve.ci_half[1];
        // sample sd of {0, 1} is sqrt(0.5); se = 0.5
        assert!((h - Z95 * 0.5).abs() < 1e-12);
    }

    #[test]
    fn mixed_inputs_rejected() {
        let a = result("a", K, &[0.0, 1.0], None);
        let b = result("b", CounterfactualKind::Unseen, &[0.0, 1.0], None);
        assert_eq!(aggregate(&[a.clone(), b], None).unwrap_err(), AnalyticsError::Mixed("kinds"));
        let c = result("c", K, &[0.0, 0.5, 1.0], None);
        assert_eq!(aggregate(&[a, c], None).unwrap_err(), AnalyticsError::Mixed("grids"));
        assert_eq!(aggregate(&[], None).unwrap_err(), AnalyticsError::Empty);
    }

    #[test]
    fn ranking_orders_and_flags() {
        let safe = vec![result("e", K, &[0.0, 1.0], Some(0.8))];
        let risky = vec![result("e", K, &[1.0, 1.0], Some(0.2))];
        let never = vec![result("e", K, &[0.0, 0.0], None)];
        let r = rank_agents(&[
            ("risky".into(), risky.clone()),
            ("safe".into(), safe.clone()),
            ("never".into(), never),
        ]);
        let names: Vec<&str> = r[0].rows.iter().map(|x| x.agent.as_str()).collect();
        assert_eq!(names, ["never", "safe", "risky"]);
        assert!(r[0].rows[0].insensitive && r[0].rows[0].mean_margin.is_infinite());
        let tie = rank_agents(&[("b".into(), safe.clone()), ("a".into(), safe)]);
        assert_eq!(tie[0].rows[0].agent, "b");
    }

    #[test]
    fn csv_columns_are_exact() {
        let rs = [result("ep,1", K, &[0.0, 1.0], None)];
        let mut buf = Vec::new();
        write_margins(&mut buf, &rs, OutputFormat::Csv).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(&MARGIN_COLUMNS.join(",")));
        assert!(text.contains("\"ep,1\",aggressiveness,reactive,,true,0.1,"));
        let mut buf = Vec::new();
        write_probabilities(&mut buf, &rs, OutputFormat::Csv).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with(&PROBABILITY_COLUMNS.join(",")));
        let mut buf = Vec::new();
        write_probabilities(&mut buf, &rs, OutputFormat::Structured).unwrap();
        let line: serde_json::Value = serde_json::from_slice(buf.split(|b| *b == b'\n').next().unwrap()).unwrap();
        assert_eq!(line["reps"], 10.0);
        assert_eq!(line["kind"], "aggressiveness");
    }

    #[test]
    fn weights_file() {
        let w = parse_weights("episode_id,weight\na, 1\nb,2.5\n").unwrap();
        assert_eq!(w, vec![("a".to_string(), 1.0), ("b".to_string(), 2.5)]);
        assert!(parse_weights("a,x\nb,y\n").is_err());
    }
}
