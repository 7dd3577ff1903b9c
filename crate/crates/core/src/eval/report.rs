use std::fmt::Write;

use serde::Serialize;

use super::benchmark::{EvalReport, MethodResult, RunMetrics, Summary, SweepTable};

/// Alignment note printed at the top of every report.
pub const ALIGNMENT_NOTE: &str =
    "MPJPE after one similarity Procrustes alignment over all 29 points per frame; PCK over hand joints after the same alignment";

/// Fixed-precision number for CSV output; failures print as `failed`.
fn num(v: Option<f64>) -> String {
    v.map_or_else(|| "failed".to_string(), |x| format!("{x:.6}"))
}

fn config_comment(cfg: &crate::config::TrainConfig) -> String {
    let pairs: Vec<String> = cfg.entries().into_iter().map(|(k, v)| format!("{k}={v}")).collect();
    pairs.join(" ")
}

#[derive(Serialize)]
struct MethodJson<'a> {
    method: &'a str,
    mean: Option<Summary>,
    mean_pck: Option<Vec<f64>>,
    runs: &'a [RunMetrics],
    failures: &'a [super::benchmark::RunFailure],
}

#[derive(Serialize)]
struct ReportJson<'a> {
    format: &'static str,
    version: u32,
    alignment: &'static str,
    config: indexmap::IndexMap<&'static str, String>,
    seeds: &'a [u64],
    thresholds_mm: &'a [f64],
    methods: Vec<MethodJson<'a>>,
}

impl EvalReport {
    /// Human-readable table of mean MPJPE per method.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {ALIGNMENT_NOTE}");
        let _ = writeln!(s, "# seeds: {:?}", self.seeds);
        let _ = writeln!(s, "# config: {}", config_comment(&self.config));
        let _ = writeln!(
            s,
            "{:<18} {:>10} {:>10} {:>10} {:>5} {:>7}",
            "method", "hand_mm", "object_mm", "all_mm", "runs", "failed"
        );
        for m in &self.methods {
            let cell =
                |f: fn(&Summary) -> f64| m.summary().map_or_else(|| "failed".into(), |s| format!("{:.2}", f(&s)));
            let _ = writeln!(
                s,
                "{:<18} {:>10} {:>10} {:>10} {:>5} {:>7}",
                m.method.name(),
                cell(|s| s.mpjpe_hand),
                cell(|s| s.mpjpe_obj),
                cell(|s| s.mpjpe_all),
                m.runs.len(),
                m.failures.len()
            );
        }
        for m in &self.methods {
            for f in &m.failures {
                let _ = writeln!(s, "# {} seed {} failed: {}", m.method.name(), f.seed, f.error);
            }
        }
        s
    }

    /// One row per method and seed plus a `mean` row per method.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {ALIGNMENT_NOTE}");
        let _ = writeln!(s, "# {}", config_comment(&self.config));
        s.push_str("method,seed,mpjpe_hand,mpjpe_obj,mpjpe_all\n");
        for m in &self.methods {
            for &seed in &self.seeds {
                let run = m.runs.iter().find(|r| r.seed == seed);
                let _ = writeln!(
                    s,
                    "{},{seed},{},{},{}",
                    m.method.name(),
                    num(run.map(|r| r.mpjpe_hand)),
                    num(run.map(|r| r.mpjpe_obj)),
                    num(run.map(|r| r.mpjpe_all))
                );
            }
            let mean = m.summary();
            let _ = writeln!(
                s,
                "{},mean,{},{},{}",
                m.method.name(),
                num(mean.map(|r| r.mpjpe_hand)),
                num(mean.map(|r| r.mpjpe_obj)),
                num(mean.map(|r| r.mpjpe_all))
            );
        }
        s
    }

    /// Mean hand PCK per method, one row per threshold.
    pub fn pck_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {ALIGNMENT_NOTE}");
        s.push_str("threshold_mm");
        for m in &self.methods {
            let _ = write!(s, ",{}", m.method.name());
        }
        s.push('\n');
        let curves: Vec<Option<Vec<f64>>> = self.methods.iter().map(MethodResult::mean_pck).collect();
        for (i, t) in self.thresholds.iter().enumerate() {
            let _ = write!(s, "{t}");
            for c in &curves {
                let _ = write!(s, ",{}", num(c.as_ref().map(|c| c[i])));
            }
            s.push('\n');
        }
        s
    }

    /// Self-describing JSON with the config echo, seeds and per-run metrics.
    pub fn to_json(&self) -> String {
        let doc = ReportJson {
            format: "graspdict-eval-report",
            version: 1,
            alignment: ALIGNMENT_NOTE,
            config: self.config.entries().into_iter().collect(),
            seeds: &self.seeds,
            thresholds_mm: &self.thresholds,
            methods: self
                .methods
                .iter()
                .map(|m| MethodJson {
                    method: m.method.name(),
                    mean: m.summary(),
                    mean_pck: m.mean_pck(),
                    runs: &m.runs,
                    failures: &m.failures,
                })
                .collect(),
        };
        let mut out = serde_json::to_string_pretty(&doc).expect("report serializes");
        out.push('\n');
        out
    }
}

impl SweepTable {
    /// `value,mpjpe_hand,mpjpe_obj,mpjpe_all`, plus ratio-only columns when
    /// the baseline was trained.
    pub fn to_csv(&self) -> String {
        let with_baseline = self.points.iter().any(|p| p.baseline.is_some());
        let mut s = String::new();
        let _ = writeln!(s, "# axis={} seeds={:?}", self.axis.name(), self.seeds);
        let _ = writeln!(s, "# {}", config_comment(&self.config));
        s.push_str("value,mpjpe_hand,mpjpe_obj,mpjpe_all");
        if with_baseline {
            s.push_str(",baseline_hand,baseline_obj,baseline_all");
        }
        s.push('\n');
        for p in &self.points {
            let o = p.ours.summary();
            let _ = write!(
                s,
                "{},{},{},{}",
                p.value,
                num(o.map(|x| x.mpjpe_hand)),
                num(o.map(|x| x.mpjpe_obj)),
                num(o.map(|x| x.mpjpe_all))
            );
            if with_baseline {
                let b = p.baseline.as_ref().and_then(MethodResult::summary);
                let _ = write!(
                    s,
                    ",{},{},{}",
                    num(b.map(|x| x.mpjpe_hand)),
                    num(b.map(|x| x.mpjpe_obj)),
                    num(b.map(|x| x.mpjpe_all))
                );
            }
            s.push('\n');
        }
        s
    }
}
