//! Run configuration, the staged pipeline and the JSON report.

use crate::bridges::{connector_consts, ConnectorConsts};
use crate::coding::{checkpoint_grid, default_era_seq, gen_historic_code, word_string, FreeWords, Word};
use crate::model::{validate_params, ModelParams, Violation};
use crate::perturbation::{build_field, build_pseudo_orbit, FieldSummary, Mollifier, PerturbationField};
use crate::schedule::{gen_quadratic_schedule, gen_code_pair, CodeSchedule, ScheduleRow};
use crate::stats::{
    detect_historic, domain_offsets, final_deviation, reference_orbit, relative_intervals, sample_mean_series, shift_code,
    stratified_samples, track, HistoricReport, OcdSpec, TrackInput, TrackReport,
};
use crate::wandering::{
    auto_sigma, build_domains, curvature_check, domain_sizes, domains_disjoint, lambda_separation, verify_size_ratio, verify_nesting,
    verify_wandering, CurvatureReport, CylinderDomain, DomainSizes, NestingReport, RatioReport, SampleGrid, SeparationRow, WanderingReport,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Scenario {
    Dirac,
    /// Era-coded free words; `eras: None` takes the greedy sequence from `k2`.
    Historic {
        #[serde(default)]
        eras: Option<Vec<usize>>,
        #[serde(default = "default_k2")]
        k2: usize,
    },
    CodePair,
    CustomCode {
        words: Vec<String>,
    },
}

fn default_k2() -> usize {
    2
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoTag {
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSetting {
    Auto(AutoTag),
    Fixed(f64),
}

fn d_sigma() -> SigmaSetting {
    SigmaSetting::Auto(AutoTag::Auto)
}
fn d_tie() -> u8 {
    1
}
fn d_chain() -> usize {
    45
}
fn d_horizon() -> u64 {
    1_000_000
}
fn d_moll() -> u32 {
    3
}
fn d_samples() -> usize {
    100
}
fn d_run() -> usize {
    6
}
fn d_wgens() -> usize {
    5
}
fn d_codes() -> usize {
    50
}
fn d_cp0() -> u64 {
    100
}
fn d_ratio() -> f64 {
    1.3
}
fn d_hist() -> f64 {
    0.2
}
fn d_tail() -> f64 {
    1e-9
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub params: ModelParams,
    pub scenario: Scenario,
    pub seed: u64,
    /// Branch taken when both backtracking branches are admissible.
    #[serde(default = "d_tie")]
    pub tie: u8,
    /// Last generation of the wandering chain checks.
    #[serde(default = "d_chain")]
    pub chain_depth: usize,
    /// Target orbit horizon `N` for the statistics.
    #[serde(default = "d_horizon")]
    pub horizon: u64,
    #[serde(default = "d_sigma")]
    pub sigma: SigmaSetting,
    #[serde(default = "d_moll")]
    pub mollifier_order: u32,
    #[serde(default = "d_samples")]
    pub samples: usize,
    #[serde(default)]
    pub nesting_grid: SampleGrid,
    #[serde(default = "d_run")]
    pub min_run: usize,
    #[serde(default = "d_wgens")]
    pub wandering_generations: usize,
    #[serde(default = "d_codes")]
    pub lambda_codes: usize,
    #[serde(default = "d_cp0")]
    pub checkpoint_start: u64,
    #[serde(default = "d_ratio")]
    pub checkpoint_ratio: f64,
    #[serde(default = "d_hist")]
    pub historic_threshold: f64,
    #[serde(default = "d_tail")]
    pub tail_tolerance: f64,
    /// Skip the orbit statistics stage.
    #[serde(default)]
    pub skip_statistics: bool,
    #[serde(default)]
    pub output_dir: Option<String>,
}

impl RunConfig {
    pub fn new(scenario: Scenario, seed: u64) -> RunConfig {
        let mut c: RunConfig = serde_json::from_value(serde_json::json!({
            "params": ModelParams::default(),
            "scenario": scenario,
            "seed": seed,
        }))
        .expect("defaults deserialize");
        c.nesting_grid = SampleGrid::default();
        c
    }

    pub fn from_json(s: &str) -> Result<RunConfig, serde_json::Error> {
        serde_json::from_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum RunError {
    #[error("invalid parameters: {}", .0.iter().map(|v| v.message.as_str()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("stage {stage}: {message}")]
    Stage { stage: String, message: String },
}

fn stage<E: std::fmt::Display>(name: &str) -> impl Fn(E) -> RunError + '_ {
    move |e| RunError::Stage { stage: name.into(), message: e.to_string() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSummary {
    pub n0: usize,
    pub b0: String,
    pub k_start: usize,
    pub k_max: usize,
    pub connector: ConnectorConsts,
    pub rows: Vec<ScheduleRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSummary {
    pub t: u64,
    pub count: u64,
    pub mean_x: f64,
    pub mean_y: f64,
    pub mean_z: f64,
    pub avg_sup: f64,
    pub avg_min: f64,
    pub sup_dw_upper: f64,
    pub sup_dw_lower: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatisticsReport {
    pub k_last: usize,
    pub horizon: u64,
    pub samples: usize,
    pub checkpoints: Vec<CheckpointSummary>,
    /// Largest distance of a sample's final Birkhoff averages from `P`.
    pub final_deviation_from_p: f64,
    pub pluripotency_final: f64,
    pub pluripotency_decreasing_tail: bool,
    /// Per-sample `d_W` never above the averaged sup distance.
    pub domination_holds: bool,
    pub historic_z: HistoricReport,
    pub ocd_checked: u64,
    pub ocd_failures: u64,
    pub ocd_shifted_failures: u64,
    /// Code-pair run only: control with the reference on the tracked code.
    pub control_avg_min_final: Option<f64>,
    pub floor_final: f64,
    pub floor_threshold: f64,
    pub sup_dw_final: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub criterion: u32,
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub seed: u64,
    pub schedule: ScheduleSummary,
    pub field: FieldSummary,
    pub sigma: f64,
    pub k_first: Option<usize>,
    pub nesting: NestingReport,
    pub ratio: Option<RatioReport>,
    pub domains_disjoint: Option<bool>,
    pub wandering: Option<WanderingReport>,
    pub separation: Vec<SeparationRow>,
    pub curvature: Option<CurvatureReport>,
    pub statistics: Option<StatisticsReport>,
    pub failed_stage: Option<String>,
    pub verdicts: Vec<Verdict>,
}

impl RunReport {
    pub fn pass(&self) -> bool {
        self.failed_stage.is_none() && self.verdicts.iter().all(|v| v.pass)
    }

    pub fn verdict(&self, c: u32) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.criterion == c)
    }
}

fn free_words(sc: &Scenario, k_max: usize) -> Result<FreeWords, RunError> {
    Ok(match sc {
        Scenario::Dirac => FreeWords::Dirac,
        Scenario::CodePair => FreeWords::CodePairZ,
        Scenario::Historic { eras, k2 } => {
            let e = eras.clone().unwrap_or_else(|| default_era_seq(*k2, k_max));
            gen_historic_code(e).map_err(stage("schedule"))?
        }
        Scenario::CustomCode { words } => FreeWords::Explicit {
            words: words.iter().map(|w| crate::coding::parse_word(w)).collect::<Result<_, _>>().map_err(stage("schedule"))?,
        },
    })
}

/// Generation whose free block ends closest below `T_{k0} + n`.
fn stats_generation(s: &CodeSchedule, k0: usize, n: u64) -> Option<usize> {
    (k0 + 1..=s.k_max()).rev().find(|&k| s.alpha(k) + s.beta(k) - s.start(k0) <= n)
}

/// Number of generations the horizon needs, estimated from the cubic growth.
fn generations_for(n: u64) -> usize {
    ((3.0 * n as f64).cbrt() as usize).max(20) + 10
}

/// Run every stage in order. A stage that cannot complete ends the run with
/// `failed_stage` set; the report up to that point is returned.
pub fn run(cfg: &RunConfig) -> Result<RunReport, RunError> {
    let p = &cfg.params;
    let v = validate_params(p);
    if !v.is_empty() {
        return Err(RunError::Invalid(v));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k_stats = if cfg.skip_statistics { 0 } else { generations_for(cfg.horizon) };
    let k_need = cfg.chain_depth.max(k_stats) + 1;
    let free = free_words(&cfg.scenario, k_need + 60)?;
    let s = gen_quadratic_schedule(p, &free, k_need + 60, cfg.tie).map_err(stage("schedule"))?;
    let k_end = (k_need - 1).min(s.k_max() - 1);
    let orbit = build_pseudo_orbit(p, &s, k_end).map_err(stage("pseudo-orbit"))?;
    let field = build_field(p, orbit, Mollifier::new(cfg.mollifier_order)).map_err(stage("field"))?;
    let schedule = ScheduleSummary {
        n0: s.n0,
        b0: word_string(&s.b0),
        k_start: s.k_start,
        k_max: s.k_max(),
        connector: connector_consts(p).map_err(stage("schedule"))?,
        rows: s.rows().into_iter().filter(|r| r.k <= k_end).collect(),
    };
    let k_lo = field.n_start;
    let k_hi = cfg.chain_depth.min(k_end - 1);
    let (sizes, nesting): (DomainSizes, NestingReport) = match cfg.sigma {
        SigmaSetting::Auto(_) => match auto_sigma(p, &field, &s, k_lo, k_hi, cfg.nesting_grid, cfg.tail_tolerance, cfg.min_run) {
            Ok(r) => r,
            Err(e) => {
                let sz = domain_sizes(p, &s, 1.0, k_lo, k_hi + 1, cfg.tail_tolerance).map_err(stage("domains"))?;
                let rep = verify_nesting(p, &field, &s, &sz, k_lo, k_hi, cfg.nesting_grid);
                return Ok(stopped(cfg, schedule, &field, sz.sigma, rep, "nesting", &e.to_string()));
            }
        },
        SigmaSetting::Fixed(sigma) => {
            let sz = domain_sizes(p, &s, sigma, k_lo, k_hi + 1, cfg.tail_tolerance).map_err(stage("domains"))?;
            let rep = verify_nesting(p, &field, &s, &sz, k_lo, k_hi, cfg.nesting_grid);
            (sz, rep)
        }
    };
    if nesting.run_len < cfg.min_run {
        let msg = format!("longest nesting run {} < {}", nesting.run_len, cfg.min_run);
        return Ok(stopped(cfg, schedule, &field, sizes.sigma, nesting, "nesting", &msg));
    }
    let k_first = nesting.run_start;
    let k_run_end = k_first + cfg.min_run - 1;
    let ratio = verify_size_ratio(p, &s, &sizes, k_first, k_run_end);
    let domains = build_domains(p, &field, &s, &sizes, k_first, k_run_end).map_err(stage("domains"))?;
    let ks: Vec<usize> = domains.iter().map(|d| d.k).collect();
    let disjoint = domains_disjoint(p, &s, &ks);
    let d0 = domains[0];
    let wandering = verify_wandering(p, &field, &s, &d0, cfg.wandering_generations, cfg.nesting_grid);
    let separation: Vec<SeparationRow> = domains.iter().map(|d| lambda_separation(p, &s, d, cfg.lambda_codes, &mut rng)).collect();
    let curvature = curvature_check(p, &field, &s, k_first);

    let mut report = RunReport {
        config: cfg.clone(),
        seed: cfg.seed,
        schedule,
        field: field.summary(),
        sigma: sizes.sigma,
        k_first: Some(k_first),
        nesting,
        ratio: Some(ratio),
        domains_disjoint: Some(disjoint),
        wandering: Some(wandering),
        separation,
        curvature: Some(curvature),
        statistics: None,
        failed_stage: None,
        verdicts: vec![],
    };
    if !cfg.skip_statistics {
        match statistics(cfg, &s, &field, &d0, &mut rng) {
            Ok(st) => report.statistics = Some(st),
            Err(e) => report.failed_stage = Some(format!("statistics: {e}")),
        }
    }
    report.verdicts = verdicts(&report);
    Ok(report)
}

fn stopped(
    cfg: &RunConfig,
    schedule: ScheduleSummary,
    field: &PerturbationField,
    sigma: f64,
    nesting: NestingReport,
    st: &str,
    msg: &str,
) -> RunReport {
    let mut r = RunReport {
        config: cfg.clone(),
        seed: cfg.seed,
        schedule,
        field: field.summary(),
        sigma,
        k_first: None,
        nesting,
        ratio: None,
        domains_disjoint: None,
        wandering: None,
        separation: vec![],
        curvature: None,
        statistics: None,
        failed_stage: Some(st.into()),
        verdicts: vec![],
    };
    r.verdicts = vec![Verdict { criterion: 7, name: "wandering chain".into(), pass: false, detail: format!("stage={st}: {msg}") }];
    r
}

fn statistics(
    cfg: &RunConfig,
    s: &CodeSchedule,
    field: &PerturbationField,
    d: &CylinderDomain,
    rng: &mut ChaCha8Rng,
) -> Result<StatisticsReport, RunError> {
    let p = &cfg.params;
    let k_last = stats_generation(s, d.k, cfg.horizon)
        .filter(|&k| k <= field.k_end())
        .ok_or_else(|| RunError::Stage { stage: "statistics".into(), message: "horizon beyond the field".into() })?;
    let t0 = s.start(d.k);
    let n_final = s.alpha(k_last) + s.beta(k_last) - t0 + 1;
    let checkpoints: Vec<u64> =
        checkpoint_grid(cfg.checkpoint_start as usize, n_final as usize, cfg.checkpoint_ratio).into_iter().map(|c| c as u64).collect();
    let code = s.code(d.k, k_last);
    let pre = s.code(s.k_start, d.k - 1);
    let code_pair = cfg.scenario == Scenario::CodePair;
    let ref_code: Word = if code_pair {
        let (_, x) = gen_code_pair(s);
        let off = (t0 - s.start(s.k_start)) as usize;
        x[off..off + code.len()].to_vec()
    } else {
        code.clone()
    };
    let pre_ref: Word = if code_pair { gen_code_pair(s).1[..pre.len()].to_vec() } else { pre.clone() };
    let reference = reference_orbit(p, &pre_ref, &ref_code);
    let units = stratified_samples(cfg.samples, rng);
    let samples = domain_offsets(d, &units);
    let intervals = relative_intervals(s, d.k, k_last, 0);
    let input = TrackInput {
        p,
        field,
        schedule: s,
        domain: d,
        samples: samples.clone(),
        k_last,
        reference: &reference,
        checkpoints: checkpoints.clone(),
        ocd: Some(OcdSpec { intervals: intervals.clone(), code: code.clone() }),
    };
    let rep = track(&input).map_err(stage("statistics"))?;
    let shifted = track(&TrackInput {
        checkpoints: vec![],
        ocd: Some(OcdSpec { intervals: relative_intervals(s, d.k, k_last, 1), code: shift_code(&code, 1) }),
        ..input
    })
    .map_err(stage("statistics"))?;
    let control = if code_pair {
        let own = reference_orbit(p, &pre, &code);
        let c = track(&TrackInput {
            p,
            field,
            schedule: s,
            domain: d,
            samples,
            k_last,
            reference: &own,
            checkpoints: checkpoints.clone(),
            ocd: None,
        })
        .map_err(stage("statistics"))?;
        c.rows.last().map(|r| r.avg_min)
    } else {
        None
    };
    Ok(summarize(cfg, &rep, shifted.ocd_failure_count, control))
}

fn summarize(cfg: &RunConfig, rep: &TrackReport, shifted_failures: u64, control: Option<f64>) -> StatisticsReport {
    let p = &cfg.params;
    let checkpoints: Vec<CheckpointSummary> = rep
        .rows
        .iter()
        .map(|r| {
            let n = r.sample_means.len() as f64;
            let m = |c: usize| r.sample_means.iter().map(|v| v[c]).sum::<f64>() / n;
            CheckpointSummary {
                t: r.t,
                count: r.count,
                mean_x: m(0),
                mean_y: m(1),
                mean_z: m(2),
                avg_sup: r.avg_sup,
                avg_min: r.avg_min,
                sup_dw_upper: r.sup_dw(),
                sup_dw_lower: r.dw_lower.iter().cloned().fold(0.0, f64::max),
            }
        })
        .collect();
    let sup: Vec<f64> = checkpoints.iter().map(|c| c.avg_sup).collect();
    let tail = &sup[sup.len().saturating_sub(5)..];
    let domination = rep.rows.iter().all(|r| r.dw_upper.iter().all(|&u| u <= r.avg_sup + 1e-12));
    let zs = sample_mean_series(rep, 2);
    let dpq = p.fixed_p().dist(&p.fixed_q());
    let last = checkpoints.last().expect("checkpoints");
    StatisticsReport {
        k_last: rep.k_last,
        horizon: last.t,
        samples: rep.samples,
        final_deviation_from_p: final_deviation(rep, [0.0; 3]),
        pluripotency_final: last.avg_sup,
        pluripotency_decreasing_tail: tail.windows(2).all(|w| w[1] < w[0]),
        domination_holds: domination,
        historic_z: detect_historic(&zs, cfg.historic_threshold),
        ocd_checked: rep.ocd_checked,
        ocd_failures: rep.ocd_failure_count,
        ocd_shifted_failures: shifted_failures,
        control_avg_min_final: control,
        floor_final: last.avg_min,
        floor_threshold: 0.3 * dpq,
        sup_dw_final: last.sup_dw_upper,
        checkpoints,
    }
}

fn verdicts(r: &RunReport) -> Vec<Verdict> {
    let mut out = Vec::new();
    let k_first = r.k_first.unwrap_or(0);
    let run = r.config.min_run;
    let nest_ok = r.nesting.rows.iter().filter(|x| x.k >= k_first && x.k < k_first + run).all(|x| x.pass && x.margin > 0.0);
    let w = r.wandering.as_ref();
    let sep_ok = !r.separation.is_empty() && r.separation.iter().all(|x| x.pass);
    let ratio = r.ratio.as_ref();
    let ratio_ok = ratio.is_some_and(|x| x.decreasing && x.log10_drop >= 1.0);
    let pass7 =
        nest_ok && w.is_some_and(|w| w.overlaps == 0 && w.diameters_decreasing) && sep_ok && ratio_ok && r.domains_disjoint == Some(true);
    out.push(Verdict {
        criterion: 7,
        name: "wandering chain".into(),
        pass: pass7,
        detail: format!(
            "sigma={} k={}..{} nesting={} overlaps={} diam_decreasing={} separation={} ratio_drop=10^{:.1} decreasing={}",
            r.sigma,
            k_first,
            k_first + run - 1,
            nest_ok,
            w.map_or(u64::MAX, |w| w.overlaps),
            w.is_some_and(|w| w.diameters_decreasing),
            sep_ok,
            ratio.map_or(f64::NAN, |x| x.log10_drop),
            ratio.is_some_and(|x| x.decreasing)
        ),
    });
    if let Some(c) = &r.curvature {
        out.push(Verdict {
            criterion: 11,
            name: "fold curvature".into(),
            pass: c.kappa_ok && c.normal_ok,
            detail: format!(
                "kappa={:.8} formula={} normal=({:.2e},{:.2e},{:.2e})",
                c.kappa, c.kappa_formula, c.normal[0], c.normal[1], c.normal[2]
            ),
        });
    }
    if let Some(st) = &r.statistics {
        match r.config.scenario {
            Scenario::Dirac => out.push(Verdict {
                criterion: 8,
                name: "Dirac statistics".into(),
                pass: st.final_deviation_from_p < 0.1
                    && st.pluripotency_final < 0.1
                    && st.pluripotency_decreasing_tail
                    && st.ocd_failures == 0,
                detail: format!(
                    "N={} dev={:.4} plurip={:.4} tail_decreasing={} ocd_fail={}/{} shifted_fail={}",
                    st.horizon,
                    st.final_deviation_from_p,
                    st.pluripotency_final,
                    st.pluripotency_decreasing_tail,
                    st.ocd_failures,
                    st.ocd_checked,
                    st.ocd_shifted_failures
                ),
            }),
            Scenario::Historic { .. } => out.push(Verdict {
                criterion: 9,
                name: "historic oscillation".into(),
                pass: st.historic_z.historic,
                detail: format!(
                    "N={} gap={:.4} liminf={:.4} limsup={:.4}",
                    st.horizon, st.historic_z.gap, st.historic_z.liminf, st.historic_z.limsup
                ),
            }),
            Scenario::CodePair => out.push(Verdict {
                criterion: 10,
                name: "code pair".into(),
                pass: st.floor_final > st.floor_threshold && st.sup_dw_final < 0.1,
                detail: format!(
                    "N={} floor={:.4} threshold={:.4} sup_dw={:.4} control_floor={:.4}",
                    st.horizon,
                    st.floor_final,
                    st.floor_threshold,
                    st.sup_dw_final,
                    st.control_avg_min_final.unwrap_or(f64::NAN)
                ),
            }),
            Scenario::CustomCode { .. } => {}
        }
    }
    out
}

/// Scalar fields compared by replay; everything in the report except the
/// echoed configuration.
pub fn summary_value(r: &RunReport) -> serde_json::Value {
    let mut v = serde_json::to_value(r).expect("report serializes");
    if let Some(o) = v.as_object_mut() {
        o.remove("config");
    }
    v
}

/// Paths at which two JSON values differ.
pub fn json_diff(a: &serde_json::Value, b: &serde_json::Value) -> Vec<String> {
    fn walk(a: &serde_json::Value, b: &serde_json::Value, path: String, out: &mut Vec<String>) {
        use serde_json::Value::*;
        match (a, b) {
            (Object(x), Object(y)) => {
                for (k, va) in x {
                    match y.get(k) {
                        Some(vb) => walk(va, vb, format!("{path}.{k}"), out),
                        None => out.push(format!("{path}.{k}")),
                    }
                }
                out.extend(y.keys().filter(|k| !x.contains_key(*k)).map(|k| format!("{path}.{k}")));
            }
            (Array(x), Array(y)) if x.len() == y.len() => {
                for (i, (va, vb)) in x.iter().zip(y).enumerate() {
                    walk(va, vb, format!("{path}[{i}]"), out);
                }
            }
            _ if a != b => out.push(if path.is_empty() { ".".into() } else { path }),
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk(a, b, String::new(), &mut out);
    out
}

pub fn schedule_for(cfg: &RunConfig, k_max: usize) -> Result<CodeSchedule, RunError> {
    let free = free_words(&cfg.scenario, k_max + 60)?;
    gen_quadratic_schedule(&cfg.params, &free, k_max, cfg.tie).map_err(stage("schedule"))
}
