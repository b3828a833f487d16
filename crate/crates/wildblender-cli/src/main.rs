use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use wildblender::coding::{rle_encode, word_string};
use wildblender::model::{validate_params, Point};
use wildblender::runner::{json_diff, run, schedule_for, summary_value, RunConfig, RunReport, Scenario, SigmaSetting};
use wildblender::transport::w1;

#[derive(Parser)]
#[command(name = "wildblender", version, about = "Wild blender-horseshoe laboratory")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check the model parameters of a config against the admissible region.
    Validate { config: PathBuf },
    /// Run every stage and write report.json plus series-*.csv.
    Run {
        config: PathBuf,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Force a fixed sigma instead of the configured setting.
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recompute a report from its echoed config and diff the summaries.
    Replay { report: PathBuf },
    /// d_W between two CSV point lists (columns x,y,z).
    Wasserstein { a: PathBuf, b: PathBuf },
    /// Print the code schedule of a scenario.
    Code {
        #[arg(long, default_value = "dirac")]
        scenario: String,
        #[arg(long, default_value_t = 12)]
        k_max: usize,
        /// Print the hat words run-length encoded.
        #[arg(long)]
        words: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    RunConfig::from_json(&text).with_context(|| format!("config error in {}", path.display()))
}

fn read_points(path: &Path) -> Result<Vec<Point>> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64> { Ok(rec.get(i).unwrap_or("0").parse::<f64>()?) };
        out.push(Point::new(f(0)?, f(1)?, f(2)?));
    }
    if out.is_empty() {
        bail!("{} has no points", path.display());
    }
    Ok(out)
}

fn write_csv<P: AsRef<Path>>(path: P, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_artifacts(dir: &Path, r: &RunReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(r)?)?;
    write_csv(
        dir.join("series-schedule.csv"),
        &["k", "start", "alpha", "beta", "n_hat", "iota", "m"],
        r.schedule.rows.iter().map(|x| {
            vec![
                x.k.to_string(),
                x.start.to_string(),
                x.alpha.to_string(),
                x.beta.to_string(),
                x.n_hat.to_string(),
                x.iota.to_string(),
                x.m.to_string(),
            ]
        }),
    )?;
    write_csv(
        dir.join("series-nesting.csv"),
        &["k", "margin", "margin_abs_log10", "axis_ratio", "samples", "pass"],
        r.nesting.rows.iter().map(|x| {
            vec![
                x.k.to_string(),
                x.margin.to_string(),
                x.margin_abs_log10.to_string(),
                x.axis_ratio.to_string(),
                x.samples.to_string(),
                x.pass.to_string(),
            ]
        }),
    )?;
    if let Some(ratio) = &r.ratio {
        write_csv(
            dir.join("series-ratio.csv"),
            &["k", "log10_ratio"],
            ratio.rows.iter().map(|x| vec![x.k.to_string(), x.log10_ratio.to_string()]),
        )?;
    }
    if let Some(st) = &r.statistics {
        write_csv(
            dir.join("series-statistics.csv"),
            &["checkpoint", "count", "mean_x", "mean_y", "mean_z", "avg_sup", "avg_min", "sup_dw_upper", "sup_dw_lower"],
            st.checkpoints.iter().map(|c| {
                vec![
                    c.t.to_string(),
                    c.count.to_string(),
                    c.mean_x.to_string(),
                    c.mean_y.to_string(),
                    c.mean_z.to_string(),
                    c.avg_sup.to_string(),
                    c.avg_min.to_string(),
                    c.sup_dw_upper.to_string(),
                    c.sup_dw_lower.to_string(),
                ]
            }),
        )?;
    }
    Ok(())
}

fn print_verdicts(r: &RunReport) {
    if let Some(s) = &r.failed_stage {
        println!("stage={s}");
    }
    for v in &r.verdicts {
        println!("[{}] criterion {:>2} {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.criterion, v.name, v.detail);
    }
}

fn scenario_named(name: &str) -> Result<Scenario> {
    Ok(match name {
        "dirac" => Scenario::Dirac,
        "historic" => Scenario::Historic { eras: None, k2: 2 },
        "code_pair" => Scenario::CodePair,
        other => bail!("unknown scenario {other}"),
    })
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Validate { config } => {
            let cfg = load_config(&config)?;
            let v = validate_params(&cfg.params);
            if v.is_empty() {
                println!("valid");
                return Ok(ExitCode::SUCCESS);
            }
            for x in &v {
                println!("{}", x.message);
            }
            Ok(ExitCode::FAILURE)
        }
        Cmd::Run { config, out, sigma, seed } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = sigma {
                cfg.sigma = SigmaSetting::Fixed(s);
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = &out {
                cfg.output_dir = Some(o.display().to_string());
            }
            let report = run(&cfg)?;
            let dir = PathBuf::from(cfg.output_dir.clone().unwrap_or_else(|| "out".into()));
            write_artifacts(&dir, &report)?;
            print_verdicts(&report);
            println!("report: {}", dir.join("report.json").display());
            Ok(if report.pass() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Cmd::Replay { report } => {
            let text = fs::read_to_string(&report).with_context(|| format!("reading {}", report.display()))?;
            let old: serde_json::Value = serde_json::from_str(&text)?;
            let cfg: RunConfig = serde_json::from_value(old.get("config").cloned().context("report has no config")?)?;
            let fresh = run(&cfg)?;
            let mut old_summary = old.clone();
            old_summary.as_object_mut().map(|o| o.remove("config"));
            let diff = json_diff(&old_summary, &summary_value(&fresh));
            if diff.is_empty() {
                println!("no differences");
                Ok(ExitCode::SUCCESS)
            } else {
                for d in diff.iter().take(50) {
                    println!("differs: {d}");
                }
                println!("{} fields differ", diff.len());
                Ok(ExitCode::FAILURE)
            }
        }
        Cmd::Wasserstein { a, b } => {
            let d = w1(&read_points(&a)?, &read_points(&b)?);
            println!("{}", serde_json::to_string(&d)?);
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Code { scenario, k_max, words, config } => {
            let cfg = match config {
                Some(c) => load_config(&c)?,
                None => RunConfig::new(scenario_named(&scenario)?, 0),
            };
            let s = schedule_for(&cfg, k_max)?;
            println!("n0={} b0={} k_start={}", s.n0, word_string(&s.b0), s.k_start);
            println!("k,start,alpha,beta,n_hat,iota,m");
            for r in s.rows() {
                println!("{},{},{},{},{},{},{}", r.k, r.start, r.alpha, r.beta, r.n_hat, r.iota, r.m);
            }
            if words {
                for k in s.k_start..=s.k_max() {
                    println!("w_{k} = {}", rle_encode(&s.hat(k).word()));
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
