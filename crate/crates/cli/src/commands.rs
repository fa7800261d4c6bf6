//! Command implementations.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use iimt_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use iimt_core::config::resolve_datasets;
use iimt_core::data::io::{load_dataset, save_dataset, DatasetManifest};
use iimt_core::data::{Domain, DomainDataset};
use iimt_core::gradcheck_suite::{run_gradcheck_suite, SuiteOptions};
use iimt_core::trainer::ablation::run_ablation;
use iimt_core::trainer::metrics::evaluate;
use iimt_core::trainer::report::{ablation_csv, ablation_text, summary_csv, summary_text};
use iimt_core::trainer::{train_with_options, StepReport, TrainOptions};
use iimt_core::{Error, IimtConfig, Result};

use crate::manifest::{hex, Layout, RunManifest};
use crate::{AblateArgs, EvalArgs, GenDataArgs, Generator, GradcheckArgs, TrainArgs};

/// Training runs in 32-bit floats; the gradient oracle uses 64-bit.
type TrainFloat = f32;

fn out_dir_override(requested: PathBuf) -> PathBuf {
    match std::env::var("IIMT_OUT") {
        Ok(v) if !v.is_empty() => PathBuf::from(v),
        _ => requested,
    }
}

fn quiet() -> bool {
    matches!(std::env::var("IIMT_LOG").as_deref(), Ok("quiet"))
}

fn load_config(path: &Path, seed: Option<u64>, wt_max: Option<f64>) -> Result<IimtConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = IimtConfig::from_toml(&text)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(wt_max) = wt_max {
        cfg.weights.t_max = wt_max;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(args: TrainArgs) -> Result<()> {
    let cfg = load_config(&args.config, args.seed, args.wt_max)?;
    let out = out_dir_override(args.out);
    fs::create_dir_all(&out)?;

    let (source, target) = resolve_datasets::<TrainFloat>(&cfg.dataset, cfg.seed)?;
    let hash = cfg.content_hash()?;

    let mut metrics = fs::File::create(out.join("metrics.log"))?;
    let verbose = !quiet();
    let mut on_report = |r: &StepReport| {
        let _ = writeln!(metrics, "{}", r.to_json_line());
        if verbose {
            if let Some(eval) = &r.eval {
                println!(
                    "step {:>6}  total {:.4}  source acc {:.4}  target acc {}",
                    r.step,
                    r.total,
                    eval.source_accuracy.unwrap_or(f64::NAN),
                    eval.target_accuracy
                        .map(|a| format!("{a:.4}"))
                        .unwrap_or_else(|| "n/a".into()),
                );
            }
        }
    };

    let run = train_with_options(
        &cfg,
        &source,
        &target,
        TrainOptions {
            checkpoint_dir: Some(&out),
            resume: None,
            on_report: Some(&mut on_report),
        },
    )?;

    save_checkpoint(
        &out.join("final.ckpt"),
        &Checkpoint {
            step: cfg.train.total_steps,
            config_hash: run.config_hash.clone(),
            model: run.model.clone(),
            optimizer: run.optimizer.clone(),
        },
    )?;

    let text = summary_text(run.source_eval.as_ref(), run.target_eval.as_ref());
    let csv = summary_csv(run.source_eval.as_ref(), run.target_eval.as_ref());
    fs::write(out.join("summary.txt"), &text)?;
    fs::write(out.join("summary.csv"), &csv)?;
    write_manifest(&out, &cfg, &hash, "train", true)?;
    print!("{text}");
    Ok(())
}

fn write_manifest(
    out: &Path,
    cfg: &IimtConfig,
    hash: &[u8],
    command: &'static str,
    with_checkpoint: bool,
) -> Result<()> {
    fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    let manifest = RunManifest {
        command,
        seed: cfg.seed,
        config_hash: hex(hash),
        layout: Layout {
            config: "config.toml",
            metrics: with_checkpoint.then_some("metrics.log"),
            checkpoint: with_checkpoint.then_some("final.ckpt"),
            summary_text: "summary.txt",
            summary_csv: "summary.csv",
        },
        config: cfg,
    };
    let text =
        toml::to_string(&manifest).map_err(|e| Error::Format(format!("manifest: {e}")))?;
    fs::write(out.join("manifest.toml"), text)?;
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint::<TrainFloat>(&args.checkpoint)?;
    let (dataset, _) = load_dataset::<TrainFloat>(&args.data)?;
    let report = evaluate(&ckpt.model, &dataset)?;
    let text = summary_for_domain(&dataset, &report);
    if let Some(out) = args.out {
        fs::create_dir_all(&out)?;
        fs::write(out.join("eval.txt"), &text)?;
        let (s, t) = match dataset.domain {
            Domain::Source => (Some(&report), None),
            Domain::Target => (None, Some(&report)),
        };
        fs::write(out.join("eval.csv"), summary_csv(s, t))?;
    }
    print!("{text}");
    Ok(())
}

fn summary_for_domain(
    dataset: &DomainDataset<TrainFloat>,
    report: &iimt_core::trainer::metrics::EvalReport,
) -> String {
    let mut text = String::new();
    text.push_str(&format!(
        "domain: {:?}  samples: {}  classes: {}\n",
        dataset.domain,
        dataset.len(),
        dataset.class_count
    ));
    text.push_str(&format!(
        "accuracy: {:.4}  weighted_f1: {:.4}\n",
        report.accuracy, report.weighted_f1
    ));
    text.push_str(&format!(
        "{:<8} {:>10} {:>10} {:>10} {:>10}\n",
        "class", "precision", "recall", "f1", "support"
    ));
    for (c, m) in report.per_class.iter().enumerate() {
        text.push_str(&format!(
            "{:<8} {:>10.4} {:>10.4} {:>10.4} {:>10}\n",
            c, m.precision, m.recall, m.f1, m.support
        ));
    }
    text
}

pub fn ablate(args: AblateArgs) -> Result<()> {
    let cfg = load_config(&args.config, None, args.wt_max)?;
    let out = out_dir_override(args.out);
    fs::create_dir_all(&out)?;
    if args.seeds == 0 {
        return Err(Error::Config("--seeds must be >= 1".into()));
    }
    let base = args.seed.unwrap_or(cfg.seed);
    let seeds: Vec<u64> = (0..args.seeds).map(|i| base + i).collect();

    let outcome = run_ablation::<TrainFloat>(&cfg, &seeds)?;
    let text = ablation_text(&outcome);
    fs::write(out.join("ablation.txt"), &text)?;
    fs::write(out.join("ablation.csv"), ablation_csv(&outcome))?;
    write_manifest(&out, &cfg, &cfg.content_hash()?, "ablate", false)?;
    print!("{text}");
    Ok(())
}

pub fn gradcheck(args: GradcheckArgs) -> Result<()> {
    let outcome = run_gradcheck_suite(&SuiteOptions {
        seed: args.seed,
        step: args.step,
        tolerance: args.tolerance,
        scope: args.scope.clone(),
        inject_bug: args.inject_bug,
    })?;
    if outcome.checks.is_empty() {
        return Err(Error::Config(format!(
            "unknown scope {:?}; expected one of {:?}",
            args.scope,
            iimt_core::gradcheck_suite::CHECK_NAMES
        )));
    }
    let mut all_passed = true;
    for check in &outcome.checks {
        println!(
            "{:<14} max rel err {:>12.3e}  tolerance {:.0e}  {}",
            check.name,
            check.max_rel_err,
            outcome.tolerance,
            if check.passed { "PASS" } else { "FAIL" }
        );
        all_passed &= check.passed;
    }
    if all_passed {
        Ok(())
    } else {
        let failed: Vec<&str> = outcome
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name)
            .collect();
        Err(Error::Numeric(format!(
            "gradient check failed for {failed:?}"
        )))
    }
}

pub fn gen_data(args: GenDataArgs) -> Result<()> {
    match args.generator {
        Generator::TwoMoons {
            out,
            n,
            noise,
            rotation_deg,
            seed,
            domain,
        } => {
            let domain = match domain.as_str() {
                "source" => Domain::Source,
                "target" => Domain::Target,
                other => {
                    return Err(Error::Config(format!(
                        "domain must be source or target, got {other}"
                    )))
                }
            };
            let ds = iimt_core::data::generators::gen_two_moons::<TrainFloat>(
                n,
                noise,
                rotation_deg,
                seed,
            )?
            .with_domain(domain);
            let mut params = toml::Table::new();
            params.insert("n".into(), (n as i64).into());
            params.insert("noise".into(), noise.into());
            params.insert("rotation_deg".into(), rotation_deg.into());
            let manifest = DatasetManifest {
                domain,
                class_count: 2,
                generator: "two-moons".into(),
                seed,
                params,
            };
            save_dataset(&out, &ds, &manifest)?;
            println!("wrote {} samples to {}", ds.len(), out.display());
        }
        Generator::Blobs {
            out,
            n,
            means,
            variance,
            shift,
            seed,
        } => {
            let means = parse_points(&means)?;
            let shift = parse_vector(&shift)?;
            let dim = shift.len();
            let cov: Vec<Vec<f64>> = (0..dim)
                .map(|i| (0..dim).map(|j| if i == j { variance } else { 0.0 }).collect())
                .collect();
            let (source, target) = iimt_core::data::generators::gen_shifted_blobs::<TrainFloat>(
                n, &means, &cov, &shift, seed,
            )?;
            let mut params = toml::Table::new();
            params.insert("n".into(), (n as i64).into());
            params.insert("variance".into(), variance.into());
            let class_count = source.class_count;
            for (ds, name) in [(source, "source"), (target, "target")] {
                let manifest = DatasetManifest {
                    domain: ds.domain,
                    class_count,
                    generator: "blobs".into(),
                    seed,
                    params: params.clone(),
                };
                save_dataset(&out.join(name), &ds, &manifest)?;
            }
            println!("wrote blob pair to {}", out.display());
        }
        Generator::MiniDigits {
            out,
            n_per_class,
            resolution,
            rotation_deg,
            seed,
        } => {
            let (source, target) = iimt_core::data::generators::gen_mini_digits::<TrainFloat>(
                n_per_class,
                resolution,
                rotation_deg,
                seed,
            )?;
            let mut params = toml::Table::new();
            params.insert("n_per_class".into(), (n_per_class as i64).into());
            params.insert("resolution".into(), (resolution as i64).into());
            params.insert("rotation_deg".into(), rotation_deg.into());
            for (ds, name) in [(source, "source"), (target, "target")] {
                let manifest = DatasetManifest {
                    domain: ds.domain,
                    class_count: 10,
                    generator: "mini-digits".into(),
                    seed,
                    params: params.clone(),
                };
                save_dataset(&out.join(name), &ds, &manifest)?;
            }
            println!("wrote digit pair to {}", out.display());
        }
    }
    Ok(())
}

fn parse_vector(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad number {s:?}: {e}")))
        })
        .collect()
}

fn parse_points(text: &str) -> Result<Vec<Vec<f64>>> {
    text.split(';').map(parse_vector).collect()
}
