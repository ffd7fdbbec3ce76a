use std::fmt::{self, Write as _};
use std::io::{self, Write as _};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use nbof_core::attention::Pass;
use nbof_core::data::{
    gen_noisy_timestamps, gen_order_task, load_features, save_features, LabeledSequenceSet, NoisyTaskParams,
    OrderTaskParams,
};
use nbof_core::export::export_attention;
use nbof_core::model::{load_checkpoint, randomized_model, save_checkpoint, AttentionKind, ModelConfig, ModelLossOp};
use nbof_core::numerics::{grad_check, DiffOp, Matrix};
use nbof_core::rng;
use nbof_core::train::{cross_validate, evaluate, fit, holdout, FoldReport, TrainReport};
use serde::Serialize;
use serde_json::json;

use crate::config::{Protocol, RunConfig};
use crate::{EvalArgs, GenArgs, Generator, GradcheckArgs, InspectArgs, TrainArgs};

/// A check ran to completion and did not pass.
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

/// JSON to stdout, table to stderr. A closed stdout is not an error.
fn emit(value: &impl Serialize, table: &str) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    match writeln!(io::stdout().lock(), "{json}") {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => return Err(e.into()),
        _ => {}
    }
    let _ = write!(io::stderr().lock(), "{table}");
    Ok(())
}

fn load_data(path: &Path) -> Result<LabeledSequenceSet> {
    load_features(path).with_context(|| format!("cannot load feature file {}", path.display()))
}

/// Checks `data` against the model and clips or zero-pads every item to `seq_len`.
fn prepare(data: LabeledSequenceSet, model: &ModelConfig, path: &Path) -> Result<LabeledSequenceSet> {
    ensure!(!data.is_empty(), "{}: feature file holds no items", path.display());
    ensure!(
        data.dim == model.input_dim,
        "{}: feature dimension {} does not match model input_dim {}",
        path.display(),
        data.dim,
        model.input_dim
    );
    ensure!(
        data.classes <= model.classes,
        "{}: {} classes but the model predicts {}",
        path.display(),
        data.classes,
        model.classes
    );
    Ok(match data.uniform_length() {
        Some(n) if n == model.seq_len => data,
        _ => data.with_length(model.seq_len),
    })
}

pub fn train(args: TrainArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.config, args.seed)?;
    let data = prepare(load_data(&args.data)?, &cfg.model, &args.data)?;

    let (report, full_model) = match cfg.protocol {
        Protocol::Kfold => (cross_validate(&cfg.model, &data, &cfg.train)?, None),
        Protocol::Holdout { test_fraction } => (holdout(&cfg.model, &data, &cfg.train, test_fraction)?, None),
        Protocol::Full => {
            let (model, loss_trace) = fit(&cfg.model, &data, &cfg.train, cfg.train.seed)?;
            let eval = evaluate(&model, &data)?;
            let fold = FoldReport {
                run: 0,
                fold: 0,
                train_items: data.len(),
                val_items: data.len(),
                loss_trace,
                accuracy: eval.accuracy,
                macro_f1: eval.macro_f1,
            };
            (TrainReport::from_folds(&cfg.model, "full".into(), vec![fold]), Some(model))
        }
    };

    if let Some(out) = &args.out {
        let model = match full_model {
            Some(m) => m,
            None => fit(&cfg.model, &data, &cfg.train, cfg.train.seed)?.0,
        };
        save_checkpoint(&model, out).with_context(|| format!("cannot write checkpoint {}", out.display()))?;
    }
    emit(&report, &report.to_markdown())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let model = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("cannot load checkpoint {}", args.checkpoint.display()))?;
    let data = prepare(load_data(&args.data)?, model.config(), &args.data)?;
    let e = evaluate(&model, &data)?;
    let table = format!(
        "| items | accuracy | macro-F1 |\n|---:|---:|---:|\n| {} | {:.2} | {:.2} |\n",
        data.len(),
        100.0 * e.accuracy,
        100.0 * e.macro_f1
    );
    emit(
        &json!({ "items": data.len(), "accuracy": e.accuracy, "macro_f1": e.macro_f1 }),
        &table,
    )
}

/// Scales the last parameter's cotangent so the analytic gradient is wrong.
struct FaultyVjp<'a>(&'a dyn DiffOp);

impl DiffOp for FaultyVjp<'_> {
    fn name(&self) -> &str {
        "faulty_vjp"
    }

    fn forward(&self, inputs: &[Matrix]) -> nbof_core::Result<Matrix> {
        self.0.forward(inputs)
    }

    fn vjp(&self, inputs: &[Matrix], output: &Matrix, upstream: &Matrix) -> nbof_core::Result<Vec<Matrix>> {
        let mut g = self.0.vjp(inputs, output, upstream)?;
        if let Some(last) = g.last_mut() {
            *last = last.scale(1.5).map(|v| v + 0.01);
        }
        Ok(g)
    }
}

#[derive(Serialize)]
struct GroupResult {
    group: String,
    max_rel_err: f64,
    passed: bool,
}

pub fn gradcheck(args: GradcheckArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.config, args.seed)?;
    ensure!(args.items >= 1, "--items must be >= 1");
    ensure!(args.eps > 0.0, "--eps must be > 0");
    let m = &cfg.model;
    let mut r = rng::seeded(rng::derive(m.seed, 0x6763));
    let items: Vec<(Matrix, usize)> = (0..args.items)
        .map(|i| (rng::uniform_matrix(&mut r, m.input_dim, m.seq_len, 1.0), i % m.classes))
        .collect();
    let samples: Vec<Matrix> = items.iter().map(|(x, _)| x.clone()).collect();
    let model = randomized_model(m.clone(), &samples, m.seed)?;
    let names = model.parameter_names();
    let point = model.parameter_values();
    let op = ModelLossOp::new(model, items)?;
    let faulty = FaultyVjp(&op);
    let checked: &dyn DiffOp = if args.inject_fault { &faulty } else { &op };
    let report = grad_check(checked, &point, args.eps)?;

    let mut groups: Vec<GroupResult> = Vec::new();
    for (name, err) in names.iter().zip(&report.per_input) {
        let group = name.split('.').next().unwrap_or(name).to_string();
        match groups.iter_mut().find(|g| g.group == group) {
            Some(g) => g.max_rel_err = g.max_rel_err.max(*err),
            None => groups.push(GroupResult {
                group,
                max_rel_err: *err,
                passed: true,
            }),
        }
    }
    for g in &mut groups {
        g.passed = !report.non_finite && g.max_rel_err <= args.tolerance;
    }
    let passed = report.passed(args.tolerance);
    let parameters: Vec<_> = names
        .iter()
        .zip(&report.per_input)
        .map(|(n, e)| json!({ "name": n, "max_rel_err": e }))
        .collect();

    let mut table = String::from("| group | max rel err | status |\n|---|---:|---|\n");
    for g in &groups {
        let _ = writeln!(table, "| {} | {:.3e} | {} |", g.group, g.max_rel_err, if g.passed { "pass" } else { "FAIL" });
    }
    emit(
        &json!({
            "attention": m.attention.to_string(),
            "tolerance": args.tolerance,
            "eps": args.eps,
            "non_finite": report.non_finite,
            "passed": passed,
            "groups": groups,
            "parameters": parameters,
        }),
        &table,
    )?;
    if !passed {
        let worst = groups.iter().filter(|g| !g.passed).map(|g| g.group.as_str()).collect::<Vec<_>>();
        return Err(CheckFailed(format!(
            "gradient check failed for {} (max relative error {:.3e} > {:.1e})",
            worst.join(", "),
            report.max_rel_err,
            args.tolerance
        ))
        .into());
    }
    Ok(())
}

pub fn gen(args: GenArgs) -> Result<()> {
    let set = match args.generator {
        Generator::Noisy => gen_noisy_timestamps(
            NoisyTaskParams {
                classes: args.classes,
                dim: args.dim,
                seq_len: args.seq_len,
                signal_fraction: args.signal_fraction,
                snr: args.snr,
                count: args.count,
            },
            args.seed,
        )?,
        Generator::Order => gen_order_task(
            OrderTaskParams {
                dim: args.dim,
                seq_len: args.seq_len,
                count: args.count,
            },
            args.seed,
        )?,
    };
    let checksum = set.checksum()?;
    save_features(&set, &args.out).with_context(|| format!("cannot write {}", args.out.display()))?;
    let table = format!(
        "| generator | items | classes | dim | sha256 |\n|---|---:|---:|---:|---|\n| {} | {} | {} | {} | {} |\n",
        set.metadata.generator,
        set.len(),
        set.classes,
        set.dim,
        checksum
    );
    emit(
        &json!({
            "path": args.out.display().to_string(),
            "generator": set.metadata.generator,
            "seed": args.seed,
            "items": set.len(),
            "classes": set.classes,
            "dim": set.dim,
            "params": set.metadata.params,
            "sha256": checksum,
        }),
        &table,
    )
}

pub fn inspect_attention(args: InspectArgs) -> Result<()> {
    let model = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("cannot load checkpoint {}", args.checkpoint.display()))?;
    if model.config().attention == AttentionKind::None {
        bail!(
            "{}: model has no attention layer to inspect",
            args.checkpoint.display()
        );
    }
    let data = prepare(load_data(&args.data)?, model.config(), &args.data)?;
    let item = data
        .items
        .get(args.item)
        .with_context(|| format!("item {} out of range ({} items)", args.item, data.len()))?;
    let matrices = model.forward(&item.features, Pass::Eval)?.attention_matrices();
    let files = export_attention(&matrices, &args.out)?;
    let shapes: Vec<_> = matrices.iter().map(|m| [m.rows(), m.cols()]).collect();
    let mut table = String::from("| head | rows | cols |\n|---:|---:|---:|\n");
    for (h, [r, c]) in shapes.iter().enumerate() {
        let _ = writeln!(table, "| {h} | {r} | {c} |");
    }
    emit(
        &json!({
            "attention": model.config().attention.to_string(),
            "item": args.item,
            "label": item.label,
            "shapes": shapes,
            "files": files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        }),
        &table,
    )
}
