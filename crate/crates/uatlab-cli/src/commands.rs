//! Command implementations and the error-to-exit-code mapping.

use std::fmt;
use std::path::{Path, PathBuf};

use uatlab::flatten::{flatten, unflatten, FlatVec};
use uatlab::lora::{fit_als, merge};
use uatlab::lowering::{density_report, lower_linear, lower_mha, LoweredOp};
use uatlab::model::{
    load_lowered, load_matrix, load_model, load_pairs, load_sum, load_update, save_lowered,
    save_model, save_sum, save_update, FileError, Model, ModelLayer,
};
use uatlab::prune::{
    entry_abs_percentile, prune_entries, prune_terms, score_terms, threshold_at_percentile,
};
use uatlab::transformer::{linear_forward, mha_forward, AttnConfig, MhaLayer, ScaleRoot};
use uatlab::uat::{
    default_weight_scale, fit_alpha, grid_rmse, sample_features, sup_error, targets, DomainBox,
    SigmoidalSum, Target,
};
use uatlab::{Mat, Rng};

use crate::{Command, ScaleRootArg};

/// Errors carrying their exit-code class.
#[derive(Debug)]
pub enum CliError {
    /// A verification tolerance was breached (exit 1).
    Verification(String),
    /// File-level failure; schema and I/O map to exit 2, shape to exit 3.
    File(FileError),
    /// Math precondition violation (exit 3).
    Math(uatlab::Error),
    /// Bad invocation (exit 2).
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Usage(_) => 2,
            CliError::File(FileError::Io(_) | FileError::Schema(_)) => 2,
            CliError::File(FileError::Shape(_)) => 3,
            CliError::Math(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Verification(msg) => write!(f, "verification failed: {msg}"),
            CliError::File(e) => write!(f, "{e}"),
            CliError::Math(e) => write!(f, "{e}"),
            CliError::Usage(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<FileError> for CliError {
    fn from(e: FileError) -> Self {
        CliError::File(e)
    }
}

impl From<uatlab::Error> for CliError {
    fn from(e: uatlab::Error) -> Self {
        CliError::Math(e)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn attn_config(scale_root: ScaleRootArg) -> AttnConfig {
    AttnConfig {
        scale_root: match scale_root {
            ScaleRootArg::M => ScaleRoot::ModelWidth,
            ScaleRootArg::D => ScaleRoot::HeadDim,
        },
        causal: false,
    }
}

/// Shortest-round-trip scientific formatting; the convention for every
/// numeric report field.
fn fmt_f(v: f64) -> String {
    format!("{v:e}")
}

fn layer_at(model: &Model, index: usize) -> CliResult<&ModelLayer> {
    model.layers().get(index).ok_or_else(|| {
        CliError::Usage(format!(
            "layer index {index} out of range; model has {} layers",
            model.layers().len()
        ))
    })
}

fn forward_layer(layer: &ModelLayer, x: &Mat, cfg: &AttnConfig) -> CliResult<Mat> {
    Ok(match layer {
        ModelLayer::Linear(l) => linear_forward(l, x)?,
        ModelLayer::Mha(p) => mha_forward(&MhaLayer::new(p.clone()), x, cfg)?,
    })
}

fn lower_layer(layer: &ModelLayer, x: &Mat, cfg: &AttnConfig) -> CliResult<LoweredOp> {
    Ok(match layer {
        ModelLayer::Linear(l) => lower_linear(l.weight(), x.cols())?,
        ModelLayer::Mha(p) => lower_mha(x, p, cfg)?,
    })
}

/// Oracle-forwards the input through layers `0..upto`.
fn propagate(model: &Model, x: &Mat, upto: usize, cfg: &AttnConfig) -> CliResult<Mat> {
    let mut current = x.clone();
    for layer in &model.layers()[..upto] {
        current = forward_layer(layer, &current, cfg)?;
    }
    Ok(current)
}

fn write_tsv(path: &Path, header: &str, rows: &[String]) -> CliResult {
    let mut text = String::with_capacity(header.len() + rows.len() * 32);
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| CliError::File(FileError::Io(e)))?;
    Ok(())
}

fn builtin_target(name: &str) -> CliResult<targets::BuiltinTarget> {
    targets::builtin(name).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown target {name:?}; available: {}",
            targets::NAMES.join(", ")
        ))
    })
}

fn regrid(domain: &DomainBox, grid: Option<usize>) -> CliResult<DomainBox> {
    match grid {
        None => Ok(domain.clone()),
        Some(res) => Ok(DomainBox::new(
            domain.lower().to_vec(),
            domain.upper().to_vec(),
            vec![res; domain.dim()],
        )?),
    }
}

fn pick_threshold(
    threshold: Option<f64>,
    percentile: Option<f64>,
    from_percentile: impl FnOnce(f64) -> CliResult<f64>,
) -> CliResult<f64> {
    match (threshold, percentile) {
        (Some(t), None) => Ok(t),
        (None, Some(p)) => from_percentile(p),
        _ => Err(CliError::Usage(
            "provide exactly one of --threshold or --percentile".to_string(),
        )),
    }
}

pub fn run(command: Command) -> CliResult {
    match command {
        Command::Lower {
            model,
            layer,
            input,
            out,
            scale_root,
            threshold,
        } => cmd_lower(&model, layer, &input, &out, scale_root, threshold),
        Command::Verify {
            model,
            input,
            tol,
            lowered,
            layer,
            scale_root,
        } => cmd_verify(&model, &input, tol, lowered, layer, scale_root),
        Command::Density {
            model,
            layer,
            input,
            threshold,
            out,
            scale_root,
        } => cmd_density(&model, layer, &input, threshold, out, scale_root),
        Command::UatFit {
            target,
            n_terms,
            seed,
            out,
            ridge,
            grid,
            scale,
            plot,
        } => cmd_uat_fit(&target, n_terms, seed, &out, ridge, grid, scale, plot),
        Command::UatError { sum, target, grid } => cmd_uat_error(&sum, &target, grid),
        Command::PruneTerms {
            sum,
            target,
            threshold,
            percentile,
            out,
            grid,
            plot,
        } => cmd_prune_terms(&sum, &target, threshold, percentile, &out, grid, plot),
        Command::PruneEntries {
            model,
            layer,
            input,
            threshold,
            percentile,
            calib,
            seed,
            out,
            scale_root,
        } => cmd_prune_entries(
            &model, layer, &input, threshold, percentile, calib, seed, &out, scale_root,
        ),
        Command::LoraMerge {
            model,
            layer,
            update,
            out,
            scale,
        } => cmd_lora_merge(&model, layer, &update, &out, scale),
        Command::LoraFit {
            model,
            layer,
            data,
            rank,
            iters,
            seed,
            scale,
            out,
        } => cmd_lora_fit(&model, layer, &data, rank, iters, seed, scale, &out),
    }
}

fn cmd_lower(
    model_path: &Path,
    layer: usize,
    input_path: &Path,
    out: &Path,
    scale_root: ScaleRootArg,
    threshold: f64,
) -> CliResult {
    let cfg = attn_config(scale_root);
    let model = load_model(model_path)?;
    let x = load_matrix(input_path)?;
    model.check_input(&x)?;
    let target_layer = layer_at(&model, layer)?;
    let x_layer = propagate(&model, &x, layer, &cfg)?;
    let op = lower_layer(target_layer, &x_layer, &cfg)?;
    save_lowered(&op, out)?;
    let report = density_report(&op, threshold)?;
    println!("command\tlower");
    println!("layer\t{layer}");
    println!("kind\t{}", op.kind());
    println!("n_rows\t{}", op.n_rows());
    println!("n_cols\t{}", op.n_cols());
    println!("size\t{}", op.size());
    println!("nnz\t{}", op.nnz());
    println!("density\t{}", fmt_f(op.density()));
    println!("threshold\t{}", fmt_f(report.threshold));
    println!("entries_above\t{}", report.entries_above);
    println!("density_above\t{}", fmt_f(report.density));
    Ok(())
}

fn cmd_verify(
    model_path: &Path,
    input_path: &Path,
    tol: f64,
    lowered: Option<PathBuf>,
    layer: Option<usize>,
    scale_root: ScaleRootArg,
) -> CliResult {
    let cfg = attn_config(scale_root);
    let model = load_model(model_path)?;
    let x = load_matrix(input_path)?;
    model.check_input(&x)?;
    println!("command\tverify");
    println!("tolerance\t{}", fmt_f(tol));

    if let Some(dump_path) = lowered {
        let index = layer.ok_or_else(|| {
            CliError::Usage("--lowered requires --layer to name the operator's layer".to_string())
        })?;
        let stored = load_lowered(&dump_path)?;
        let target_layer = layer_at(&model, index)?;
        let x_layer = propagate(&model, &x, index, &cfg)?;
        let reference = forward_layer(target_layer, &x_layer, &cfg)?;
        let applied = unflatten(&stored.apply(&flatten(&x_layer))?);
        let deviation = applied.sup_norm_diff(&reference)?;
        println!(
            "layer\t{index}\tkind\t{}\tdeviation\t{}",
            stored.kind(),
            fmt_f(deviation)
        );
        if deviation <= tol {
            println!("verify\tok");
            Ok(())
        } else {
            Err(CliError::Verification(format!(
                "stored operator for layer {index} deviates by {} (tolerance {})",
                fmt_f(deviation),
                fmt_f(tol)
            )))
        }
    } else {
        let mut current = x;
        let mut breaches = Vec::new();
        for (index, model_layer) in model.layers().iter().enumerate() {
            let op = lower_layer(model_layer, &current, &cfg)?;
            let reference = forward_layer(model_layer, &current, &cfg)?;
            let applied = unflatten(&op.apply(&flatten(&current))?);
            let deviation = applied.sup_norm_diff(&reference)?;
            println!(
                "layer\t{index}\tkind\t{}\tdeviation\t{}",
                op.kind(),
                fmt_f(deviation)
            );
            if deviation > tol || deviation.is_nan() {
                breaches.push(index);
            }
            current = reference;
        }
        if breaches.is_empty() {
            println!("verify\tok");
            Ok(())
        } else {
            Err(CliError::Verification(format!(
                "layers {breaches:?} deviate beyond tolerance {}",
                fmt_f(tol)
            )))
        }
    }
}

fn cmd_density(
    model_path: &Path,
    layer: usize,
    input_path: &Path,
    threshold: f64,
    out: Option<PathBuf>,
    scale_root: ScaleRootArg,
) -> CliResult {
    let cfg = attn_config(scale_root);
    let model = load_model(model_path)?;
    let x = load_matrix(input_path)?;
    model.check_input(&x)?;
    let target_layer = layer_at(&model, layer)?;
    let x_layer = propagate(&model, &x, layer, &cfg)?;
    let op = lower_layer(target_layer, &x_layer, &cfg)?;
    let report = density_report(&op, threshold)?;
    println!("command\tdensity");
    println!("layer\t{layer}");
    println!("kind\t{}", op.kind());
    println!("size\t{}", report.size);
    println!("threshold\t{}", fmt_f(report.threshold));
    println!("entries_above\t{}", report.entries_above);
    println!("density\t{}", fmt_f(report.density));
    // Near-zero distance marks a factor of a composed stack as removable.
    println!(
        "identity_distance\t{}",
        fmt_f(uatlab::prune::identity_distance(&op))
    );
    if let Some(path) = out {
        let rows: Vec<String> = (0..report.size)
            .map(|i| format!("{i}\t{}\t{}", report.row_counts[i], report.col_counts[i]))
            .collect();
        write_tsv(&path, "index\trow_above\tcol_above", &rows)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_uat_fit(
    target_name: &str,
    n_terms: usize,
    seed: u64,
    out: &Path,
    ridge: f64,
    grid: Option<usize>,
    scale: Option<f64>,
    plot: Option<PathBuf>,
) -> CliResult {
    let spec = builtin_target(target_name)?;
    let domain = regrid(&spec.domain, grid)?;
    let scale_value = scale.unwrap_or_else(|| default_weight_scale(n_terms, domain.dim()));
    let mut rng = Rng::new(seed);
    let features = sample_features(&domain, n_terms, scale_value, &mut rng);
    let fitted = fit_alpha(&features, &spec.target, &domain, ridge)?;
    save_sum(&fitted, out)?;
    let sup = sup_error(&fitted, &spec.target, &domain)?;
    let rmse = grid_rmse(&fitted, &spec.target, &domain)?;
    println!("command\tuat-fit");
    println!("target\t{target_name}");
    println!("n_terms\t{n_terms}");
    println!("seed\t{seed}");
    println!("ridge\t{}", fmt_f(ridge));
    println!("scale\t{}", fmt_f(scale_value));
    println!("grid_points\t{}", domain.n_points());
    println!("sup_error\t{}", fmt_f(sup));
    println!("rmse\t{}", fmt_f(rmse));
    println!("note\tsup_error is a grid maximum, a lower bound on the true sup");
    if let Some(path) = plot {
        write_fit_plot(&path, &fitted, &spec.target, &domain)?;
    }
    Ok(())
}

fn write_fit_plot(
    path: &Path,
    fitted: &SigmoidalSum,
    target: &dyn Target,
    domain: &DomainBox,
) -> CliResult {
    let dim = domain.dim();
    let m = target.output_dim();
    let mut header = String::new();
    for d in 0..dim {
        header.push_str(&format!("x{d}\t"));
    }
    for k in 0..m {
        header.push_str(&format!("target{k}\t"));
    }
    for k in 0..m {
        header.push_str(&format!("fitted{k}\t"));
    }
    header.push_str("abs_error");
    let mut rows = Vec::with_capacity(domain.n_points());
    for x in domain.points() {
        let fv = target.eval(&x);
        let gv = fitted.eval(&x)?;
        let err = fv
            .iter()
            .zip(&gv)
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        let mut row = String::new();
        for v in &x {
            row.push_str(&fmt_f(*v));
            row.push('\t');
        }
        for v in fv.iter().chain(&gv) {
            row.push_str(&fmt_f(*v));
            row.push('\t');
        }
        row.push_str(&fmt_f(err));
        rows.push(row);
    }
    write_tsv(path, &header, &rows)
}

fn cmd_uat_error(sum_path: &Path, target_name: &str, grid: Option<usize>) -> CliResult {
    let spec = builtin_target(target_name)?;
    let domain = regrid(&spec.domain, grid)?;
    let g = load_sum(sum_path)?;
    let sup = sup_error(&g, &spec.target, &domain)?;
    let rmse = grid_rmse(&g, &spec.target, &domain)?;
    println!("command\tuat-error");
    println!("target\t{target_name}");
    println!("n_terms\t{}", g.n_terms());
    println!("grid_points\t{}", domain.n_points());
    println!("sup_error\t{}", fmt_f(sup));
    println!("rmse\t{}", fmt_f(rmse));
    println!("note\tsup_error is a grid maximum, a lower bound on the true sup");
    Ok(())
}

fn cmd_prune_terms(
    sum_path: &Path,
    target_name: &str,
    threshold: Option<f64>,
    percentile: Option<f64>,
    out: &Path,
    grid: Option<usize>,
    plot: Option<PathBuf>,
) -> CliResult {
    let spec = builtin_target(target_name)?;
    let domain = regrid(&spec.domain, grid)?;
    let g = load_sum(sum_path)?;
    let scores = score_terms(&g, &domain)?;
    let tau = pick_threshold(threshold, percentile, |p| {
        Ok(threshold_at_percentile(&scores, p)?)
    })?;
    let (slim, report) = prune_terms(&g, &spec.target, &domain, &scores, tau)?;
    save_sum(&slim, out)?;
    println!("command\tprune-terms");
    println!("target\t{target_name}");
    println!("terms_before\t{}", g.n_terms());
    println!("terms_after\t{}", slim.n_terms());
    println!("threshold\t{}", fmt_f(tau));
    println!("pruned_mass\t{}", fmt_f(report.pruned_mass));
    println!("pre_error\t{}", fmt_f(report.pre_error));
    println!("post_error\t{}", fmt_f(report.post_error));
    println!(
        "error_bound\t{}",
        fmt_f(report.pre_error + report.pruned_mass)
    );
    println!("bound_satisfied\t{}", report.bound_satisfied);
    if let Some(path) = plot {
        let kept: std::collections::HashSet<usize> = report.kept.iter().copied().collect();
        let rows: Vec<String> = report
            .scores
            .iter()
            .enumerate()
            .map(|(j, s)| format!("{j}\t{}\t{}", fmt_f(*s), kept.contains(&j)))
            .collect();
        write_tsv(&path, "term\tscore\tkept", &rows)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_prune_entries(
    model_path: &Path,
    layer: usize,
    input_path: &Path,
    threshold: Option<f64>,
    percentile: Option<f64>,
    calib: usize,
    seed: u64,
    out: &Path,
    scale_root: ScaleRootArg,
) -> CliResult {
    let cfg = attn_config(scale_root);
    let model = load_model(model_path)?;
    let x = load_matrix(input_path)?;
    model.check_input(&x)?;
    let target_layer = layer_at(&model, layer)?;
    let x_layer = propagate(&model, &x, layer, &cfg)?;
    let op = lower_layer(target_layer, &x_layer, &cfg)?;
    let tau = pick_threshold(threshold, percentile, |p| Ok(entry_abs_percentile(&op, p)?))?;

    let mut rng = Rng::new(seed);
    let mut calib_inputs: Vec<FlatVec> = Vec::with_capacity(calib);
    if calib > 0 {
        calib_inputs.push(flatten(&x_layer));
        for _ in 1..calib {
            calib_inputs.push(flatten(&rng.uniform_mat(
                op.n_rows(),
                op.n_cols(),
                -1.0,
                1.0,
            )));
        }
    }
    let (slim, report) = prune_entries(&op, tau, &calib_inputs)?;
    save_lowered(&slim, out)?;
    let (max_observed, max_bound) = report.calib.iter().fold((0.0f64, 0.0f64), |acc, (o, b)| {
        (acc.0.max(*o), acc.1.max(*b))
    });
    println!("command\tprune-entries");
    println!("layer\t{layer}");
    println!("threshold\t{}", fmt_f(report.threshold));
    println!("zeroed\t{}", report.zeroed);
    println!("nnz_before\t{}", report.nnz_before);
    println!("nnz_after\t{}", report.nnz_after);
    println!("delta_row_norm\t{}", fmt_f(report.delta_row_norm));
    println!("calib_inputs\t{}", report.calib.len());
    println!("max_observed\t{}", fmt_f(max_observed));
    println!("max_bound\t{}", fmt_f(max_bound));
    println!("within_bound\t{}", report.within_bound);
    Ok(())
}

fn cmd_lora_merge(
    model_path: &Path,
    layer: usize,
    update_path: &Path,
    out: &Path,
    scale: Option<f64>,
) -> CliResult {
    let mut model = load_model(model_path)?;
    let update = load_update(update_path)?;
    let update = match scale {
        Some(s) => update.with_scale(s)?,
        None => update,
    };
    let ModelLayer::Linear(base) = layer_at(&model, layer)? else {
        return Err(CliError::Usage(format!(
            "layer {layer} is not a linear layer; lora-merge targets linear weights"
        )));
    };
    let merged = merge(base.weight(), &update)?;
    let delta_sup = merged.sup_norm_diff(base.weight())?;
    let new_layer = ModelLayer::Linear(uatlab::LinearLayer::new(merged)?);
    model.replace_layer(layer, new_layer)?;
    save_model(&model, out)?;
    println!("command\tlora-merge");
    println!("layer\t{layer}");
    println!("rank\t{}", update.rank());
    println!("scale\t{}", fmt_f(update.scale()));
    println!("weight_delta_sup\t{}", fmt_f(delta_sup));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_lora_fit(
    model_path: &Path,
    layer: usize,
    data_path: &Path,
    rank: usize,
    iters: usize,
    seed: u64,
    scale: f64,
    out: &Path,
) -> CliResult {
    let model = load_model(model_path)?;
    let ModelLayer::Linear(base) = layer_at(&model, layer)? else {
        return Err(CliError::Usage(format!(
            "layer {layer} is not a linear layer; lora-fit targets linear weights"
        )));
    };
    let (x, y) = load_pairs(data_path)?;
    let mut rng = Rng::new(seed);
    let (update, report) = fit_als(base.weight(), &x, &y, rank, iters, scale, &mut rng)?;
    save_update(&update, out)?;
    println!("command\tlora-fit");
    println!("layer\t{layer}");
    println!("rank\t{rank}");
    println!("samples\t{}", x.cols());
    println!("iterations\t{}", report.iterations);
    println!(
        "initial_objective\t{}",
        fmt_f(*report.objective_history.first().expect("nonempty"))
    );
    println!("final_objective\t{}", fmt_f(report.final_objective));
    Ok(())
}
