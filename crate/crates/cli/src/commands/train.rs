//! `train`: fit the network on one dataset or a curriculum over several,
//! with optional resume. Writes `checkpoint.ckpt` and `loss_trace.csv`.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args as ClapArgs;

use dgc_core::model::{
    load_checkpoint, save_checkpoint, train as train_model, Correlation, ModelState, Parametrization,
    PyramidConfig, TrainOptions,
};

use crate::commands::dataset::{load_split, resolution_of, to_loaded, SplitSel};
use crate::config::{ensure_out_dir, fmt_f64, resolve, resolve_flag, ConfigMap, RunLog};
use crate::CliError;

#[derive(ClapArgs, Debug)]
pub struct Args {
    /// Output directory for the checkpoint and loss trace.
    #[arg(long)]
    pub out: PathBuf,
    /// Config file with key=value lines; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training dataset directory, or a comma-separated curriculum list.
    #[arg(long)]
    pub data: Option<String>,
    /// Learning rate (default 1e-3).
    #[arg(long)]
    pub lr: Option<f64>,
    /// Epochs per curriculum phase (default 30).
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Pairs per optimizer step (default 1).
    #[arg(long)]
    pub batch: Option<usize>,
    /// Seed for weight init and shuffling (default 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Pyramid levels (default 4).
    #[arg(long)]
    pub levels: Option<usize>,
    /// Input resolution (default: dataset resolution).
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Correlation layer: global | local (default global).
    #[arg(long)]
    pub correlation: Option<String>,
    /// Local correlation radius (default 1).
    #[arg(long)]
    pub radius: Option<usize>,
    /// Drop the post-correlation L2 normalization.
    #[arg(long)]
    pub no_l2norm: bool,
    /// Map parametrization: map | flow (default map).
    #[arg(long)]
    pub parametrization: Option<String>,
    /// Attach and train the matchability head.
    #[arg(long)]
    pub matchability: bool,
    /// Matchability loss weight (default 1 with --matchability, else 0).
    #[arg(long)]
    pub beta: Option<f64>,
    /// Per-level loss weights, comma separated (default all 1).
    #[arg(long)]
    pub alpha: Option<String>,
    /// Keep encoder weights fixed.
    #[arg(long)]
    pub freeze_encoder: bool,
    /// Continue from an existing checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

struct Resolved {
    out: PathBuf,
    data_dirs: Vec<PathBuf>,
    lr: f64,
    epochs: usize,
    batch: usize,
    seed: u64,
    beta: f64,
    freeze_encoder: bool,
    resume: Option<PathBuf>,
    resolution_explicit: bool,
    cfg: PyramidConfig,
}

fn resolve_args(args: Args) -> Result<Resolved, CliError> {
    let file = ConfigMap::load(args.config.as_ref())?;
    let data_s: String = resolve(args.data, &file, "data", String::new())?;
    if data_s.is_empty() {
        return Err(CliError::Usage("--data is required".into()));
    }
    let data_dirs: Vec<PathBuf> = data_s.split(',').map(|s| PathBuf::from(s.trim())).collect();
    let matchability = resolve_flag(args.matchability, &file, "matchability")?;
    let levels = resolve(args.levels, &file, "levels", 4usize)?;
    let resolution_explicit = args.resolution.is_some() || file.get("resolution").is_some();
    let resolution = resolve(args.resolution, &file, "resolution", 64usize)?;
    let correlation_s: String = resolve(args.correlation, &file, "correlation", "global".into())?;
    let radius = resolve(args.radius, &file, "radius", 1usize)?;
    let correlation = match correlation_s.as_str() {
        "global" => Correlation::Global,
        "local" => Correlation::Local { radius },
        other => return Err(CliError::Usage(format!("unknown correlation '{other}' (global|local)"))),
    };
    let parametrization_s: String = resolve(args.parametrization, &file, "parametrization", "map".into())?;
    let parametrization = match parametrization_s.as_str() {
        "map" => Parametrization::AbsoluteMap,
        "flow" => Parametrization::Flow,
        other => return Err(CliError::Usage(format!("unknown parametrization '{other}' (map|flow)"))),
    };
    let mut cfg = PyramidConfig::desk_default(levels, resolution);
    cfg.correlation = correlation;
    cfg.l2norm_correlation = !resolve_flag(args.no_l2norm, &file, "no_l2norm")?;
    cfg.parametrization = parametrization;
    cfg.use_matchability = matchability;
    if let Some(alpha) = args.alpha.or_else(|| file.get("alpha").map(String::from)) {
        let parsed: Result<Vec<f64>, _> = alpha.split(',').map(|s| s.trim().parse()).collect();
        cfg.alpha = parsed.map_err(|_| CliError::Usage(format!("bad alpha list '{alpha}'")))?;
    }
    let beta_default = if matchability { 1.0 } else { 0.0 };
    Ok(Resolved {
        out: args.out,
        data_dirs,
        lr: resolve(args.lr, &file, "lr", 1e-3)?,
        epochs: resolve(args.epochs, &file, "epochs", 30usize)?,
        batch: resolve(args.batch, &file, "batch", 1usize)?.max(1),
        seed: resolve(args.seed, &file, "seed", 0u64)?,
        beta: resolve(args.beta, &file, "beta", beta_default)?,
        freeze_encoder: resolve_flag(args.freeze_encoder, &file, "freeze_encoder")?,
        resume: args.resume.or_else(|| file.get("resume").map(PathBuf::from)),
        resolution_explicit,
        cfg,
    })
}

pub fn run(args: Args) -> Result<(), CliError> {
    let mut r = resolve_args(args)?;
    let first = load_split(&r.data_dirs[0], SplitSel::Train)?;
    let data_res = resolution_of(&first);
    if !r.resolution_explicit && r.resume.is_none() && r.cfg.base_resolution != data_res {
        r.cfg = respan_config(&r.cfg, data_res);
    }

    ensure_out_dir(&r.out)?;
    let mut log = RunLog::new("train");
    log.config(echo(&r));
    for d in &r.data_dirs {
        log.input_manifest(d)?;
    }

    let mut state = match &r.resume {
        Some(ckpt) => {
            log.note(format!("resumed_from: {}", ckpt.display()));
            load_checkpoint(ckpt)?
        }
        None => ModelState::new(r.cfg.clone(), r.seed)?,
    };
    if r.freeze_encoder {
        state.freeze_encoder();
    }
    if state.cfg.base_resolution != data_res {
        return Err(CliError::Usage(format!(
            "dataset resolution {data_res} does not match model resolution {}",
            state.cfg.base_resolution
        )));
    }

    let mut trace = String::from("epoch,step,L_c,L_m,L_total\n");
    let mut total_steps = 0usize;
    for (phase, dir) in r.data_dirs.iter().enumerate() {
        let pairs = if phase == 0 { first.clone() } else { load_split(dir, SplitSel::Train)? };
        let loaded = to_loaded(&pairs);
        let opts = TrainOptions {
            lr: r.lr,
            epochs: r.epochs,
            batch: r.batch,
            seed: r.seed,
            beta: r.beta,
            start_epoch: phase * r.epochs,
        };
        train_model(&mut state, &loaded, &opts, |rec| {
            total_steps += 1;
            let _ = writeln!(
                trace,
                "{},{},{},{},{}",
                rec.epoch,
                total_steps,
                fmt_f64(rec.l_c),
                fmt_f64(rec.l_m),
                fmt_f64(rec.l_total)
            );
        })?;
        log.note(format!("phase {phase}: trained on {} pairs from {}", loaded.len(), dir.display()));
    }

    std::fs::write(r.out.join("loss_trace.csv"), trace)?;
    save_checkpoint(&state, &r.out.join("checkpoint.ckpt"))?;
    log.note(format!("steps: {total_steps}"));
    log.flush(&r.out)
}

fn echo(r: &Resolved) -> Vec<(String, String)> {
    let mut kv = vec![
        (
            "data".into(),
            r.data_dirs.iter().map(|d| d.display().to_string()).collect::<Vec<_>>().join(","),
        ),
        ("lr".into(), r.lr.to_string()),
        ("epochs".into(), r.epochs.to_string()),
        ("batch".into(), r.batch.to_string()),
        ("seed".into(), r.seed.to_string()),
        ("beta".into(), r.beta.to_string()),
        ("freeze_encoder".into(), r.freeze_encoder.to_string()),
        ("levels".into(), r.cfg.levels.to_string()),
        ("resolution".into(), r.cfg.base_resolution.to_string()),
        (
            "correlation".into(),
            match r.cfg.correlation {
                Correlation::Global => "global".to_string(),
                Correlation::Local { radius } => format!("local:{radius}"),
            },
        ),
        ("l2norm_correlation".into(), r.cfg.l2norm_correlation.to_string()),
        (
            "parametrization".into(),
            match r.cfg.parametrization {
                Parametrization::AbsoluteMap => "map",
                Parametrization::Flow => "flow",
            }
            .to_string(),
        ),
        ("matchability".into(), r.cfg.use_matchability.to_string()),
        ("alpha".into(), r.cfg.alpha.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(",")),
    ];
    if let Some(res) = &r.resume {
        kv.push(("resume".into(), res.display().to_string()));
    }
    kv
}

fn respan_config(cfg: &PyramidConfig, resolution: usize) -> PyramidConfig {
    let mut out = PyramidConfig::desk_default(cfg.levels, resolution);
    out.correlation = cfg.correlation;
    out.l2norm_correlation = cfg.l2norm_correlation;
    out.parametrization = cfg.parametrization;
    out.use_matchability = cfg.use_matchability;
    out.alpha = cfg.alpha.clone();
    out
}
