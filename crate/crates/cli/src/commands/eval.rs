//! `eval`: per-pair and aggregate AEPE / PCK / Jaccard rows for a
//! checkpoint over a dataset split. `--use-gt-map` bypasses the network
//! and scores the ground truth against itself as a pipeline self-check.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args as ClapArgs;

use dgc_core::metrics::{evaluate_pair, pck_key, probs_to_mask, EvalReport};
use dgc_core::model::{load_checkpoint, predict};

use crate::commands::dataset::{load_split, SplitSel};
use crate::config::{ensure_out_dir, fmt_f64, resolve, resolve_flag, ConfigMap, RunLog};
use crate::CliError;

#[derive(ClapArgs, Debug)]
pub struct Args {
    /// Output directory for metrics.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Config file with key=value lines; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    pub data: Option<String>,
    /// Checkpoint to evaluate (required unless --use-gt-map).
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// PCK pixel thresholds, comma separated (default 1,3,5).
    #[arg(long)]
    pub thresholds: Option<String>,
    /// Evaluate over all pixels instead of mask-valid ones.
    #[arg(long)]
    pub unmasked: bool,
    /// Score ground-truth maps against themselves (no checkpoint needed).
    #[arg(long)]
    pub use_gt_map: bool,
    /// Dataset split to evaluate: train | val | all (default val).
    #[arg(long)]
    pub split: Option<SplitSel>,
}

pub fn run(args: Args) -> Result<(), CliError> {
    let file = ConfigMap::load(args.config.as_ref())?;
    let data: String = resolve(args.data, &file, "data", String::new())?;
    if data.is_empty() {
        return Err(CliError::Usage("--data is required".into()));
    }
    let data = PathBuf::from(data);
    let thresholds_s: String = resolve(args.thresholds, &file, "thresholds", "1,3,5".into())?;
    let thresholds: Vec<f64> = thresholds_s
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| CliError::Usage(format!("bad threshold '{s}'"))))
        .collect::<Result<_, _>>()?;
    if thresholds.iter().any(|t| *t <= 0.0) {
        return Err(CliError::Usage("thresholds must be positive".into()));
    }
    let unmasked = resolve_flag(args.unmasked, &file, "unmasked")?;
    let use_gt_map = resolve_flag(args.use_gt_map, &file, "use_gt_map")?;
    let split = args.split.unwrap_or(SplitSel::Val);
    let ckpt = args.ckpt.or_else(|| file.get("ckpt").map(PathBuf::from));
    if !use_gt_map && ckpt.is_none() {
        return Err(CliError::Usage("--ckpt is required unless --use-gt-map is set".into()));
    }

    ensure_out_dir(&args.out)?;
    let mut log = RunLog::new("eval");
    log.config(vec![
        ("data".into(), data.display().to_string()),
        ("ckpt".into(), ckpt.as_ref().map(|c| c.display().to_string()).unwrap_or_default()),
        ("thresholds".into(), thresholds_s.clone()),
        ("unmasked".into(), unmasked.to_string()),
        ("use_gt_map".into(), use_gt_map.to_string()),
        (
            "split".into(),
            match split {
                SplitSel::Train => "train",
                SplitSel::Val => "val",
                SplitSel::All => "all",
            }
            .to_string(),
        ),
    ]);
    log.input_manifest(&data)?;

    let mut state = match &ckpt {
        Some(path) if !use_gt_map => Some(load_checkpoint(path)?),
        _ => None,
    };
    let pairs = load_split(&data, split)?;
    if let Some(st) = &state {
        let res = pairs[0].1.gt_map.width;
        if st.cfg.base_resolution != res {
            return Err(CliError::Usage(format!(
                "dataset resolution {res} does not match checkpoint resolution {}",
                st.cfg.base_resolution
            )));
        }
    }

    let mut header = String::from("pair_id,aepe");
    for t in &thresholds {
        let _ = write!(header, ",pck{t}");
    }
    header.push_str(",jaccard,n_valid\n");
    let mut csv = header;

    let mut reports: Vec<EvalReport> = Vec::new();
    for (entry, stored) in &pairs {
        let (est, probs) = match state.as_mut() {
            Some(st) => {
                let (map, probs) = predict(st, &stored.source.to_tensor(), &stored.target.to_tensor())?;
                (map, probs)
            }
            None => (stored.gt_map.clone(), None),
        };
        let mask = if unmasked { None } else { Some(&stored.gt_mask) };
        let pred_mask = probs
            .as_deref()
            .map(|p| probs_to_mask(p, stored.gt_mask.width, stored.gt_mask.height));
        let report = evaluate_pair(&est, &stored.gt_map, mask, &thresholds, pred_mask.as_ref(), Some(&stored.gt_mask))
            .map_err(|e| CliError::Data(format!("pair {}: {e}", entry.id)))?;
        let _ = write!(csv, "{},{}", entry.id, fmt_f64(report.aepe));
        for t in &thresholds {
            let _ = write!(csv, ",{}", fmt_f64(report.pck[&pck_key(*t)]));
        }
        match report.jaccard {
            Some(j) => {
                let _ = writeln!(csv, ",{},{}", fmt_f64(j), report.n_valid);
            }
            None => {
                let _ = writeln!(csv, ",,{}", report.n_valid);
            }
        }
        reports.push(report);
    }

    // aggregate row: means over pairs, total valid count
    let n = reports.len() as f64;
    let mean_aepe = reports.iter().map(|r| r.aepe).sum::<f64>() / n;
    let _ = write!(csv, "mean,{}", fmt_f64(mean_aepe));
    for t in &thresholds {
        let m = reports.iter().map(|r| r.pck[&pck_key(*t)]).sum::<f64>() / n;
        let _ = write!(csv, ",{}", fmt_f64(m));
    }
    let jacc: Vec<f64> = reports.iter().filter_map(|r| r.jaccard).collect();
    if jacc.is_empty() {
        let _ = write!(csv, ",");
    } else {
        let _ = write!(csv, ",{}", fmt_f64(jacc.iter().sum::<f64>() / jacc.len() as f64));
    }
    let total_valid: usize = reports.iter().map(|r| r.n_valid).sum();
    let _ = writeln!(csv, ",{total_valid}");

    std::fs::write(args.out.join("metrics.csv"), csv)?;
    log.note(format!("pairs_evaluated: {}", reports.len()));
    log.flush(&args.out)
}
