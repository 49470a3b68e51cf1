//! `gen-data`: synthetic correspondence pairs (affine/TPS/homography, round
//! robin over the requested kinds) or two-plane pose pairs with exact
//! ground-truth motion. Each pair draws from its own seeded stream
//! (dataset seed XOR pair index), so regeneration is byte-identical.

use std::path::PathBuf;

use clap::Args as ClapArgs;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dgc_core::geometry::io::{write_manifest, write_pair, ManifestEntry, Split, StoredPair};
use dgc_core::geometry::synth::{add_noise, generate_base, render_pair, RenderError};
use dgc_core::geometry::{sample_transform, TransformKind};
use dgc_core::pose::scene::{sample_pose_scene, write_pose_file};

use crate::config::{ensure_out_dir, resolve, resolve_flag, ConfigMap, RunLog};
use crate::CliError;

#[derive(ClapArgs, Debug)]
pub struct Args {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Config file with key=value lines; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of pairs (default 200).
    #[arg(long)]
    pub n: Option<usize>,
    /// Comma-separated transform kinds: affine,tps,homo (default affine).
    #[arg(long)]
    pub kinds: Option<String>,
    /// Transform strength in [0, 0.4] (default 0.15).
    #[arg(long)]
    pub strength: Option<f64>,
    /// Dataset seed (default 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Image resolution (default 64).
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Validation fraction (default 0.1).
    #[arg(long)]
    pub val_frac: Option<f64>,
    /// Additive Gaussian pixel noise sigma (default 0).
    #[arg(long)]
    pub noise: Option<f64>,
    /// Generate a pose dataset (two-plane scenes with ground-truth motion).
    #[arg(long)]
    pub pose: bool,
}

pub fn run(args: Args) -> Result<(), CliError> {
    let file = ConfigMap::load(args.config.as_ref())?;
    let n = resolve(args.n, &file, "n", 200)?;
    let kinds_s: String = resolve(args.kinds, &file, "kinds", "affine".to_string())?;
    let strength = resolve(args.strength, &file, "strength", 0.15)?;
    let seed = resolve(args.seed, &file, "seed", 0u64)?;
    let resolution = resolve(args.resolution, &file, "resolution", 64usize)?;
    let val_frac = resolve(args.val_frac, &file, "val_frac", 0.1)?;
    let noise = resolve(args.noise, &file, "noise", 0.0)?;
    let pose = resolve_flag(args.pose, &file, "pose")?;

    if n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    if !(0.0..=0.4).contains(&strength) {
        return Err(CliError::Usage("--strength must be in [0, 0.4]".into()));
    }
    if !(0.0..=0.5).contains(&val_frac) {
        return Err(CliError::Usage("--val-frac must be in [0, 0.5]".into()));
    }
    if resolution < 8 {
        return Err(CliError::Usage("--resolution must be at least 8".into()));
    }
    let kinds: Vec<TransformKind> = kinds_s
        .split(',')
        .map(|k| TransformKind::parse(k.trim()).ok_or_else(|| CliError::Usage(format!("invalid kind '{k}'"))))
        .collect::<Result<_, _>>()?;

    ensure_out_dir(&args.out)?;
    let mut log = RunLog::new("gen-data");
    log.config(vec![
        ("n".into(), n.to_string()),
        ("kinds".into(), kinds_s.clone()),
        ("strength".into(), strength.to_string()),
        ("seed".into(), seed.to_string()),
        ("resolution".into(), resolution.to_string()),
        ("val_frac".into(), val_frac.to_string()),
        ("noise".into(), noise.to_string()),
        ("pose".into(), pose.to_string()),
    ]);

    let n_val = (n as f64 * val_frac).round() as usize;
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let pair_seed = seed ^ (i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(pair_seed);
        let split = if i >= n - n_val { Split::Val } else { Split::Train };
        let kind_name = if pose {
            let scene = sample_pose_scene(&mut rng, resolution, resolution);
            let base = generate_base(&mut rng, 2 * resolution, 2 * resolution);
            let (mut source, mut target) = scene.render(&base);
            if noise > 0.0 {
                add_noise(&mut source, noise, &mut rng);
                add_noise(&mut target, noise, &mut rng);
            }
            let stored = StoredPair { source, target, gt_map: scene.map.clone(), gt_mask: scene.mask.clone() };
            write_pair(&args.out, i, &stored)?;
            write_pose_file(&args.out.join(format!("pair_{i}.pose")), &scene)?;
            "pose".to_string()
        } else {
            let kind = kinds[i % kinds.len()];
            let base = generate_base(&mut rng, 2 * resolution, 2 * resolution);
            let mut pair = None;
            for _ in 0..100 {
                let t = sample_transform(kind, &mut rng, strength)
                    .map_err(|e| CliError::Data(format!("pair {i}: {e}")))?;
                match render_pair(&base, &t, resolution, resolution) {
                    Ok(p) => {
                        pair = Some(p);
                        break;
                    }
                    Err(RenderError::ExcessiveMaskLoss { .. }) => continue,
                    Err(e) => return Err(CliError::Data(format!("pair {i}: {e}"))),
                }
            }
            let mut pair = pair.ok_or_else(|| {
                CliError::Data(format!("pair {i}: could not draw an acceptable transform in 100 tries"))
            })?;
            if noise > 0.0 {
                add_noise(&mut pair.source, noise, &mut rng);
                add_noise(&mut pair.target, noise, &mut rng);
            }
            let stored = StoredPair {
                source: pair.source,
                target: pair.target,
                gt_map: pair.gt_map,
                gt_mask: pair.gt_mask,
            };
            write_pair(&args.out, i, &stored)?;
            kind.name().to_string()
        };
        entries.push(ManifestEntry { id: i, kind: kind_name, seed: pair_seed, split });
    }
    write_manifest(&args.out.join("manifest.txt"), &entries)?;
    log.note(format!("pairs_written: {n}"));
    log.flush(&args.out)
}
