//! Shared dataset loading for the train/eval/pose commands.

use std::path::Path;

use dgc_core::geometry::io::{read_manifest, read_pair, ManifestEntry, Split, StoredPair};
use dgc_core::model::LoadedPair;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitSel {
    Train,
    Val,
    All,
}

impl std::str::FromStr for SplitSel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(SplitSel::Train),
            "val" => Ok(SplitSel::Val),
            "all" => Ok(SplitSel::All),
            other => Err(format!("unknown split '{other}' (train|val|all)")),
        }
    }
}

impl SplitSel {
    fn accepts(self, s: Split) -> bool {
        matches!(
            (self, s),
            (SplitSel::All, _) | (SplitSel::Train, Split::Train) | (SplitSel::Val, Split::Val)
        )
    }
}

pub fn entries(dir: &Path) -> Result<Vec<ManifestEntry>, CliError> {
    let path = dir.join("manifest.txt");
    if !path.exists() {
        return Err(CliError::Data(format!("no manifest.txt in {}", dir.display())));
    }
    Ok(read_manifest(&path)?)
}

pub fn load_split(dir: &Path, sel: SplitSel) -> Result<Vec<(ManifestEntry, StoredPair)>, CliError> {
    let mut out = Vec::new();
    for e in entries(dir)? {
        if sel.accepts(e.split) {
            let pair = read_pair(dir, e.id)?;
            out.push((e, pair));
        }
    }
    if out.is_empty() {
        return Err(CliError::Data(format!("{}: no pairs in the requested split", dir.display())));
    }
    Ok(out)
}

pub fn to_loaded(pairs: &[(ManifestEntry, StoredPair)]) -> Vec<LoadedPair> {
    pairs.iter().map(|(_, p)| LoadedPair::from_stored(p)).collect()
}

pub fn resolution_of(pairs: &[(ManifestEntry, StoredPair)]) -> usize {
    pairs.first().map(|(_, p)| p.gt_map.width).unwrap_or(0)
}
