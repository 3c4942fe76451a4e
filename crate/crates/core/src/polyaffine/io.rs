use std::path::Path;

use super::{PolyaffineResult, ResultMetadata, VectorField};
use crate::affine::{read_affine, write_affine};
use crate::error::{Error, Result};
use crate::volume::{read_volume, write_volume, INTENT_DISPLACEMENT, INTENT_VECTOR};

pub const BACKGROUND_FILE: &str = "background_affine.txt";
pub const SVF_FILE: &str = "svf.nii.gz";
pub const DISPLACEMENT_FILE: &str = "displacement.nii.gz";
pub const FULL_DISPLACEMENT_FILE: &str = "full_displacement.nii.gz";
pub const PARAMS_FILE: &str = "params.json";

/// Writes the result into `dir` (created if missing). Fields are stored in
/// single precision.
pub fn save_result(result: &PolyaffineResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_affine(&result.background, dir.join(BACKGROUND_FILE))?;
    write_volume(&result.svf.to_volume(INTENT_VECTOR), dir.join(SVF_FILE))?;
    write_volume(
        &result.displacement.to_volume(INTENT_DISPLACEMENT),
        dir.join(DISPLACEMENT_FILE),
    )?;
    write_volume(
        &result.full_displacement.to_volume(INTENT_DISPLACEMENT),
        dir.join(FULL_DISPLACEMENT_FILE),
    )?;
    let path = dir.join(PARAMS_FILE);
    let mut json = serde_json::to_string_pretty(&result.metadata).expect("metadata serializes");
    json.push('\n');
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

pub fn load_result(dir: &Path) -> Result<PolyaffineResult> {
    let background = read_affine(dir.join(BACKGROUND_FILE))?;
    let field = |name: &str| VectorField::from_volume(&read_volume(dir.join(name))?);
    let path = dir.join(PARAMS_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let metadata: ResultMetadata =
        serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.to_string()))?;
    Ok(PolyaffineResult {
        background,
        svf: field(SVF_FILE)?,
        displacement: field(DISPLACEMENT_FILE)?,
        full_displacement: field(FULL_DISPLACEMENT_FILE)?,
        metadata,
    })
}
