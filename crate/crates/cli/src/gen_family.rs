//! The `gen-family` subcommand.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use anyhow::{Context, Result};

use bemps_core::model_space::{sample_family, GeneratorSpec, ModelFamily};

/// Draws an identifiable family and writes it as a family table.
pub fn gen_family(spec: &GeneratorSpec, seed: u64, out: &Path) -> Result<ModelFamily> {
    let family = sample_family(spec, seed).context("cannot generate family")?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .with_context(|| format!("cannot create {}", parent.display()))?;
    }
    let file = File::create(out).with_context(|| format!("cannot write {}", out.display()))?;
    family
        .write_table(BufWriter::new(file))
        .with_context(|| format!("cannot write {}", out.display()))?;
    Ok(family)
}
