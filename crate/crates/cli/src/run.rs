//! Run directories, configuration files and input loading.

use std::path::{Path, PathBuf};
use std::time::Instant;

use coda_downscale::bsgs::BsgsConfig;
use coda_downscale::downscale::DownscaleConfig;
use coda_downscale::grid::{CompositionField, MultiField, ScalarField};
use coda_downscale::io::{
    read_composition, read_composition_csv, write_ascii_grid, write_composition, write_pgm, CompositionSidecar, RunManifest,
};
use coda_downscale::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub zero_replacement: Option<f64>,
    pub downscale: DownscaleConfig,
    pub bsgs: BsgsConfig,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(FileConfig::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Owns the run directory and its manifest; every file goes through here.
pub struct Run {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    started: Instant,
}

impl Run {
    pub fn start(dir: &Path, command: &str, config: serde_json::Value) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let args = std::env::args().skip(1).collect();
        Ok(Run { dir: dir.to_path_buf(), manifest: RunManifest::new(command, args, config), started: Instant::now() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn text(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let p = self.path(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        self.manifest.output(&p)?;
        Ok(p)
    }

    pub fn model_text(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let p = self.path(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        self.manifest.model(&p)?;
        Ok(p)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
        self.text(name, &(text + "\n"))
    }

    pub fn grid(&mut self, name: &str, field: &ScalarField) -> Result<PathBuf> {
        let p = self.path(name);
        write_ascii_grid(field, &p)?;
        self.manifest.output(&p)?;
        Ok(p)
    }

    pub fn image(&mut self, name: &str, field: &ScalarField, range: Option<(f64, f64)>) -> Result<PathBuf> {
        let p = self.path(name);
        write_pgm(field, range, &p)?;
        self.manifest.output(&p)?;
        Ok(p)
    }

    /// One grid and one quick-look image per part, plus the sidecar.
    pub fn composition(&mut self, stem: &str, field: &CompositionField) -> Result<PathBuf> {
        let sidecar = write_composition(field, &self.dir, stem)?;
        for (k, name) in field.names().iter().enumerate() {
            self.manifest.output(self.path(&format!("{stem}_{name}.asc")))?;
            self.image(&format!("{stem}_{name}.pgm"), &field.as_multi().layer(k), Some((0.0, 1.0)))?;
        }
        self.manifest.output(&sidecar)?;
        Ok(sidecar)
    }

    /// Part grids that may leave the simplex, with a sidecar of the same
    /// layout as [`Run::composition`].
    pub fn parts(&mut self, stem: &str, field: &MultiField) -> Result<PathBuf> {
        let mut files = std::collections::BTreeMap::new();
        for (k, name) in field.names.iter().enumerate() {
            let file = format!("{stem}_{name}.asc");
            self.grid(&file, &field.layer(k))?;
            self.image(&format!("{stem}_{name}.pgm"), &field.layer(k), Some((0.0, 1.0)))?;
            files.insert(name.clone(), PathBuf::from(file));
        }
        let sidecar = CompositionSidecar { parts: field.names.clone(), files };
        let text = toml::to_string(&sidecar).map_err(|e| Error::Config(e.to_string()))?;
        self.text(&format!("{stem}.toml"), &text)
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.manifest.finish(self.started);
        let p = self.path("manifest.json");
        self.manifest.write(&p)?;
        Ok(p)
    }
}

/// Reads a composition from a sidecar (`.toml`) or a CSV table, recording
/// the input files and any zero replacement in the manifest.
pub fn load_composition(path: &Path, zero_replacement: Option<f64>, run: &mut Run) -> Result<CompositionField> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    let field = match ext.as_deref() {
        Some("toml") => {
            let sidecar = CompositionSidecar::read(path)?;
            let base = path.parent().unwrap_or(Path::new("."));
            for f in sidecar.files.values() {
                run.manifest.input(base.join(f))?;
            }
            read_composition(path, zero_replacement)?
        }
        Some("csv") => read_composition_csv(path, zero_replacement)?,
        _ => return Err(Error::Config(format!("{}: expected a .toml sidecar or a .csv table", path.display()))),
    };
    run.manifest.input(path)?;
    if let Some(d) = zero_replacement {
        run.manifest.note(format!("zero parts replaced by {d} and re-closed"));
    }
    Ok(field)
}
