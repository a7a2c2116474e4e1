//! A trained dictionary set on disk: an INI manifest next to three `CDLM`
//! matrix files.

use std::path::{Path, PathBuf};

use crate::coupled_dl::DictionaryTriple;
use crate::error::{Error, Result};

use super::config::Config;
use super::{read_matrix, write_matrix};

const SECTION: &str = "dictionary";

/// Metadata stored alongside one dictionary triple.
#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryManifest {
    pub n: usize,
    pub gamma: usize,
    pub d: usize,
    pub s_z: usize,
    pub s_v: usize,
    /// Pyramid scale the dictionaries were trained at, 1 being the finest.
    pub scale: usize,
    pub weighted: bool,
    pub psi_c: String,
    pub phi_c: String,
    pub phi: String,
}

impl DictionaryManifest {
    pub fn to_config(&self) -> Config {
        let mut cfg = Config::new();
        cfg.set(SECTION, "n", self.n);
        cfg.set(SECTION, "gamma", self.gamma);
        cfg.set(SECTION, "d", self.d);
        cfg.set(SECTION, "s_z", self.s_z);
        cfg.set(SECTION, "s_v", self.s_v);
        cfg.set(SECTION, "scale", self.scale);
        cfg.set(SECTION, "weighted", self.weighted);
        cfg.set(SECTION, "psi_c", &self.psi_c);
        cfg.set(SECTION, "phi_c", &self.phi_c);
        cfg.set(SECTION, "phi", &self.phi);
        cfg
    }

    pub fn from_config(cfg: &Config) -> Result<Self> {
        Ok(Self {
            n: cfg.require(SECTION, "n")?,
            gamma: cfg.require(SECTION, "gamma")?,
            d: cfg.require(SECTION, "d")?,
            s_z: cfg.require(SECTION, "s_z")?,
            s_v: cfg.require(SECTION, "s_v")?,
            scale: cfg.get(SECTION, "scale")?.unwrap_or(1),
            weighted: cfg.get(SECTION, "weighted")?.unwrap_or(false),
            psi_c: cfg.require(SECTION, "psi_c")?,
            phi_c: cfg.require(SECTION, "phi_c")?,
            phi: cfg.require(SECTION, "phi")?,
        })
    }
}

/// Writes `<stem>.ini` plus `<stem>_psi_c.cdlm`, `<stem>_phi_c.cdlm` and
/// `<stem>_phi.cdlm`. The manifest's shape fields and file names are filled
/// from `dict` and `path`.
pub fn save_dictionaries(
    path: &Path,
    dict: &DictionaryTriple,
    meta: &DictionaryManifest,
) -> Result<PathBuf> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::arg(format!("bad manifest path {}", path.display())))?;
    let dir = path.parent().unwrap_or(Path::new(""));
    let manifest_path = dir.join(format!("{stem}.ini"));
    let manifest = DictionaryManifest {
        n: dict.n(),
        gamma: dict.gamma(),
        d: dict.d(),
        psi_c: format!("{stem}_psi_c.cdlm"),
        phi_c: format!("{stem}_phi_c.cdlm"),
        phi: format!("{stem}_phi.cdlm"),
        ..meta.clone()
    };
    write_matrix(&dict.psi_c, &dir.join(&manifest.psi_c))?;
    write_matrix(&dict.phi_c, &dir.join(&manifest.phi_c))?;
    write_matrix(&dict.phi, &dir.join(&manifest.phi))?;
    manifest.to_config().save(&manifest_path)?;
    Ok(manifest_path)
}

/// Reads a manifest and its matrices, resolving file names relative to it.
pub fn load_dictionaries(path: &Path) -> Result<(DictionaryTriple, DictionaryManifest)> {
    let manifest = DictionaryManifest::from_config(&Config::load(path)?)?;
    let dir = path.parent().unwrap_or(Path::new(""));
    let dict = DictionaryTriple::new(
        read_matrix(&dir.join(&manifest.psi_c))?,
        read_matrix(&dir.join(&manifest.phi_c))?,
        read_matrix(&dir.join(&manifest.phi))?,
    )?;
    if dict.n() != manifest.n || dict.gamma() != manifest.gamma || dict.d() != manifest.d {
        return Err(Error::format(
            0,
            format!(
                "{}: matrices are ({}, {}, {}) but manifest says ({}, {}, {})",
                path.display(),
                dict.n(),
                dict.gamma(),
                dict.d(),
                manifest.n,
                manifest.gamma,
                manifest.d
            ),
        ));
    }
    Ok((dict, manifest))
}
