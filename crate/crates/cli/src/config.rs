//! Strict JSON run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use roughbvp::discretization::ProblemSpec;
use roughbvp::geometry::{
    koch_prefractal_domain, notch_family, DomainFamily, GridDomain, GridSpec, SquareFootprint,
};
use roughbvp::measures::{arc_measure_on_boundary, self_similar_koch_measure, AdmissibilityParams, DiscreteMeasure};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub v: u32,
    pub grid: GridSpec,
    pub domain: DomainConfig,
    pub measure: MeasureConfig,
    pub problem: ProblemSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub admissibility: Option<AdmissibilityConfig>,
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainConfig {
    /// The whole box.
    Square,
    /// Koch prefractal of the unit square.
    Koch { level: usize },
    /// Unit square with centred bottom notches.
    Notch { widths: Vec<f64> },
    /// Serialized `GridDomain`.
    Pixels { file: PathBuf },
    /// The 16-candidate reference shape family (`optimize` only).
    ReferenceShapes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureConfig {
    Arc {
        #[serde(default = "one")]
        atoms_per_cell: usize,
    },
    KochSelfsimilar { level: usize },
    /// Serialized `DiscreteMeasure`.
    File { file: PathBuf },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmissibilityConfig {
    pub eps: f64,
    pub s: f64,
    pub cs: f64,
    pub c_bar: f64,
    pub d: f64,
    pub c_d: f64,
    pub radii: Vec<f64>,
}

impl AdmissibilityConfig {
    pub fn params(&self) -> AdmissibilityParams {
        AdmissibilityParams { eps: self.eps, s: self.s, cs_bar: self.cs, c_bar: self.c_bar, d: self.d, c_d: self.c_d }
    }
}

/// A parsed configuration with the directory its relative file paths refer to.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base: PathBuf,
}

impl RunConfig {
    /// Parses `text`, rejecting unknown keys, other versions and missing files
    /// (relative to `base`).
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if config.v != CONFIG_VERSION {
            return Err(CliError::Config(format!("unsupported config version {} (expected {CONFIG_VERSION})", config.v)));
        }
        for file in config.referenced_files() {
            let path = base.join(file);
            if !path.is_file() {
                return Err(CliError::Config(format!("referenced file {} does not exist", path.display())));
            }
        }
        Ok(config)
    }

    pub fn referenced_files(&self) -> Vec<&Path> {
        let mut files = Vec::new();
        if let DomainConfig::Pixels { file } = &self.domain {
            files.push(file.as_path());
        }
        if let MeasureConfig::File { file } = &self.measure {
            files.push(file.as_path());
        }
        files
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON form without `out_dir`, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&RunConfig { out_dir: PathBuf::new(), ..self.clone() }).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config: RunConfig::parse(&text, &base)?, base })
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&self, file: &Path) -> Result<T, CliError> {
        let path = self.base.join(file);
        let text = fs::read_to_string(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// The single domain of `solve`, `spectrum`, `poincare` and `check`.
    pub fn domain(&self) -> Result<(String, GridDomain), CliError> {
        let grid = self.config.grid;
        match &self.config.domain {
            DomainConfig::Square => Ok(("square".into(), GridDomain::full_box(grid))),
            DomainConfig::Koch { level } => {
                Ok((format!("koch_l{level}"), koch_prefractal_domain(grid, *level, SquareFootprint::unit())?))
            }
            DomainConfig::Notch { widths } if widths.len() == 1 => {
                let family = notch_family(grid, widths)?;
                Ok((family.labels()[0].clone(), family.members()[0].clone()))
            }
            DomainConfig::Notch { widths } => Err(CliError::Config(format!(
                "notch domain lists {} widths; single-domain subcommands need exactly one",
                widths.len()
            ))),
            DomainConfig::Pixels { file } => {
                let dom: GridDomain = self.read_json(file)?;
                if *dom.grid() != grid {
                    return Err(CliError::Config("pixel domain grid differs from the config grid".into()));
                }
                Ok(("pixels".into(), dom))
            }
            DomainConfig::ReferenceShapes => {
                Err(CliError::Config("reference_shapes is a candidate family; use `optimize`".into()))
            }
        }
    }

    /// The measure on `dom`.
    pub fn measure(&self, dom: &GridDomain) -> Result<DiscreteMeasure, CliError> {
        match &self.config.measure {
            MeasureConfig::Arc { atoms_per_cell } => Ok(arc_measure_on_boundary(dom, *atoms_per_cell)?),
            MeasureConfig::KochSelfsimilar { level } => Ok(self_similar_koch_measure(*level, SquareFootprint::unit())?),
            MeasureConfig::File { file } => self.read_json(file),
        }
    }

    /// Arc measures per member; families support only the arc measure.
    pub fn family_measures(&self, family: &DomainFamily) -> Result<Vec<DiscreteMeasure>, CliError> {
        match &self.config.measure {
            MeasureConfig::Arc { atoms_per_cell } => {
                Ok(family.members().iter().map(|d| arc_measure_on_boundary(d, *atoms_per_cell)).collect::<Result<_, _>>()?)
            }
            _ => Err(CliError::Config("domain families need the arc measure".into())),
        }
    }

    pub fn admissibility(&self) -> Result<&AdmissibilityConfig, CliError> {
        self.config.admissibility.as_ref().ok_or_else(|| CliError::Config("missing admissibility block".into()))
    }
}
