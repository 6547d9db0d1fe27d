//! On-disk directories: the basis directory written by `basis` and the
//! model archive written by `fit`.
//!
//! ```text
//! basis.mbgl          n×L
//! blocks.mbgl         p×p×L          (model only)
//! noise.mbgl          p×1            (model only)
//! pixel_mean.mbgl     p×n            (optional, together with pixel_sd)
//! pixel_sd.mbgl       p×n
//! locations.mbgl      n×d            (optional)
//! variance_fraction.tsv              (basis only, EOF bases)
//! variables.txt       one name per line
//! manifest.txt        key = value    (model only)
//! ```

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use mbgl_core::analysis::FittedModel;
use mbgl_core::model::validate_basis;
use mbgl_core::{BasisMatrix, DMatrix, NoiseModel, PrecisionBlockSet, StandardizationFields};

use crate::dataio::{names_text, read_names, read_text, write_text};
use crate::error::{CliError, FormatError};
use crate::matfile::MatrixFile;

pub const ARCHIVE_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn read_opt(dir: &Path, file: &str) -> Result<Option<DMatrix<f64>>, CliError> {
    let path = dir.join(file);
    if !path.exists() {
        return Ok(None);
    }
    MatrixFile::read(&path)?
        .to_matrix()
        .map(Some)
        .map_err(|e| CliError::format(&path, e))
}

fn read_req(dir: &Path, file: &str) -> Result<DMatrix<f64>, CliError> {
    let path = dir.join(file);
    MatrixFile::read(&path)?
        .to_matrix()
        .map_err(|e| CliError::format(&path, e))
}

fn read_fields(dir: &Path) -> Result<Option<StandardizationFields>, CliError> {
    match (
        read_opt(dir, "pixel_mean.mbgl")?,
        read_opt(dir, "pixel_sd.mbgl")?,
    ) {
        (Some(mean), Some(sd)) => Ok(Some(StandardizationFields::new(mean, sd)?)),
        (None, None) => Ok(None),
        _ => Err(CliError::validation(format!(
            "{}: pixel_mean.mbgl and pixel_sd.mbgl must be present together",
            dir.display()
        ))),
    }
}

fn write_shared(
    dir: &Path,
    basis: &BasisMatrix,
    fields: Option<&StandardizationFields>,
    locations: Option<&DMatrix<f64>>,
    names: &[String],
) -> Result<(), CliError> {
    ensure_dir(dir)?;
    MatrixFile::from_matrix(basis.phi()).write(&dir.join("basis.mbgl"))?;
    if let Some(f) = fields {
        MatrixFile::from_matrix(f.pixel_mean()).write(&dir.join("pixel_mean.mbgl"))?;
        MatrixFile::from_matrix(f.pixel_sd()).write(&dir.join("pixel_sd.mbgl"))?;
    }
    if let Some(loc) = locations {
        MatrixFile::from_matrix(loc).write(&dir.join("locations.mbgl"))?;
    }
    write_text(&dir.join("variables.txt"), &names_text(names))
}

/// Output of the `basis` subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisDir {
    pub basis: BasisMatrix,
    pub fields: Option<StandardizationFields>,
    pub locations: Option<DMatrix<f64>>,
    pub names: Vec<String>,
}

impl BasisDir {
    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        write_shared(
            dir,
            &self.basis,
            self.fields.as_ref(),
            self.locations.as_ref(),
            &self.names,
        )?;
        let vf = self.basis.variance_fraction();
        if !vf.is_empty() {
            let mut text = String::from("level\tcumulative_variance_fraction\n");
            for (l, f) in vf.iter().enumerate() {
                text.push_str(&format!("{}\t{f}\n", l + 1));
            }
            write_text(&dir.join("variance_fraction.tsv"), &text)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let phi = read_req(dir, "basis.mbgl")?;
        let checked = validate_basis(phi)?;
        let vf_path = dir.join("variance_fraction.tsv");
        let basis = if vf_path.exists() {
            let vf = read_text(&vf_path)?
                .lines()
                .skip(1)
                .map(|l| {
                    l.split('\t')
                        .nth(1)
                        .and_then(|v| v.parse::<f64>().ok())
                        .ok_or_else(|| {
                            CliError::format(
                                &vf_path,
                                FormatError::Shape(format!("bad line {l:?}")),
                            )
                        })
                })
                .collect::<Result<Vec<_>, _>>()?;
            BasisMatrix::new_unchecked(checked.phi().clone(), vf)
        } else {
            checked
        };
        let names_path = dir.join("variables.txt");
        let names = if names_path.exists() {
            read_names(&names_path)?
        } else {
            Vec::new()
        };
        Ok(Self {
            basis,
            fields: read_fields(dir)?,
            locations: read_opt(dir, "locations.mbgl")?,
            names,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMode {
    Penalized,
    Mle,
}

impl FitMode {
    fn as_str(self) -> &'static str {
        match self {
            FitMode::Penalized => "penalized",
            FitMode::Mle => "mle",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub archive_version: u32,
    pub tool_version: String,
    /// Seconds since the Unix epoch.
    pub created: u64,
    pub p: usize,
    pub levels: usize,
    pub n: usize,
    pub mode: FitMode,
    pub lambda: f64,
    pub rho: f64,
    pub dc_tolerance: f64,
    pub dc_iterations: usize,
    pub converged: bool,
}

/// `SOURCE_DATE_EPOCH` when set, otherwise the current time.
pub fn creation_time() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or_else(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs())
        })
}

impl Manifest {
    pub fn to_text(&self) -> String {
        format!(
            "archive_version = {}\ntool_version = {}\ncreated = {}\np = {}\nL = {}\nn = {}\n\
             mode = {}\nlambda = {}\nrho = {}\ndc_tolerance = {}\ndc_iterations = {}\nconverged = {}\n",
            self.archive_version,
            self.tool_version,
            self.created,
            self.p,
            self.levels,
            self.n,
            self.mode.as_str(),
            self.lambda,
            self.rho,
            self.dc_tolerance,
            self.dc_iterations,
            self.converged
        )
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self, CliError> {
        let bad = |msg: String| CliError::format(path, FormatError::Shape(msg));
        let mut kv = std::collections::BTreeMap::new();
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key = value, got {line:?}")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| kv.get(k).ok_or_else(|| bad(format!("missing key {k:?}")));
        fn num<T: std::str::FromStr>(
            v: &str,
            k: &str,
            bad: &dyn Fn(String) -> CliError,
        ) -> Result<T, CliError> {
            v.parse()
                .map_err(|_| bad(format!("bad value for {k}: {v:?}")))
        }
        let archive_version: u32 = num(get("archive_version")?, "archive_version", &bad)?;
        if archive_version != ARCHIVE_VERSION {
            return Err(bad(format!(
                "unsupported archive version {archive_version}"
            )));
        }
        let mode = match get("mode")?.as_str() {
            "penalized" => FitMode::Penalized,
            "mle" => FitMode::Mle,
            other => return Err(bad(format!("unknown mode {other:?}"))),
        };
        Ok(Self {
            archive_version,
            tool_version: get("tool_version")?.clone(),
            created: num(get("created")?, "created", &bad)?,
            p: num(get("p")?, "p", &bad)?,
            levels: num(get("L")?, "L", &bad)?,
            n: num(get("n")?, "n", &bad)?,
            mode,
            lambda: num(get("lambda")?, "lambda", &bad)?,
            rho: num(get("rho")?, "rho", &bad)?,
            dc_tolerance: num(get("dc_tolerance")?, "dc_tolerance", &bad)?,
            dc_iterations: num(get("dc_iterations")?, "dc_iterations", &bad)?,
            converged: num(get("converged")?, "converged", &bad)?,
        })
    }
}

/// A fitted model plus its manifest.
pub struct ModelArchive {
    pub model: FittedModel,
    pub manifest: Manifest,
}

impl ModelArchive {
    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        let m = &self.model;
        write_shared(
            dir,
            m.basis(),
            m.standardization(),
            m.locations(),
            m.variable_names(),
        )?;
        MatrixFile::from_blocks(m.q().blocks()).write(&dir.join("blocks.mbgl"))?;
        let tau = DMatrix::from_column_slice(m.p(), 1, m.noise().tau_sq());
        MatrixFile::from_matrix(&tau).write(&dir.join("noise.mbgl"))?;
        write_text(&dir.join("manifest.txt"), &self.manifest.to_text())
    }

    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let manifest_path = dir.join("manifest.txt");
        let manifest = Manifest::parse(&manifest_path, &read_text(&manifest_path)?)?;
        let basis = validate_basis(read_req(dir, "basis.mbgl")?)?;
        let blocks_path = dir.join("blocks.mbgl");
        let blocks = MatrixFile::read(&blocks_path)?
            .to_blocks()
            .map_err(|e| CliError::format(&blocks_path, e))?;
        let q = PrecisionBlockSet::new(blocks)?;
        let tau = read_req(dir, "noise.mbgl")?;
        if tau.ncols() != 1 {
            return Err(CliError::validation("noise.mbgl must be p×1"));
        }
        let noise = NoiseModel::new(tau.as_slice().to_vec())?;
        let names = read_names(&dir.join("variables.txt"))?;
        if (manifest.p, manifest.levels, manifest.n) != (q.p(), q.n_levels(), basis.n_locations()) {
            return Err(CliError::validation(format!(
                "{}: manifest says p={}, L={}, n={} but files hold p={}, L={}, n={}",
                dir.display(),
                manifest.p,
                manifest.levels,
                manifest.n,
                q.p(),
                q.n_levels(),
                basis.n_locations()
            )));
        }
        let mut model = FittedModel::new(basis, q, noise, read_fields(dir)?, names)?;
        if let Some(loc) = read_opt(dir, "locations.mbgl")? {
            model = model.with_locations(loc)?;
        }
        Ok(Self { model, manifest })
    }
}
