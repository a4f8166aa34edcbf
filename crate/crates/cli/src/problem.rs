//! Problem files: JSON with a mandatory `version` and exactly one problem kind.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use posmu::fm::{interference_from_links, FmProblem, Link};
use posmu::structure::{validate_structure, RawBlockSpec};
use posmu::systems::StateSpaceSystem;
use posmu::{BlockStructure, NonnegMatrix};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const FORMAT_VERSION: u32 = 1;

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub version: u32,
    pub problem: Problem,
    #[serde(default, skip_serializing_if = "FileOptions::is_empty")]
    pub options: FileOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Problem {
    Matrix(MatrixProblem),
    System(SystemProblem),
    Fm(FmSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockEntry {
    pub kind: String,
    pub size: i64,
    pub field: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixProblem {
    pub m: Rows,
    pub structure: Vec<BlockEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemProblem {
    pub a: Rows,
    pub b: Rows,
    pub c: Rows,
    pub d: Rows,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delays: Option<Rows>,
    pub structure: Vec<BlockEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkEntry {
    pub from: usize,
    pub to: usize,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FmSpec {
    /// Direct-path gains.
    pub h: Vec<f64>,
    /// `gain` is the interference that channel `from` causes at receiver `to`.
    pub interference: Vec<LinkEntry>,
    pub nu: Vec<f64>,
    pub gamma: Vec<f64>,
    pub k: Vec<f64>,
    pub e: Rows,
    pub f: Rows,
    pub structure: Vec<BlockEntry>,
    /// Delays on the uncertainty channels, `r x r`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delays: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridEntry {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileOptions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridEntry>,
}

impl FileOptions {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

impl ProblemFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: ProblemFile = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Input(format!("{path}: {}", e.into_inner()))
        })?;
        if file.version != FORMAT_VERSION {
            return Err(CliError::Input(format!(
                "version: unsupported format version {}, expected {FORMAT_VERSION}",
                file.version
            )));
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem files serialize")
    }

    /// SHA-256 of the compact serialization of the problem, so formatting
    /// and options do not change it.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(&self.problem).expect("problem files serialize");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn kind(&self) -> &'static str {
        match self.problem {
            Problem::Matrix(_) => "matrix",
            Problem::System(_) => "system",
            Problem::Fm(_) => "fm",
        }
    }
}

pub fn matrix(rows: &Rows, path: &str) -> Result<DMatrix<f64>, CliError> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != m {
            return Err(CliError::Input(format!(
                "{path}[{i}]: row has {} entries, expected {m}",
                row.len()
            )));
        }
        if let Some(j) = row.iter().position(|x| !x.is_finite()) {
            return Err(CliError::Input(format!("{path}[{i}][{j}]: entry is not finite")));
        }
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

/// Like `matrix`, but an empty list stands for a `rows x cols` matrix with a zero dimension.
fn matrix_shaped(rows: &Rows, path: &str, nrows: usize, ncols: usize) -> Result<DMatrix<f64>, CliError> {
    if rows.is_empty() && (nrows == 0 || ncols == 0) {
        return Ok(DMatrix::zeros(nrows, ncols));
    }
    matrix(rows, path)
}

pub fn rows_of(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn vector(v: &[f64], path: &str) -> Result<DVector<f64>, CliError> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(CliError::Input(format!("{path}[{i}]: entry is not finite")));
    }
    Ok(DVector::from_column_slice(v))
}

pub fn structure(entries: &[BlockEntry], path: &str) -> Result<BlockStructure, CliError> {
    let raw: Vec<RawBlockSpec> = entries.iter().map(|b| RawBlockSpec::new(&b.kind, b.size, &b.field)).collect();
    validate_structure(&raw).map_err(|e| CliError::Input(format!("{path}: {e}")))
}

fn core_input(path: &str) -> impl Fn(posmu::Error) -> CliError + '_ {
    move |e| CliError::Input(format!("{path}: {e}"))
}

impl MatrixProblem {
    /// The matrix in input block order.
    pub fn matrix(&self) -> Result<DMatrix<f64>, CliError> {
        let m = matrix(&self.m, "problem.matrix.m")?;
        NonnegMatrix::new(m.clone()).map_err(core_input("problem.matrix.m"))?;
        Ok(m)
    }

    pub fn structure(&self) -> Result<BlockStructure, CliError> {
        structure(&self.structure, "problem.matrix.structure")
    }
}

impl SystemProblem {
    pub fn system(&self) -> Result<StateSpaceSystem, CliError> {
        let a = matrix(&self.a, "problem.system.a")?;
        let d = matrix(&self.d, "problem.system.d")?;
        let n = a.nrows();
        let m = d.nrows();
        let b = matrix_shaped(&self.b, "problem.system.b", n, m)?;
        let c = matrix_shaped(&self.c, "problem.system.c", m, n)?;
        let delays = self.delays.as_ref().map(|t| matrix(t, "problem.system.delays")).transpose()?;
        StateSpaceSystem::new(a, b, c, d, delays).map_err(core_input("problem.system"))
    }

    pub fn structure(&self) -> Result<BlockStructure, CliError> {
        structure(&self.structure, "problem.system.structure")
    }
}

impl FmSpec {
    pub fn problem(&self) -> Result<FmProblem, CliError> {
        let n = self.h.len();
        let links: Vec<Link> = self.interference.iter().map(|l| Link { from: l.from, to: l.to, gain: l.gain }).collect();
        let g0 = interference_from_links(n, &links).map_err(core_input("problem.fm.interference"))?;
        let s = structure(&self.structure, "problem.fm.structure")?;
        let r = s.total_dim();
        FmProblem::new(
            vector(&self.h, "problem.fm.h")?,
            g0,
            vector(&self.nu, "problem.fm.nu")?,
            vector(&self.gamma, "problem.fm.gamma")?,
            vector(&self.k, "problem.fm.k")?,
            matrix_shaped(&self.e, "problem.fm.e", n, r)?,
            matrix_shaped(&self.f, "problem.fm.f", r, n)?,
            s,
        )
        .map_err(core_input("problem.fm"))
    }

    pub fn delays(&self) -> Result<Option<DMatrix<f64>>, CliError> {
        self.delays.as_ref().map(|t| matrix(t, "problem.fm.delays")).transpose()
    }

    pub fn p0(&self) -> Result<Option<DVector<f64>>, CliError> {
        self.p0.as_deref().map(|p| vector(p, "problem.fm.p0")).transpose()
    }
}
