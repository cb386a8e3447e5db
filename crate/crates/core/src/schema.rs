//! JSON system files.
//!
//! ```json
//! {
//!   "A": [[-1.0]], "B": [[1.0]], "Bu": [[0.0]],
//!   "M": [[1,0,0],[0,1,0],[0,0,-2]],
//!   "u": "zero",
//!   "seed_paraboloid": {"E": [[1.0]], "f": [0.0], "g": -0.06},
//!   "horizon": 10.0
//! }
//! ```
//!
//! Matrices are row-major nested arrays. `Bu` may be omitted when there is no
//! known input. `u` is `"zero"` or `{"times": [...], "values": [[...], ...]}`.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{InputSignal, IqcSystem, Paraboloid, SampledSignal};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputSpec {
    Named(String),
    Sampled { times: Vec<f64>, values: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSpec {
    #[serde(rename = "E")]
    pub e: Vec<Vec<f64>>,
    pub f: Vec<f64>,
    pub g: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "Bu", default, skip_serializing_if = "Option::is_none")]
    pub bu: Option<Vec<Vec<f64>>>,
    #[serde(rename = "M")]
    pub m: Vec<Vec<f64>>,
    #[serde(default = "zero_input")]
    pub u: InputSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_paraboloid: Option<SeedSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
}

fn zero_input() -> InputSpec {
    InputSpec::Named("zero".into())
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn from_rows(name: &str, rows: &[Vec<f64>], ncols_if_empty: usize) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(ncols_if_empty, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch(format!("{name}: ragged rows")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig(format!("{name}: non-finite entry")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl SystemFile {
    pub fn from_system(sys: &IqcSystem, seed: Option<&Paraboloid>, horizon: Option<f64>) -> Self {
        let u = match sys.input() {
            InputSignal::Zero(_) => zero_input(),
            InputSignal::Sampled(s) => InputSpec::Sampled {
                times: s.times().to_vec(),
                values: s.values().iter().map(|v| v.iter().copied().collect()).collect(),
            },
        };
        Self {
            a: to_rows(sys.a()),
            b: to_rows(sys.b()),
            bu: Some(to_rows(sys.bu())),
            m: to_rows(&sys.m_matrix()),
            u,
            seed_paraboloid: seed.map(|p| SeedSpec {
                e: to_rows(p.e()),
                f: p.f().iter().copied().collect(),
                g: p.g(),
            }),
            horizon,
        }
    }

    pub fn system(&self) -> Result<IqcSystem> {
        let a = from_rows("A", &self.a, 0)?;
        let n = a.nrows();
        let b = from_rows("B", &self.b, 0)?;
        let bu = match &self.bu {
            Some(rows) => from_rows("Bu", rows, 0)?,
            None => DMatrix::zeros(n, 0),
        };
        // A Bu of n empty rows parses as n x 0.
        let p = bu.ncols();
        let m = from_rows("M", &self.m, 0)?;
        let input = match &self.u {
            InputSpec::Named(s) if s == "zero" => InputSignal::Zero(p),
            InputSpec::Named(s) => {
                return Err(Error::InvalidConfig(format!(
                    "unknown input \"{s}\" (expected \"zero\" or sampled data)"
                )))
            }
            InputSpec::Sampled { times, values } => InputSignal::Sampled(SampledSignal::new(
                times.clone(),
                values.iter().map(|v| DVector::from_column_slice(v)).collect(),
            )?),
        };
        IqcSystem::new(a, b, bu, m, input)
    }

    pub fn seed(&self) -> Result<Option<Paraboloid>> {
        self.seed_paraboloid
            .as_ref()
            .map(|s| {
                let e = from_rows("seed E", &s.e, 0)?;
                Paraboloid::new(e, DVector::from_column_slice(&s.f), s.g)
            })
            .transpose()
    }

    pub fn from_reader<R: Read>(r: R) -> Result<Self> {
        Ok(serde_json::from_reader(r)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| {
            Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
        })?;
        Self::from_reader(BufReader::new(file))
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}
