//! Built-in example problems.

use nalgebra::{dmatrix, dvector, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::family::GammaSpec;
use crate::model::{InputSignal, IqcSystem, Paraboloid};

/// A ready-to-run problem: plant, seed, horizon and default family/time grid.
#[derive(Clone, Debug)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub system: IqcSystem,
    pub seed: Paraboloid,
    pub horizon: f64,
    pub gammas: GammaSpec,
    pub times: Vec<f64>,
}

pub const PRESET_NAMES: [&str; 4] = ["ex1-stable", "ex1-escape", "ex1-family", "sec5"];

/// Scalar plant `ẋ = −x + w`, `ẋ_q = x² + u² − 2w²`.
pub fn scalar_system() -> IqcSystem {
    IqcSystem::new(
        dmatrix![-1.0],
        dmatrix![1.0],
        dmatrix![0.0],
        DMatrix::from_diagonal(&dvector![1.0, 1.0, -2.0]),
        InputSignal::Zero(1),
    )
    .expect("valid scalar system")
}

/// Planar plant `ẋ = −x + w`, `ẋ_q = |x|² + u² − 2|w|²`.
pub fn planar_system() -> IqcSystem {
    let m = DMatrix::from_diagonal(&dvector![1.0, 1.0, 1.0, -2.0, -2.0]);
    IqcSystem::new(
        -DMatrix::identity(2, 2),
        DMatrix::identity(2, 2),
        DMatrix::zeros(2, 1),
        m,
        InputSignal::Zero(1),
    )
    .expect("valid planar system")
}

/// Seed `E₀ = [[a+b, a], [a, a+b]]`, `f₀ = 0`, with initial budget `xq0` (`g₀ = −xq0`).
pub fn planar_seed(a: f64, b: f64, xq0: f64) -> Paraboloid {
    Paraboloid::new(
        dmatrix![a + b, a; a, a + b],
        DVector::zeros(2),
        -xq0,
    )
    .expect("symmetric seed")
}

fn scalar_seed(e0: f64, xq0: f64) -> Paraboloid {
    Paraboloid::new(dmatrix![e0], dvector![0.0], -xq0).expect("scalar seed")
}

pub fn preset(name: &str) -> Result<Preset> {
    let ex1_times = vec![0.0, 0.91, 1.62, 10.0];
    Ok(match name {
        "ex1-stable" => Preset {
            name: "ex1-stable",
            description: "scalar plant, E0 = 1 above the unstable equilibrium, budget 0.06",
            system: scalar_system(),
            seed: scalar_seed(1.0, 0.06),
            horizon: 10.0,
            gammas: GammaSpec::Uniform(1),
            times: ex1_times,
        },
        "ex1-escape" => Preset {
            name: "ex1-escape",
            description: "scalar plant, E0 = 0.5 below the unstable equilibrium (finite escape), budget 0.03",
            system: scalar_system(),
            seed: scalar_seed(0.5, 0.03),
            horizon: 10.0,
            gammas: GammaSpec::Uniform(1),
            times: vec![0.0, 0.91, 1.62],
        },
        "ex1-family" => Preset {
            name: "ex1-family",
            description: "escaping scalar seed with scalings 1, 1.6, 2.2, 2.7, 3.3",
            system: scalar_system(),
            seed: scalar_seed(0.5, 0.03),
            horizon: 10.0,
            gammas: GammaSpec::Explicit(vec![1.0, 1.6, 2.2, 2.7, 3.3]),
            times: ex1_times,
        },
        "sec5" => Preset {
            name: "sec5",
            description: "planar plant, thin elliptic seed a = 1e-2, b = 1e-6, budget 0.015, 64 scalings",
            system: planar_system(),
            seed: planar_seed(1e-2, 1e-6, 0.015),
            horizon: 1.0,
            gammas: GammaSpec::Uniform(64),
            times: vec![0.2, 0.4, 0.6, 0.794, 1.0],
        },
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown example {other:?}; available: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    })
}
