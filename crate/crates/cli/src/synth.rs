//! Seeded synthetic score tables and fingerprints for desk-scale runs.

use delgfn::cluster::FingerprintSet;
use delgfn::{CycleSpec, DesignState, ScoreTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Structure {
    #[default]
    Additive,
    /// Additive terms plus a random interaction for every pair of cycles.
    AdditivePairwise,
}

/// Scale of the pairwise interaction terms relative to the unit-variance
/// per-block coefficients.
pub const PAIRWISE_SCALE: f64 = 0.5;

/// Per-block coefficients of a synthetic table.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCoefficients {
    pub per_cycle: [Vec<f64>; 3],
    /// `pairwise[0][i][j]` couples cycles 1–2, `[1][i][k]` 1–3, `[2][j][k]` 2–3.
    pub pairwise: Option<[Vec<Vec<f64>>; 3]>,
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn synth_coefficients(
    spec: &CycleSpec,
    seed: u64,
    structure: Structure,
) -> CliResult<SynthCoefficients> {
    if spec.n_cycles() != 3 {
        return Err(CliError::Usage(format!(
            "synthetic tables need 3 cycles, got {}",
            spec.n_cycles()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normals =
        |n: usize| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
    let s = spec.sizes();
    let per_cycle = [normals(s[0]), normals(s[1]), normals(s[2])];
    let pairwise = match structure {
        Structure::Additive => None,
        Structure::AdditivePairwise => {
            let mut grid = |a: usize, b: usize| -> Vec<Vec<f64>> {
                (0..a)
                    .map(|_| normals(b).into_iter().map(|v| v * PAIRWISE_SCALE).collect())
                    .collect()
            };
            Some([grid(s[0], s[1]), grid(s[0], s[2]), grid(s[1], s[2])])
        }
    };
    Ok(SynthCoefficients {
        per_cycle,
        pairwise,
    })
}

/// `p[i,j,k] = logistic(a_i + b_j + c_k [+ pairwise terms])`, rounded to f32.
pub fn synth_scores(spec: &CycleSpec, seed: u64, structure: Structure) -> CliResult<ScoreTable> {
    let co = synth_coefficients(spec, seed, structure)?;
    let s = spec.sizes();
    let [a, b, c] = &co.per_cycle;
    Ok(ScoreTable::from_fn([s[0], s[1], s[2]], |i, j, k| {
        let mut x = a[i] + b[j] + c[k];
        if let Some([ij, ik, jk]) = &co.pairwise {
            x += ij[i][j] + ik[i][k] + jk[j][k];
        }
        logistic(x) as f32
    })?)
}

/// Random fingerprints where each block perturbs one of a few per-cycle
/// prototypes, so that clustering has structure to find.
pub fn synth_fingerprints(spec: &CycleSpec, width: usize, seed: u64) -> CliResult<FingerprintSet> {
    if width == 0 {
        return Err(CliError::Usage("fingerprint width must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cycles = Vec::with_capacity(spec.n_cycles());
    for &n in spec.sizes() {
        let n_proto = (n / 8).clamp(1, 24);
        let protos: Vec<Vec<bool>> = (0..n_proto)
            .map(|_| (0..width).map(|_| rng.random_bool(0.1)).collect())
            .collect();
        let blocks = (0..n)
            .map(|_| {
                let p = &protos[rng.random_range(0..n_proto)];
                let bits: Vec<bool> = p.iter().map(|&b| b ^ rng.random_bool(0.03)).collect();
                DesignState::from_bits(&bits)
            })
            .collect();
        cycles.push(blocks);
    }
    Ok(FingerprintSet::new(cycles)?)
}
