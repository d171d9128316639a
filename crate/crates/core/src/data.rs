//! Synthetic low-rank instances and triplet rating files.
//!
//! All randomness comes from `ChaCha8Rng` seeded with a `u64`, so instances and
//! splits are bit-identical across platforms for a given seed.
//!
//! Triplet files hold one `row col value` record per line, separated by
//! whitespace or commas. `#` starts a comment; blank lines are skipped; columns
//! after the third (timestamps in rating exports) are ignored. Row and column
//! ids are arbitrary integers, compacted to `0..m` and `0..n` in ascending
//! order. Gzip input is detected from the magic bytes.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::completion::{MaskedMatrix, Observation};
use crate::spectra::DenseMatrix;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub m: usize,
    pub n: usize,
    pub r: usize,
    pub sigma: f64,
    pub obs_fraction: f64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct SyntheticInstance {
    pub observed: MaskedMatrix,
    /// `U_0 V_0^T`
    pub truth: DenseMatrix,
    pub params: SyntheticParams,
}

/// `M = U_0 V_0^T + noise` with `U_0 (m x r)`, `V_0 (n x r)` standard Gaussian and noise
/// `N(0, sigma^2)`, observed on `round(obs_fraction * m * n)` positions drawn uniformly
/// without replacement.
pub fn generate_synthetic(
    m: usize,
    n: usize,
    r: usize,
    sigma: f64,
    obs_fraction: f64,
    seed: u64,
) -> Result<SyntheticInstance> {
    if m == 0 || n == 0 || r == 0 || r > m.min(n) {
        return Err(Error::Domain(format!("need 1 <= r <= min(m, n), got m={m} n={n} r={r}")));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Domain(format!("noise level must be non-negative, got {sigma}")));
    }
    if !(obs_fraction > 0.0 && obs_fraction <= 1.0) {
        return Err(Error::Domain(format!("observed fraction must lie in (0, 1], got {obs_fraction}")));
    }
    let total = m * n;
    let count = (obs_fraction * total as f64).round() as usize;
    if count == 0 {
        return Err(Error::Domain(format!("observed fraction {obs_fraction} selects no entries")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    let u = DenseMatrix::from_fn(m, r, |_, _| normal());
    let v = DenseMatrix::from_fn(n, r, |_, _| normal());
    let truth = &u * v.transpose();

    let mut positions = rand::seq::index::sample(&mut rng, total, count).into_vec();
    positions.sort_unstable();
    let observations = positions
        .into_iter()
        .map(|k| {
            let (row, col) = (k / n, k % n);
            let noise: f64 = rng.sample(StandardNormal);
            Observation {
                row,
                col,
                value: truth[(row, col)] + sigma * noise,
            }
        })
        .collect();

    Ok(SyntheticInstance {
        observed: MaskedMatrix::new(m, n, observations)?,
        truth,
        params: SyntheticParams {
            m,
            n,
            r,
            sigma,
            obs_fraction,
            seed,
        },
    })
}

pub fn load_triplets(path: impl AsRef<Path>) -> Result<MaskedMatrix> {
    let path = path.as_ref();
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bytes = if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        out
    } else {
        raw
    };
    let text = String::from_utf8(bytes).map_err(|_| Error::Data(format!("{}: not valid UTF-8", path.display())))?;
    parse_triplets(&text, path)
}

/// Parses triplet text; `origin` only labels error messages.
pub fn parse_triplets(text: &str, origin: &Path) -> Result<MaskedMatrix> {
    let parse_error = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };

    let mut records = Vec::new();
    let mut seen: HashMap<(i64, i64), usize> = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let number = idx + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        if fields.len() < 3 {
            return Err(parse_error(number, format!("expected `row col value`, got {content:?}")));
        }
        let row: i64 = fields[0]
            .parse()
            .map_err(|_| parse_error(number, format!("row id {:?} is not an integer", fields[0])))?;
        let col: i64 = fields[1]
            .parse()
            .map_err(|_| parse_error(number, format!("column id {:?} is not an integer", fields[1])))?;
        let value: f64 = fields[2]
            .parse()
            .map_err(|_| parse_error(number, format!("value {:?} is not a number", fields[2])))?;
        if !value.is_finite() {
            return Err(parse_error(number, format!("value {value} is not finite")));
        }
        if let Some(first) = seen.insert((row, col), number) {
            return Err(Error::Data(format!(
                "{}:{number}: duplicate position ({row}, {col}) first seen on line {first}",
                origin.display()
            )));
        }
        records.push((row, col, value));
    }
    if records.is_empty() {
        return Err(Error::Data(format!("{}: no observations", origin.display())));
    }

    let compact = |ids: &mut dyn Iterator<Item = i64>| -> BTreeMap<i64, usize> {
        let mut map: BTreeMap<i64, usize> = ids.map(|id| (id, 0)).collect();
        for (k, slot) in map.values_mut().enumerate() {
            *slot = k;
        }
        map
    };
    let rows = compact(&mut records.iter().map(|r| r.0));
    let cols = compact(&mut records.iter().map(|r| r.1));
    let observations = records
        .into_iter()
        .map(|(r, c, value)| Observation {
            row: rows[&r],
            col: cols[&c],
            value,
        })
        .collect();
    MaskedMatrix::new(rows.len(), cols.len(), observations)
}

/// Random partition of the observations into `round(train_fraction * N)` training entries
/// and the rest for testing.
pub fn split_train_test(data: &MaskedMatrix, train_fraction: f64, seed: u64) -> Result<(MaskedMatrix, MaskedMatrix)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Domain(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    let total = data.len();
    let n_train = (train_fraction * total as f64).round() as usize;
    if n_train == 0 || n_train == total {
        return Err(Error::Domain(format!(
            "splitting {total} observations at {train_fraction} leaves one side empty"
        )));
    }
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train_idx, test_idx) = order.split_at(n_train);
    let pick = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        let obs = idx.into_iter().map(|k| data.observations()[k]).collect();
        MaskedMatrix::new(data.rows(), data.cols(), obs)
    };
    Ok((pick(train_idx)?, pick(test_idx)?))
}
