//! Random market instances and the two risk measures evaluated on them.
//!
//! Return rates are kept raw (`x_{iμ} ~ N(0,1)`); the `1/sqrt(N)` scaling is
//! applied inside [`investment_risk`] and [`covariance`], never stored.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fmt17;

/// Market size and seed. `alpha = p / N` is always derived from the counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MarketConfig {
    assets: usize,
    scenarios: usize,
    master_seed: u64,
}

impl MarketConfig {
    pub fn new(assets: usize, scenarios: usize, master_seed: u64) -> Result<Self> {
        if assets < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 assets, got {assets}")));
        }
        if scenarios < 1 {
            return Err(Error::InvalidParameter("need at least 1 scenario".into()));
        }
        Ok(Self { assets, scenarios, master_seed })
    }

    /// Builds a config from `N` and a scenario ratio; `alpha * N` must be an integer.
    pub fn from_ratio(assets: usize, alpha: f64, master_seed: u64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
        }
        let p = alpha * assets as f64;
        let rounded = p.round();
        if (p - rounded).abs() > 1e-9 * p.max(1.0) || rounded < 1.0 {
            return Err(Error::InvalidParameter(format!(
                "alpha * N = {p} is not a positive integer scenario count"
            )));
        }
        Self::new(assets, rounded as usize, master_seed)
    }

    pub fn assets(&self) -> usize {
        self.assets
    }

    pub fn scenarios(&self) -> usize {
        self.scenarios
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn alpha(&self) -> f64 {
        self.scenarios as f64 / self.assets as f64
    }
}

/// SplitMix64 finalizer, used to spread sample indices over the key space.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Key of the independent stream that generates sample `sample_index`.
pub fn substream_key(master_seed: u64, sample_index: u64) -> u64 {
    master_seed ^ splitmix64(sample_index)
}

/// The quenched disorder: an `N x p` table of raw standard-normal return rates.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnMatrix {
    entries: DMatrix<f64>,
    source_seed: u64,
}

impl ReturnMatrix {
    pub fn from_entries(entries: DMatrix<f64>, source_seed: u64) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::InvalidParameter("return matrix must be non-empty".into()));
        }
        Ok(Self { entries, source_seed })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn assets(&self) -> usize {
        self.entries.nrows()
    }

    pub fn scenarios(&self) -> usize {
        self.entries.ncols()
    }

    pub fn source_seed(&self) -> u64 {
        self.source_seed
    }

    /// FNV-1a over the bit patterns of the entries; identifies an instance in logs.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for x in self.entries.iter() {
            for b in x.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    /// Writes the text dump: a `N p seed` line followed by `N` rows of `p` entries.
    pub fn write_dump(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_dump_string()).map_err(|e| Error::io(path, e))
    }

    pub fn to_dump_string(&self) -> String {
        let (n, p) = self.entries.shape();
        let mut out = String::with_capacity(n * p * 24 + 32);
        let _ = writeln!(out, "{n} {p} {}", self.source_seed);
        for i in 0..n {
            let row: Vec<String> = (0..p).map(|mu| fmt17(self.entries[(i, mu)])).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn read_dump(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_dump(&text)
    }

    pub fn parse_dump(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty instance dump".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse(format!("bad header line {header:?}")));
        }
        let bad = |what: &str| Error::Parse(format!("bad {what} in header {header:?}"));
        let n: usize = fields[0].parse().map_err(|_| bad("N"))?;
        let p: usize = fields[1].parse().map_err(|_| bad("p"))?;
        let seed: u64 = fields[2].parse().map_err(|_| bad("seed"))?;

        let mut entries = DMatrix::zeros(n, p);
        for i in 0..n {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse(format!("expected {n} rows, found {i}")))?;
            let mut count = 0;
            for (mu, tok) in line.split_whitespace().enumerate() {
                if mu >= p {
                    return Err(Error::Parse(format!("row {i} has more than {p} entries")));
                }
                entries[(i, mu)] = tok
                    .parse()
                    .map_err(|_| Error::Parse(format!("row {i}: bad number {tok:?}")))?;
                count += 1;
            }
            if count != p {
                return Err(Error::Parse(format!("row {i} has {count} entries, expected {p}")));
            }
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(Error::Parse("trailing data after last row".into()));
        }
        Self::from_entries(entries, seed)
    }
}

/// Draws sample `sample_index` of the market described by `cfg`.
///
/// Each sample has its own ChaCha20 stream keyed by
/// `master_seed XOR splitmix64(sample_index)`; normals come from the ziggurat
/// sampler in `rand_distr`. Entries are filled row by row (asset-major).
pub fn generate_returns(cfg: &MarketConfig, sample_index: u64) -> ReturnMatrix {
    let key = substream_key(cfg.master_seed, sample_index);
    let mut rng = ChaCha20Rng::seed_from_u64(key);
    let (n, p) = (cfg.assets, cfg.scenarios);
    let mut entries = DMatrix::zeros(n, p);
    for i in 0..n {
        for mu in 0..p {
            entries[(i, mu)] = rng.sample(StandardNormal);
        }
    }
    ReturnMatrix { entries, source_seed: key }
}

/// `J_ij = (1/N) sum_μ x_iμ x_jμ`, stored densely.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    entries: DMatrix<f64>,
    rank_hint: usize,
}

impl CovarianceMatrix {
    /// Wraps an arbitrary symmetric matrix (used for synthetic test matrices).
    pub fn from_symmetric(entries: DMatrix<f64>) -> Result<Self> {
        let n = entries.nrows();
        if n == 0 || entries.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, got: entries.ncols() });
        }
        for i in 0..n {
            for j in 0..i {
                if entries[(i, j)] != entries[(j, i)] {
                    return Err(Error::InvalidParameter(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { entries, rank_hint: n })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Upper bound on the rank, `min(N, p)` for a sample covariance.
    pub fn rank_hint(&self) -> usize {
        self.rank_hint
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        self.entries
            .row_iter()
            .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// `½ wᵀJw`.
    pub fn quadratic_risk(&self, w: &DVector<f64>) -> Result<f64> {
        check_len(self.dim(), w.len())?;
        Ok(0.5 * w.dot(&(&self.entries * w)))
    }
}

pub fn covariance(x: &ReturnMatrix) -> CovarianceMatrix {
    let (n, p) = x.entries.shape();
    // Column i of `rows` is row i of X, contiguous for the dot products.
    let rows = x.entries.transpose();
    let scale = 1.0 / n as f64;
    let mut j = DMatrix::zeros(n, n);
    for a in 0..n {
        let ra = rows.column(a);
        for b in a..n {
            let v = ra.dot(&rows.column(b)) * scale;
            j[(a, b)] = v;
            j[(b, a)] = v;
        }
    }
    CovarianceMatrix { entries: j, rank_hint: n.min(p) }
}

/// A portfolio weight vector in the rescaled convention `sum w_i = N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Portfolio {
    weights: DVector<f64>,
}

impl Portfolio {
    pub fn new(weights: DVector<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidParameter("portfolio must hold at least one asset".into()));
        }
        Ok(Self { weights })
    }

    /// The equipartition portfolio `w = e`.
    pub fn equal_weight(n: usize) -> Self {
        Self { weights: DVector::from_element(n.max(1), 1.0) }
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `|sum w_i - N|`.
    pub fn budget_residual(&self) -> f64 {
        (self.weights.sum() - self.len() as f64).abs()
    }

    pub fn concentration(&self) -> f64 {
        concentration(&self.weights)
    }
}

/// `q_w = (1/N) sum w_i^2`.
pub fn concentration(w: &DVector<f64>) -> f64 {
    w.norm_squared() / w.len() as f64
}

/// `H(w|X) = ½ sum_μ ((1/sqrt(N)) sum_i w_i x_iμ)^2`, computed in `O(Np)` without forming `J`.
pub fn investment_risk(w: &Portfolio, x: &ReturnMatrix) -> Result<f64> {
    check_len(x.assets(), w.len())?;
    let projected = x.entries.tr_mul(&w.weights);
    Ok(0.5 * projected.norm_squared() / x.assets() as f64)
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
