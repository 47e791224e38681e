//! Datasets: generators, CSV ingestion, min-max normalization, and splitting.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Matrix,
    y: Matrix,
    feature_names: Vec<String>,
    target_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        x: Matrix,
        y: Matrix,
        feature_names: Vec<String>,
        target_names: Vec<String>,
    ) -> Result<Self> {
        if x.rows() != y.rows() {
            return Err(Error::Data(format!(
                "{} feature rows but {} target rows",
                x.rows(),
                y.rows()
            )));
        }
        if feature_names.len() != x.cols() || target_names.len() != y.cols() {
            return Err(Error::Data(
                "column names do not match column counts".into(),
            ));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("features".into()));
        }
        if !y.is_finite() {
            return Err(Error::NonFinite("targets".into()));
        }
        Ok(Dataset {
            x,
            y,
            feature_names,
            target_names,
        })
    }

    /// Dataset with generated `x0.. / y0..` column names.
    pub fn unnamed(x: Matrix, y: Matrix) -> Result<Self> {
        let f = (0..x.cols()).map(|j| format!("x{j}")).collect();
        let t = (0..y.cols()).map(|j| format!("y{j}")).collect();
        Dataset::new(x, y, f, t)
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &Matrix {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }

    pub fn n_targets(&self) -> usize {
        self.y.cols()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn target_names(&self) -> &[String] {
        &self.target_names
    }

    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        let pick = |m: &Matrix| {
            let mut data = Vec::with_capacity(idx.len() * m.cols());
            for &i in idx {
                data.extend_from_slice(m.row(i));
            }
            Matrix::new(idx.len(), m.cols(), data).expect("row selection keeps shape")
        };
        Dataset {
            x: pick(&self.x),
            y: pick(&self.y),
            feature_names: self.feature_names.clone(),
            target_names: self.target_names.clone(),
        }
    }

    /// CSV text with a header row; features first, then targets.
    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        self.write_records(&mut w)
            .expect("writing to memory cannot fail");
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        self.write_records(&mut w).map_err(|e| csv_io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    fn write_records<W: std::io::Write>(&self, w: &mut csv::Writer<W>) -> csv::Result<()> {
        let header: Vec<&str> = self
            .feature_names
            .iter()
            .chain(&self.target_names)
            .map(String::as_str)
            .collect();
        w.write_record(&header)?;
        for i in 0..self.len() {
            let rec: Vec<String> = self
                .x
                .row(i)
                .iter()
                .chain(self.y.row(i))
                .map(|v| v.to_string())
                .collect();
            w.write_record(&rec)?;
        }
        Ok(())
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Malformed(format!("{}: {other:?}", path.display())),
    }
}

/// Observed range of one column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnRange {
    pub min: f64,
    pub max: f64,
}

impl ColumnRange {
    fn of(values: impl Iterator<Item = f64>) -> ColumnRange {
        let (min, max) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        ColumnRange { min, max }
    }

    /// Constant columns map to 0.5.
    #[inline]
    pub fn forward(&self, v: f64) -> f64 {
        if self.max > self.min {
            (v - self.min) / (self.max - self.min)
        } else {
            0.5
        }
    }

    #[inline]
    pub fn inverse(&self, v: f64) -> f64 {
        if self.max > self.min {
            self.min + v * (self.max - self.min)
        } else {
            self.min
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub features: Vec<ColumnRange>,
    pub targets: Vec<ColumnRange>,
}

impl NormStats {
    pub fn fit(ds: &Dataset) -> Result<NormStats> {
        if ds.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        let ranges = |m: &Matrix| {
            (0..m.cols())
                .map(|j| ColumnRange::of((0..m.rows()).map(|i| m.get(i, j))))
                .collect()
        };
        Ok(NormStats {
            features: ranges(ds.x()),
            targets: ranges(ds.y()),
        })
    }

    pub(crate) fn validate(&self) -> Result<()> {
        for r in self.features.iter().chain(&self.targets) {
            if !r.min.is_finite() || !r.max.is_finite() {
                return Err(Error::NonFinite("normalization statistics".into()));
            }
            if r.min > r.max {
                return Err(Error::Malformed(format!(
                    "normalization range with min {} > max {}",
                    r.min, r.max
                )));
            }
        }
        Ok(())
    }

    pub fn normalize_features(&self, x: &Matrix) -> Result<Matrix> {
        map_columns(x, &self.features, ColumnRange::forward)
    }

    pub fn normalize_targets(&self, y: &Matrix) -> Result<Matrix> {
        map_columns(y, &self.targets, ColumnRange::forward)
    }

    pub fn denormalize_features(&self, x: &Matrix) -> Result<Matrix> {
        map_columns(x, &self.features, ColumnRange::inverse)
    }

    pub fn denormalize_targets(&self, y: &Matrix) -> Result<Matrix> {
        map_columns(y, &self.targets, ColumnRange::inverse)
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        Ok(Dataset {
            x: self.normalize_features(ds.x())?,
            y: self.normalize_targets(ds.y())?,
            feature_names: ds.feature_names.clone(),
            target_names: ds.target_names.clone(),
        })
    }

    pub fn invert(&self, ds: &Dataset) -> Result<Dataset> {
        Ok(Dataset {
            x: self.denormalize_features(ds.x())?,
            y: self.denormalize_targets(ds.y())?,
            feature_names: ds.feature_names.clone(),
            target_names: ds.target_names.clone(),
        })
    }
}

fn map_columns(
    m: &Matrix,
    ranges: &[ColumnRange],
    f: fn(&ColumnRange, f64) -> f64,
) -> Result<Matrix> {
    if m.cols() != ranges.len() {
        return Err(Error::dim(format!(
            "{} columns but normalization statistics for {}",
            m.cols(),
            ranges.len()
        )));
    }
    let data = m
        .as_slice()
        .chunks(ranges.len().max(1))
        .flat_map(|row| row.iter().zip(ranges).map(|(&v, r)| f(r, v)))
        .collect::<Vec<_>>();
    Matrix::new(m.rows(), m.cols(), data)
}

/// Min-max scales every column to `[0, 1]` using the dataset's own ranges.
pub fn normalize(ds: &Dataset) -> Result<(Dataset, NormStats)> {
    let stats = NormStats::fit(ds)?;
    Ok((stats.apply(ds)?, stats))
}

pub fn denormalize(ds: &Dataset, stats: &NormStats) -> Result<Dataset> {
    stats.invert(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    Grid,
    #[default]
    Uniform,
}

/// Two-bump rational test function on `[0, 1]`.
pub fn bump_function(x: f64) -> f64 {
    1.0 / ((x - 0.3).powi(2) + 0.01) + 1.0 / ((x - 0.9).powi(2) + 0.04) - 6.0
}

/// `n` samples of [`bump_function`]; `Grid` is equispaced (seed ignored),
/// `Uniform` draws `x` from a seeded stream.
pub fn gen_function(n: usize, seed: u64, sampling: Sampling) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "function dataset needs n >= 2, got {n}"
        )));
    }
    let xs: Vec<f64> = match sampling {
        Sampling::Grid => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
        Sampling::Uniform => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n).map(|_| rng.random::<f64>()).collect()
        }
    };
    let ys: Vec<f64> = xs.iter().map(|&x| bump_function(x)).collect();
    Dataset::new(
        Matrix::new(n, 1, xs)?,
        Matrix::new(n, 1, ys)?,
        vec!["x".into()],
        vec!["y".into()],
    )
}

/// Process variables of the grinding surrogate with their sampling ranges.
///
/// | column | meaning                          | range      |
/// |--------|----------------------------------|------------|
/// | R1     | fresh ore feed rate (t/h)        | 60 .. 100  |
/// | R2     | mill inlet water flow (m3/h)     | 10 .. 30   |
/// | R3     | classifier overflow conc. (%)    | 30 .. 60   |
/// | alpha1 | mill current (A)                 | 40 .. 80   |
/// | alpha2 | classifier current (A)           | 10 .. 30   |
pub const GRINDING_VARIABLES: [(&str, f64, f64); 5] = [
    ("R1", 60.0, 100.0),
    ("R2", 10.0, 30.0),
    ("R3", 30.0, 60.0),
    ("alpha1", 40.0, 80.0),
    ("alpha2", 10.0, 30.0),
];

/// Span (percentage points) of the particle-size index per unit of
/// normalized surrogate output; `noise_sd` is expressed in those units.
pub const GRINDING_PS_SCALE: f64 = 40.0;
pub const GRINDING_PS_OFFSET: f64 = 40.0;

/// Noise-free particle size (% passing 0.074 mm) of the grinding surrogate.
///
/// With `u_k` the variables rescaled to `[0, 1]` over their ranges in
/// [`GRINDING_VARIABLES`]:
///
/// ```text
/// s  = 0.55 - 0.25 u1 + 0.15 u2 - 0.10 u3^2 + 0.08 sin(pi u4) u5
///      + 0.08 u1 u3 - 0.05 tanh(2 (u2 - u5))
/// PS = 40 + 40 s
/// ```
pub fn grinding_particle_size(vars: &[f64; 5]) -> f64 {
    GRINDING_PS_OFFSET + GRINDING_PS_SCALE * grinding_index(&unit_vars(vars))
}

fn unit_vars(vars: &[f64; 5]) -> [f64; 5] {
    let mut u = [0.0; 5];
    for (k, (v, (_, lo, hi))) in vars.iter().zip(GRINDING_VARIABLES).enumerate() {
        u[k] = (v - lo) / (hi - lo);
    }
    u
}

fn grinding_index(u: &[f64; 5]) -> f64 {
    let [u1, u2, u3, u4, u5] = *u;
    0.55 - 0.25 * u1 + 0.15 * u2 - 0.10 * u3 * u3
        + 0.08 * (std::f64::consts::PI * u4).sin() * u5
        + 0.08 * u1 * u3
        - 0.05 * (2.0 * (u2 - u5)).tanh()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrindingSurrogateConfig {
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub noise_sd: f64,
}

pub fn gen_grinding_surrogate(config: &GrindingSurrogateConfig) -> Result<Dataset> {
    if config.n < 1 {
        return Err(Error::InvalidParameter(
            "grinding surrogate needs n >= 1".into(),
        ));
    }
    if !(config.noise_sd >= 0.0 && config.noise_sd.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise_sd must be finite and >= 0, got {}",
            config.noise_sd
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed);
    noise_rng.set_stream(1);
    let mut xs = Vec::with_capacity(config.n * 5);
    let mut ys = Vec::with_capacity(config.n);
    for _ in 0..config.n {
        let mut vars = [0.0; 5];
        for (v, (_, lo, hi)) in vars.iter_mut().zip(GRINDING_VARIABLES) {
            *v = rng.random_range(lo..=hi);
        }
        let mut ps = grinding_particle_size(&vars);
        if config.noise_sd > 0.0 {
            let z: f64 = noise_rng.sample(StandardNormal);
            ps += GRINDING_PS_SCALE * config.noise_sd * z;
        }
        xs.extend_from_slice(&vars);
        ys.push(ps);
    }
    Dataset::new(
        Matrix::new(config.n, 5, xs)?,
        Matrix::new(config.n, 1, ys)?,
        GRINDING_VARIABLES.iter().map(|v| v.0.to_string()).collect(),
        vec!["PS".into()],
    )
}

/// Reads a headed CSV whose trailing `m_targets` columns are targets.
pub fn load_csv(path: impl AsRef<Path>, m_targets: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_io(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let width = header.len();
    if m_targets == 0 || width < m_targets + 1 {
        return Err(Error::Data(format!(
            "{shown}: {width} columns cannot hold {m_targets} target(s) plus at least one feature"
        )));
    }
    let d = width - m_targets;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut rows = 0;
    for (r, rec) in rdr.records().enumerate() {
        // Row numbers are 1-based and count the header line.
        let row = r + 2;
        let rec = rec.map_err(|e| csv_io(path, e))?;
        if rec.len() != width {
            return Err(Error::Parse {
                path: shown,
                row,
                column: rec.len().min(width) + 1,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                path: shown.clone(),
                row,
                column: c + 1,
                message: format!("cannot parse {cell:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: shown,
                    row,
                    column: c + 1,
                    message: format!("non-finite value {cell:?}"),
                });
            }
            if c < d {
                xs.push(v);
            } else {
                ys.push(v);
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Data(format!("{shown}: no data rows")));
    }
    Dataset::new(
        Matrix::new(rows, d, xs)?,
        Matrix::new(rows, m_targets, ys)?,
        header[..d].to_vec(),
        header[d..].to_vec(),
    )
}

/// Number of training rows for a fractional split: `ceil(fraction * n)`,
/// clamped so both sides are non-empty.
pub fn train_size(n: usize, fraction: f64) -> usize {
    let raw = fraction * n as f64;
    // Absorb representation error such as 0.7 * 10 = 7.000000000000001.
    let k = (raw - 1e-9 * raw.max(1.0)).ceil() as usize;
    k.clamp(1, n - 1)
}

/// Seeded shuffle into `(train, test)` of sizes `ceil(fraction * N)` and the remainder.
pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    if ds.len() < 2 {
        return Err(Error::Data("need at least 2 rows to split".into()));
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = train_size(ds.len(), train_fraction);
    Ok((ds.select_rows(&idx[..k]), ds.select_rows(&idx[k..])))
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn dataset() -> impl Strategy<Value = Dataset> {
        (4usize..40, 1usize..4, 1usize..3).prop_flat_map(|(n, d, m)| {
            (
                prop::collection::vec(-10.0f64..10.0, n * d),
                prop::collection::vec(-10.0f64..10.0, n * m),
            )
                .prop_map(move |(x, y)| {
                    Dataset::unnamed(Matrix::new(n, d, x).unwrap(), Matrix::new(n, m, y).unwrap())
                        .unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn normalization_round_trips(ds in dataset()) {
            let (n, stats) = normalize(&ds).unwrap();
            for v in n.x().as_slice().iter().chain(n.y().as_slice()) {
                prop_assert!((0.0..=1.0).contains(v));
            }
            let back = denormalize(&n, &stats).unwrap();
            for (a, b) in back.y().as_slice().iter().zip(ds.y().as_slice()) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn split_partitions_rows(n in 2usize..300, frac in 0.05f64..0.95, seed in any::<u64>()) {
            let x = Matrix::new(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
            let ds = Dataset::unnamed(x.clone(), x).unwrap();
            let (a, b) = split(&ds, frac, seed).unwrap();
            prop_assert_eq!(a.len() + b.len(), n);
            prop_assert!(!a.is_empty() && !b.is_empty());
            let mut seen: Vec<usize> = a.x().as_slice().iter().chain(b.x().as_slice())
                .map(|v| *v as usize).collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }
    }
}
