//! Paired datasets and the seeded synthetic generators used by every study.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::gaussian::GaussianJointModel;
use crate::linalg::{cholesky, sym_eigen, Matrix};

/// Where a dataset came from: generator name, its parameters and the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub params: serde_json::Value,
    pub seed: Option<u64>,
}

impl Provenance {
    pub fn new(generator: impl Into<String>, params: serde_json::Value) -> Self {
        Self { generator: generator.into(), params, seed: None }
    }

    pub fn external(source: impl Into<String>) -> Self {
        Self::new("external", json!({ "source": source.into() }))
    }
}

/// `n` aligned samples of `(X, Y)`; row `i` of `x` pairs with row `i` of `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    x: Matrix,
    y: Matrix,
    provenance: Provenance,
}

impl PairedDataset {
    pub fn new(x: Matrix, y: Matrix, provenance: Provenance) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "x has {} rows but y has {}",
                x.nrows(),
                y.nrows()
            )));
        }
        if x.ncols() == 0 || y.ncols() == 0 {
            return Err(Error::DimensionMismatch("x and y need at least one column".into()));
        }
        if !x.iter().chain(y.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("dataset contains non-finite entries".into()));
        }
        Ok(Self { x, y, provenance })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dx(&self) -> usize {
        self.x.ncols()
    }

    pub fn dy(&self) -> usize {
        self.y.ncols()
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &Matrix {
        &self.y
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.provenance.seed = Some(seed);
        self
    }

    /// Rows `indices` of both views, in the given order.
    pub fn select(&self, indices: &[usize]) -> PairedDataset {
        PairedDataset {
            x: self.x.select(Axis(0), indices),
            y: self.y.select(Axis(0), indices),
            provenance: self.provenance.clone(),
        }
    }

    /// Writes the CSV form: header `x0,..,y0,..`, one sample per row, every
    /// value with 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = BufWriter::new(writer);
        let header: Vec<String> = (0..self.dx())
            .map(|i| format!("x{i}"))
            .chain((0..self.dy()).map(|i| format!("y{i}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for (xr, yr) in self.x.outer_iter().zip(self.y.outer_iter()) {
            let row: Vec<String> = xr.iter().chain(yr.iter()).map(|v| format!("{v:.16e}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, provenance: Provenance) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(BufReader::new(reader));
        let headers = rdr.headers()?.clone();
        let mut x_cols = Vec::new();
        let mut y_cols = Vec::new();
        for (pos, name) in headers.iter().enumerate() {
            let name = name.trim();
            let (target, rest) = if let Some(rest) = name.strip_prefix('x') {
                (&mut x_cols, rest)
            } else if let Some(rest) = name.strip_prefix('y') {
                (&mut y_cols, rest)
            } else {
                return Err(Error::InvalidArgument(format!("unexpected CSV column {name:?}")));
            };
            let idx: usize = rest
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("unexpected CSV column {name:?}")))?;
            target.push((idx, pos));
        }
        x_cols.sort_unstable();
        y_cols.sort_unstable();
        for (expected, (idx, _)) in x_cols.iter().enumerate().chain(y_cols.iter().enumerate()) {
            if expected != *idx {
                return Err(Error::InvalidArgument("CSV columns must be x0..x{dx-1}, y0..y{dy-1}".into()));
            }
        }

        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut n = 0;
        for record in rdr.records() {
            let record = record?;
            let parse = |pos: usize| -> Result<f64> {
                let field = record.get(pos).unwrap_or("").trim();
                field
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("cannot parse {field:?} as a number")))
            };
            for &(_, pos) in &x_cols {
                xs.push(parse(pos)?);
            }
            for &(_, pos) in &y_cols {
                ys.push(parse(pos)?);
            }
            n += 1;
        }
        let x = Array2::from_shape_vec((n, x_cols.len()), xs).expect("row-major x");
        let y = Array2::from_shape_vec((n, y_cols.len()), ys).expect("row-major y");
        Self::new(x, y, provenance)
    }

    /// Saves `path` plus the provenance sidecar `path.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)?;
        let sidecar = sidecar_path(path);
        std::fs::write(sidecar, serde_json::to_string_pretty(&self.provenance)? + "\n")?;
        Ok(())
    }

    /// Loads a CSV dataset, picking up the provenance sidecar when present.
    pub fn load(path: &Path) -> Result<Self> {
        let sidecar = sidecar_path(path);
        let provenance = match std::fs::File::open(&sidecar) {
            Ok(f) => serde_json::from_reader(BufReader::new(f))?,
            Err(_) => Provenance::external(path.display().to_string()),
        };
        let file = std::fs::File::open(path)?;
        let mut reader = BufReader::new(file);
        // Fail early on an empty file rather than in the CSV layer.
        if reader.fill_buf()?.is_empty() {
            return Err(Error::InvalidArgument(format!("{} is empty", path.display())));
        }
        Self::read_csv(reader, provenance)
    }
}

/// `data.csv` -> `data.csv.json`.
pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

fn normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(StandardNormal))
}

/// `X, Z ~ N(0, 1)` i.i.d. and `Y = ρX + √(1-ρ²)Z`.
pub fn gen_correlated_gaussian<R: Rng + ?Sized>(n: usize, rho: f64, rng: &mut R) -> Result<PairedDataset> {
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidArgument(format!("rho must lie in (-1, 1), got {rho}")));
    }
    if n == 0 {
        return Err(Error::TooFewSamples { got: 0, need: 1 });
    }
    let scale = (1.0 - rho * rho).sqrt();
    let mut x = Array2::<f64>::zeros((n, 1));
    let mut y = Array2::<f64>::zeros((n, 1));
    for i in 0..n {
        let xi: f64 = rng.sample(StandardNormal);
        let zi: f64 = rng.sample(StandardNormal);
        x[[i, 0]] = xi;
        y[[i, 0]] = rho * xi + scale * zi;
    }
    PairedDataset::new(x, y, Provenance::new("correlated", json!({ "n": n, "rho": rho })))
}

/// Scalar correlated pair in the first coordinate of `d`-dimensional `X`
/// and `Y`; the other coordinates are independent standard normals.
pub fn gen_embedded_gaussian<R: Rng + ?Sized>(n: usize, d: usize, rho: f64, rng: &mut R) -> Result<PairedDataset> {
    if d == 0 {
        return Err(Error::DimensionMismatch("embedding dimension must be at least 1".into()));
    }
    let base = gen_correlated_gaussian(n, rho, rng)?;
    let mut x = normal_matrix(n, d, rng);
    let mut y = normal_matrix(n, d, rng);
    x.column_mut(0).assign(&base.x().column(0));
    y.column_mut(0).assign(&base.y().column(0));
    PairedDataset::new(x, y, Provenance::new("embedded", json!({ "n": n, "d": d, "rho": rho })))
}

/// A linear factor of a PSD matrix: Cholesky when possible, otherwise the
/// symmetric square root with negative eigenvalues clamped to zero.
fn psd_factor(s: &Matrix) -> Result<Matrix> {
    if let Ok(l) = cholesky(s) {
        return Ok(l);
    }
    let eig = sym_eigen(s)?;
    let scale = eig.values.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    let min = eig.values[eig.values.len() - 1];
    if min < -1e-8 * scale {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
    }
    Ok(&eig.vectors * &eig.values.mapv(|l| l.max(0.0).sqrt()))
}

/// Samples `n` draws of the joint Gaussian described by `model`.
pub fn gen_gaussian_pair<R: Rng + ?Sized>(
    n: usize,
    model: &GaussianJointModel,
    rng: &mut R,
) -> Result<PairedDataset> {
    let dx = model.dx();
    let joint = model.joint_covariance();
    let factor = psd_factor(&joint)?;
    let z = normal_matrix(n, joint.nrows(), rng);
    let mut samples = z.dot(&factor.t());
    let mean: Array1<f64> = model.mean_x().iter().chain(model.mean_y().iter()).copied().collect();
    samples += &mean;
    let x = samples.slice(ndarray::s![.., ..dx]).to_owned();
    let y = samples.slice(ndarray::s![.., dx..]).to_owned();
    PairedDataset::new(
        x,
        y,
        Provenance::new("gaussian", json!({ "n": n, "dx": dx, "dy": model.dy() })),
    )
}

/// The shared-latent model `X = P₁V + Z₁`, `Y = P₂V + Z₂` with
/// `V ~ N(0, I_{d'})` and `Z₁, Z₂ ~ N(0, I_d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSubspaceModel {
    pub p1: Matrix,
    pub p2: Matrix,
}

impl LatentSubspaceModel {
    /// Draws the loading matrices `P₁, P₂` with i.i.d. standard normal entries.
    pub fn draw<R: Rng + ?Sized>(d: usize, d_prime: usize, rng: &mut R) -> Result<Self> {
        if d_prime == 0 || d_prime > d {
            return Err(Error::DimensionMismatch(format!(
                "latent dimension must satisfy 1 <= d' <= d, got d={d}, d'={d_prime}"
            )));
        }
        let p1 = normal_matrix(d, d_prime, rng);
        let p2 = normal_matrix(d, d_prime, rng);
        Ok(Self { p1, p2 })
    }

    pub fn d(&self) -> usize {
        self.p1.nrows()
    }

    pub fn d_prime(&self) -> usize {
        self.p1.ncols()
    }

    /// Population Gaussian model: `Σ_X = P₁P₁ᵀ + I`, `Σ_Y = P₂P₂ᵀ + I` and
    /// `Σ_XY = P₁P₂ᵀ` (zero for the null model).
    pub fn population_model(&self, dependent: bool) -> Result<GaussianJointModel> {
        let d = self.d();
        let eye = Array2::<f64>::eye(d);
        let cross = if dependent { self.p1.dot(&self.p2.t()) } else { Array2::zeros((d, d)) };
        GaussianJointModel::new(
            Array1::zeros(d),
            Array1::zeros(d),
            self.p1.dot(&self.p1.t()) + &eye,
            self.p2.dot(&self.p2.t()) + &eye,
            cross,
        )
    }

    /// Draws `n` samples. The null model uses independent latent copies for
    /// `X` and `Y`, so both marginals match the dependent model exactly.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, dependent: bool, rng: &mut R) -> Result<PairedDataset> {
        let (d, dp) = (self.d(), self.d_prime());
        let v = normal_matrix(n, dp, rng);
        let v_y = if dependent { v.clone() } else { normal_matrix(n, dp, rng) };
        let z1 = normal_matrix(n, d, rng);
        let z2 = normal_matrix(n, d, rng);
        let x = v.dot(&self.p1.t()) + z1;
        let y = v_y.dot(&self.p2.t()) + z2;
        PairedDataset::new(
            x,
            y,
            Provenance::new(
                "latent",
                json!({ "n": n, "d": d, "d_prime": dp, "dependent": dependent }),
            ),
        )
    }
}

/// Draws fresh loadings and then `n` samples of the shared-latent model.
pub fn gen_latent_subspace<R: Rng + ?Sized>(
    n: usize,
    d: usize,
    d_prime: usize,
    dependent: bool,
    rng: &mut R,
) -> Result<PairedDataset> {
    LatentSubspaceModel::draw(d, d_prime, rng)?.sample(n, dependent, rng)
}
