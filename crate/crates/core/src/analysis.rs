//! Projection, CCA and transversal analyses.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{inverse_sqrt, symmetric_eigen, Matrix};
use crate::math;
use crate::net::Embedding;
use crate::skeleton::{Skeleton, NUM_JOINTS};
use crate::transfer::{FeatureSequence, Regressor};

pub use crate::data::synthetic::ActivityClass;

/// Relative eigenvalue floor applied when whitening covariance blocks.
pub const CCA_EPSILON: f64 = 1e-4;
pub const TRANSVERSAL_STEP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProjectionMethod {
    Pca,
    Tsne { perplexity: f64, iterations: usize, seed: u64 },
}

impl ProjectionMethod {
    pub fn tsne(seed: u64) -> Self {
        ProjectionMethod::Tsne { perplexity: 30.0, iterations: 500, seed }
    }
}

fn check_rows(rows: &[Vec<f64>]) -> Result<usize> {
    if rows.len() < 3 {
        return Err(Error::DegenerateInput("need at least three vectors"));
    }
    let d = rows[0].len();
    if let Some(r) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: r.len() });
    }
    if rows.iter().any(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(Error::DegenerateInput("non-finite input"));
    }
    if rows.iter().all(|r| r == &rows[0]) {
        return Err(Error::DegenerateInput("all vectors identical"));
    }
    Ok(d)
}

fn to_matrix(rows: &[Vec<f64>]) -> Matrix {
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    Matrix::from_rows(&refs)
}

/// Principal-component projection onto the two leading axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit principal axes; the largest-magnitude loading of each is positive.
    pub components: [Vec<f64>; 2],
    /// Sample variance along each axis, descending.
    pub variance: [f64; 2],
    pub points: Vec<[f64; 2]>,
}

pub fn pca_2d(rows: &[Vec<f64>]) -> Result<Pca> {
    let d = check_rows(rows)?;
    let x = to_matrix(rows);
    let mean = x.column_means();
    let xc = x.centered();
    let cov = Matrix::cross_covariance(&xc, &xc);
    let (values, vectors) = symmetric_eigen(&cov);
    let axis = |k: usize| -> Vec<f64> {
        if k >= d {
            return alloc::vec![0.0; d];
        }
        let mut v: Vec<f64> = (0..d).map(|r| vectors.get(r, k)).collect();
        // first index wins among equal magnitudes
        let lead = v.iter().enumerate().fold(0, |b, (i, x)| if math::abs(*x) > math::abs(v[b]) { i } else { b });
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    let components = [axis(0), axis(1)];
    let variance = [values[0].max(0.0), values.get(1).map_or(0.0, |v| v.max(0.0))];
    let points = (0..xc.rows)
        .map(|r| [math::dot(xc.row(r), &components[0]), math::dot(xc.row(r), &components[1])])
        .collect();
    Ok(Pca { mean, components, variance, points })
}

/// Exact t-SNE with Gaussian affinities and early exaggeration.
pub fn tsne_2d(rows: &[Vec<f64>], perplexity: f64, iterations: usize, seed: u64) -> Result<Vec<[f64; 2]>> {
    check_rows(rows)?;
    let n = rows.len();
    let perplexity = perplexity.min((n - 1) as f64 / 3.0).max(1.0);
    let target = math::ln(perplexity);
    let mut d2 = alloc::vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = math::sq_dist(&rows[i], &rows[j]);
            d2[i * n + j] = v;
            d2[j * n + i] = v;
        }
    }
    // conditional affinities by bisection on the precision
    let mut p = alloc::vec![0.0; n * n];
    for i in 0..n {
        let (mut lo, mut hi, mut beta) = (0.0, f64::INFINITY, 1.0);
        let row = &d2[i * n..(i + 1) * n];
        let scale = row.iter().copied().filter(|v| *v > 0.0).fold(f64::INFINITY, f64::min);
        let scale = if scale.is_finite() { scale } else { 1.0 };
        for _ in 0..64 {
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in (0..n).filter(|&j| j != i) {
                let e = math::exp(-beta * (row[j] - scale));
                p[i * n + j] = e;
                sum += e;
                weighted += e * (row[j] - scale);
            }
            let entropy = math::ln(sum) + beta * weighted / sum;
            for j in 0..n {
                p[i * n + j] /= sum;
            }
            if math::abs(entropy - target) < 1e-5 {
                break;
            }
            if entropy > target {
                lo = beta;
                beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
        }
    }
    let mut pj = alloc::vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            pj[i * n + j] = ((p[i * n + j] + p[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut rng), init.sample(&mut rng)]).collect();
    let mut vel = alloc::vec![[0.0; 2]; n];
    let mut gains = alloc::vec![[1.0f64; 2]; n];
    let mut q = alloc::vec![0.0; n * n];
    let exaggeration_end = iterations.min(100);
    for it in 0..iterations {
        let ex = if it < exaggeration_end { 12.0 } else { 1.0 };
        let momentum = if it < 250 { 0.5 } else { 0.8 };
        let mut z = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let dx = y[i][0] - y[j][0];
                    let dy = y[i][1] - y[j][1];
                    let w = 1.0 / (1.0 + dx * dx + dy * dy);
                    q[i * n + j] = w;
                    z += w;
                }
            }
        }
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in (0..n).filter(|&j| j != i) {
                let w = q[i * n + j];
                let m = 4.0 * (ex * pj[i * n + j] - w / z) * w;
                g[0] += m * (y[i][0] - y[j][0]);
                g[1] += m * (y[i][1] - y[j][1]);
            }
            for k in 0..2 {
                gains[i][k] = if (g[k] > 0.0) != (vel[i][k] > 0.0) { gains[i][k] + 0.2 } else { (gains[i][k] * 0.8).max(0.01) };
                vel[i][k] = momentum * vel[i][k] - 200.0 * gains[i][k] * g[k];
            }
        }
        for (yi, v) in y.iter_mut().zip(&vel) {
            yi[0] += v[0];
            yi[1] += v[1];
        }
        let c = [y.iter().map(|p| p[0]).sum::<f64>() / n as f64, y.iter().map(|p| p[1]).sum::<f64>() / n as f64];
        y.iter_mut().for_each(|p| {
            p[0] -= c[0];
            p[1] -= c[1];
        });
    }
    Ok(y)
}

pub fn project_2d(rows: &[Vec<f64>], method: ProjectionMethod) -> Result<Vec<[f64; 2]>> {
    match method {
        ProjectionMethod::Pca => Ok(pca_2d(rows)?.points),
        ProjectionMethod::Tsne { perplexity, iterations, seed } => tsne_2d(rows, perplexity, iterations, seed),
    }
}

pub fn embedding_rows(z: &[Embedding]) -> Vec<Vec<f64>> {
    z.iter().map(|e| e.0.clone()).collect()
}

/// First canonical correlation between paired rows of `a` and `b`.
///
/// Each covariance block is whitened with its eigenvalues floored at
/// [`CCA_EPSILON`] times the largest one, so directions carrying almost no
/// variance cannot produce spurious correlations, while well-conditioned data
/// is whitened exactly.
pub fn cca_first_coefficient(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InsufficientSamples(format!("unpaired sets: {} vs {} rows", a.len(), b.len())));
    }
    let da = a.first().map_or(0, |r| r.len());
    let db = b.first().map_or(0, |r| r.len());
    if da == 0 || db == 0 || a.len() <= da.max(db) {
        return Err(Error::InsufficientSamples(format!("{} rows for dimensions {da} and {db}", a.len())));
    }
    for (rows, d) in [(a, da), (b, db)] {
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: r.len() });
        }
        if rows.iter().any(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::DegenerateInput("non-finite input"));
        }
    }
    let xa = to_matrix(a).centered();
    let xb = to_matrix(b).centered();
    let whiten = |x: &Matrix| -> Result<Matrix> {
        let c = Matrix::cross_covariance(x, x);
        let top = symmetric_eigen(&c).0[0];
        if top <= 0.0 {
            return Err(Error::DegenerateInput("zero-variance set"));
        }
        Ok(inverse_sqrt(&c, CCA_EPSILON * top))
    };
    let wa = whiten(&xa)?;
    let wb = whiten(&xb)?;
    let t = wa.matmul(&Matrix::cross_covariance(&xa, &xb)).matmul(&wb);
    let top = symmetric_eigen(&t.transpose().matmul(&t)).0[0];
    Ok(math::sqrt(top.max(0.0)).min(1.0))
}

/// Mean first canonical correlation over paired groups; group `k` of `a` is
/// matched with group `k` of `b`, truncated to the shorter of the two.
pub fn grouped_cca(a: &[Vec<Vec<f64>>], b: &[Vec<Vec<f64>>]) -> Result<f64> {
    let groups = a.len().min(b.len());
    if groups == 0 {
        return Err(Error::InsufficientSamples("no paired groups".into()));
    }
    let mut total = 0.0;
    for (ga, gb) in a.iter().zip(b) {
        let n = ga.len().min(gb.len());
        total += cca_first_coefficient(&ga[..n], &gb[..n])?;
    }
    Ok(total / groups as f64)
}

/// Class-by-class CCA between views: entry `(i, j)` compares the first-view
/// samples of class `i` with the third-view samples of class `j`. Each class
/// holds one or more sample groups; see [`grouped_cca`].
pub fn class_cca_matrix(
    first: &[Vec<Vec<Vec<f64>>>],
    third: &[Vec<Vec<Vec<f64>>>],
) -> Result<[[f64; 4]; 4]> {
    for (view, classes) in [("first", first), ("third", third)] {
        if classes.len() != 4 {
            return Err(Error::InsufficientSamples(format!("{view} view has {} of 4 classes", classes.len())));
        }
        if let Some(c) = classes.iter().position(|g| g.iter().all(|s| s.is_empty())) {
            return Err(Error::InsufficientSamples(format!(
                "{view} view has no samples for class {}",
                ActivityClass::ALL[c].name()
            )));
        }
    }
    let mut m = [[0.0; 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = grouped_cca(&first[i], &third[j])?;
        }
    }
    Ok(m)
}

/// True if every diagonal entry strictly exceeds every other entry in its row
/// and column.
pub fn is_diagonally_dominant(m: &[[f64; 4]; 4]) -> bool {
    (0..4).all(|i| (0..4).filter(|&k| k != i).all(|k| m[i][i] > m[i][k] && m[i][i] > m[k][i]))
}

/// `a + β (b − a)`, written so that both endpoints are reproduced exactly.
pub fn interpolate(a: &[f64], b: &[f64], beta: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| (1.0 - beta) * x + beta * y).collect()
}

/// `0, step, 2·step, …, 1`, always ending exactly at 1.
pub fn beta_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidConfig(format!("transversal step {step} outside (0, 1]")));
    }
    let n = math::ceil(1.0 / step - 1e-9) as usize;
    Ok((0..=n).map(|k| if k == n { 1.0 } else { k as f64 * step }).collect())
}

/// Straight segment between two encoded frames, decoded at every grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct Transversal {
    pub z_i: Embedding,
    pub z_j: Embedding,
    pub betas: Vec<f64>,
    pub z: Vec<Embedding>,
    pub phi: Vec<Vec<f64>>,
    pub skeletons: Vec<Skeleton>,
}

impl Transversal {
    /// Mean per-joint displacement between consecutive decoded skeletons.
    pub fn displacements(&self) -> Vec<f64> {
        self.skeletons
            .windows(2)
            .map(|w| {
                let (a, b) = (w[0].joints(), w[1].joints());
                (0..NUM_JOINTS).map(|j| math::dist(&a[j], &b[j])).sum::<f64>() / NUM_JOINTS as f64
            })
            .collect()
    }

    /// Largest consecutive displacement over the mean one; 1 for a constant path.
    pub fn smoothness_ratio(&self) -> f64 {
        let d = self.displacements();
        let mean = math::mean(&d);
        if mean == 0.0 {
            return 1.0;
        }
        d.iter().copied().fold(0.0, f64::max) / mean
    }
}

/// Interpolates both the embedding and the base features and decodes each
/// point with an embedding-augmented regressor.
pub fn build_transversal(
    z_i: &Embedding,
    z_j: &Embedding,
    phi_i: &[f64],
    phi_j: &[f64],
    step: f64,
    regressor: &Regressor,
) -> Result<Transversal> {
    if z_i.dim() != z_j.dim() {
        return Err(Error::DimensionMismatch { expected: z_i.dim(), got: z_j.dim() });
    }
    if phi_i.len() != phi_j.len() {
        return Err(Error::DimensionMismatch { expected: phi_i.len(), got: phi_j.len() });
    }
    if !regressor.use_embedding {
        return Err(Error::InvalidConfig("transversal needs an embedding-augmented regressor".into()));
    }
    let betas = beta_grid(step)?;
    let z: Vec<Embedding> = betas.iter().map(|&b| Embedding(interpolate(&z_i.0, &z_j.0, b))).collect();
    let phi: Vec<Vec<f64>> = betas.iter().map(|&b| interpolate(phi_i, phi_j, b)).collect();
    let seq = FeatureSequence::new(phi.clone(), z.clone())?;
    let skeletons = crate::transfer::predict_sequence(regressor, &seq)?;
    Ok(Transversal { z_i: z_i.clone(), z_j: z_j.clone(), betas, z, phi, skeletons })
}
