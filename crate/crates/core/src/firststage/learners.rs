use std::cmp::Ordering as CmpOrdering;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{mean, sample_sd, solve_linear, Matrix};

use super::Bandwidth;

fn flatten(rows: &[Vec<f64>]) -> (Vec<f64>, usize) {
    let width = rows.first().map_or(0, Vec::len);
    (rows.concat(), width)
}

fn sq_dist_scaled(a: &[f64], b: &[f64], inv_h: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(inv_h)
        .map(|((p, q), s)| {
            let u = (p - q) * s;
            u * u
        })
        .sum()
}

/// Index of the closest training row, lowest index on ties.
fn nearest(xs: &[f64], dx: usize, x: &[f64], inv_h: &[f64]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, row) in xs.chunks_exact(dx).enumerate() {
        let d = sq_dist_scaled(row, x, inv_h);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// Nadaraya–Watson regression with a product Gaussian kernel.
pub(crate) struct KernelFit {
    xs: Vec<f64>,
    dx: usize,
    ys: Vec<f64>,
    dy: usize,
    bandwidths: Vec<f64>,
    inv_h: Vec<f64>,
    pub(crate) fallbacks: Arc<AtomicU64>,
}

impl KernelFit {
    pub(crate) fn new(xs: &[Vec<f64>], ys: &[Vec<f64>], bandwidth: &Bandwidth) -> Result<Self> {
        let (flat_x, dx) = flatten(xs);
        if dx == 0 {
            return Err(Error::contract("kernel regression needs at least one x coordinate"));
        }
        let (flat_y, dy) = flatten(ys);
        let n = xs.len() as f64;
        let bandwidths: Vec<f64> = match *bandwidth {
            Bandwidth::Fixed(h) => vec![h; dx],
            Bandwidth::Rule { scale, exponent } => {
                let exponent = exponent.unwrap_or(1.0 / (4.0 + dx as f64));
                (0..dx)
                    .map(|j| {
                        let col: Vec<f64> = xs.iter().map(|x| x[j]).collect();
                        let sd = sample_sd(&col);
                        let sd = if sd > 0.0 { sd } else { 1.0 };
                        scale * sd * n.powf(-exponent)
                    })
                    .collect()
            }
        };
        if bandwidths.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(Error::contract("kernel bandwidth must be positive and finite"));
        }
        Ok(KernelFit {
            inv_h: bandwidths.iter().map(|h| 1.0 / h).collect(),
            bandwidths,
            xs: flat_x,
            dx,
            ys: flat_y,
            dy,
            fallbacks: Arc::new(AtomicU64::new(0)),
        })
    }

    pub(crate) fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub(crate) fn predict(&self, x: &[f64], out: &mut Vec<f64>) {
        out.resize(self.dy, 0.0);
        let mut total = 0.0;
        if self.dx == 1 {
            let (q, s) = (x[0], self.inv_h[0]);
            for (&xi, y) in self.xs.iter().zip(self.ys.chunks_exact(self.dy)) {
                let u = (xi - q) * s;
                let w = (-0.5 * u * u).exp();
                total += w;
                for (o, v) in out.iter_mut().zip(y) {
                    *o += w * v;
                }
            }
        } else {
            for (row, y) in self.xs.chunks_exact(self.dx).zip(self.ys.chunks_exact(self.dy)) {
                let w = (-0.5 * sq_dist_scaled(row, x, &self.inv_h)).exp();
                total += w;
                for (o, v) in out.iter_mut().zip(y) {
                    *o += w * v;
                }
            }
        }
        if total > 0.0 {
            out.iter_mut().for_each(|o| *o /= total);
        } else {
            self.fallbacks.fetch_add(1, Ordering::Relaxed);
            let i = nearest(&self.xs, self.dx, x, &self.inv_h);
            out.copy_from_slice(&self.ys[i * self.dy..(i + 1) * self.dy]);
        }
    }
}

/// k-nearest-neighbour averaging under Euclidean distance.
pub(crate) struct KnnFit {
    xs: Vec<f64>,
    dx: usize,
    ys: Vec<f64>,
    dy: usize,
    k: usize,
    unit: Vec<f64>,
}

impl KnnFit {
    pub(crate) fn new(xs: &[Vec<f64>], ys: &[Vec<f64>], k: usize) -> Result<Self> {
        let (flat_x, dx) = flatten(xs);
        if dx == 0 {
            return Err(Error::contract("knn regression needs at least one x coordinate"));
        }
        let (flat_y, dy) = flatten(ys);
        Ok(KnnFit {
            xs: flat_x,
            dx,
            ys: flat_y,
            dy,
            k,
            unit: vec![1.0; dx],
        })
    }

    pub(crate) fn predict(&self, x: &[f64], out: &mut Vec<f64>) {
        let mut dist: Vec<(f64, usize)> = self
            .xs
            .chunks_exact(self.dx)
            .enumerate()
            .map(|(i, row)| (sq_dist_scaled(row, x, &self.unit), i))
            .collect();
        let by_key = |a: &(f64, usize), b: &(f64, usize)| -> CmpOrdering { a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)) };
        if self.k < dist.len() {
            dist.select_nth_unstable_by(self.k - 1, by_key);
            dist.truncate(self.k);
        }
        dist.sort_unstable_by(by_key);
        out.resize(self.dy, 0.0);
        for &(_, i) in &dist {
            for (o, v) in out.iter_mut().zip(&self.ys[i * self.dy..(i + 1) * self.dy]) {
                *o += v;
            }
        }
        let k = dist.len() as f64;
        out.iter_mut().for_each(|o| *o /= k);
    }
}

/// Additive polynomial series `β0 + Σ_j Σ_p β_jp s_j^p` on standardized `x`,
/// ridge-penalized except for the intercept.
pub(crate) struct SeriesFit {
    center: Vec<f64>,
    scale: Vec<f64>,
    degree: usize,
    /// `features × outputs`
    coef: Matrix,
}

impl SeriesFit {
    pub(crate) fn new(xs: &[Vec<f64>], ys: &[Vec<f64>], degree: usize, ridge: f64) -> Result<Self> {
        let dx = xs.first().map_or(0, Vec::len);
        let dy = ys.first().map_or(0, Vec::len);
        let (center, scale): (Vec<f64>, Vec<f64>) = (0..dx)
            .map(|j| {
                let col: Vec<f64> = xs.iter().map(|x| x[j]).collect();
                let sd = sample_sd(&col);
                (mean(&col), if sd > 0.0 { sd } else { 1.0 })
            })
            .unzip();
        let mut fit = SeriesFit {
            center,
            scale,
            degree,
            coef: Matrix::zeros(1, dy.max(1)),
        };
        let p = fit.n_features();
        let mut gram = Matrix::zeros(p, p);
        let mut rhs = vec![vec![0.0; p]; dy];
        let mut phi = Vec::with_capacity(p);
        for (x, y) in xs.iter().zip(ys) {
            fit.features(x, &mut phi);
            for a in 0..p {
                for b in 0..p {
                    gram[(a, b)] += phi[a] * phi[b];
                }
                for (r, &yj) in rhs.iter_mut().zip(y) {
                    r[a] += phi[a] * yj;
                }
            }
        }
        for a in 1..p {
            gram[(a, a)] += ridge;
        }
        let mut coef = Matrix::zeros(p, dy.max(1));
        for (j, r) in rhs.iter().enumerate() {
            let beta = solve_linear(&gram, r)?;
            for a in 0..p {
                coef[(a, j)] = beta[a];
            }
        }
        fit.coef = coef;
        Ok(fit)
    }

    fn n_features(&self) -> usize {
        1 + self.center.len() * self.degree
    }

    fn features(&self, x: &[f64], phi: &mut Vec<f64>) {
        phi.clear();
        phi.push(1.0);
        for (j, &xj) in x.iter().enumerate() {
            let s = (xj - self.center[j]) / self.scale[j];
            let mut pow = 1.0;
            for _ in 0..self.degree {
                pow *= s;
                phi.push(pow);
            }
        }
    }

    pub(crate) fn predict(&self, x: &[f64], out: &mut Vec<f64>) {
        let mut phi = Vec::with_capacity(self.n_features());
        self.features(x, &mut phi);
        out.extend((0..self.coef.cols()).map(|j| phi.iter().enumerate().map(|(a, f)| f * self.coef[(a, j)]).sum::<f64>()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_recovers_a_polynomial_exactly() {
        let xs: Vec<Vec<f64>> = (0..30).map(|i| vec![-1.0 + i as f64 / 15.0]).collect();
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![1.0 - 2.0 * x[0] + 0.5 * x[0].powi(3)]).collect();
        let fit = SeriesFit::new(&xs, &ys, 3, 0.0).unwrap();
        let mut out = Vec::new();
        fit.predict(&[0.37], &mut out);
        let want = 1.0 - 2.0 * 0.37 + 0.5 * 0.37f64.powi(3);
        assert!((out[0] - want).abs() < 1e-10);
    }

    #[test]
    fn knn_averages_k_closest() {
        let xs: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let ys: Vec<Vec<f64>> = (0..5).map(|i| vec![(i * 10) as f64]).collect();
        let fit = KnnFit::new(&xs, &ys, 3).unwrap();
        let mut out = Vec::new();
        fit.predict(&[2.1], &mut out);
        assert_eq!(out, vec![20.0]);
    }

    #[test]
    fn multivariate_kernel_weights_use_each_bandwidth() {
        let xs = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let ys = vec![vec![0.0], vec![1.0], vec![2.0]];
        let fit = KernelFit::new(&xs, &ys, &Bandwidth::Fixed(1.0)).unwrap();
        let mut out = Vec::new();
        fit.predict(&[0.0, 0.0], &mut out);
        let w1 = (-0.5f64).exp();
        let want = (w1 * 1.0 + w1 * 2.0) / (1.0 + 2.0 * w1);
        assert!((out[0] - want).abs() < 1e-15);
    }
}
