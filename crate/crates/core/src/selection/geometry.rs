//! k-means, PCA and farthest point sampling over row-major point sets.

use serde::{Deserialize, Serialize};

use crate::error::{PumaError, Result};
use crate::numeric::{Rng, Tensor2};

pub const KMEANS_TOL: f64 = 1e-6;
pub const KMEANS_MAX_ITER: usize = 100;
pub const PCA_TOL: f64 = 1e-10;
const PCA_MAX_ITER: usize = 50_000;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations: usize,
}

impl KMeans {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.k()];
        for (i, &a) in self.assignments.iter().enumerate() {
            m[a].push(i);
        }
        m
    }
}

/// k-means++ seeding, Lloyd iterations and a Hartigan transfer pass, restarted
/// `restarts` times; the lowest-inertia run wins (earliest on ties).
pub fn kmeans_restarts(points: &Tensor2<f64>, k: usize, seed: u64, restarts: usize) -> Result<KMeans> {
    let mut rng = Rng::for_stage(seed, "kmeans");
    let mut best: Option<KMeans> = None;
    for _ in 0..restarts.max(1) {
        let run = kmeans_once(points, k, &mut rng)?;
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Single run.
pub fn kmeans(points: &Tensor2<f64>, k: usize, seed: u64) -> Result<KMeans> {
    kmeans_restarts(points, k, seed, 1)
}

fn kmeans_once(points: &Tensor2<f64>, k: usize, rng: &mut Rng) -> Result<KMeans> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(PumaError::OutOfRange {
            what: "k-means cluster count",
            value: k as f64,
            limit: n as f64,
        });
    }
    let mut centroids = plus_plus(points, k, rng);
    let mut assignments = vec![0usize; n];
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITER {
        iterations += 1;
        assign(points, &centroids, &mut assignments);
        repair_empty(points, &mut centroids, &mut assignments, k);
        let updated = means(points, &assignments, k);
        let shift = centroids.iter().zip(&updated).map(|(a, b)| sq_dist(a, b).sqrt()).fold(0.0, f64::max);
        centroids = updated;
        if shift < KMEANS_TOL {
            break;
        }
    }
    assign(points, &centroids, &mut assignments);
    repair_empty(points, &mut centroids, &mut assignments, k);
    hartigan(points, &mut assignments, k);
    centroids = means(points, &assignments, k);
    let inertia = (0..n).map(|i| sq_dist(points.row(i), &centroids[assignments[i]])).sum();
    Ok(KMeans {
        assignments,
        centroids,
        inertia,
        iterations,
    })
}

fn plus_plus(points: &Tensor2<f64>, k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let n = points.rows();
    let mut centroids = vec![points.row(rng.below(n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.below(n)
        };
        let c = points.row(next).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign(points: &Tensor2<f64>, centroids: &[Vec<f64>], out: &mut [usize]) {
    for (i, a) in out.iter_mut().enumerate() {
        let p = points.row(i);
        let mut best = (f64::INFINITY, 0);
        for (j, c) in centroids.iter().enumerate() {
            let d = sq_dist(p, c);
            if d < best.0 {
                best = (d, j);
            }
        }
        *a = best.1;
    }
}

/// Moves the point farthest from its centroid into each empty cluster.
fn repair_empty(points: &Tensor2<f64>, centroids: &mut [Vec<f64>], assignments: &mut [usize], k: usize) {
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignments.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let donor = (0..assignments.len())
            .filter(|&i| sizes[assignments[i]] > 1)
            .map(|i| (sq_dist(points.row(i), &centroids[assignments[i]]), i))
            .fold(None, |best: Option<(f64, usize)>, cur| match best {
                Some(b) if b.0 >= cur.0 => Some(b),
                _ => Some(cur),
            });
        let Some((_, i)) = donor else {
            return;
        };
        assignments[i] = empty;
        centroids[empty] = points.row(i).to_vec();
    }
}

/// Single-point transfers that strictly lower inertia, until none is left.
/// Escapes Lloyd fixed points that are not local optima under such moves.
fn hartigan(points: &Tensor2<f64>, assignments: &mut [usize], k: usize) {
    let mut centroids = means(points, assignments, k);
    let mut sizes = vec![0usize; k];
    for &a in assignments.iter() {
        sizes[a] += 1;
    }
    for _ in 0..KMEANS_MAX_ITER {
        let mut moved = false;
        for i in 0..assignments.len() {
            let from = assignments[i];
            if sizes[from] < 2 {
                continue;
            }
            let x = points.row(i);
            let nf = sizes[from] as f64;
            let loss = nf / (nf - 1.0) * sq_dist(x, &centroids[from]);
            let mut best = (loss, from);
            for to in (0..k).filter(|&c| c != from) {
                let nt = sizes[to] as f64;
                let gain = nt / (nt + 1.0) * sq_dist(x, &centroids[to]);
                if gain < best.0 - 1e-12 {
                    best = (gain, to);
                }
            }
            let to = best.1;
            if to == from {
                continue;
            }
            for (c, &v) in centroids[from].iter_mut().zip(x) {
                *c = (*c * nf - v) / (nf - 1.0);
            }
            let nt = sizes[to] as f64;
            for (c, &v) in centroids[to].iter_mut().zip(x) {
                *c = (*c * nt + v) / (nt + 1.0);
            }
            sizes[from] -= 1;
            sizes[to] += 1;
            assignments[i] = to;
            moved = true;
        }
        if !moved {
            return;
        }
    }
}

fn means(points: &Tensor2<f64>, assignments: &[usize], k: usize) -> Vec<Vec<f64>> {
    let d = points.cols();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (i, &a) in assignments.iter().enumerate() {
        counts[a] += 1;
        for (s, &v) in sums[a].iter_mut().zip(points.row(i)) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    sums
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    /// `N x q` coordinates of the centered points.
    pub projected: Vec<Vec<f64>>,
    /// Unit principal directions, one per row.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    /// Per-component share of total variance.
    pub explained_ratio: Vec<f64>,
}

impl Pca {
    pub fn total_explained(&self) -> f64 {
        self.explained_ratio.iter().sum()
    }

    pub fn projected_tensor(&self) -> Tensor2<f64> {
        Tensor2::from_rows(&self.projected).expect("rectangular projection")
    }
}

/// Projects centered points onto the top-`q` covariance eigenvectors, found by
/// power iteration with deflation and Gram-Schmidt re-orthogonalization.
pub fn pca_project(points: &Tensor2<f64>, q: usize) -> Result<Pca> {
    let (n, d) = points.shape();
    if q == 0 || q > d {
        return Err(PumaError::OutOfRange {
            what: "PCA components",
            value: q as f64,
            limit: d as f64,
        });
    }
    if n == 0 {
        return Err(PumaError::dims("PCA input", "0 points", "at least one"));
    }
    let mean: Vec<f64> = (0..d).map(|j| (0..n).map(|i| points.get(i, j)).sum::<f64>() / n as f64).collect();
    let centered: Vec<Vec<f64>> = (0..n).map(|i| points.row(i).iter().zip(&mean).map(|(v, m)| v - m).collect()).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for row in &centered {
        for a in 0..d {
            if row[a] == 0.0 {
                continue;
            }
            for b in a..d {
                cov[a][b] += row[a] * row[b];
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            cov[a][b] /= n as f64;
            cov[b][a] = cov[a][b];
        }
    }
    let trace: f64 = (0..d).map(|a| cov[a][a]).sum();

    let mut rng = Rng::new(0x5eed_00ca);
    let mut components: Vec<Vec<f64>> = Vec::with_capacity(q);
    let mut eigenvalues = Vec::with_capacity(q);
    for _ in 0..q {
        let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        orthonormalize(&mut v, &components);
        let mut lambda = 0.0;
        for _ in 0..PCA_MAX_ITER {
            let mut w: Vec<f64> = cov.iter().map(|row| row.iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
            // deflate: remove what earlier components explain
            for (c, &l) in components.iter().zip(&eigenvalues) {
                let dot: f64 = c.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (wi, ci) in w.iter_mut().zip(c) {
                    *wi -= l * dot * ci;
                }
            }
            let new_lambda: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
            if orthonormalize(&mut w, &components) == 0.0 {
                // remaining spectrum is zero; keep any unit vector orthogonal to the rest
                lambda = 0.0;
                break;
            }
            let delta = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = w;
            let done = (new_lambda - lambda).abs() <= PCA_TOL * new_lambda.abs().max(1.0) && delta < PCA_TOL.sqrt();
            lambda = new_lambda;
            if done {
                break;
            }
        }
        components.push(v);
        eigenvalues.push(lambda.max(0.0));
    }
    let explained_ratio = eigenvalues.iter().map(|&l| if trace > 0.0 { l / trace } else { 0.0 }).collect();
    let projected = centered
        .iter()
        .map(|row| components.iter().map(|c| c.iter().zip(row).map(|(a, b)| a * b).sum()).collect())
        .collect();
    Ok(Pca {
        projected,
        components,
        eigenvalues,
        explained_ratio,
    })
}

/// Removes projections onto `basis` and normalizes; returns the norm before normalizing.
fn orthonormalize(v: &mut [f64], basis: &[Vec<f64>]) -> f64 {
    for _ in 0..2 {
        for b in basis {
            let dot: f64 = b.iter().zip(v.iter()).map(|(x, y)| x * y).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= dot * bi;
            }
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 1e-300 {
        v.iter_mut().for_each(|x| *x /= norm);
        norm
    } else {
        0.0
    }
}

/// Greedy max-min farthest point sampling from `start`; ties go to the lowest index.
pub fn fps(points: &Tensor2<f64>, m: usize, start: usize) -> Result<Vec<usize>> {
    let n = points.rows();
    if m > n {
        return Err(PumaError::OutOfRange {
            what: "FPS sample size",
            value: m as f64,
            limit: n as f64,
        });
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    if start >= n {
        return Err(PumaError::OutOfRange {
            what: "FPS start index",
            value: start as f64,
            limit: n as f64,
        });
    }
    let mut chosen = vec![start];
    let mut taken = vec![false; n];
    taken[start] = true;
    let mut min_d: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(start))).collect();
    while chosen.len() < m {
        let mut best: Option<(f64, usize)> = None;
        for i in 0..n {
            if !taken[i] && best.is_none_or(|(d, _)| min_d[i] > d) {
                best = Some((min_d[i], i));
            }
        }
        let (_, next) = best.expect("m <= n leaves a candidate");
        taken[next] = true;
        chosen.push(next);
        for i in 0..n {
            min_d[i] = min_d[i].min(sq_dist(points.row(i), points.row(next)));
        }
    }
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(rows: &[&[f64]]) -> Tensor2<f64> {
        Tensor2::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn kmeans_separates_two_tight_groups() {
        let p = pts(&[&[0.0, 0.1], &[0.1, 0.0], &[0.0, 0.0], &[10.0, 10.0], &[10.1, 10.0], &[9.9, 10.1]]);
        let km = kmeans(&p, 2, 4).unwrap();
        let a = &km.assignments;
        assert!(a[0] == a[1] && a[1] == a[2]);
        assert!(a[3] == a[4] && a[4] == a[5]);
        assert_ne!(a[0], a[3]);
        assert_eq!(km, kmeans(&p, 2, 4).unwrap());
    }

    #[test]
    fn kmeans_k_equals_n_has_zero_inertia() {
        let p = pts(&[&[0.0], &[1.0], &[5.0], &[7.0]]);
        let km = kmeans(&p, 4, 0).unwrap();
        assert_eq!(km.inertia, 0.0);
        assert_eq!(km.cluster_sizes(), vec![1; 4]);
        assert!(kmeans(&p, 5, 0).is_err());
        assert!(kmeans(&p, 0, 0).is_err());
    }

    #[test]
    fn kmeans_with_duplicate_points_keeps_clusters_nonempty() {
        let p = pts(&[&[1.0], &[1.0], &[1.0], &[1.0]]);
        let km = kmeans(&p, 3, 2).unwrap();
        assert!(km.cluster_sizes().iter().all(|&s| s > 0));
        assert_eq!(km.inertia, 0.0);
    }

    #[test]
    fn pca_collinear_points_explain_everything() {
        let p = pts(&[&[0.0, 0.0], &[1.0, 2.0], &[2.0, 4.0], &[-3.0, -6.0]]);
        let pca = pca_project(&p, 1).unwrap();
        assert!((pca.explained_ratio[0] - 1.0).abs() < 1e-9);
        let full = pca_project(&p, 2).unwrap();
        assert!((full.total_explained() - 1.0).abs() < 1e-9);
        assert!(pca_project(&p, 3).is_err());
    }

    #[test]
    fn pca_matches_known_spectrum() {
        // axis-aligned: variances 4, 1 and 0.25 along x, y, z
        let mut rows = Vec::new();
        for &(x, y, z) in &[
            (2.0, 0.0, 0.0),
            (-2.0, 0.0, 0.0),
            (0.0, 1.0, 0.0),
            (0.0, -1.0, 0.0),
            (0.0, 0.0, 0.5),
            (0.0, 0.0, -0.5),
        ] {
            rows.push(vec![x, y, z]);
        }
        let p = Tensor2::from_rows(&rows).unwrap();
        let pca = pca_project(&p, 3).unwrap();
        let n = 6.0;
        let expect = [8.0 / n, 2.0 / n, 0.5 / n];
        for (l, e) in pca.eigenvalues.iter().zip(expect) {
            assert!((l - e).abs() < 1e-9, "{l} vs {e}");
        }
        assert!(pca.components[0][0].abs() > 1.0 - 1e-9);
    }

    #[test]
    fn fps_examples() {
        let p = pts(&[&[0.0], &[1.0], &[2.0], &[10.0]]);
        assert_eq!(fps(&p, 2, 0).unwrap(), vec![0, 3]);
        let mut all = fps(&p, 4, 1).unwrap();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3]);
        assert!(fps(&p, 5, 0).is_err());
        // equidistant candidates: lowest index wins
        let q = pts(&[&[0.0], &[-1.0], &[1.0]]);
        assert_eq!(fps(&q, 2, 0).unwrap(), vec![0, 1]);
    }

    fn brute_best_two_means(p: &[f64], d: usize) -> f64 {
        let n = p.len() / d;
        let mut best = f64::INFINITY;
        for mask in 1..(1u32 << n) - 1 {
            let mut cost = 0.0;
            for side in [true, false] {
                let grp: Vec<&[f64]> = (0..n)
                    .filter(|&i| ((mask >> i) & 1 == 1) == side)
                    .map(|i| &p[i * d..(i + 1) * d])
                    .collect();
                for j in 0..d {
                    let m = grp.iter().map(|r| r[j]).sum::<f64>() / grp.len() as f64;
                    cost += grp.iter().map(|r| (r[j] - m) * (r[j] - m)).sum::<f64>();
                }
            }
            best = best.min(cost);
        }
        best
    }

    proptest! {
        #[test]
        fn projections_are_centered(raw in prop::collection::vec(-5.0f64..5.0, 12..48)) {
            let n = raw.len() / 3;
            let p = Tensor2::from_vec(n, 3, raw[..n * 3].to_vec()).unwrap();
            let pca = pca_project(&p, 2).unwrap();
            for j in 0..2 {
                let m: f64 = pca.projected.iter().map(|r| r[j]).sum::<f64>() / n as f64;
                prop_assert!(m.abs() < 1e-9);
            }
        }

        #[test]
        fn kmeans_reaches_brute_force_optimum_in_1d(raw in prop::collection::vec(-10.0f64..10.0, 3..=8), seed in 0u64..1000) {
            let p = Tensor2::from_vec(raw.len(), 1, raw.clone()).unwrap();
            let km = kmeans_restarts(&p, 2, seed, 10).unwrap();
            prop_assert!(km.inertia <= brute_best_two_means(&raw, 1) + 1e-9);
        }

        #[test]
        fn kmeans_reaches_brute_force_optimum_in_3d(raw in prop::collection::vec(-10.0f64..10.0, 9..=24), seed in 0u64..1000) {
            let n = raw.len() / 3;
            let raw = raw[..n * 3].to_vec();
            let p = Tensor2::from_vec(n, 3, raw.clone()).unwrap();
            let km = kmeans_restarts(&p, 2, seed, 10).unwrap();
            prop_assert!(km.inertia <= brute_best_two_means(&raw, 3) + 1e-9);
        }
    }
}
