//! Two-sample distances between joint sample sets: exact Wasserstein-1,
//! squared RBF MMD and energy distance.
//!
//! All three put their arguments in a canonical order first, so swapping the
//! arguments yields bit-identical results.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, render_csv, write_once, Provenance};
use crate::sample_set::SampleSet;

/// Default number of points per set in the assignment problem.
pub const W1_SUBSAMPLE: usize = 2048;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn total_order(a: &SampleSet, b: &SampleSet) -> Ordering {
    a.len().cmp(&b.len()).then_with(|| {
        a.points()
            .iter()
            .zip(b.points().iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

fn canonical<'a>(a: &'a SampleSet, b: &'a SampleSet) -> (&'a SampleSet, &'a SampleSet) {
    if total_order(a, b) == Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    }
}

fn check_dims(a: &SampleSet, b: &SampleSet) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!(
            "sample dimensions {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Minimum-cost perfect assignment on a dense square cost matrix
/// (shortest augmenting paths with dual potentials). Returns `col4row`.
pub fn linear_assignment(n: usize, cost: &[f64]) -> Result<Vec<usize>> {
    if cost.len() != n * n {
        return Err(Error::ShapeMismatch(format!(
            "cost matrix has {} entries, expected {}",
            cost.len(),
            n * n
        )));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("assignment cost"));
    }
    const NONE: usize = usize::MAX;
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut shortest = vec![0.0; n];
    let mut path = vec![NONE; n];
    let mut col4row = vec![NONE; n];
    let mut row4col = vec![NONE; n];
    let mut sr = vec![false; n];
    let mut sc = vec![false; n];
    let mut remaining = vec![0usize; n];

    for cur_row in 0..n {
        // Dijkstra-like search for the cheapest augmenting path from cur_row
        shortest.fill(f64::INFINITY);
        sr.fill(false);
        sc.fill(false);
        for (it, r) in remaining.iter_mut().enumerate() {
            *r = n - 1 - it;
        }
        let mut num_remaining = n;
        let mut min_val = 0.0;
        let mut i = cur_row;
        let sink = loop {
            sr[i] = true;
            let mut index = NONE;
            let mut lowest = f64::INFINITY;
            for (it, &j) in remaining[..num_remaining].iter().enumerate() {
                let r = min_val + cost[i * n + j] - u[i] - v[j];
                if r < shortest[j] {
                    path[j] = i;
                    shortest[j] = r;
                }
                if shortest[j] < lowest || (shortest[j] == lowest && row4col[j] == NONE) {
                    lowest = shortest[j];
                    index = it;
                }
            }
            min_val = lowest;
            if index == NONE {
                return Err(Error::NonFinite("assignment search"));
            }
            let j = remaining[index];
            sc[j] = true;
            num_remaining -= 1;
            remaining[index] = remaining[num_remaining];
            if row4col[j] == NONE {
                break j;
            }
            i = row4col[j];
        };

        u[cur_row] += min_val;
        for r in 0..n {
            if sr[r] && r != cur_row {
                u[r] += min_val - shortest[col4row[r]];
            }
        }
        for c in 0..n {
            if sc[c] {
                v[c] -= min_val - shortest[c];
            }
        }
        let mut j = sink;
        loop {
            let r = path[j];
            row4col[j] = r;
            std::mem::swap(&mut col4row[r], &mut j);
            if r == cur_row {
                break;
            }
        }
    }
    Ok(col4row)
}

/// Exact empirical W1 under Euclidean cost between two sets of equal size.
pub fn w1_exact(a: &SampleSet, b: &SampleSet) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch { a: a.len(), b: b.len() });
    }
    if a.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_dims(a, b)?;
    let (a, b) = canonical(a, b);
    let n = a.len();
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        let p = a.point(i);
        for j in 0..n {
            cost[i * n + j] = dist(p, b.point(j));
        }
    }
    let col4row = linear_assignment(n, &cost)?;
    let total: f64 = (0..n).map(|i| cost[i * n + col4row[i]]).sum();
    Ok(total / n as f64)
}

/// Median of all pairwise distances `‖x_i − x_j‖`, `i < j`, over the pooled
/// set. Selection by repeated histogram refinement, so memory stays linear.
pub fn median_pairwise_distance(a: &SampleSet, b: &SampleSet) -> f64 {
    let pooled: Vec<&[f64]> = (0..a.len())
        .map(|i| a.point(i))
        .chain((0..b.len()).map(|i| b.point(i)))
        .collect();
    let m = pooled.len();
    if m < 2 {
        return 0.0;
    }
    let pairs = m * (m - 1) / 2;
    let for_each_pair = |visit: &mut dyn FnMut(f64)| {
        for i in 0..m {
            for j in i + 1..m {
                visit(dist(pooled[i], pooled[j]));
            }
        }
    };
    // k-th smallest (0-based). Invariant: `below` values lie under `lo` and
    // the answer lies in the closed interval [lo, hi].
    let kth = |k: usize| -> f64 {
        const BUCKETS: usize = 4096;
        const COLLECT: usize = 1 << 20;
        let mut lo = 0.0f64;
        let mut hi = 0.0f64;
        for_each_pair(&mut |d| hi = hi.max(d));
        let mut below = 0usize;
        loop {
            let mut inside = 0usize;
            for_each_pair(&mut |d| inside += usize::from(d >= lo && d <= hi));
            if inside <= COLLECT {
                let mut vals = Vec::with_capacity(inside);
                for_each_pair(&mut |d| {
                    if d >= lo && d <= hi {
                        vals.push(d);
                    }
                });
                vals.sort_by(f64::total_cmp);
                return vals[k - below];
            }
            let width = (hi - lo) / BUCKETS as f64;
            let edges: Vec<f64> = (0..BUCKETS).map(|c| lo + c as f64 * width).collect();
            // bucket c holds edges[c] <= d < edges[c + 1]; the last one is closed at hi
            let bucket = |d: f64| {
                let mut c = if width > 0.0 {
                    (((d - lo) / width) as usize).min(BUCKETS - 1)
                } else {
                    0
                };
                while c > 0 && d < edges[c] {
                    c -= 1;
                }
                while c + 1 < BUCKETS && d >= edges[c + 1] {
                    c += 1;
                }
                c
            };
            let mut counts = vec![0usize; BUCKETS];
            for_each_pair(&mut |d| {
                if d >= lo && d <= hi {
                    counts[bucket(d)] += 1;
                }
            });
            let mut chosen = BUCKETS - 1;
            for (c, &n) in counts.iter().enumerate() {
                if below + n > k {
                    chosen = c;
                    break;
                }
                below += n;
            }
            let new_lo = edges[chosen];
            let new_hi = if chosen + 1 == BUCKETS {
                hi
            } else {
                prev_float(edges[chosen + 1])
            };
            if new_lo == lo && new_hi == hi {
                // the interval is a handful of ulps wide: count distinct values
                let mut tally = std::collections::BTreeMap::new();
                for_each_pair(&mut |d| {
                    if d >= lo && d <= hi {
                        *tally.entry(d.to_bits()).or_insert(0usize) += 1;
                    }
                });
                let mut acc = below;
                for (bits, n) in tally {
                    acc += n;
                    if acc > k {
                        return f64::from_bits(bits);
                    }
                }
                return hi;
            }
            lo = new_lo;
            hi = new_hi;
        }
    };
    if pairs % 2 == 1 {
        kth(pairs / 2)
    } else {
        0.5 * (kth(pairs / 2 - 1) + kth(pairs / 2))
    }
}

fn prev_float(x: f64) -> f64 {
    if x > 0.0 {
        f64::from_bits(x.to_bits() - 1)
    } else {
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// Median pairwise distance of the pooled sets.
    Auto,
    Fixed(f64),
}

// Full double loops for the within-set terms too, so that a == b cancels exactly.
fn kernel_mean(a: &SampleSet, b: &SampleSet, gamma: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..a.len() {
        let p = a.point(i);
        let mut row = 0.0;
        for j in 0..b.len() {
            row += (-gamma * sq_dist(p, b.point(j))).exp();
        }
        total += row;
    }
    total / (a.len() as f64 * b.len() as f64)
}

/// Biased squared MMD with kernel `exp(−‖x−y‖²/(2σ²))`. Returns 0 when the
/// automatic bandwidth degenerates (every pooled point identical).
pub fn mmd_rbf(a: &SampleSet, b: &SampleSet, bandwidth: Bandwidth) -> Result<f64> {
    Ok(mmd_with_bandwidth(a, b, bandwidth)?.0)
}

/// Squared MMD together with the bandwidth actually used.
pub fn mmd_with_bandwidth(a: &SampleSet, b: &SampleSet, bandwidth: Bandwidth) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_dims(a, b)?;
    let (a, b) = canonical(a, b);
    let sigma = match bandwidth {
        Bandwidth::Auto => median_pairwise_distance(a, b),
        Bandwidth::Fixed(s) if s > 0.0 && s.is_finite() => s,
        Bandwidth::Fixed(s) => return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {s}"))),
    };
    if sigma == 0.0 {
        log::warn!("degenerate MMD bandwidth: all pooled points coincide");
        return Ok((0.0, 0.0));
    }
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let v = kernel_mean(a, a, gamma) + kernel_mean(b, b, gamma) - 2.0 * kernel_mean(a, b, gamma);
    Ok((v, sigma))
}

fn mean_distance(a: &SampleSet, b: &SampleSet) -> f64 {
    let mut total = 0.0;
    for i in 0..a.len() {
        let p = a.point(i);
        let mut row = 0.0;
        for j in 0..b.len() {
            row += dist(p, b.point(j));
        }
        total += row;
    }
    total / (a.len() as f64 * b.len() as f64)
}

/// `2E‖A−B‖ − E‖A−A′‖ − E‖B−B′‖` with V-statistics (zero diagonal included).
/// Panics if either set is empty or the dimensions differ.
pub fn energy_distance(a: &SampleSet, b: &SampleSet) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "energy distance of an empty set");
    assert_eq!(a.dim(), b.dim(), "energy distance across dimensions");
    let (a, b) = canonical(a, b);
    2.0 * mean_distance(a, b) - mean_distance(a, a) - mean_distance(b, b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub label: String,
    pub w1: f64,
    pub mmd: f64,
    pub energy: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub mmd_bandwidth: f64,
    pub subsample_seed: u64,
}

pub const METRIC_HEADER: [&str; 8] = ["label", "w1", "mmd", "energy", "n_a", "n_b", "bandwidth", "seed"];

impl MetricReport {
    /// All three statistics. MMD and energy use every point; W1 uses both sets
    /// subsampled to `min(|a|, |b|, w1_subsample)` rows with `seed`.
    pub fn compute(label: &str, a: &SampleSet, b: &SampleSet, w1_subsample: usize, seed: u64) -> Result<Self> {
        if a.is_empty() || b.is_empty() {
            return Err(Error::EmptyDataset);
        }
        check_dims(a, b)?;
        let k = a.len().min(b.len()).min(w1_subsample.max(1));
        let w1 = w1_exact(&a.subsample(k, seed), &b.subsample(k, seed))?;
        let (mmd, mmd_bandwidth) = mmd_with_bandwidth(a, b, Bandwidth::Auto)?;
        let energy = energy_distance(a, b);
        Ok(Self {
            label: label.to_owned(),
            w1,
            mmd,
            energy,
            n_a: a.len(),
            n_b: b.len(),
            mmd_bandwidth,
            subsample_seed: seed,
        })
    }

    pub fn csv_row(&self) -> [String; 8] {
        [
            self.label.clone(),
            fmt_f64(self.w1),
            fmt_f64(self.mmd),
            fmt_f64(self.energy),
            self.n_a.to_string(),
            self.n_b.to_string(),
            fmt_f64(self.mmd_bandwidth),
            self.subsample_seed.to_string(),
        ]
    }

    pub fn to_csv(reports: &[MetricReport], provenance: &Provenance) -> Result<Vec<u8>> {
        render_csv(provenance, &METRIC_HEADER, reports.iter().map(|r| r.csv_row()))
    }

    pub fn write_csv(reports: &[MetricReport], path: &Path, provenance: &Provenance) -> Result<()> {
        write_once(path, &Self::to_csv(reports, provenance)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use ndarray::{array, Array2};

    fn set(points: Array2<f64>) -> SampleSet {
        SampleSet::new(1, 1, points, "t", 0).unwrap()
    }

    fn random_set(n: usize, rng: &mut RngState, shift: f64) -> SampleSet {
        set(Array2::from_shape_fn((n, 2), |_| rng.standard_normal() + shift))
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..n {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    fn brute_w1(a: &SampleSet, b: &SampleSet) -> f64 {
        let (a, b) = canonical(a, b);
        let n = a.len();
        permutations(n)
            .iter()
            .map(|p| (0..n).map(|i| dist(a.point(i), b.point(p[i]))).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
            / n as f64
    }

    #[test]
    fn w1_examples() {
        let a = set(array![[0.0, 0.0]]);
        assert_eq!(w1_exact(&a, &a).unwrap(), 0.0);
        assert_eq!(w1_exact(&a, &set(array![[3.0, 4.0]])).unwrap(), 5.0);
        let a = set(array![[0.0, 0.0], [1.0, 0.0]]);
        let b = set(array![[0.0, 1.0], [1.0, 1.0]]);
        assert_eq!(w1_exact(&a, &b).unwrap(), 1.0);
        assert!(matches!(
            w1_exact(&a, &set(array![[0.0, 0.0]])),
            Err(Error::SizeMismatch { a: 2, b: 1 })
        ));
    }

    #[test]
    fn w1_matches_brute_force() {
        let mut rng = RngState::new(11);
        for trial in 0..100 {
            let n = 1 + trial % 6;
            let a = random_set(n, &mut rng, 0.0);
            let b = random_set(n, &mut rng, 0.5);
            assert_eq!(w1_exact(&a, &b).unwrap(), brute_w1(&a, &b), "trial {trial}");
        }
    }

    #[test]
    fn assignment_handles_ties_and_integers() {
        // every permutation costs the same
        let cost = vec![1.0; 16];
        let p = linear_assignment(4, &cost).unwrap();
        let mut seen = p.clone();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3]);
        let cost = vec![4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let p = linear_assignment(3, &cost).unwrap();
        assert_eq!((0..3).map(|i| cost[i * 3 + p[i]]).sum::<f64>(), 5.0);
    }

    #[test]
    fn w1_translation() {
        let mut rng = RngState::new(4);
        let a = random_set(40, &mut rng, 0.0);
        let b = random_set(40, &mut rng, 0.0);
        let base = w1_exact(&a, &b).unwrap();
        let shift = |s: &SampleSet, v: [f64; 2]| {
            let mut p = s.points().clone();
            p.column_mut(0).mapv_inplace(|x| x + v[0]);
            p.column_mut(1).mapv_inplace(|x| x + v[1]);
            set(p)
        };
        let both = w1_exact(&shift(&a, [0.3, -1.2]), &shift(&b, [0.3, -1.2])).unwrap();
        assert!((both - base).abs() < 1e-10);
        let one = w1_exact(&a, &shift(&b, [0.6, 0.8])).unwrap();
        assert!(one <= base + 1.0 + 1e-12);
    }

    #[test]
    fn singleton_closed_forms() {
        let a = set(array![[0.0, 0.0]]);
        let b = set(array![[1.2, -0.5]]);
        let d: f64 = 1.3;
        let sigma = 0.7;
        let mmd = mmd_rbf(&a, &b, Bandwidth::Fixed(sigma)).unwrap();
        assert!((mmd - 2.0 * (1.0 - (-d * d / (2.0 * sigma * sigma)).exp())).abs() < 1e-12);
        assert!((energy_distance(&a, &b) - 2.0 * d).abs() < 1e-12);
        assert_eq!(mmd_rbf(&a, &a, Bandwidth::Auto).unwrap(), 0.0);
    }

    #[test]
    fn identical_sets_are_zero() {
        let mut rng = RngState::new(2);
        let a = random_set(50, &mut rng, 0.0);
        assert_eq!(mmd_rbf(&a, &a, Bandwidth::Auto).unwrap(), 0.0);
        assert_eq!(energy_distance(&a, &a), 0.0);
        assert_eq!(w1_exact(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn median_matches_sorting() {
        let mut rng = RngState::new(6);
        for n in [1, 2, 3, 7, 40] {
            let a = random_set(n, &mut rng, 0.0);
            let b = random_set(n + 1, &mut rng, 1.0);
            let pooled: Vec<&[f64]> = (0..a.len())
                .map(|i| a.point(i))
                .chain((0..b.len()).map(|i| b.point(i)))
                .collect();
            let mut d = Vec::new();
            for i in 0..pooled.len() {
                for j in i + 1..pooled.len() {
                    d.push(dist(pooled[i], pooled[j]));
                }
            }
            d.sort_by(f64::total_cmp);
            let m = d.len();
            let expect = if m % 2 == 1 {
                d[m / 2]
            } else {
                0.5 * (d[m / 2 - 1] + d[m / 2])
            };
            assert_eq!(median_pairwise_distance(&a, &b), expect);
        }
    }

    #[test]
    fn median_with_many_ties() {
        // 1500 copies of two points: more than a million tied pairs
        let p = Array2::from_shape_fn((1500, 2), |(i, _)| if i % 3 == 0 { 1.0 } else { 0.0 });
        let a = set(p);
        let b = set(array![[0.0, 0.0]]);
        assert_eq!(median_pairwise_distance(&a, &b), 0.0);
    }

    #[test]
    fn symmetry_and_nonnegativity() {
        let mut rng = RngState::new(21);
        for trial in 0..1000 {
            let n = 1 + trial % 9;
            let m = if trial % 2 == 0 { n } else { 1 + (trial / 2) % 7 };
            let a = random_set(n, &mut rng, 0.0);
            let b = random_set(m, &mut rng, (trial % 3) as f64);
            let e = energy_distance(&a, &b);
            assert_eq!(e, energy_distance(&b, &a));
            assert!(e >= 0.0);
            let mmd = mmd_rbf(&a, &b, Bandwidth::Auto).unwrap();
            assert_eq!(mmd, mmd_rbf(&b, &a, Bandwidth::Auto).unwrap());
            assert!(mmd >= -1e-12);
            if n == m {
                let w = w1_exact(&a, &b).unwrap();
                assert_eq!(w, w1_exact(&b, &a).unwrap());
                assert!(w >= 0.0);
            }
        }
    }

    #[test]
    fn report_csv_row() {
        let a = set(array![[0.0, 0.0]]);
        let b = set(array![[3.0, 4.0]]);
        let r = MetricReport::compute("x", &a, &b, W1_SUBSAMPLE, 7).unwrap();
        assert_eq!((r.w1, r.energy, r.n_a, r.n_b), (5.0, 10.0, 1, 1));
        let csv = String::from_utf8(MetricReport::to_csv(&[r], &Provenance::new()).unwrap()).unwrap();
        assert!(csv.contains("label,w1,mmd,energy,n_a,n_b,bandwidth,seed\nx,5.0,"));
    }
}
