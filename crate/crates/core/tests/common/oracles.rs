//! Independent reference implementations. None of these share code with the
//! library paths they check.

use std::collections::BTreeSet;

/// Attention curve by recomputing every prefix sum from scratch.
pub fn brute_attention(series: &[f64], b: f64, r: f64) -> Vec<f64> {
    (0..series.len())
        .map(|i| {
            let mut s = 0.0;
            for v in &series[..=i] {
                if *v > b {
                    s += v - b;
                }
            }
            s / r
        })
        .collect()
}

/// DBSCAN by explicit core detection and transitive closure of direct
/// density-reachability among core points (Warshall). Border points join the
/// component of their lowest-index core neighbor. Returns the clusters as a
/// set of member sets, plus the noise points.
pub fn brute_dbscan(d: &[Vec<f64>], eps: f64, min_pts: usize) -> (BTreeSet<BTreeSet<usize>>, BTreeSet<usize>) {
    let n = d.len();
    let near = |i: usize, j: usize| d[i][j] <= eps;
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();
    let mut reach = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            reach[i][j] = core[i] && core[j] && (i == j || near(i, j));
        }
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    let component = |c: usize| -> usize { (0..n).find(|&j| reach[c][j]).expect("reaches itself") };
    let mut groups: std::collections::BTreeMap<usize, BTreeSet<usize>> = Default::default();
    let mut noise = BTreeSet::new();
    for p in 0..n {
        let owner = if core[p] { Some(p) } else { (0..n).find(|&q| core[q] && near(p, q)) };
        match owner {
            Some(c) => {
                groups.entry(component(c)).or_default().insert(p);
            }
            None => {
                noise.insert(p);
            }
        }
    }
    (groups.into_values().collect(), noise)
}

/// Partition form of DBSCAN labels.
pub fn partition(labels: &[Option<usize>]) -> (BTreeSet<BTreeSet<usize>>, BTreeSet<usize>) {
    let mut groups: std::collections::BTreeMap<usize, BTreeSet<usize>> = Default::default();
    let mut noise = BTreeSet::new();
    for (i, l) in labels.iter().enumerate() {
        match l {
            Some(c) => {
                groups.entry(*c).or_default().insert(i);
            }
            None => {
                noise.insert(i);
            }
        }
    }
    (groups.into_values().collect(), noise)
}

/// Rank of each value by counting: 1 + #smaller + (#equal − 1)/2.
pub fn counting_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|x| {
            let smaller = v.iter().filter(|y| *y < x).count() as f64;
            let equal = v.iter().filter(|y| *y == x).count() as f64;
            1.0 + smaller + (equal - 1.0) / 2.0
        })
        .collect()
}

/// Pearson correlation of counting ranks, with two-pass means.
pub fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (counting_ranks(x), counting_ranks(y));
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).expect("rows left");
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

/// Residual sum of squares of the least-squares fit of `y` on the columns of `x`
/// (row-major), via the normal equations.
pub fn rss_normal_equations(x: &[Vec<f64>], y: &[f64]) -> f64 {
    let p = x[0].len();
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for (row, yi) in x.iter().zip(y) {
        for i in 0..p {
            xty[i] += row[i] * yi;
            for j in 0..p {
                xtx[i][j] += row[i] * row[j];
            }
        }
    }
    let beta = gauss_solve(xtx, xty);
    x.iter()
        .zip(y)
        .map(|(row, yi)| {
            let fit: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            (yi - fit).powi(2)
        })
        .sum()
}

/// ANCOVA F statistic from two normal-equation fits.
pub fn ancova_f_oracle(y: &[f64], groups: &[String], covariates: &[Vec<f64>]) -> f64 {
    let levels: Vec<&String> = groups.iter().collect::<BTreeSet<_>>().into_iter().collect();
    let n = y.len();
    let reduced: Vec<Vec<f64>> =
        (0..n).map(|i| std::iter::once(1.0).chain(covariates.iter().map(|c| c[i])).collect()).collect();
    let full: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = reduced[i].clone();
            row.extend(levels[1..].iter().map(|l| if &groups[i] == *l { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    let (rf, rr) = (rss_normal_equations(&full, y), rss_normal_equations(&reduced, y));
    let g = levels.len();
    ((rr - rf) / (g - 1) as f64) / (rf / (n - g - covariates.len()) as f64)
}

#[derive(Debug, Clone, Copy)]
pub enum Dist {
    /// Two-sided Student t tail.
    T,
    /// Upper F tail.
    F,
}

/// `(distribution, df1, df2, x, p)`, computed with mpmath at 50 significant digits.
pub const P_VALUE_TABLE: [(Dist, f64, f64, f64, f64); 20] = [
    (Dist::T, 1.0, 0.0, 0.5, 0.704_832_764_699_133_45),
    (Dist::T, 2.0, 0.0, 1.0, 0.422_649_730_810_374_24),
    (Dist::T, 3.0, 0.0, 2.0, 0.139_325_968_558_843_18),
    (Dist::T, 5.0, 0.0, 1.5, 0.193_903_680_242_473_43),
    (Dist::T, 8.0, 0.0, 2.5, 0.036_942_037_713_624_105),
    (Dist::T, 10.0, 0.0, 0.8, 0.442_300_419_141_541_4),
    (Dist::T, 15.0, 0.0, 3.2, 0.005_963_848_485_531_983_8),
    (Dist::T, 30.0, 0.0, 2.0, 0.054_625_044_962_983_104),
    (Dist::T, 120.0, 0.0, 1.96, 0.052_313_676_445_827_554),
    (Dist::T, 4.0, 0.0, 4.5, 0.010_822_550_462_608_251),
    (Dist::F, 1.0, 10.0, 1.0, 0.340_893_132_302_059_87),
    (Dist::F, 2.0, 20.0, 2.5, 0.107_374_182_4),
    (Dist::F, 3.0, 15.0, 3.8, 0.032_932_086_268_771_46),
    (Dist::F, 4.0, 40.0, 0.7, 0.596_537_324_252_575_5),
    (Dist::F, 1.0, 5.0, 5.0, 0.075_586_818_421_612_438),
    (Dist::F, 12.0, 199.0, 1.8, 0.050_174_787_640_915_993),
    (Dist::F, 15.0, 248.0, 1.13, 0.329_686_884_329_157_55),
    (Dist::F, 6.0, 60.0, 2.2, 0.055_241_398_869_102_827),
    (Dist::F, 2.0, 3.0, 10.0, 0.047_107_507_729_214_035),
    (Dist::F, 5.0, 12.0, 0.3, 0.903_576_418_747_434_92),
];
