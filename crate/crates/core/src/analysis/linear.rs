use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::special::f_sf;
use super::AnalysisError;

/// Relative size of a diagonal entry of R below which a column is treated as
/// a linear combination of the columns before it.
const RANK_TOL: f64 = 1e-10;

/// Least-squares fit via Householder QR. Returns the residual sum of squares,
/// or the names of collinear columns when the design is rank deficient.
pub fn least_squares_rss(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<f64, AnalysisError> {
    let qr = x.clone().qr();
    let r = qr.r();
    let scale = (0..r.ncols()).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    let collinear: Vec<String> = (0..r.ncols())
        .filter(|&j| !(r[(j, j)].abs() > RANK_TOL * scale.max(f64::MIN_POSITIVE)))
        .map(|j| names[j].clone())
        .collect();
    if !collinear.is_empty() {
        return Err(AnalysisError::RankDeficient(collinear));
    }
    let qty = qr.q().transpose() * y;
    let beta = r.solve_upper_triangular(&qty).ok_or_else(|| AnalysisError::RankDeficient(names.to_vec()))?;
    let resid = y - x * beta;
    Ok(resid.norm_squared())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AncovaResult {
    pub n: usize,
    pub groups: usize,
    pub covariates: usize,
    /// Serialized as null when infinite (see `saturated`).
    #[serde(with = "infinite_as_null")]
    pub f: f64,
    pub p_value: f64,
    pub df_between: usize,
    pub df_resid: usize,
    pub rss_full: f64,
    pub rss_reduced: f64,
    /// The full model fits exactly while the groups still explain variance;
    /// F is infinite and p is 0.
    pub saturated: bool,
}

/// One-factor analysis of covariance: F-test of the group factor in
/// `y ~ 1 + group + covariates` against `y ~ 1 + covariates`.
///
/// Group indicators use the first label in sorted order as the baseline.
pub fn ancova(response: &[f64], groups: &[String], covariates: &[Vec<f64>]) -> Result<AncovaResult, AnalysisError> {
    let n = response.len();
    if groups.len() != n || covariates.iter().any(|c| c.len() != n) {
        return Err(AnalysisError::LengthMismatch);
    }
    let levels: Vec<&String> = groups.iter().collect::<BTreeSet<_>>().into_iter().collect();
    let g = levels.len();
    let c = covariates.len();
    if g < 2 {
        return Err(AnalysisError::TooFewGroups(g));
    }
    if n <= g + c + 1 {
        return Err(AnalysisError::TooFewObservations { n, needed: g + c + 2 });
    }

    let mut names = vec!["intercept".to_string()];
    names.extend((0..c).map(|i| format!("covariate[{i}]")));
    let reduced_cols = names.len();
    names.extend(levels[1..].iter().map(|l| format!("group[{l}]")));

    let full = DMatrix::from_fn(n, names.len(), |i, j| {
        if j == 0 {
            1.0
        } else if j < reduced_cols {
            covariates[j - 1][i]
        } else {
            f64::from(groups[i] == *levels[j - reduced_cols + 1])
        }
    });
    let reduced = full.columns(0, reduced_cols).into_owned();
    let y = DVector::from_column_slice(response);

    let rss_full = least_squares_rss(&full, &y, &names)?;
    let rss_reduced = least_squares_rss(&reduced, &y, &names[..reduced_cols])?;
    let df_between = g - 1;
    let df_resid = n - g - c;

    let mean = response.iter().sum::<f64>() / n as f64;
    let tss: f64 = response.iter().map(|v| (v - mean).powi(2)).sum();
    let tiny = 1e-20 * tss;
    let between = (rss_reduced - rss_full).max(0.0);
    let (f, p_value, saturated) = if !(tss > 0.0) || between <= tiny {
        (0.0, 1.0, false)
    } else if rss_full <= tiny {
        (f64::INFINITY, 0.0, true)
    } else {
        let f = (between / df_between as f64) / (rss_full / df_resid as f64);
        (f, f_sf(f, df_between as f64, df_resid as f64), false)
    };
    Ok(AncovaResult { n, groups: g, covariates: c, f, p_value, df_between, df_resid, rss_full, rss_reduced, saturated })
}

/// JSON has no infinity; a saturated F is written as null and read back as +∞.
mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn identical_groups_give_zero_f() {
        let y = vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0];
        let g = labels(&["a", "a", "a", "b", "b", "b"]);
        let x = vec![vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]];
        let r = ancova(&y, &g, &x).unwrap();
        assert_eq!((r.f, r.p_value, r.saturated), (0.0, 1.0, false));
    }

    #[test]
    fn separated_groups_saturate() {
        let y = vec![1.0, 1.0, 1.0, 5.0, 5.0, 5.0];
        let g = labels(&["a", "a", "a", "b", "b", "b"]);
        let r = ancova(&y, &g, &[vec![0.3, 0.1, 0.2, 0.5, 0.4, 0.9]]).unwrap();
        assert!(r.saturated && r.f.is_infinite() && r.p_value == 0.0);
    }

    #[test]
    fn collinear_covariate_is_named() {
        let y = vec![1.0, 2.0, 0.5, 3.0, 2.5, 1.0];
        let g = labels(&["a", "a", "a", "b", "b", "b"]);
        let x = vec![vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![2.0, 4.0, 6.0, 8.0, 10.0, 12.0]];
        match ancova(&y, &g, &x) {
            Err(AnalysisError::RankDeficient(cols)) => assert_eq!(cols, vec!["covariate[1]".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn preconditions() {
        let g = labels(&["a", "a", "a"]);
        assert!(matches!(ancova(&[1.0, 2.0, 3.0], &g, &[]), Err(AnalysisError::TooFewGroups(1))));
        let g = labels(&["a", "b", "a", "b"]);
        assert!(matches!(
            ancova(&[1.0, 2.0, 3.0, 4.0], &g, &[vec![1.0, 0.0, 2.0, 1.0]]),
            Err(AnalysisError::TooFewObservations { .. })
        ));
    }
}
