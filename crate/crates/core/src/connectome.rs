//! Signed functional connectivity and the four Laplacian spatial priors.
//!
//! The pipeline is
//!
//! ```text
//! X (N x T) --pearson--> R (N x N) --zero diag, split--> A_pos, A_neg
//!   A_hat = D^-1/2 A D^-1/2
//!   priors = [I + A_hat_pos, I - A_hat_pos, I + A_hat_neg, I - A_hat_neg]
//! ```
//!
//! `I + A_hat` is a first-order low-pass graph filter and `I - A_hat` the
//! matching high-pass filter; both have spectra inside `[0, 2]` because the
//! eigenvalues of `A_hat` lie in `[-1, 1]`. Isolated nodes (degree zero) get
//! zero rows and columns in `A_hat`, so they only see the identity term.
//!
//! All math here is `f64`.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{LuminaError, Result};

pub type Matrix = Array2<f64>;

/// Tolerance used when validating symmetry of incoming matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Slack allowed around `[0, 2]` when checking prior spectra.
pub const SPECTRUM_TOL: f64 = 1e-8;
/// Largest N accepted by [`spectrum_report`] (dense eigendecomposition).
pub const SPECTRUM_MAX_N: usize = 512;

/// ROI time series, N rows (ROIs) by T columns (time points).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    values: Matrix,
    roi_names: Option<Vec<String>>,
}

impl TimeSeries {
    pub fn new(values: Matrix, roi_names: Option<Vec<String>>) -> Result<Self> {
        let (n, t) = values.dim();
        if n < 2 {
            return Err(LuminaError::InvalidInput(format!("need at least 2 ROIs, got {n}")));
        }
        if t < 3 {
            return Err(LuminaError::InvalidInput(format!(
                "need at least 3 time points, got {t}"
            )));
        }
        if let Some(names) = &roi_names {
            if names.len() != n {
                return Err(LuminaError::InvalidInput(format!(
                    "{} ROI names for {n} rows",
                    names.len()
                )));
            }
        }
        check_finite(values.view(), "time series")?;
        for (u, row) in values.axis_iter(Axis(0)).enumerate() {
            let first = row[0];
            if row.iter().all(|&x| x == first) {
                return Err(LuminaError::ZeroVarianceRow(u));
            }
        }
        Ok(Self { values, roi_names })
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn roi_names(&self) -> Option<&[String]> {
        self.roi_names.as_deref()
    }

    pub fn n_rois(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_timepoints(&self) -> usize {
        self.values.ncols()
    }
}

/// Pearson correlation matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityMatrix {
    r: Matrix,
}

impl ConnectivityMatrix {
    /// Wrap an existing matrix after checking shape, finiteness, symmetry and range.
    pub fn new(r: Matrix) -> Result<Self> {
        let (n, m) = r.dim();
        if n != m || n < 2 {
            return Err(LuminaError::ShapeMismatch {
                op: "connectivity",
                left: vec![n, m],
                right: vec![n, n],
            });
        }
        check_finite(r.view(), "connectivity matrix")?;
        for u in 0..n {
            for v in u..n {
                let (a, b) = (r[[u, v]], r[[v, u]]);
                if (a - b).abs() > SYMMETRY_TOL {
                    return Err(LuminaError::InvalidInput(format!(
                        "connectivity not symmetric at ({u},{v}): {a} vs {b}"
                    )));
                }
                if a.abs() > 1.0 + SYMMETRY_TOL {
                    return Err(LuminaError::InvalidInput(format!(
                        "correlation {a} at ({u},{v}) outside [-1, 1]"
                    )));
                }
            }
        }
        Ok(Self { r })
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.r
    }

    pub fn into_matrix(self) -> Matrix {
        self.r
    }

    pub fn n_rois(&self) -> usize {
        self.r.nrows()
    }
}

/// Positive and negative parts of the diagonal-zeroed connectivity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedAdjacency {
    pub a_pos: Matrix,
    pub a_neg: Matrix,
}

/// The four spatial priors in the fixed order
/// `[pos-smooth, pos-diff, neg-smooth, neg-diff]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadLaplacians {
    pub l: [Matrix; 4],
}

impl QuadLaplacians {
    pub const NAMES: [&'static str; 4] = ["pos_smooth", "pos_diff", "neg_smooth", "neg_diff"];

    pub fn pos_smooth(&self) -> &Matrix {
        &self.l[0]
    }
    pub fn pos_diff(&self) -> &Matrix {
        &self.l[1]
    }
    pub fn neg_smooth(&self) -> &Matrix {
        &self.l[2]
    }
    pub fn neg_diff(&self) -> &Matrix {
        &self.l[3]
    }

    pub fn n_rois(&self) -> usize {
        self.l[0].nrows()
    }
}

fn check_finite(m: ArrayView2<f64>, what: &str) -> Result<()> {
    if let Some(((i, j), x)) = m.indexed_iter().find(|(_, x)| !x.is_finite()) {
        return Err(LuminaError::NonFiniteInput(format!("{what} has {x} at ({i},{j})")));
    }
    Ok(())
}

/// Pearson correlation between every pair of rows.
///
/// The upper triangle is computed and mirrored so the result is exactly
/// symmetric; the diagonal is set to exactly 1.
pub fn pearson_connectivity(ts: &TimeSeries) -> Result<ConnectivityMatrix> {
    let x = ts.values();
    check_finite(x.view(), "time series")?;
    let (n, t) = x.dim();
    let mut centered = x.clone();
    let mut norms = Array1::<f64>::zeros(n);
    for (u, mut row) in centered.axis_iter_mut(Axis(0)).enumerate() {
        let mean = row.sum() / t as f64;
        row.mapv_inplace(|v| v - mean);
        let ss = row.dot(&row);
        if ss == 0.0 {
            return Err(LuminaError::ZeroVarianceRow(u));
        }
        norms[u] = ss.sqrt();
    }
    let mut r = Matrix::zeros((n, n));
    for u in 0..n {
        r[[u, u]] = 1.0;
        let cu = centered.row(u);
        for v in (u + 1)..n {
            let val = cu.dot(&centered.row(v)) / (norms[u] * norms[v]);
            r[[u, v]] = val;
            r[[v, u]] = val;
        }
    }
    Ok(ConnectivityMatrix { r })
}

/// Zero the diagonal, then route positive entries to `a_pos` and the
/// magnitudes of negative entries to `a_neg`. No thresholding beyond the
/// sign test.
pub fn bipolar_split(c: &ConnectivityMatrix) -> SignedAdjacency {
    let n = c.n_rois();
    let mut a_pos = Matrix::zeros((n, n));
    let mut a_neg = Matrix::zeros((n, n));
    for ((u, v), &x) in c.as_matrix().indexed_iter() {
        if u == v {
            continue;
        }
        if x > 0.0 {
            a_pos[[u, v]] = x;
        } else if x < 0.0 {
            a_neg[[u, v]] = -x;
        }
    }
    SignedAdjacency { a_pos, a_neg }
}

/// `|R|` with a zeroed diagonal, the unsigned adjacency used by the
/// conventional GCN path and by the ablations that drop the sign split.
pub fn absolute_adjacency(c: &ConnectivityMatrix) -> Matrix {
    let mut a = c.as_matrix().mapv(f64::abs);
    a.diag_mut().fill(0.0);
    a
}

/// `D^{-1/2} A D^{-1/2}` with `D^{-1/2}` defined as 0 for degree-0 nodes.
pub fn normalize_adjacency(a: &Matrix) -> Matrix {
    debug_assert!(a.is_square());
    debug_assert!(a.iter().all(|&x| x >= 0.0));
    let inv_sqrt = a.sum_axis(Axis(1)).mapv(inv_sqrt_or_zero);
    let mut out = a.clone();
    for ((u, v), x) in out.indexed_iter_mut() {
        *x *= inv_sqrt[u] * inv_sqrt[v];
    }
    out
}

pub(crate) fn inv_sqrt_or_zero(d: f64) -> f64 {
    if d > 0.0 {
        1.0 / d.sqrt()
    } else {
        0.0
    }
}

/// `(I + A_hat, I - A_hat)` for one nonnegative adjacency.
pub fn smooth_and_diff(a: &Matrix) -> (Matrix, Matrix) {
    let a_hat = normalize_adjacency(a);
    let eye = Matrix::eye(a.nrows());
    (&eye + &a_hat, &eye - &a_hat)
}

pub fn build_quad_laplacians(s: &SignedAdjacency) -> QuadLaplacians {
    let (pos_smooth, pos_diff) = smooth_and_diff(&s.a_pos);
    let (neg_smooth, neg_diff) = smooth_and_diff(&s.a_neg);
    QuadLaplacians {
        l: [pos_smooth, pos_diff, neg_smooth, neg_diff],
    }
}

/// Time series to `(R, priors)` in one call.
pub fn prepare(ts: &TimeSeries) -> Result<(ConnectivityMatrix, QuadLaplacians)> {
    let r = pearson_connectivity(ts)?;
    let quad = build_quad_laplacians(&bipolar_split(&r));
    Ok((r, quad))
}

/// Sorted eigenvalues of each prior.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    pub eigenvalues: [Vec<f64>; 4],
}

impl SpectrumReport {
    /// Plain-text frequency table: one line per prior.
    pub fn to_table(&self) -> String {
        let mut out = String::from("prior\tmin\tmax\teigenvalues\n");
        for (name, ev) in QuadLaplacians::NAMES.iter().zip(&self.eigenvalues) {
            let list: Vec<String> = ev.iter().map(|&x| fixed6(x)).collect();
            out.push_str(&format!(
                "{name}\t{}\t{}\t{}\n",
                fixed6(ev.first().copied().unwrap_or(f64::NAN)),
                fixed6(ev.last().copied().unwrap_or(f64::NAN)),
                list.join(",")
            ));
        }
        out
    }
}

/// Six decimals without a `-0.000000` for round-off below zero.
fn fixed6(x: f64) -> String {
    let s = format!("{x:.6}");
    match s.strip_prefix('-') {
        Some(rest) if rest.bytes().all(|b| b == b'0' || b == b'.') => rest.to_owned(),
        _ => s,
    }
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn symmetric_eigenvalues(m: &Matrix) -> Result<Vec<f64>> {
    let n = m.nrows();
    let dm = DMatrix::from_fn(n, n, |i, j| m[[i, j]]);
    let eig = dm
        .try_symmetric_eigen(1e-14, 10_000)
        .ok_or_else(|| LuminaError::ConvergenceFailure(format!("{n}x{n} symmetric eigenproblem")))?;
    let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

pub fn spectrum_report(q: &QuadLaplacians) -> Result<SpectrumReport> {
    let n = q.n_rois();
    if n > SPECTRUM_MAX_N {
        return Err(LuminaError::InvalidInput(format!(
            "spectrum report limited to N <= {SPECTRUM_MAX_N}, got {n}"
        )));
    }
    let mut eigenvalues: [Vec<f64>; 4] = Default::default();
    for (k, prior) in q.l.iter().enumerate() {
        let ev = symmetric_eigenvalues(prior)?;
        if let Some(&bad) = ev
            .iter()
            .find(|&&x| !(-SPECTRUM_TOL..=2.0 + SPECTRUM_TOL).contains(&x))
        {
            return Err(LuminaError::SpectralRange { prior: k, value: bad });
        }
        eigenvalues[k] = ev;
    }
    Ok(SpectrumReport { eigenvalues })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ts(rows: Matrix) -> TimeSeries {
        TimeSeries::new(rows, None).unwrap()
    }

    fn conn(r: Matrix) -> ConnectivityMatrix {
        ConnectivityMatrix::new(r).unwrap()
    }

    /// Textbook formula applied to a single pair, written independently of
    /// the centered-dot-product route above.
    fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
        let t = x.len() as f64;
        let mx = x.iter().sum::<f64>() / t;
        let my = y.iter().sum::<f64>() / t;
        let mut num = 0.0;
        let mut sx = 0.0;
        let mut sy = 0.0;
        for i in 0..x.len() {
            num += (x[i] - mx) * (y[i] - my);
            sx += (x[i] - mx).powi(2);
            sy += (y[i] - my).powi(2);
        }
        num / (sx.sqrt() * sy.sqrt())
    }

    #[test]
    fn perfect_linear_correlation() {
        let r = pearson_connectivity(&ts(array![[1., 2., 3., 4.], [2., 4., 6., 8.]])).unwrap();
        assert!((r.as_matrix()[[0, 1]] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_anticorrelation() {
        let r = pearson_connectivity(&ts(array![[1., 2., 3.], [3., 2., 1.]])).unwrap();
        assert!((r.as_matrix()[[0, 1]] + 1.0).abs() < 1e-15);
        assert_eq!(r.as_matrix()[[0, 0]], 1.0);
    }

    #[test]
    fn pseudorandom_matrix_matches_oracle() {
        // seed 20240611, 3 x 5 uniform(-1, 1)
        let mut rng = ChaCha8Rng::seed_from_u64(20240611);
        let x = Matrix::from_shape_fn((3, 5), |_| rng.random_range(-1.0..1.0));
        let r = pearson_connectivity(&ts(x.clone())).unwrap();
        for u in 0..3 {
            for v in 0..3 {
                let rows: Vec<Vec<f64>> = (0..3).map(|i| x.row(i).to_vec()).collect();
                let expect = if u == v { 1.0 } else { pearson_oracle(&rows[u], &rows[v]) };
                assert!((r.as_matrix()[[u, v]] - expect).abs() < 1e-14, "({u},{v})");
            }
        }
    }

    #[test]
    fn constant_row_rejected() {
        let err = TimeSeries::new(array![[1., 2., 3.], [5., 5., 5.]], None).unwrap_err();
        assert!(matches!(err, LuminaError::ZeroVarianceRow(1)));
    }

    #[test]
    fn non_finite_rejected() {
        let err = TimeSeries::new(array![[1., f64::NAN, 3.], [1., 2., 5.]], None).unwrap_err();
        assert!(matches!(err, LuminaError::NonFiniteInput(_)));
    }

    #[test]
    fn too_small_rejected() {
        assert!(TimeSeries::new(array![[1., 2., 3.]], None).is_err());
        assert!(TimeSeries::new(array![[1., 2.], [2., 1.]], None).is_err());
    }

    #[test]
    fn sign_routing() {
        let c = conn(array![[1.0, 0.5, -0.3], [0.5, 1.0, 0.0], [-0.3, 0.0, 1.0]]);
        let s = bipolar_split(&c);
        assert_eq!(s.a_pos, array![[0.0, 0.5, 0.0], [0.5, 0.0, 0.0], [0.0, 0.0, 0.0]]);
        assert_eq!(s.a_neg, array![[0.0, 0.0, 0.3], [0.0, 0.0, 0.0], [0.3, 0.0, 0.0]]);
    }

    #[test]
    fn nonnegative_input_gives_empty_negative_part() {
        let c = conn(array![[1.0, 0.2, 0.7], [0.2, 1.0, 0.1], [0.7, 0.1, 1.0]]);
        let s = bipolar_split(&c);
        assert!(s.a_neg.iter().all(|&x| x == 0.0));
        let q = build_quad_laplacians(&s);
        assert_eq!(q.neg_smooth(), &Matrix::eye(3));
        assert_eq!(q.neg_diff(), &Matrix::eye(3));
    }

    #[test]
    fn unit_degree_pair_normalizes_to_itself() {
        let a = array![[0.0, 1.0], [1.0, 0.0]];
        assert_eq!(normalize_adjacency(&a), a);
    }

    #[test]
    fn path_graph_normalization() {
        let a = array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        let a_hat = normalize_adjacency(&a);
        // degrees (1, 2, 1): 1 / sqrt(1 * 2)
        assert!((a_hat[[0, 1]] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((a_hat[[1, 2]] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn isolated_node_has_zero_row_and_column() {
        let a = array![[0.0, 2.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        let a_hat = normalize_adjacency(&a);
        assert!(a_hat.row(2).iter().all(|&x| x == 0.0));
        assert!(a_hat.column(2).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn diff_filter_annihilates_degree_vector() {
        let c = conn(array![
            [1.0, 0.4, 0.3, -0.2],
            [0.4, 1.0, 0.6, 0.1],
            [0.3, 0.6, 1.0, 0.5],
            [-0.2, 0.1, 0.5, 1.0]
        ]);
        let s = bipolar_split(&c);
        let q = build_quad_laplacians(&s);
        let v = s.a_pos.sum_axis(Axis(1)).mapv(f64::sqrt);
        let lv = q.pos_diff().dot(&v);
        assert!(lv.iter().all(|x| x.abs() < 1e-12));
        let sv = q.pos_smooth().dot(&v);
        for i in 0..4 {
            assert!((sv[i] - 2.0 * v[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn two_node_spectrum() {
        let c = conn(array![[1.0, 0.8], [0.8, 1.0]]);
        let rep = spectrum_report(&build_quad_laplacians(&bipolar_split(&c))).unwrap();
        for k in [0, 1] {
            assert!((rep.eigenvalues[k][0] - 0.0).abs() < 1e-12);
            assert!((rep.eigenvalues[k][1] - 2.0).abs() < 1e-12);
        }
        // negative part empty: identity spectra
        assert_eq!(rep.eigenvalues[2], vec![1.0, 1.0]);
    }

    #[test]
    fn empty_graph_spectrum_is_all_ones() {
        let s = SignedAdjacency {
            a_pos: Matrix::zeros((3, 3)),
            a_neg: Matrix::zeros((3, 3)),
        };
        let rep = spectrum_report(&build_quad_laplacians(&s)).unwrap();
        for ev in &rep.eigenvalues {
            assert!(ev.iter().all(|&x| x == 1.0));
        }
    }

    #[test]
    fn four_cycle_diff_spectrum() {
        // cycle-graph oracle: eigenvalues of A_hat for C_n are cos(2 pi j / n)
        let mut a = Matrix::zeros((4, 4));
        for i in 0..4 {
            a[[i, (i + 1) % 4]] = 1.0;
            a[[(i + 1) % 4, i]] = 1.0;
        }
        let (_, diff) = smooth_and_diff(&a);
        let ev = symmetric_eigenvalues(&diff).unwrap();
        let mut expect: Vec<f64> = (0..4)
            .map(|j| 1.0 - (2.0 * std::f64::consts::PI * j as f64 / 4.0).cos())
            .collect();
        expect.sort_by(f64::total_cmp);
        for (a, b) in ev.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{ev:?} vs {expect:?}");
        }
        assert!((expect[1] - 1.0).abs() < 1e-12 && (expect[3] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn spectrum_rejects_large_n() {
        let s = SignedAdjacency {
            a_pos: Matrix::zeros((513, 513)),
            a_neg: Matrix::zeros((513, 513)),
        };
        assert!(spectrum_report(&build_quad_laplacians(&s)).is_err());
    }

    #[test]
    fn asymmetric_connectivity_rejected() {
        assert!(ConnectivityMatrix::new(array![[1.0, 0.5], [0.4, 1.0]]).is_err());
        assert!(ConnectivityMatrix::new(array![[1.0, 1.5], [1.5, 1.0]]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

        fn random_ts(n: usize, t: usize, seed: u64) -> TimeSeries {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            TimeSeries::new(
                Matrix::from_shape_fn((n, t), |_| rng.random_range(-1.0..1.0)),
                None,
            )
            .unwrap()
        }

        proptest! {
            #[test]
            fn pearson_symmetric_and_bounded(n in 2usize..12, t in 3usize..30, seed in any::<u64>()) {
                let r = pearson_connectivity(&random_ts(n, t, seed)).unwrap();
                let r = r.as_matrix();
                for u in 0..n {
                    prop_assert_eq!(r[[u, u]], 1.0);
                    for v in 0..n {
                        prop_assert!((r[[u, v]] - r[[v, u]]).abs() <= 1e-12);
                        prop_assert!(r[[u, v]].abs() <= 1.0 + 1e-12);
                    }
                }
            }

            #[test]
            fn split_reconstructs_exactly(n in 2usize..12, seed in any::<u64>()) {
                let r = pearson_connectivity(&random_ts(n, 10, seed)).unwrap();
                let s = bipolar_split(&r);
                for u in 0..n {
                    for v in 0..n {
                        let expect = if u == v { 0.0 } else { r.as_matrix()[[u, v]] };
                        prop_assert_eq!(s.a_pos[[u, v]] - s.a_neg[[u, v]], expect);
                        prop_assert_eq!(s.a_pos[[u, v]] * s.a_neg[[u, v]], 0.0);
                        prop_assert!(s.a_pos[[u, v]] >= 0.0 && s.a_neg[[u, v]] >= 0.0);
                    }
                }
            }

            #[test]
            fn filters_are_complementary(n in 2usize..12, seed in any::<u64>()) {
                let r = pearson_connectivity(&random_ts(n, 10, seed)).unwrap();
                let q = build_quad_laplacians(&bipolar_split(&r));
                let two_i = Matrix::eye(n) * 2.0;
                for (a, b) in [(0, 1), (2, 3)] {
                    let sum = &q.l[a] + &q.l[b];
                    prop_assert!(sum.iter().zip(two_i.iter()).all(|(x, y)| (x - y).abs() <= 1e-12));
                }
            }

            #[test]
            fn permutation_equivariance(n in 2usize..10, seed in any::<u64>()) {
                use rand::seq::SliceRandom;
                let series = random_ts(n, 12, seed);
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xABCD));
                let permuted = TimeSeries::new(
                    Matrix::from_shape_fn((n, 12), |(i, t)| series.values()[[perm[i], t]]),
                    None,
                ).unwrap();
                let (_, q) = prepare(&series).unwrap();
                let (_, qp) = prepare(&permuted).unwrap();
                for k in 0..4 {
                    for i in 0..n {
                        for j in 0..n {
                            prop_assert!((qp.l[k][[i, j]] - q.l[k][[perm[i], perm[j]]]).abs() <= 1e-12);
                        }
                    }
                }
            }
        }
    }
}
