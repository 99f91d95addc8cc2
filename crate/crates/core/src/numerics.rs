//! Dense `f64` linear algebra with paired forward/backward operations.
//!
//! Vectors are plain `Vec<f64>` / `&[f64]`. Every differentiable operation has
//! a matching `*_backward` that maps an upstream gradient to gradients of its
//! inputs; the model composes these by hand in reverse order.

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "Matrix::from_vec",
                detail: format!("{} values for a {rows}x{cols} matrix", data.len()),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "matrix entry ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape {
                op: "Matrix::from_rows",
                detail: "ragged rows".into(),
            });
        }
        Matrix::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `W x` without shape checks; callers guarantee `x.len() == cols`.
    pub(crate) fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.data
            .chunks_exact(self.cols.max(1))
            .take(self.rows)
            .map(|row| dot_unchecked(row, x))
            .collect()
    }

    /// `out += W x`.
    pub(crate) fn mul_vec_add(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o += dot_unchecked(self.row(r), x);
        }
    }

    /// `Wᵀ y`.
    pub(crate) fn mul_vec_t(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        self.mul_vec_t_add(y, &mut out);
        out
    }

    /// `out += Wᵀ y`.
    pub(crate) fn mul_vec_t_add(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &yr) in y.iter().enumerate() {
            if yr != 0.0 {
                axpy(yr, self.row(r), out);
            }
        }
    }

    /// `self += scale · a bᵀ`.
    pub(crate) fn add_outer(&mut self, scale: f64, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (r, &ar) in a.iter().enumerate() {
            let s = scale * ar;
            if s != 0.0 {
                axpy(s, b, self.row_mut(r));
            }
        }
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, scale: f64, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        axpy(scale, &other.data, &mut self.data);
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }
}

/// `y += a x`.
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub(crate) fn dot_unchecked(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradients of `y = W x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGrad {
    pub weight: Matrix,
    pub input: Vec<f64>,
    pub bias: Vec<f64>,
}

/// `y = W x (+ b)`.
pub fn linear(w: &Matrix, x: &[f64], b: Option<&[f64]>) -> Result<Vec<f64>> {
    if x.len() != w.cols {
        return Err(Error::Shape {
            op: "linear",
            detail: format!("W is {}x{}, x has length {}", w.rows, w.cols, x.len()),
        });
    }
    let mut y = w.mul_vec(x);
    if let Some(b) = b {
        if b.len() != w.rows {
            return Err(Error::Shape {
                op: "linear",
                detail: format!("W is {}x{}, b has length {}", w.rows, w.cols, b.len()),
            });
        }
        axpy(1.0, b, &mut y);
    }
    Ok(y)
}

pub fn linear_backward(w: &Matrix, x: &[f64], upstream: &[f64]) -> Result<LinearGrad> {
    if x.len() != w.cols || upstream.len() != w.rows {
        return Err(Error::Shape {
            op: "linear_backward",
            detail: format!(
                "W is {}x{}, x has length {}, upstream has length {}",
                w.rows,
                w.cols,
                x.len(),
                upstream.len()
            ),
        });
    }
    let mut weight = Matrix::zeros(w.rows, w.cols);
    weight.add_outer(1.0, upstream, x);
    Ok(LinearGrad {
        weight,
        input: w.mul_vec_t(upstream),
        bias: upstream.to_vec(),
    })
}

pub fn leaky_relu(x: &[f64], slope: f64) -> Vec<f64> {
    x.iter().map(|&v| leaky_relu_scalar(v, slope)).collect()
}

#[inline]
pub(crate) fn leaky_relu_scalar(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        slope * v
    }
}

/// Gradient through `leaky_relu`, using the sign of the forward input.
/// The subgradient at exactly zero is `slope`.
pub fn leaky_relu_backward(pre: &[f64], upstream: &[f64], slope: f64) -> Vec<f64> {
    pre.iter()
        .zip(upstream)
        .map(|(&p, &g)| if p > 0.0 { g } else { slope * g })
        .collect()
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("softmax"));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Gradient of the softmax inputs given its output `probs` and upstream gradient.
pub fn softmax_backward(probs: &[f64], upstream: &[f64]) -> Vec<f64> {
    let weighted: f64 = probs.iter().zip(upstream).map(|(p, g)| p * g).sum();
    probs
        .iter()
        .zip(upstream)
        .map(|(p, g)| p * (g - weighted))
        .collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_backward(x: f64, upstream: f64) -> f64 {
    let s = sigmoid(x);
    upstream * s * (1.0 - s)
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            op: "dot",
            detail: format!("lengths {} and {}", a.len(), b.len()),
        });
    }
    Ok(dot_unchecked(a, b))
}

/// Returns `(∂/∂a, ∂/∂b)` of `upstream · aᵀb`.
pub fn dot_backward(a: &[f64], b: &[f64], upstream: f64) -> (Vec<f64>, Vec<f64>) {
    (
        b.iter().map(|v| upstream * v).collect(),
        a.iter().map(|v| upstream * v).collect(),
    )
}

pub fn sum(vectors: &[&[f64]], dim: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; dim];
    for v in vectors {
        if v.len() != dim {
            return Err(Error::Shape {
                op: "sum",
                detail: format!("expected length {dim}, got {}", v.len()),
            });
        }
        axpy(1.0, v, &mut out);
    }
    Ok(out)
}

/// Each summand receives the upstream gradient unchanged.
pub fn sum_backward(upstream: &[f64], count: usize) -> Vec<Vec<f64>> {
    vec![upstream.to_vec(); count]
}

/// Mean of `vectors`; the zero vector of length `dim` when empty.
pub fn mean(vectors: &[&[f64]], dim: usize) -> Result<Vec<f64>> {
    let mut out = sum(vectors, dim)?;
    if !vectors.is_empty() {
        let n = vectors.len() as f64;
        out.iter_mut().for_each(|x| *x /= n);
    }
    Ok(out)
}

pub fn mean_backward(upstream: &[f64], count: usize) -> Vec<Vec<f64>> {
    let n = count as f64;
    vec![upstream.iter().map(|g| g / n).collect(); count]
}

pub fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out
}

pub fn concat_backward(upstream: &[f64], first_len: usize) -> (Vec<f64>, Vec<f64>) {
    let (a, b) = upstream.split_at(first_len);
    (a.to_vec(), b.to_vec())
}

/// A flat view over a set of learnable coordinates.
pub trait ParamBundle: Clone {
    fn num_coords(&self) -> usize;
    fn coord(&self, index: usize) -> f64;
    fn set_coord(&mut self, index: usize, value: f64);
}

impl ParamBundle for f64 {
    fn num_coords(&self) -> usize {
        1
    }
    fn coord(&self, _index: usize) -> f64 {
        *self
    }
    fn set_coord(&mut self, _index: usize, value: f64) {
        *self = value;
    }
}

impl ParamBundle for Vec<f64> {
    fn num_coords(&self) -> usize {
        self.len()
    }
    fn coord(&self, index: usize) -> f64 {
        self[index]
    }
    fn set_coord(&mut self, index: usize, value: f64) {
        self[index] = value;
    }
}

impl ParamBundle for Matrix {
    fn num_coords(&self) -> usize {
        self.data.len()
    }
    fn coord(&self, index: usize) -> f64 {
        self.data[index]
    }
    fn set_coord(&mut self, index: usize, value: f64) {
        self.data[index] = value;
    }
}

/// Compares `analytic` against central differences of `f` at `params`.
///
/// Returns the maximum over coordinates of
/// `|analytic − numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn finite_difference_check<P, F>(f: F, params: &P, analytic: &P, eps: f64) -> Result<f64>
where
    P: ParamBundle,
    F: Fn(&P) -> f64,
{
    if params.num_coords() != analytic.num_coords() {
        return Err(Error::Shape {
            op: "finite_difference_check",
            detail: format!(
                "{} parameters, {} gradient entries",
                params.num_coords(),
                analytic.num_coords()
            ),
        });
    }
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for i in 0..params.num_coords() {
        let base = params.coord(i);
        probe.set_coord(i, base + eps);
        let plus = f(&probe);
        probe.set_coord(i, base - eps);
        let minus = f(&probe);
        probe.set_coord(i, base);
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective at coordinate {i} ± {eps}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic.coord(i);
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, random_vec(rng, r * c)).unwrap()
    }

    #[test]
    fn linear_identity_and_hand_values() {
        let y = linear(&Matrix::identity(2), &[3.0, -1.0], None).unwrap();
        assert_eq!(y, vec![3.0, -1.0]);

        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        let y = linear(&w, &[1.0, 1.0], Some(&[1.0, 0.0])).unwrap();
        assert_eq!(y, vec![4.0, 1.0]);
    }

    #[test]
    fn linear_rejects_bad_shapes() {
        let w = Matrix::zeros(2, 3);
        let err = linear(&w, &[1.0, 2.0], None).unwrap_err();
        assert!(err.to_string().contains("2x3"));
        assert!(linear(&w, &[1.0, 2.0, 3.0], Some(&[1.0])).is_err());
    }

    #[test]
    fn from_vec_rejects_nan() {
        assert!(Matrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::from_vec(1, 2, vec![1.0]).is_err());
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = random_matrix(&mut rng, 5, 7);
        let x = random_vec(&mut rng, 7);
        let b = random_vec(&mut rng, 5);
        let up = random_vec(&mut rng, 5);
        let grad = linear_backward(&w, &x, &up).unwrap();

        let loss = |w: &Matrix, x: &[f64], b: &[f64]| {
            dot_unchecked(&linear(w, x, Some(b)).unwrap(), &up)
        };
        let ew = finite_difference_check(|w: &Matrix| loss(w, &x, &b), &w, &grad.weight, 1e-5)
            .unwrap();
        let ex = finite_difference_check(|x: &Vec<f64>| loss(&w, x, &b), &x, &grad.input, 1e-5)
            .unwrap();
        let eb = finite_difference_check(|b: &Vec<f64>| loss(&w, &x, b), &b, &grad.bias, 1e-5)
            .unwrap();
        assert!(ew < 1e-7 && ex < 1e-7 && eb < 1e-7, "{ew} {ex} {eb}");
    }

    #[test]
    fn leaky_relu_values() {
        assert_eq!(leaky_relu(&[3.0, 0.0, -2.0], 0.01), vec![3.0, 0.0, -0.02]);
        let x = vec![-1.5, 0.0, 2.5];
        assert_eq!(leaky_relu(&x, 1.0), x);
        assert_eq!(leaky_relu_backward(&[0.0], &[2.0], 0.1), vec![0.2]);
    }

    #[test]
    fn leaky_relu_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = random_vec(&mut rng, 20)
            .into_iter()
            .filter(|v| v.abs() > 1e-3)
            .collect();
        let up = random_vec(&mut rng, x.len());
        let grad = leaky_relu_backward(&x, &up, 0.01);
        let f = |x: &Vec<f64>| dot_unchecked(&leaky_relu(x, 0.01), &up);
        let err = finite_difference_check(f, &x, &grad, 1e-5).unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn softmax_values() {
        for c in [-50.0, 0.0, 3.0, 700.0] {
            let p = softmax(&[c, c, c]).unwrap();
            for v in p {
                assert!((v - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        assert_eq!(softmax(&[4.2]).unwrap(), vec![1.0]);
        let p = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(softmax(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_vec(&mut rng, 6);
        let up = random_vec(&mut rng, 6);
        let p = softmax(&s).unwrap();
        let grad = softmax_backward(&p, &up);
        let f = |s: &Vec<f64>| dot_unchecked(&softmax(s).unwrap(), &up);
        assert!(finite_difference_check(f, &s, &grad, 1e-5).unwrap() < 1e-6);
    }

    #[test]
    fn small_ops() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert_eq!(dot(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 14.0);
        assert!(dot(&[1.0], &[1.0, 2.0]).is_err());
        assert_eq!(mean(&[&[2.0, 0.0], &[0.0, 2.0]], 2).unwrap(), vec![1.0, 1.0]);
        assert_eq!(mean(&[], 3).unwrap(), vec![0.0; 3]);
        assert_eq!(sum(&[&[2.0, 0.0], &[0.0, 2.0]], 2).unwrap(), vec![2.0, 2.0]);
        assert_eq!(concat(&[1.0], &[2.0, 3.0]), vec![1.0, 2.0, 3.0]);
        assert_eq!(
            concat_backward(&[1.0, 2.0, 3.0], 1),
            (vec![1.0], vec![2.0, 3.0])
        );
        assert_eq!(mean_backward(&[2.0], 2), vec![vec![1.0], vec![1.0]]);
        assert_eq!(sum_backward(&[2.0], 2), vec![vec![2.0], vec![2.0]]);
        assert_eq!(dot_backward(&[1.0], &[3.0], 2.0), (vec![6.0], vec![2.0]));
        assert!((softplus(-745.0) - 0.0).abs() < 1e-300);
        assert!((softplus(700.0) - 700.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_backward_matches_finite_difference() {
        let a = sigmoid_backward(0.7, 1.0);
        let err = finite_difference_check(|x: &f64| sigmoid(*x), &0.7, &a, 1e-5).unwrap();
        assert!(err < 1e-8);
    }

    #[test]
    fn finite_difference_on_simple_functions() {
        let err = finite_difference_check(|x: &f64| x * x, &3.0, &6.0, 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");

        let x = vec![0.5, -1.25, 2.0];
        let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let err =
            finite_difference_check(|x: &Vec<f64>| dot_unchecked(x, x), &x, &g, 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");

        let bad = finite_difference_check(|x: &f64| 1.0 / (x - 3.0), &3.0, &0.0, 1e-5);
        assert!(bad.is_ok() || matches!(bad, Err(Error::NonFinite(_))));
        assert!(matches!(
            finite_difference_check(|_: &f64| f64::NAN, &1.0, &0.0, 1e-5),
            Err(Error::NonFinite(_))
        ));
    }

    proptest::proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            scores in proptest::collection::vec(-30.0f64..30.0, 1..12),
            shift in -100.0f64..100.0,
        ) {
            let p = softmax(&scores).unwrap();
            let total: f64 = p.iter().sum();
            proptest::prop_assert!((total - 1.0).abs() < 1e-12);
            proptest::prop_assert!(p.iter().all(|&v| v > 0.0));
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let q = softmax(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                proptest::prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn linear_is_additive(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random_matrix(&mut rng, 4, 3);
            let b = random_vec(&mut rng, 4);
            let x = random_vec(&mut rng, 3);
            let y = random_vec(&mut rng, 3);
            let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
            let lhs = linear(&w, &xy, Some(&b)).unwrap();
            let fx = linear(&w, &x, Some(&b)).unwrap();
            let fy = linear(&w, &y, Some(&b)).unwrap();
            for i in 0..4 {
                proptest::prop_assert!((lhs[i] - (fx[i] + fy[i] - b[i])).abs() < 1e-12);
            }
        }
    }
}
