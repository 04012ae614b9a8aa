//! Fixed random reservoirs and the leaky-integrator state update.
//!
//! A reservoir is defined by a dense input matrix `w_in` (`n_x × (1+n_u)`),
//! a sparse recurrent matrix `w` (`n_x × n_x`) rescaled to a target spectral
//! radius, and a leaking rate. Running it over an input sequence yields
//! expanded states `[1; u(n); x(n)]` which are the regressors of the readout.

use nalgebra::{DMatrix, Schur};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Matrices up to this size get their spectral radius from a dense Schur decomposition.
pub const DENSE_EIGEN_MAX: usize = 64;
const POWER_MAX_ITERS: usize = 1000;
const POWER_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReservoirError {
    #[error("invalid reservoir parameter: {0}")]
    InvalidParams(String),
    #[error("dimension mismatch: expected {what} of length {expected}, got {actual}")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("spectral radius estimation failed: {0}")]
    SpectralRadius(String),
    #[error("input sequence is empty")]
    EmptyInput,
}

/// Hyper-parameters of a reservoir.
#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirParams {
    pub n_x: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub leaking_rate: f64,
    pub spectral_radius: f64,
    pub input_scaling: f64,
    /// Fraction of nonzero entries in the recurrent matrix.
    pub density: f64,
    pub seed: u64,
}

impl ReservoirParams {
    /// Parameters with the library defaults: `α = 1`, `ρ = 0.9`, input
    /// scaling 1 and about ten recurrent connections per neuron.
    pub fn new(n_x: usize, n_u: usize, n_y: usize) -> Self {
        Self {
            n_x,
            n_u,
            n_y,
            leaking_rate: 1.0,
            spectral_radius: 0.9,
            input_scaling: 1.0,
            density: default_density(n_x),
            seed: 0,
        }
    }

    pub fn with_leaking_rate(mut self, alpha: f64) -> Self {
        self.leaking_rate = alpha;
        self
    }

    pub fn with_spectral_radius(mut self, rho: f64) -> Self {
        self.spectral_radius = rho;
        self
    }

    pub fn with_input_scaling(mut self, scaling: f64) -> Self {
        self.input_scaling = scaling;
        self
    }

    pub fn with_density(mut self, density: f64) -> Self {
        self.density = density;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Size of the expanded state `1 + n_u + n_x`.
    pub fn n_r(&self) -> usize {
        1 + self.n_u + self.n_x
    }

    pub fn validate(&self) -> Result<(), ReservoirError> {
        let bad = |msg: String| Err(ReservoirError::InvalidParams(msg));
        if self.n_x == 0 || self.n_u == 0 || self.n_y == 0 {
            return bad(format!(
                "dimensions must be positive (n_x={}, n_u={}, n_y={})",
                self.n_x, self.n_u, self.n_y
            ));
        }
        if !(self.leaking_rate > 0.0 && self.leaking_rate <= 1.0) {
            return bad(format!("leaking rate {} not in (0, 1]", self.leaking_rate));
        }
        if !(self.spectral_radius > 0.0 && self.spectral_radius.is_finite()) {
            return bad(format!("spectral radius {} must be positive", self.spectral_radius));
        }
        if !(self.input_scaling > 0.0 && self.input_scaling.is_finite()) {
            return bad(format!("input scaling {} must be positive", self.input_scaling));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return bad(format!("density {} not in (0, 1]", self.density));
        }
        Ok(())
    }
}

/// About ten nonzeros per row, capped at a fully dense matrix.
pub fn default_density(n_x: usize) -> f64 {
    if n_x == 0 {
        1.0
    } else {
        (10.0 / n_x as f64).min(1.0)
    }
}

/// Square matrix in compressed sparse row layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets sorted by row then column.
    pub fn from_sorted_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        for &(r, c, v) in triplets {
            debug_assert!(r < n && c < n);
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "sparse matrix must be square");
        let n = m.nrows();
        let mut triplets = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if m[(i, j)] != 0.0 {
                    triplets.push((i, j, m[(i, j)]));
                }
            }
        }
        Self::from_sorted_triplets(n, &triplets)
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `out = self · x`
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.n) {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *o = acc;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.col_idx[k])] = self.values[k];
            }
        }
        m
    }
}

/// Largest eigenvalue modulus of `w`.
///
/// Small matrices use a dense Schur decomposition. Larger ones use power
/// iteration with a two-dimensional Rayleigh-Ritz step, which also converges
/// when the dominant eigenvalues form a complex-conjugate pair; if it does
/// not settle within the iteration cap the dense path is used instead.
pub fn spectral_radius(w: &SparseMatrix) -> Result<f64, ReservoirError> {
    if w.nnz() == 0 {
        return Err(ReservoirError::SpectralRadius(
            "recurrent matrix has no nonzero entries".into(),
        ));
    }
    let rho = if w.size() <= DENSE_EIGEN_MAX {
        dense_spectral_radius(&w.to_dense())?
    } else {
        match power_spectral_radius(w) {
            Some(rho) => rho,
            None => {
                log::warn!(
                    "power iteration did not converge for n_x={}, using dense eigensolver",
                    w.size()
                );
                dense_spectral_radius(&w.to_dense())?
            }
        }
    };
    if !(rho.is_finite() && rho > 0.0) {
        return Err(ReservoirError::SpectralRadius(format!(
            "estimated spectral radius is {rho}; cannot rescale"
        )));
    }
    Ok(rho)
}

fn dense_spectral_radius(m: &DMatrix<f64>) -> Result<f64, ReservoirError> {
    let schur = Schur::try_new(m.clone(), f64::EPSILON, 10_000).ok_or_else(|| {
        ReservoirError::SpectralRadius("dense Schur decomposition did not converge".into())
    })?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn power_spectral_radius(w: &SparseMatrix) -> Option<f64> {
    let n = w.size();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0f_5eed);
    let mut q: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let qn = norm(&q);
    q.iter_mut().for_each(|v| *v /= qn);

    let mut w1 = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut q1 = vec![0.0; n];
    let mut prev: Option<f64> = None;
    let mut settled = 0;
    for _ in 0..POWER_MAX_ITERS {
        w.mul_vec_into(&q, &mut w1);
        let wn = norm(&w1);
        if wn == 0.0 {
            // Krylov sequence died out: only a nilpotent part is visible.
            return Some(0.0);
        }
        let c = dot(&q, &w1);
        for i in 0..n {
            q1[i] = w1[i] - c * q[i];
        }
        let rn = norm(&q1);
        let est = if rn <= 1e-10 * wn {
            c.abs()
        } else {
            q1.iter_mut().for_each(|v| *v /= rn);
            w.mul_vec_into(&q1, &mut w2);
            let h01 = dot(&q, &w2);
            let h11 = dot(&q1, &w2);
            // Ritz values of [[c, h01], [rn, h11]].
            let tr = c + h11;
            let det = c * h11 - h01 * rn;
            let disc = tr * tr - 4.0 * det;
            if disc >= 0.0 {
                let s = disc.sqrt();
                ((tr + s) / 2.0).abs().max(((tr - s) / 2.0).abs())
            } else {
                det.sqrt()
            }
        };
        if let Some(p) = prev {
            if (est - p).abs() <= POWER_TOL * est.abs().max(f64::MIN_POSITIVE) {
                settled += 1;
                if settled >= 2 {
                    return Some(est);
                }
            } else {
                settled = 0;
            }
        }
        prev = Some(est);
        for i in 0..n {
            q[i] = w1[i] / wn;
        }
    }
    None
}

/// The fixed weights of one reservoir.
#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirWeights {
    pub w_in: DMatrix<f64>,
    pub w: SparseMatrix,
    pub params: ReservoirParams,
}

/// Draws a reservoir deterministically from `params.seed`.
///
/// `w_in` entries are uniform on `[-input_scaling, input_scaling]`; each
/// entry of `w` is kept with probability `density`, drawn uniform on `[-1, 1]`,
/// and the whole matrix is rescaled to the requested spectral radius.
pub fn generate_reservoir(params: &ReservoirParams) -> Result<ReservoirWeights, ReservoirError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n_x = params.n_x;
    let cols = 1 + params.n_u;
    let s = params.input_scaling;

    let mut w_in = DMatrix::zeros(n_x, cols);
    for i in 0..n_x {
        for j in 0..cols {
            w_in[(i, j)] = rng.random_range(-s..=s);
        }
    }

    let mut triplets = Vec::new();
    for i in 0..n_x {
        for j in 0..n_x {
            if rng.random::<f64>() < params.density {
                triplets.push((i, j, rng.random_range(-1.0..=1.0)));
            }
        }
    }
    let mut w = SparseMatrix::from_sorted_triplets(n_x, &triplets);
    let raw = spectral_radius(&w)?;
    w.scale(params.spectral_radius / raw);

    Ok(ReservoirWeights {
        w_in,
        w,
        params: params.clone(),
    })
}

impl ReservoirWeights {
    /// Builds weights from explicit matrices without rescaling `w`.
    pub fn from_parts(
        w_in: DMatrix<f64>,
        w: DMatrix<f64>,
        leaking_rate: f64,
        n_y: usize,
    ) -> Result<Self, ReservoirError> {
        let n_x = w_in.nrows();
        if w.nrows() != n_x || w.ncols() != n_x {
            return Err(ReservoirError::Dimension {
                what: "recurrent matrix side",
                expected: n_x,
                actual: w.nrows(),
            });
        }
        if w_in.ncols() < 2 {
            return Err(ReservoirError::InvalidParams(
                "input matrix needs a bias column and at least one input column".into(),
            ));
        }
        let params = ReservoirParams {
            n_x,
            n_u: w_in.ncols() - 1,
            n_y,
            leaking_rate,
            spectral_radius: f64::NAN,
            input_scaling: f64::NAN,
            density: f64::NAN,
            seed: 0,
        };
        if !(leaking_rate > 0.0 && leaking_rate <= 1.0) {
            return Err(ReservoirError::InvalidParams(format!(
                "leaking rate {leaking_rate} not in (0, 1]"
            )));
        }
        Ok(Self {
            w_in,
            w: SparseMatrix::from_dense(&w),
            params,
        })
    }

    pub fn n_x(&self) -> usize {
        self.params.n_x
    }

    pub fn n_u(&self) -> usize {
        self.params.n_u
    }

    pub fn n_r(&self) -> usize {
        self.params.n_r()
    }

    /// In-place state update; `scratch` must have length `n_x`.
    ///
    /// No dimension checks: this is the inner loop of every data pass.
    pub fn step(&self, x: &mut [f64], u: &[f64], scratch: &mut [f64]) {
        let alpha = self.params.leaking_rate;
        self.w.mul_vec_into(x, scratch);
        let n_x = x.len();
        let w_in = self.w_in.as_slice();
        for (i, pre) in scratch.iter_mut().enumerate() {
            let mut a = w_in[i];
            for (j, uj) in u.iter().enumerate() {
                a += w_in[(j + 1) * n_x + i] * uj;
            }
            *pre += a;
        }
        for (xi, pre) in x.iter_mut().zip(scratch.iter()) {
            *xi = (1.0 - alpha) * *xi + alpha * pre.tanh();
        }
    }

    fn check_input(&self, u: &[f64]) -> Result<(), ReservoirError> {
        if u.len() != self.n_u() {
            return Err(ReservoirError::Dimension {
                what: "input vector",
                expected: self.n_u(),
                actual: u.len(),
            });
        }
        Ok(())
    }
}

/// Reservoir neuron activations `x(n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirState {
    pub x: Vec<f64>,
}

impl ReservoirState {
    pub fn zeros(n_x: usize) -> Self {
        Self { x: vec![0.0; n_x] }
    }

    pub fn from_vec(x: Vec<f64>) -> Self {
        Self { x }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// The readout regressor `[1; u(n); x(n)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedState(Vec<f64>);

impl ExpandedState {
    pub fn new(u: &[f64], x: &[f64]) -> Self {
        let mut v = Vec::with_capacity(1 + u.len() + x.len());
        v.push(1.0);
        v.extend_from_slice(u);
        v.extend_from_slice(x);
        Self(v)
    }

    pub fn from_vec(v: Vec<f64>) -> Self {
        Self(v)
    }

    pub(crate) fn zeros(n_r: usize) -> Self {
        let mut v = vec![0.0; n_r];
        v[0] = 1.0;
        Self(v)
    }

    pub(crate) fn fill(&mut self, u: &[f64], x: &[f64]) {
        let v = &mut self.0;
        v[0] = 1.0;
        v[1..1 + u.len()].copy_from_slice(u);
        v[1 + u.len()..].copy_from_slice(x);
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The trailing reservoir-activation block `x(n)`.
    pub fn activations(&self, n_u: usize) -> &[f64] {
        &self.0[1 + n_u..]
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Receives expanded states in time order.
pub trait StateSink {
    fn accept(&mut self, step: usize, state: &ExpandedState);
}

impl<F: FnMut(usize, &ExpandedState)> StateSink for F {
    fn accept(&mut self, step: usize, state: &ExpandedState) {
        self(step, state)
    }
}

/// Collects expanded states column-wise into a design matrix.
#[derive(Debug, Default)]
pub struct MatrixCollector {
    data: Vec<f64>,
    n_r: usize,
}

impl MatrixCollector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn columns(&self) -> usize {
        if self.n_r == 0 {
            0
        } else {
            self.data.len() / self.n_r
        }
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        let cols = self.columns();
        DMatrix::from_vec(self.n_r, cols, self.data)
    }
}

impl StateSink for MatrixCollector {
    fn accept(&mut self, _step: usize, state: &ExpandedState) {
        self.n_r = state.len();
        self.data.extend_from_slice(state.as_slice());
    }
}

/// One state update, returning the new state.
pub fn update_state(
    weights: &ReservoirWeights,
    state: &ReservoirState,
    u: &[f64],
) -> Result<ReservoirState, ReservoirError> {
    weights.check_input(u)?;
    if state.len() != weights.n_x() {
        return Err(ReservoirError::Dimension {
            what: "reservoir state",
            expected: weights.n_x(),
            actual: state.len(),
        });
    }
    let mut x = state.x.clone();
    let mut scratch = vec![0.0; x.len()];
    weights.step(&mut x, u, &mut scratch);
    Ok(ReservoirState { x })
}

/// Drives the reservoir through `inputs`, handing each post-update expanded
/// state to `sink`, and returns the final state so runs can be chained.
pub fn run_sequence<I, U, S>(
    weights: &ReservoirWeights,
    init: &ReservoirState,
    inputs: I,
    sink: &mut S,
) -> Result<ReservoirState, ReservoirError>
where
    I: IntoIterator<Item = U>,
    U: AsRef<[f64]>,
    S: StateSink + ?Sized,
{
    if init.len() != weights.n_x() {
        return Err(ReservoirError::Dimension {
            what: "reservoir state",
            expected: weights.n_x(),
            actual: init.len(),
        });
    }
    let mut x = init.x.clone();
    let mut scratch = vec![0.0; x.len()];
    let mut v = ExpandedState::zeros(weights.n_r());
    let mut steps = 0;
    for (n, u) in inputs.into_iter().enumerate() {
        let u = u.as_ref();
        weights.check_input(u)?;
        weights.step(&mut x, u, &mut scratch);
        v.fill(u, &x);
        sink.accept(n, &v);
        steps += 1;
    }
    if steps == 0 {
        return Err(ReservoirError::EmptyInput);
    }
    Ok(ReservoirState { x })
}

/// Column `j` of a column-major matrix as a slice.
pub(crate) fn column(m: &DMatrix<f64>, j: usize) -> &[f64] {
    let r = m.nrows();
    &m.as_slice()[j * r..(j + 1) * r]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_weights(w_in: [f64; 2], w: f64, alpha: f64) -> ReservoirWeights {
        ReservoirWeights::from_parts(
            DMatrix::from_row_slice(1, 2, &w_in),
            DMatrix::from_element(1, 1, w),
            alpha,
            1,
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_give_zero_state() {
        let weights = ReservoirWeights::from_parts(
            DMatrix::zeros(4, 3),
            DMatrix::zeros(4, 4),
            1.0,
            1,
        )
        .unwrap();
        let next = update_state(&weights, &ReservoirState::zeros(4), &[0.7, -2.0]).unwrap();
        assert_eq!(next.x, vec![0.0; 4]);
    }

    #[test]
    fn leaky_blend_with_zero_update() {
        let weights = ReservoirWeights::from_parts(
            DMatrix::zeros(3, 2),
            DMatrix::zeros(3, 3),
            0.5,
            1,
        )
        .unwrap();
        let next =
            update_state(&weights, &ReservoirState::from_vec(vec![1.0; 3]), &[4.0]).unwrap();
        assert_eq!(next.x, vec![0.5; 3]);
    }

    #[test]
    fn scalar_update_matches_hand_arithmetic() {
        let weights = scalar_weights([0.3, 0.5], 0.2, 0.8);
        let next =
            update_state(&weights, &ReservoirState::from_vec(vec![0.1]), &[1.0]).unwrap();
        // 0.2 * 0.1 + 0.3 * 1 + 0.5 * 1.0 = 0.82
        let expected = 0.2 * 0.1 + 0.8 * 0.82f64.tanh();
        assert!((next.x[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn input_dimension_mismatch_names_lengths() {
        let weights = scalar_weights([0.3, 0.5], 0.2, 0.8);
        let err = update_state(&weights, &ReservoirState::zeros(1), &[1.0, 2.0]).unwrap_err();
        assert_eq!(
            err,
            ReservoirError::Dimension {
                what: "input vector",
                expected: 1,
                actual: 2
            }
        );
        assert!(err.to_string().contains("expected input vector of length 1, got 2"));
    }

    #[test]
    fn generation_is_deterministic_and_shaped() {
        let p = ReservoirParams::new(50, 2, 1).with_seed(7);
        let a = generate_reservoir(&p).unwrap();
        let b = generate_reservoir(&p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.w_in.shape(), (50, 3));
        let c = generate_reservoir(&p.clone().with_seed(8)).unwrap();
        assert_ne!(a.w, c.w);
    }

    #[test]
    fn input_weights_respect_scaling() {
        let p = ReservoirParams::new(40, 3, 1).with_input_scaling(0.25).with_seed(1);
        let w = generate_reservoir(&p).unwrap();
        assert!(w.w_in.iter().all(|v| v.abs() <= 0.25));
    }

    #[test]
    fn density_within_ten_percent() {
        for (n_x, density) in [(20, 0.5), (100, 0.1), (200, 0.05), (64, 1.0)] {
            let p = ReservoirParams::new(n_x, 1, 1).with_density(density).with_seed(3);
            let w = generate_reservoir(&p).unwrap();
            let frac = w.w.nnz() as f64 / (n_x * n_x) as f64;
            assert!(
                (frac - density).abs() <= 0.1 * density,
                "n_x={n_x}: fraction {frac} vs {density}"
            );
        }
    }

    #[test]
    fn empty_recurrent_matrix_is_an_error() {
        // 2x2 with a tiny density draws no connections for this seed.
        let p = ReservoirParams::new(2, 1, 1).with_density(1e-9).with_seed(0);
        let err = generate_reservoir(&p).unwrap_err();
        assert!(matches!(err, ReservoirError::SpectralRadius(_)));
    }

    #[test]
    fn nilpotent_matrix_is_an_error() {
        let w = SparseMatrix::from_sorted_triplets(3, &[(0, 1, 1.0), (1, 2, 1.0)]);
        assert!(matches!(
            spectral_radius(&w),
            Err(ReservoirError::SpectralRadius(_))
        ));
    }

    #[test]
    fn power_iteration_agrees_with_dense_on_large_matrices() {
        for seed in 0..4 {
            let p = ReservoirParams::new(150, 1, 1).with_seed(seed).with_spectral_radius(1.1);
            let w = generate_reservoir(&p).unwrap();
            let dense = dense_spectral_radius(&w.w.to_dense()).unwrap();
            assert!((dense - 1.1).abs() <= 1.1 * 1e-6, "seed {seed}: {dense}");
        }
    }

    #[test]
    fn power_iteration_handles_rotation_blocks() {
        // Dominant eigenvalues 2·e^{±iπ/3}, then 0.5.
        let (c, s) = (2.0 * (std::f64::consts::PI / 3.0).cos(), 2.0 * (std::f64::consts::PI / 3.0).sin());
        let w = SparseMatrix::from_sorted_triplets(
            3,
            &[(0, 0, c), (0, 1, -s), (1, 0, s), (1, 1, c), (2, 2, 0.5)],
        );
        let rho = power_spectral_radius(&w).unwrap();
        assert!((rho - 2.0).abs() < 1e-9, "{rho}");
    }

    #[test]
    fn invalid_params_rejected() {
        let base = ReservoirParams::new(10, 1, 1);
        for p in [
            base.clone().with_leaking_rate(0.0),
            base.clone().with_leaking_rate(1.5),
            base.clone().with_spectral_radius(0.0),
            base.clone().with_density(0.0),
            base.clone().with_density(1.2),
            ReservoirParams::new(0, 1, 1),
        ] {
            assert!(matches!(
                generate_reservoir(&p),
                Err(ReservoirError::InvalidParams(_))
            ));
        }
    }

    #[test]
    fn run_sequence_emits_one_state_per_step() {
        let w = generate_reservoir(&ReservoirParams::new(8, 1, 1).with_seed(2)).unwrap();
        let mut count = 0;
        let mut sink = |_n: usize, v: &ExpandedState| {
            assert_eq!(v.as_slice()[0], 1.0);
            count += 1;
        };
        run_sequence(&w, &ReservoirState::zeros(8), [[0.1], [0.2], [0.3]], &mut sink).unwrap();
        assert_eq!(count, 3);
    }

    #[test]
    fn run_sequence_rejects_empty_input() {
        let w = generate_reservoir(&ReservoirParams::new(8, 1, 1)).unwrap();
        let mut sink = MatrixCollector::new();
        let inputs: Vec<[f64; 1]> = Vec::new();
        assert_eq!(
            run_sequence(&w, &ReservoirState::zeros(8), inputs, &mut sink),
            Err(ReservoirError::EmptyInput)
        );
    }
}
