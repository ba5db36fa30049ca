//! Finite-alphabet fading and imperfect CSIT.
//!
//! True CSI entries are drawn i.i.d. per frame from a frozen complex alphabet;
//! the CSIT seen at the base stations is drawn from a conditional kernel given
//! the true value (noise then quantize to the nearest alphabet member).

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CMat;

const KERNEL_SAMPLES_PER_ROW: usize = 100_000;
const KERNEL_SEED: u64 = 0x5eed_c517;
const MAX_RANK_ATTEMPTS: usize = 100;

/// Finite set of complex fading values with their probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsiAlphabet {
    values: Vec<Complex64>,
    probabilities: Vec<f64>,
}

impl CsiAlphabet {
    pub fn new(values: Vec<Complex64>, probabilities: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("alphabet must be nonempty".into()));
        }
        if values.len() != probabilities.len() {
            return Err(Error::InvalidArgument(
                "alphabet values and probabilities differ in length".into(),
            ));
        }
        check_distribution(&probabilities)?;
        for i in 0..values.len() {
            for j in 0..i {
                if values[i] == values[j] {
                    return Err(Error::InvalidArgument(format!(
                        "duplicate alphabet value at {j} and {i}"
                    )));
                }
            }
        }
        Ok(Self {
            values,
            probabilities,
        })
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index_of(&self, z: Complex64) -> Option<usize> {
        self.values.iter().position(|&v| v == z)
    }

    fn nearest(&self, z: Complex64) -> usize {
        nearest_by(self.values.len(), |i| (self.values[i] - z).norm_sqr())
    }
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::InvalidArgument(
            "probabilities must be nonnegative".into(),
        ));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "probabilities sum to {s}, expected 1"
        )));
    }
    Ok(())
}

fn nearest_by(n: usize, dist: impl Fn(usize) -> f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for i in 0..n {
        let d = dist(i);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

fn sample_index<R: Rng + ?Sized>(probabilities: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probabilities.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver above the last cumulative sum
    probabilities.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let normal = Normal::new(0.0, (variance / 2.0).sqrt()).expect("finite variance");
    Complex64::new(normal.sample(rng), normal.sample(rng))
}

/// Draws `size` values from a unit-variance complex Gaussian (seeded) and
/// freezes them with uniform probabilities.
pub fn build_alphabet(size: usize, seed: u64) -> Result<CsiAlphabet> {
    if size < 2 {
        return Err(Error::InvalidArgument(format!(
            "alphabet size must be at least 2, got {size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values: Vec<Complex64> = Vec::with_capacity(size);
    while values.len() < size {
        let z = complex_normal(&mut rng, 1.0);
        if !values.contains(&z) {
            values.push(z);
        }
    }
    CsiAlphabet::new(values, vec![1.0 / size as f64; size])
}

/// Conditional distribution of the CSIT symbol given the true symbol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsitErrorKernel {
    rows: Vec<Vec<f64>>,
    epsilon: f64,
}

impl CsitErrorKernel {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidArgument("kernel must have rows".into()));
        }
        for r in &rows {
            if r.len() != n {
                return Err(Error::InvalidArgument("kernel must be square".into()));
            }
            check_distribution(r)?;
        }
        let epsilon = Self::mismatch_mass(&rows);
        Ok(Self { rows, epsilon })
    }

    pub fn identity(n: usize) -> Self {
        let rows = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self { rows, epsilon: 0.0 }
    }

    fn mismatch_mass(rows: &[Vec<f64>]) -> f64 {
        rows.iter()
            .enumerate()
            .map(|(i, r)| {
                r.iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, p)| p)
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// Row `true_index`: probabilities over CSIT symbols.
    pub fn row(&self, true_index: usize) -> &[f64] {
        &self.rows[true_index]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Largest probability mass a row puts off its own symbol.
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn recompute_epsilon(&self) -> f64 {
        Self::mismatch_mass(&self.rows)
    }

    pub fn is_identity(&self) -> bool {
        self.epsilon == 0.0
    }

    pub fn sample<R: Rng + ?Sized>(&self, true_index: usize, rng: &mut R) -> usize {
        if self.is_identity() {
            return true_index;
        }
        sample_index(&self.rows[true_index], rng)
    }

    /// Posterior over true symbols given an observed CSIT symbol.
    pub fn posterior(&self, prior: &[f64], observed: usize) -> Vec<f64> {
        let mut post: Vec<f64> = prior
            .iter()
            .enumerate()
            .map(|(i, &p)| p * self.rows[i][observed])
            .collect();
        let z: f64 = post.iter().sum();
        if z > 0.0 {
            post.iter_mut().for_each(|p| *p /= z);
        }
        post
    }
}

fn monte_carlo_kernel(
    n: usize,
    sigma_e: f64,
    mut quantize_noisy: impl FnMut(usize, &mut ChaCha8Rng) -> usize,
) -> Result<CsitErrorKernel> {
    if sigma_e < 0.0 || !sigma_e.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "CSIT error variance must be nonnegative, got {sigma_e}"
        )));
    }
    if sigma_e == 0.0 {
        return Ok(CsitErrorKernel::identity(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(KERNEL_SEED);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let mut counts = vec![0usize; n];
        for _ in 0..KERNEL_SAMPLES_PER_ROW {
            counts[quantize_noisy(i, &mut rng)] += 1;
        }
        rows.push(
            counts
                .iter()
                .map(|&c| c as f64 / KERNEL_SAMPLES_PER_ROW as f64)
                .collect(),
        );
    }
    CsitErrorKernel::new(rows)
}

/// Noise-then-quantize kernel: complex Gaussian noise of variance `sigma_e`
/// is added to each true value and the result snapped to the nearest member.
pub fn build_error_kernel(alphabet: &CsiAlphabet, sigma_e: f64) -> Result<CsitErrorKernel> {
    monte_carlo_kernel(alphabet.len(), sigma_e, |i, rng| {
        let z = alphabet.values[i] + complex_normal(rng, sigma_e);
        alphabet.nearest(z)
    })
}

/// Whole-matrix CSI states: every link draws one of a finite set of N×M
/// matrices instead of drawing each entry independently.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixAlphabet {
    states: Vec<CMat>,
    probabilities: Vec<f64>,
}

impl MatrixAlphabet {
    pub fn states(&self) -> &[CMat] {
        &self.states
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn index_of(&self, h: &CMat) -> Option<usize> {
        self.states.iter().position(|s| s == h)
    }
}

/// `size` full-rank N×M matrices with unit-variance complex Gaussian entries.
pub fn build_matrix_alphabet(size: usize, n: usize, m: usize, seed: u64) -> Result<MatrixAlphabet> {
    if size < 2 {
        return Err(Error::InvalidArgument(format!(
            "alphabet size must be at least 2, got {size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(size);
    let mut attempts = 0;
    while states.len() < size {
        attempts += 1;
        if attempts > size * MAX_RANK_ATTEMPTS {
            return Err(Error::DegenerateAlphabet { attempts });
        }
        let h = DMatrix::from_fn(n, m, |_, _| complex_normal(&mut rng, 1.0));
        if full_rank(&h) {
            states.push(h);
        }
    }
    Ok(MatrixAlphabet {
        probabilities: vec![1.0 / size as f64; size],
        states,
    })
}

/// Noise-then-quantize kernel over whole-matrix states (Frobenius distance).
pub fn build_matrix_error_kernel(
    alphabet: &MatrixAlphabet,
    sigma_e: f64,
) -> Result<CsitErrorKernel> {
    monte_carlo_kernel(alphabet.len(), sigma_e, |i, rng| {
        let noisy = alphabet.states[i].map(|z| z + complex_normal(rng, sigma_e));
        nearest_by(alphabet.len(), |j| {
            alphabet.states[j]
                .iter()
                .zip(noisy.iter())
                .map(|(a, b)| (a - b).norm_sqr())
                .sum()
        })
    })
}

/// True CSI and CSIT for every BS→MS link in one frame.
///
/// `true_csi[k * K + n]` is the N×M channel from BS `n` to MS `k`.
#[derive(Clone, Debug)]
pub struct GlobalChannelState {
    pub k: usize,
    pub true_csi: Vec<CMat>,
    pub csit: Vec<CMat>,
    pub frame_index: u64,
}

impl GlobalChannelState {
    pub fn h(&self, ms: usize, bs: usize) -> &CMat {
        &self.true_csi[ms * self.k + bs]
    }

    pub fn h_hat(&self, ms: usize, bs: usize) -> &CMat {
        &self.csit[ms * self.k + bs]
    }

    /// A state whose CSIT equals the true CSI.
    pub fn perfect(k: usize, true_csi: Vec<CMat>) -> Self {
        Self {
            k,
            csit: true_csi.clone(),
            true_csi,
            frame_index: 0,
        }
    }
}

/// rank(H) = min(N, M), tested on the Gram matrix of the short side.
pub fn full_rank(h: &CMat) -> bool {
    let (n, m) = h.shape();
    let gram = if n <= m {
        h * h.adjoint()
    } else {
        h.adjoint() * h
    };
    let scale = gram.diagonal().iter().map(|z| z.re).sum::<f64>() / gram.nrows() as f64;
    if scale <= 0.0 {
        return false;
    }
    let det = gram.determinant().re / scale.powi(gram.nrows() as i32);
    det > 1e-10
}

fn check_dims(k: usize, m: usize, n: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need K >= 2, got {k}")));
    }
    if !(m < k * n && n <= m) {
        return Err(Error::InvalidArgument(format!(
            "need M/K < N <= M, got K={k} M={m} N={n}"
        )));
    }
    Ok(())
}

/// Draws one frame of true CSI and CSIT with scalar-entry alphabets.
pub fn sample_frame<R: Rng + ?Sized>(
    alphabet: &CsiAlphabet,
    kernel: &CsitErrorKernel,
    k: usize,
    m: usize,
    n: usize,
    rng: &mut R,
) -> Result<GlobalChannelState> {
    check_dims(k, m, n)?;
    if kernel.rows().len() != alphabet.len() {
        return Err(Error::InvalidArgument(
            "kernel and alphabet sizes differ".into(),
        ));
    }
    for _ in 0..MAX_RANK_ATTEMPTS {
        let mut true_csi = Vec::with_capacity(k * k);
        let mut csit = Vec::with_capacity(k * k);
        for _ in 0..k * k {
            let idx: Vec<usize> = (0..n * m)
                .map(|_| sample_index(&alphabet.probabilities, rng))
                .collect();
            let hat: Vec<usize> = idx.iter().map(|&i| kernel.sample(i, rng)).collect();
            true_csi.push(DMatrix::from_fn(n, m, |r, c| {
                alphabet.values[idx[r * m + c]]
            }));
            csit.push(DMatrix::from_fn(n, m, |r, c| {
                alphabet.values[hat[r * m + c]]
            }));
        }
        if true_csi.iter().chain(csit.iter()).all(full_rank) {
            return Ok(GlobalChannelState {
                k,
                true_csi,
                csit,
                frame_index: 0,
            });
        }
    }
    Err(Error::DegenerateAlphabet {
        attempts: MAX_RANK_ATTEMPTS,
    })
}

/// Draws one frame with whole-matrix CSI states.
pub fn sample_matrix_frame<R: Rng + ?Sized>(
    alphabet: &MatrixAlphabet,
    kernel: &CsitErrorKernel,
    k: usize,
    rng: &mut R,
) -> Result<GlobalChannelState> {
    let mut true_csi = Vec::with_capacity(k * k);
    let mut csit = Vec::with_capacity(k * k);
    for _ in 0..k * k {
        let i = sample_index(&alphabet.probabilities, rng);
        let j = kernel.sample(i, rng);
        true_csi.push(alphabet.states[i].clone());
        csit.push(alphabet.states[j].clone());
    }
    Ok(GlobalChannelState {
        k,
        true_csi,
        csit,
        frame_index: 0,
    })
}

/// How CSI states are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CsiMode {
    /// Every matrix entry drawn independently from a scalar alphabet.
    #[default]
    Scalar,
    /// Each link drawn from a finite set of whole matrices.
    Matrix,
}

/// Frozen alphabet plus CSIT kernel, in either CSI mode.
#[derive(Clone, Debug)]
pub enum ChannelModel {
    Scalar {
        alphabet: CsiAlphabet,
        kernel: CsitErrorKernel,
    },
    Matrix {
        alphabet: MatrixAlphabet,
        kernel: CsitErrorKernel,
    },
}

impl ChannelModel {
    pub fn build(
        mode: CsiMode,
        size: usize,
        seed: u64,
        sigma_e: f64,
        n: usize,
        m: usize,
    ) -> Result<Self> {
        Ok(match mode {
            CsiMode::Scalar => {
                let alphabet = build_alphabet(size, seed)?;
                let kernel = build_error_kernel(&alphabet, sigma_e)?;
                ChannelModel::Scalar { alphabet, kernel }
            }
            CsiMode::Matrix => {
                let alphabet = build_matrix_alphabet(size, n, m, seed)?;
                let kernel = build_matrix_error_kernel(&alphabet, sigma_e)?;
                ChannelModel::Matrix { alphabet, kernel }
            }
        })
    }

    /// Like [`ChannelModel::build`], but built once per process for each
    /// parameter set; kernels take a while to estimate.
    pub fn shared(
        mode: CsiMode,
        size: usize,
        seed: u64,
        sigma_e: f64,
        n: usize,
        m: usize,
    ) -> Result<Arc<Self>> {
        type Key = (bool, usize, u64, u64, usize, usize);
        static MODELS: OnceLock<Mutex<HashMap<Key, Arc<ChannelModel>>>> = OnceLock::new();
        let key = (mode == CsiMode::Matrix, size, seed, sigma_e.to_bits(), n, m);
        let models = MODELS.get_or_init(Default::default);
        if let Some(model) = models.lock().expect("model cache").get(&key) {
            return Ok(Arc::clone(model));
        }
        let model = Arc::new(Self::build(mode, size, seed, sigma_e, n, m)?);
        models
            .lock()
            .expect("model cache")
            .insert(key, Arc::clone(&model));
        Ok(model)
    }

    pub fn kernel(&self) -> &CsitErrorKernel {
        match self {
            ChannelModel::Scalar { kernel, .. } | ChannelModel::Matrix { kernel, .. } => kernel,
        }
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        k: usize,
        m: usize,
        n: usize,
        rng: &mut R,
    ) -> Result<GlobalChannelState> {
        match self {
            ChannelModel::Scalar { alphabet, kernel } => {
                sample_frame(alphabet, kernel, k, m, n, rng)
            }
            ChannelModel::Matrix { alphabet, kernel } => {
                check_dims(k, m, n)?;
                sample_matrix_frame(alphabet, kernel, k, rng)
            }
        }
    }
}
