//! Dense row-major tensors and seeded random streams.
//!
//! Everything above this module is a pure function of its inputs and a
//! [`Rng`] seed. Matrix products may run on several threads, but each output
//! element is always accumulated in the same order, so results are
//! bit-identical to the serial path.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Identifier of the random stream algorithm. Bumped whenever the mapping from
/// seed to stream changes.
pub const RNG_ALGORITHM: &str = "chacha8-v1";

/// Work (in multiply-adds) below which products stay on the calling thread.
const PARALLEL_THRESHOLD: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} holds {} values but {} were given",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row count of a matrix.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Column count of a matrix (product of all trailing extents).
    pub fn cols(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Gathers the listed rows into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Tensor {
        let c = self.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        if shape.is_empty() {
            shape.push(0);
        }
        shape[0] = indices.len();
        Tensor { shape, data }
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.matrix_dims("transpose")?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::new(vec![n, m], out)
    }

    fn matrix_dims(&self, op: &str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [m, n] => Ok((*m, *n)),
            other => Err(Error::Dimension(format!(
                "{op} expects a matrix, got shape {other:?}"
            ))),
        }
    }
}

/// Standard matrix product `a · b`.
///
/// Element `(i, j)` is accumulated over `k` in ascending order starting from
/// zero, on every code path.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.matrix_dims("matmul")?;
    let (k2, n) = b.matrix_dims("matmul")?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner dimensions disagree: {:?} · {:?}",
            a.shape, b.shape
        )));
    }
    let mut out = vec![0.0; m * n];
    if n == 0 {
        return Tensor::new(vec![m, n], out);
    }
    let row_kernel = |(i, c_row): (usize, &mut [f64])| {
        let a_row = &a.data[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            // rectified inputs are mostly zero
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b.data[p * n..(p + 1) * n];
            for (c, &b_pj) in c_row.iter_mut().zip(b_row) {
                *c += a_ip * b_pj;
            }
        }
    };
    if m * n * k >= PARALLEL_THRESHOLD {
        out.par_chunks_mut(n).enumerate().for_each(row_kernel);
    } else {
        out.chunks_mut(n).enumerate().for_each(row_kernel);
    }
    Tensor::new(vec![m, n], out)
}

/// `aᵀ · b` without materializing the transpose of `a`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = a.matrix_dims("matmul_tn")?;
    let (k2, n) = b.matrix_dims("matmul_tn")?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul_tn leading dimensions disagree: {:?}ᵀ · {:?}",
            a.shape, b.shape
        )));
    }
    let mut out = vec![0.0; m * n];
    if n == 0 {
        return Tensor::new(vec![m, n], out);
    }
    let row_kernel = |(i, c_row): (usize, &mut [f64])| {
        for p in 0..k {
            let a_pi = a.data[p * m + i];
            if a_pi == 0.0 {
                continue;
            }
            let b_row = &b.data[p * n..(p + 1) * n];
            for (c, &b_pj) in c_row.iter_mut().zip(b_row) {
                *c += a_pi * b_pj;
            }
        }
    };
    if m * n * k >= PARALLEL_THRESHOLD {
        out.par_chunks_mut(n).enumerate().for_each(row_kernel);
    } else {
        out.chunks_mut(n).enumerate().for_each(row_kernel);
    }
    Tensor::new(vec![m, n], out)
}

/// `a · bᵀ`. Transposes `b` once and reuses the [`matmul`] kernel, so the
/// accumulation order matches a plain dot product over `k`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (_, k) = a.matrix_dims("matmul_nt")?;
    let (_, k2) = b.matrix_dims("matmul_nt")?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul_nt trailing dimensions disagree: {:?} · {:?}ᵀ",
            a.shape, b.shape
        )));
    }
    matmul(a, &b.transpose()?)
}

/// Seeded random stream with a fixed, versioned algorithm ([`RNG_ALGORITHM`]).
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream for a named purpose, derived from a base seed.
    pub fn derive(seed: u64, stream: u64) -> Self {
        // splitmix64 finalizer decorrelates neighbouring (seed, stream) pairs
        let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        Rng::new(z)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        rand_distr::StandardNormal.sample(&mut self.inner)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Fisher-Yates permutation of `0..n`. A longer permutation drawn from
    /// the same seed does not share a prefix with a shorter one.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            idx.swap(i, j);
        }
        idx
    }
}

/// I.i.d. `normal(0, scale²)` entries.
pub fn gaussian_init(rng: &mut Rng, shape: &[usize], scale: f64) -> Result<Tensor> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Parameter(format!(
            "initialization scale must be positive, got {scale}"
        )));
    }
    let normal = Normal::new(0.0, scale).map_err(|e| Error::Parameter(e.to_string()))?;
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| normal.sample(&mut rng.inner)).collect();
    Tensor::new(shape.to_vec(), data)
}
