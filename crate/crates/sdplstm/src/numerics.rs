//! Dense 64-bit vectors and matrices, elementwise activations, and a
//! seeded portable random generator.
//!
//! Matrices here are a few hundred rows at most, so storage is plain
//! row-major `Vec<f64>` and every kernel is a straightforward loop; there
//! is deliberately no external math backend. Shape mismatches are
//! programming errors and panic with both shapes in the message.

use std::ops::{Index, IndexMut};

/// Column vector of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Vector(pub Vec<f64>);

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    pub fn from_slice(xs: &[f64]) -> Self {
        Vector(xs.to_vec())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        assert_eq!(
            self.len(),
            other.len(),
            "dot: length mismatch: {} vs {}",
            self.len(),
            other.len()
        );
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// `self += a * x`.
    pub fn axpy(&mut self, a: f64, x: &Vector) {
        assert_eq!(
            self.len(),
            x.len(),
            "axpy: length mismatch: {} vs {}",
            self.len(),
            x.len()
        );
        for (s, v) in self.0.iter_mut().zip(&x.0) {
            *s += a * v;
        }
    }

    pub fn add_assign(&mut self, other: &Vector) {
        self.axpy(1.0, other);
    }

    pub fn scale(&mut self, a: f64) {
        for v in &mut self.0 {
            *v *= a;
        }
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Index of the largest entry, earliest index on ties.
    pub fn argmax(&self) -> usize {
        assert!(!self.is_empty(), "argmax of an empty vector");
        let mut best = 0;
        for (i, v) in self.0.iter().enumerate().skip(1) {
            if *v > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn assert_finite(&self, what: &str) {
        for (i, v) in self.0.iter().enumerate() {
            assert!(v.is_finite(), "{what}: non-finite value {v} at index {i}");
        }
    }
}

impl Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Builds from row slices; every row must have the same length.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        assert!(!rows.is_empty(), "from_rows: no rows");
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "from_rows: ragged rows: {} vs {}", r.len(), cols);
            data.extend_from_slice(r);
        }
        Matrix { rows: rows.len(), cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        assert!(i < self.rows, "row {i} out of range for {}x{} matrix", self.rows, self.cols);
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        assert!(i < self.rows, "row {i} out of range for {}x{} matrix", self.rows, self.cols);
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i)[j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.row_mut(i)[j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self * v` for a column vector `v`.
    pub fn matvec(&self, v: &Vector) -> Vector {
        assert_eq!(
            self.cols,
            v.len(),
            "matvec: shape mismatch: {}x{} vs len-{}",
            self.rows,
            self.cols,
            v.len()
        );
        let mut out = Vec::with_capacity(self.rows);
        for i in 0..self.rows {
            out.push(self.row(i).iter().zip(&v.0).map(|(a, b)| a * b).sum());
        }
        Vector(out)
    }

    /// `self^T * v`; used by backward passes, avoids materializing the
    /// transpose.
    pub fn matvec_t(&self, v: &Vector) -> Vector {
        assert_eq!(
            self.rows,
            v.len(),
            "matvec_t: shape mismatch: {}x{} vs len-{}",
            self.rows,
            self.cols,
            v.len()
        );
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let vi = v.0[i];
            if vi != 0.0 {
                for (o, m) in out.iter_mut().zip(self.row(i)) {
                    *o += vi * m;
                }
            }
        }
        Vector(out)
    }

    /// Rank-one update `self += a * b^T`.
    pub fn add_outer(&mut self, a: &Vector, b: &Vector) {
        assert_eq!(
            (self.rows, self.cols),
            (a.len(), b.len()),
            "add_outer: shape mismatch: {}x{} vs {}x{}",
            self.rows,
            self.cols,
            a.len(),
            b.len()
        );
        for i in 0..self.rows {
            let ai = a.0[i];
            if ai != 0.0 {
                for (m, bv) in self.row_mut(i).iter_mut().zip(&b.0) {
                    *m += ai * bv;
                }
            }
        }
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "add_assign: shape mismatch: {}x{} vs {}x{}",
            self.rows,
            self.cols,
            other.rows,
            other.cols
        );
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for v in &mut self.data {
            *v *= a;
        }
    }

    /// Squared Frobenius norm, the sum of all squared entries.
    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn fill_uniform(&mut self, rng: &mut Rng, lo: f64, hi: f64) {
        for v in &mut self.data {
            *v = rng.uniform(lo, hi);
        }
    }
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn sigmoid(v: &Vector) -> Vector {
    Vector(v.0.iter().map(|&x| sigmoid_scalar(x)).collect())
}

pub fn tanh(v: &Vector) -> Vector {
    Vector(v.0.iter().map(|&x| x.tanh()).collect())
}

pub fn hadamard(a: &Vector, b: &Vector) -> Vector {
    assert_eq!(
        a.len(),
        b.len(),
        "hadamard: length mismatch: {} vs {}",
        a.len(),
        b.len()
    );
    Vector(a.0.iter().zip(&b.0).map(|(x, y)| x * y).collect())
}

/// Numerically stable softmax: the max logit is subtracted before
/// exponentiation, so arbitrarily large logits cannot overflow.
pub fn softmax(logits: &Vector) -> Vector {
    assert!(!logits.is_empty(), "softmax of an empty vector");
    let m = logits.0.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.0.iter().map(|&x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    Vector(exps.into_iter().map(|e| e / z).collect())
}

/// Deterministic random generator. The algorithm is splitmix64 and is
/// frozen: checkpointed runs replay the exact draw sequence on any
/// platform.
///
/// One draw advances the state by the 64-bit golden-ratio constant and
/// scrambles a copy of it:
///
/// ```text
/// s      <- s + 0x9E37_79B9_7F4A_7C15
/// z      <- s
/// z      <- (z ^ (z >> 30)) * 0xBF58_476D_1CE4_E5B9
/// z      <- (z ^ (z >> 27)) * 0x94D0_49BB_1331_11EB
/// output <- z ^ (z >> 31)
/// ```
///
/// All arithmetic wraps modulo 2^64. `f64` draws take the top 53 bits,
/// giving uniform values in `[0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rng {
    state: u64,
    draws: u64,
}

impl Rng {
    pub fn seeded(seed: u64) -> Self {
        Rng { state: seed, draws: 0 }
    }

    /// Derives an independent substream from `(seed, a, b)`. Streams for
    /// distinct tag pairs are decorrelated by running the scrambler over
    /// the combined words before seeding.
    pub fn derive(seed: u64, a: u64, b: u64) -> Self {
        let mut s = Rng::seeded(seed ^ a.rotate_left(17) ^ b.rotate_left(41));
        // burn two draws so trivially related tags do not yield
        // trivially related states
        let x = s.next_u64();
        let y = s.next_u64();
        Rng::seeded(x ^ y.rotate_left(23))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        self.draws += 1;
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform index in `[0, n)` via the high bits of one draw
    /// (multiply-shift; no rejection loop, identical on every platform).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below: empty range");
        (((self.next_u64() as u128) * (n as u128)) >> 64) as usize
    }

    /// Fisher-Yates shuffle driven by `below`.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    /// Number of draws made so far; logged per epoch so a run's position
    /// in the stream is auditable.
    pub fn draws(&self) -> u64 {
        self.draws
    }
}
