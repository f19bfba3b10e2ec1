//! Mixed-radix decimation-in-time FFT for arbitrary lengths.
//!
//! The length is split into its prime factors (smallest first). Each level
//! transforms `p` decimated subsequences recursively and recombines them
//! with a direct `p`-point butterfly, so prime factors cost `O(p)` per
//! output element. MNIST images give `784 = 2^4 * 7^2`.

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct FftPlan {
    len: usize,
    factors: Vec<usize>,
    /// `exp(-2 pi i j / len)` for `j in 0..len`.
    twiddles: Vec<Complex64>,
}

impl FftPlan {
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidArgument("FFT of an empty sequence".into()));
        }
        let twiddles = (0..len)
            .map(|j| {
                let theta = -2.0 * std::f64::consts::PI * (j as f64) / (len as f64);
                Complex64::new(theta.cos(), theta.sin())
            })
            .collect();
        Ok(Self {
            len,
            factors: prime_factors(len),
            twiddles,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Forward transform `X_m = sum_n x_n exp(-2 pi i m n / N)`.
    pub fn forward(&self, input: &[Complex64]) -> Result<Vec<Complex64>> {
        if input.len() != self.len {
            return Err(Error::dim(
                "fft",
                format!("plan length {}, input length {}", self.len, input.len()),
            ));
        }
        let mut out = vec![Complex64::new(0.0, 0.0); self.len];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.len];
        self.recurse(input, 1, &mut out, &mut scratch, 0);
        Ok(out)
    }

    pub fn forward_real(&self, input: &[f64]) -> Result<Vec<Complex64>> {
        let buf: Vec<Complex64> = input.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&buf)
    }

    /// Transforms `input[0], input[stride], ...` (length `out.len()`) into `out`.
    fn recurse(
        &self,
        input: &[Complex64],
        stride: usize,
        out: &mut [Complex64],
        scratch: &mut [Complex64],
        level: usize,
    ) {
        let n = out.len();
        if n == 1 {
            out[0] = input[0];
            return;
        }
        let p = self.factors[level];
        let m = n / p;
        // sub-transform r of length m lands in out[r*m..(r+1)*m]
        for r in 0..p {
            let (sub_out, sub_scratch) = (
                &mut out[r * m..(r + 1) * m],
                &mut scratch[r * m..(r + 1) * m],
            );
            self.recurse(
                &input[r * stride..],
                stride * p,
                sub_out,
                sub_scratch,
                level + 1,
            );
        }
        // twiddle step for a length-n transform uses exp(-2 pi i t / n) = twiddles[t * len / n]
        let tw_step = self.len / n;
        let tw = |t: usize| self.twiddles[(t % n) * tw_step];
        let mut sums = vec![Complex64::new(0.0, 0.0); p];
        let mut terms = vec![Complex64::new(0.0, 0.0); p];
        for k in 0..m {
            for r in 0..p {
                terms[r] = out[r * m + k] * tw(r * k);
            }
            for (q, s) in sums.iter_mut().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for (r, t) in terms.iter().enumerate() {
                    acc += t * tw(r * q * m);
                }
                *s = acc;
            }
            for (q, s) in sums.iter().enumerate() {
                scratch[q * m + k] = *s;
            }
        }
        out.copy_from_slice(&scratch[..n]);
    }
}

fn prime_factors(mut n: usize) -> Vec<usize> {
    let mut factors = Vec::new();
    let mut p = 2;
    while p * p <= n {
        while n.is_multiple_of(p) {
            factors.push(p);
            n /= p;
        }
        p += 1;
    }
    if n > 1 {
        factors.push(n);
    }
    factors
}

/// Length of the retained half spectrum, `ceil(len / 2)`.
#[inline]
pub fn half_spectrum_len(len: usize) -> usize {
    len.div_ceil(2)
}

/// `|DFT(x)_m|^{1/2}` for `m in 0..ceil(M/2)`, DC bin included.
pub fn dft_halfspectrum_sqrtmag(x: &[f64]) -> Result<Vec<f64>> {
    let plan = FftPlan::new(x.len())?;
    halfspectrum_sqrtmag_with(&plan, x)
}

/// Same as [`dft_halfspectrum_sqrtmag`], reusing a plan.
pub fn halfspectrum_sqrtmag_with(plan: &FftPlan, x: &[f64]) -> Result<Vec<f64>> {
    let spec = plan.forward_real(x)?;
    Ok(spec[..half_spectrum_len(x.len())]
        .iter()
        .map(|c| c.norm().sqrt())
        .collect())
}
