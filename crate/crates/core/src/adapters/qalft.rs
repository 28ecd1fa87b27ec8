//! Quantization-aware low-rank fitting on one frozen quantized linear map.
//!
//! Minimizes `L = 1/(N·out) · Σ_n ‖(W + s·B·A)·x_n − y_n‖²` over `A` and `B`
//! with `W = dequantize(W_q)` held fixed and `s = alpha / r`. With
//! `e_n = (W + s·B·A)·x_n − y_n`:
//!
//! ```text
//! ∂L/∂B = 2s/(N·out) · Σ_n e_n (A x_n)ᵀ
//! ∂L/∂A = 2s/(N·out) · Σ_n (Bᵀ e_n) x_nᵀ
//! ```
//!
//! Optimization is full-batch gradient descent with an Armijo backtracking
//! line search, so the loss trace never increases.

use serde::{Deserialize, Serialize};

use super::lora::LoraPair;
use crate::error::{Error, Result};
use crate::lm::INIT_STD;
use crate::quant::QuantTensor;
use crate::tensor::{keyed_rng, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QalftConfig {
    pub rank: usize,
    pub alpha: f64,
    pub steps: usize,
    /// Initial line-search step.
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for QalftConfig {
    fn default() -> Self {
        Self { rank: 1, alpha: 1.0, steps: 2000, learning_rate: 1.0, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct QalftFit {
    pub pair: LoraPair,
    pub rank: usize,
    pub alpha: f64,
    /// Loss before the first step followed by the loss after each step.
    pub losses: Vec<f64>,
    /// Loss of the returned (`f32`) pair.
    pub final_loss: f64,
    /// Encoding hash of the base before and after fitting.
    pub base_hash: ([u8; 32], [u8; 32]),
}

/// Data and frozen base for one fitting problem. Factors are plain `f64`
/// slices: `a` is `r × in`, `b` is `out × r`, both row-major.
#[derive(Debug, Clone)]
pub struct QalftProblem {
    w: Vec<f64>,
    xs: Vec<Vec<f64>>,
    ys: Vec<Vec<f64>>,
    out: usize,
    inp: usize,
    rank: usize,
    scale: f64,
}

impl QalftProblem {
    pub fn new(w_q: &QuantTensor, xs: &[Vec<f64>], ys: &[Vec<f64>], rank: usize, alpha: f64) -> Result<Self> {
        if !w_q.is_frozen() {
            return Err(Error::Contract("QALFT requires a frozen quantized base".into()));
        }
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(Error::InvalidInput("QALFT needs a nonempty set of (x, y) pairs".into()));
        }
        let (out, inp) = w_q.shape();
        if rank == 0 || rank > out.min(inp) || !(alpha > 0.0) {
            return Err(Error::Config(format!("rank {rank} / alpha {alpha} invalid for a {out}x{inp} map")));
        }
        if xs.iter().any(|x| x.len() != inp) || ys.iter().any(|y| y.len() != out) {
            return Err(Error::Shape(format!("samples must be {inp} -> {out}")));
        }
        let w = w_q.dequantize().data.iter().map(|&v| v as f64).collect();
        Ok(Self { w, xs: xs.to_vec(), ys: ys.to_vec(), out, inp, rank, scale: alpha / rank as f64 })
    }

    pub fn shapes(&self) -> ((usize, usize), (usize, usize)) {
        ((self.rank, self.inp), (self.out, self.rank))
    }

    /// Residuals `e_n` and projections `A x_n`.
    fn residuals(&self, a: &[f64], b: &[f64]) -> Vec<(Vec<f64>, Vec<f64>)> {
        let (r, inp, out) = (self.rank, self.inp, self.out);
        self.xs
            .iter()
            .zip(&self.ys)
            .map(|(x, y)| {
                let ax: Vec<f64> =
                    (0..r).map(|k| a[k * inp..(k + 1) * inp].iter().zip(x).map(|(p, q)| p * q).sum()).collect();
                let e = (0..out)
                    .map(|i| {
                        let wx: f64 = self.w[i * inp..(i + 1) * inp].iter().zip(x).map(|(p, q)| p * q).sum();
                        let bax: f64 = b[i * r..(i + 1) * r].iter().zip(&ax).map(|(p, q)| p * q).sum();
                        wx + self.scale * bax - y[i]
                    })
                    .collect();
                (e, ax)
            })
            .collect()
    }

    fn norm(&self) -> f64 {
        (self.xs.len() * self.out) as f64
    }

    pub fn loss(&self, a: &[f64], b: &[f64]) -> f64 {
        let sq: f64 = self.residuals(a, b).iter().map(|(e, _)| e.iter().map(|v| v * v).sum::<f64>()).sum();
        sq / self.norm()
    }

    /// Loss with analytic gradients `(∂L/∂A, ∂L/∂B)`.
    pub fn loss_and_gradients(&self, a: &[f64], b: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let (r, inp, out) = (self.rank, self.inp, self.out);
        let c = 2.0 * self.scale / self.norm();
        let mut ga = vec![0.0; r * inp];
        let mut gb = vec![0.0; out * r];
        let mut sq = 0.0;
        for ((e, ax), x) in self.residuals(a, b).iter().zip(&self.xs) {
            sq += e.iter().map(|v| v * v).sum::<f64>();
            for i in 0..out {
                for k in 0..r {
                    gb[i * r + k] += c * e[i] * ax[k];
                }
            }
            for k in 0..r {
                let bte: f64 = (0..out).map(|i| b[i * r + k] * e[i]).sum();
                for (g, &xj) in ga[k * inp..(k + 1) * inp].iter_mut().zip(x) {
                    *g += c * bte * xj;
                }
            }
        }
        (sq / self.norm(), ga, gb)
    }

    /// Largest relative error between the analytic gradient and central
    /// differences with step `h`, over every entry of `A` and `B`.
    pub fn gradient_check(&self, a: &[f64], b: &[f64], h: f64) -> f64 {
        let (_, ga, gb) = self.loss_and_gradients(a, b);
        let mut worst: f64 = 0.0;
        let mut probe = |which: usize, idx: usize, analytic: f64| {
            let (mut ap, mut bp) = (a.to_vec(), b.to_vec());
            let (mut am, mut bm) = (a.to_vec(), b.to_vec());
            if which == 0 {
                ap[idx] += h;
                am[idx] -= h;
            } else {
                bp[idx] += h;
                bm[idx] -= h;
            }
            let numeric = (self.loss(&ap, &bp) - self.loss(&am, &bm)) / (2.0 * h);
            worst = worst.max(relative_error(analytic, numeric));
        };
        for (i, &g) in ga.iter().enumerate() {
            probe(0, i, g);
        }
        for (i, &g) in gb.iter().enumerate() {
            probe(1, i, g);
        }
        worst
    }
}

/// `|a − b| / max(|a|, |b|)`, with both tiny (below 1e-10) counted as agreement.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom < 1e-10 {
        0.0
    } else {
        (a - b).abs() / denom
    }
}

fn to_matrix(rows: usize, cols: usize, v: &[f64]) -> Matrix {
    Matrix { rows, cols, data: v.iter().map(|&x| x as f32).collect() }
}

/// Fits a LoRA pair on top of the frozen `w_q` so that `(W + s·B·A)x ≈ y`.
///
/// Starts from `A ~ Normal(0, 0.02)`, `B = 0`. Stops early when the gradient
/// vanishes or the line search can no longer make progress.
pub fn qalft_fit(w_q: &QuantTensor, xs: &[Vec<f64>], ys: &[Vec<f64>], cfg: &QalftConfig) -> Result<QalftFit> {
    let before = w_q.encoding_hash();
    let problem = QalftProblem::new(w_q, xs, ys, cfg.rank, cfg.alpha)?;
    if !(cfg.learning_rate > 0.0) {
        return Err(Error::Config("learning rate must be positive".into()));
    }
    let ((r, inp), (out, _)) = problem.shapes();
    let mut rng = keyed_rng(cfg.seed, "qalft.a");
    let mut a: Vec<f64> = Matrix::randn(r, inp, INIT_STD, &mut rng).data.iter().map(|&v| v as f64).collect();
    let mut b = vec![0.0; out * r];

    let (mut loss, mut ga, mut gb) = problem.loss_and_gradients(&a, &b);
    let mut losses = vec![loss];
    let mut step = cfg.learning_rate;
    'outer: for _ in 0..cfg.steps {
        let gnorm2: f64 = ga.iter().chain(&gb).map(|g| g * g).sum();
        if gnorm2 == 0.0 {
            break;
        }
        for _ in 0..80 {
            let na: Vec<f64> = a.iter().zip(&ga).map(|(p, g)| p - step * g).collect();
            let nb: Vec<f64> = b.iter().zip(&gb).map(|(p, g)| p - step * g).collect();
            let (nl, nga, ngb) = problem.loss_and_gradients(&na, &nb);
            if nl <= loss - 1e-4 * step * gnorm2 {
                (a, b, loss, ga, gb) = (na, nb, nl, nga, ngb);
                losses.push(loss);
                step *= 2.0;
                continue 'outer;
            }
            step *= 0.5;
        }
        break;
    }

    let pair = LoraPair { a: to_matrix(r, inp, &a), b: to_matrix(out, r, &b) };
    let af: Vec<f64> = pair.a.data.iter().map(|&v| v as f64).collect();
    let bf: Vec<f64> = pair.b.data.iter().map(|&v| v as f64).collect();
    let final_loss = problem.loss(&af, &bf);
    let after = w_q.encoding_hash();
    if before != after {
        return Err(Error::Contract("base encoding changed during fitting".into()));
    }
    Ok(QalftFit { pair, rank: cfg.rank, alpha: cfg.alpha, losses, final_loss, base_hash: (before, after) })
}

/// Planted instance: `y = (W + u·vᵀ)·x` for seeded `x`, `u`, `v`. Returns `(xs, ys)`.
pub fn planted_rank1(w_q: &QuantTensor, samples: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    use rand_distr::{Distribution, Normal};
    let (out, inp) = w_q.shape();
    let w = w_q.dequantize();
    let mut rng = keyed_rng(seed, "qalft.planted");
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    let u: Vec<f64> = (0..out).map(|_| 0.3 * n.sample(&mut rng)).collect();
    let v: Vec<f64> = (0..inp).map(|_| 0.3 * n.sample(&mut rng)).collect();
    let xs: Vec<Vec<f64>> = (0..samples).map(|_| (0..inp).map(|_| n.sample(&mut rng)).collect()).collect();
    let ys = xs
        .iter()
        .map(|x| {
            let vx: f64 = v.iter().zip(x).map(|(p, q)| p * q).sum();
            (0..out).map(|i| w.row(i).iter().zip(x).map(|(&p, q)| p as f64 * q).sum::<f64>() + u[i] * vx).collect()
        })
        .collect();
    (xs, ys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::{quantize, QuantSpec};
    use rand::SeedableRng;

    fn base(seed: u64) -> QuantTensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        quantize(&Matrix::randn(6, 8, 0.5, &mut rng), &QuantSpec::symmetric_per_group(4, 4)).unwrap().frozen()
    }

    #[test]
    fn unfrozen_base_rejected() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let q = quantize(&Matrix::randn(4, 4, 1.0, &mut rng), &QuantSpec::symmetric_per_group(4, 4)).unwrap();
        let (xs, ys) = planted_rank1(&q, 4, 0);
        assert!(matches!(qalft_fit(&q, &xs, &ys, &QalftConfig::default()), Err(Error::Contract(_))));
        let f = q.frozen();
        assert!(qalft_fit(&f, &[], &[], &QalftConfig::default()).is_err());
    }

    #[test]
    fn zero_steps_keeps_b_zero() {
        let q = base(1);
        let (xs, ys) = planted_rank1(&q, 16, 1);
        let fit = qalft_fit(&q, &xs, &ys, &QalftConfig { steps: 0, ..Default::default() }).unwrap();
        assert!(fit.pair.b.data.iter().all(|&v| v == 0.0));
        assert_eq!(fit.losses.len(), 1);
        assert_eq!(fit.final_loss, fit.losses[0]);
    }

    #[test]
    fn trace_is_non_increasing_and_recovers_plant() {
        let q = base(2);
        let (xs, ys) = planted_rank1(&q, 32, 2);
        let fit = qalft_fit(&q, &xs, &ys, &QalftConfig::default()).unwrap();
        assert!(fit.losses.windows(2).all(|w| w[1] <= w[0]));
        assert!(fit.final_loss < 1e-6, "final loss {}", fit.final_loss);
        assert_eq!(fit.base_hash.0, fit.base_hash.1);
    }
}
