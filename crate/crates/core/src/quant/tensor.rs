use std::ops::Range;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::sparse::SparsitySpec;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Bit widths the quantizer supports.
pub const BIT_MENU: [u8; 4] = [2, 3, 4, 8];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Codes in `[-qmax, qmax]`, `qmax = 2^(bits-1) - 1`, no zero-point.
    Symmetric,
    /// Codes in `[0, 2^bits - 1]` with a per-group zero-point.
    Asymmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Granularity {
    PerTensor,
    PerRow,
    /// Contiguous groups of `g` elements within each row; the last group of
    /// a row is shorter when `g` does not divide the row length.
    PerGroup {
        g: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantSpec {
    pub bits: u8,
    pub scheme: Scheme,
    pub granularity: Granularity,
    #[serde(default = "sixteen")]
    pub scale_bits: u8,
    #[serde(default = "sixteen")]
    pub zero_point_bits: u8,
}

fn sixteen() -> u8 {
    16
}

impl QuantSpec {
    pub fn new(bits: u8, scheme: Scheme, granularity: Granularity) -> Self {
        Self { bits, scheme, granularity, scale_bits: 16, zero_point_bits: 16 }
    }

    pub fn symmetric_per_group(bits: u8, g: usize) -> Self {
        Self::new(bits, Scheme::Symmetric, Granularity::PerGroup { g })
    }

    pub fn with_bits(self, bits: u8) -> Self {
        Self { bits, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !BIT_MENU.contains(&self.bits) {
            return Err(Error::Config(format!("unsupported bit width {}; expected one of {BIT_MENU:?}", self.bits)));
        }
        if let Granularity::PerGroup { g: 0 } = self.granularity {
            return Err(Error::Config("group size must be positive".into()));
        }
        Ok(())
    }

    pub fn qmax(&self) -> i32 {
        (1 << (self.bits - 1)) - 1
    }

    pub fn levels(&self) -> i32 {
        (1 << self.bits) - 1
    }

    pub fn group_count(&self, rows: usize, cols: usize) -> usize {
        match self.granularity {
            Granularity::PerTensor => 1,
            Granularity::PerRow => rows,
            Granularity::PerGroup { g } => rows * cols.div_ceil(g),
        }
    }

    /// Flat index ranges of each quantization group, in storage order.
    pub fn group_ranges(&self, rows: usize, cols: usize) -> Vec<Range<usize>> {
        match self.granularity {
            Granularity::PerTensor => std::iter::once(0..rows * cols).collect(),
            Granularity::PerRow => (0..rows).map(|r| r * cols..(r + 1) * cols).collect(),
            Granularity::PerGroup { g } => (0..rows)
                .flat_map(|r| (0..cols).step_by(g).map(move |c| r * cols + c..r * cols + (c + g).min(cols)))
                .collect(),
        }
    }

    /// Bits spent on scales and zero-points.
    pub fn overhead_bits(&self, rows: usize, cols: usize) -> u64 {
        let per_group = self.scale_bits as u64
            + match self.scheme {
                Scheme::Symmetric => 0,
                Scheme::Asymmetric => self.zero_point_bits as u64,
            };
        self.group_count(rows, cols) as u64 * per_group
    }
}

/// Round half to even.
pub(crate) fn round_even(x: f64) -> f64 {
    let r = x.round();
    if (x - x.trunc()).abs() == 0.5 {
        2.0 * (x / 2.0).round()
    } else {
        r
    }
}

/// Per-group quantization parameters for the values in `xs`.
pub(crate) fn group_params(xs: &[f32], spec: &QuantSpec) -> (f32, i32) {
    let (lo, hi) =
        xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v as f64), hi.max(v as f64)));
    if hi == lo && lo != 0.0 {
        // single-value group: scale from |c| so the value is exact
        let scale = lo.abs() as f32;
        let zp = match spec.scheme {
            Scheme::Symmetric => 0,
            Scheme::Asymmetric => -(lo.signum() as i32),
        };
        return (scale, zp);
    }
    match spec.scheme {
        Scheme::Symmetric => {
            let amax = lo.abs().max(hi.abs());
            let scale = if amax == 0.0 { 1.0 } else { amax / spec.qmax() as f64 };
            (scale as f32, 0)
        }
        Scheme::Asymmetric => {
            if hi == lo {
                return (1.0, 0);
            }
            let scale = ((hi - lo) / spec.levels() as f64) as f32;
            let zp = round_even(-lo / scale as f64) as i32;
            (scale, zp)
        }
    }
}

pub(crate) fn encode(x: f32, scale: f32, zp: i32, spec: &QuantSpec) -> i32 {
    let q = round_even(x as f64 / scale as f64);
    match spec.scheme {
        Scheme::Symmetric => q.clamp(-(spec.qmax() as f64), spec.qmax() as f64) as i32,
        Scheme::Asymmetric => (q + zp as f64).clamp(0.0, spec.levels() as f64) as i32,
    }
}

pub(crate) fn decode(code: i32, scale: f32, zp: i32, scheme: Scheme) -> f32 {
    match scheme {
        Scheme::Symmetric => (code as f64 * scale as f64) as f32,
        Scheme::Asymmetric => ((code - zp) as f64 * scale as f64) as f32,
    }
}

/// Quantized weight matrix.
///
/// Once frozen, scales and zero-points can no longer be changed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantTensor {
    spec: QuantSpec,
    rows: usize,
    cols: usize,
    codes: Vec<i32>,
    scales: Vec<f32>,
    zero_points: Vec<i32>,
    mask: Option<Vec<bool>>,
    sparsity: Option<SparsitySpec>,
    frozen: bool,
}

impl QuantTensor {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        spec: QuantSpec,
        (rows, cols): (usize, usize),
        codes: Vec<i32>,
        scales: Vec<f32>,
        zero_points: Vec<i32>,
        mask: Option<Vec<bool>>,
        sparsity: Option<SparsitySpec>,
        frozen: bool,
    ) -> Result<Self> {
        spec.validate()?;
        let groups = spec.group_count(rows, cols);
        let zp_len = if spec.scheme == Scheme::Asymmetric { groups } else { 0 };
        if codes.len() != rows * cols
            || scales.len() != groups
            || zero_points.len() != zp_len
            || mask.as_ref().is_some_and(|m| m.len() != rows * cols)
        {
            return Err(Error::Format("quantized tensor parts have inconsistent lengths".into()));
        }
        Ok(Self { spec, rows, cols, codes, scales, zero_points, mask, sparsity, frozen })
    }

    pub fn spec(&self) -> &QuantSpec {
        &self.spec
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn codes(&self) -> &[i32] {
        &self.codes
    }

    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    pub fn zero_points(&self) -> &[i32] {
        &self.zero_points
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn sparsity(&self) -> Option<&SparsitySpec> {
        self.sparsity.as_ref()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Permanently freezes the quantization encodings.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn frozen(mut self) -> Self {
        self.frozen = true;
        self
    }

    pub fn set_scale(&mut self, group: usize, scale: f32) -> Result<()> {
        self.check_mutable()?;
        let s = self.scales.get_mut(group).ok_or_else(|| Error::InvalidInput(format!("no group {group}")))?;
        *s = scale;
        Ok(())
    }

    pub fn set_zero_point(&mut self, group: usize, zp: i32) -> Result<()> {
        self.check_mutable()?;
        let z = self
            .zero_points
            .get_mut(group)
            .ok_or_else(|| Error::InvalidInput(format!("no zero-point for group {group}")))?;
        *z = zp;
        Ok(())
    }

    fn check_mutable(&self) -> Result<()> {
        if self.frozen {
            return Err(Error::Contract("quantization encodings are frozen".into()));
        }
        Ok(())
    }

    pub fn dequantize(&self) -> Matrix {
        let mut data = vec![0.0f32; self.codes.len()];
        for (g, range) in self.spec.group_ranges(self.rows, self.cols).into_iter().enumerate() {
            let scale = self.scales[g];
            let zp = self.zero_points.get(g).copied().unwrap_or(0);
            for i in range {
                data[i] = decode(self.codes[i], scale, zp, self.spec.scheme);
            }
        }
        if let Some(mask) = &self.mask {
            for (v, &keep) in data.iter_mut().zip(mask) {
                if !keep {
                    *v = 0.0;
                }
            }
        }
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    /// Weights whose codes are stored (unmasked ones).
    pub fn kept_count(&self) -> usize {
        self.mask.as_ref().map_or(self.codes.len(), |m| m.iter().filter(|&&k| k).count())
    }

    /// Exact stored-bit count: codes of kept weights, scales, zero-points and mask.
    pub fn bit_count(&self) -> u64 {
        let mask_bits = match (&self.sparsity, &self.mask) {
            (Some(s), _) => s.mask_bits(self.codes.len()),
            (None, Some(_)) => self.codes.len() as u64,
            (None, None) => 0,
        };
        self.kept_count() as u64 * self.spec.bits as u64 + self.spec.overhead_bits(self.rows, self.cols) + mask_bits
    }

    /// Bits per original weight as an exact ratio.
    pub fn bpw_ratio(&self) -> Ratio<u64> {
        Ratio::new(self.bit_count(), self.codes.len() as u64)
    }

    pub fn bpw(&self) -> f64 {
        ratio_f64(self.bpw_ratio())
    }

    pub(crate) fn hash_into(&self, h: &mut Sha256) {
        h.update(serde_json::to_vec(&self.spec).expect("spec serializes"));
        h.update((self.rows as u64).to_le_bytes());
        h.update((self.cols as u64).to_le_bytes());
        self.codes.iter().for_each(|c| h.update(c.to_le_bytes()));
        self.scales.iter().for_each(|s| h.update(s.to_le_bytes()));
        self.zero_points.iter().for_each(|z| h.update(z.to_le_bytes()));
        if let Some(m) = &self.mask {
            h.update(m.iter().map(|&b| b as u8).collect::<Vec<u8>>());
        }
    }

    /// SHA-256 of the encodings (codes, scales, zero-points, mask).
    pub fn encoding_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        self.hash_into(&mut h);
        h.finalize().into()
    }
}

pub(crate) fn ratio_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Quantizes `tensor` group by group (see [`QuantSpec`]).
pub fn quantize(tensor: &Matrix, spec: &QuantSpec) -> Result<QuantTensor> {
    quantize_masked(tensor, spec, None, None)
}

/// Quantizes with an optional sparsity mask; masked weights dequantize to 0
/// and are excluded from the code-bit count.
pub fn quantize_masked(
    tensor: &Matrix,
    spec: &QuantSpec,
    mask: Option<Vec<bool>>,
    sparsity: Option<SparsitySpec>,
) -> Result<QuantTensor> {
    spec.validate()?;
    if tensor.is_empty() {
        return Err(Error::InvalidInput("cannot quantize an empty tensor".into()));
    }
    if let Granularity::PerGroup { g } = spec.granularity {
        if g > tensor.cols {
            return Err(Error::Config(format!("group size {g} exceeds row length {}", tensor.cols)));
        }
    }
    let mut codes = vec![0i32; tensor.len()];
    let mut scales = Vec::new();
    let mut zero_points = Vec::new();
    for range in spec.group_ranges(tensor.rows, tensor.cols) {
        let xs = &tensor.data[range.clone()];
        let (scale, zp) = group_params(xs, spec);
        for (c, &x) in codes[range].iter_mut().zip(xs) {
            *c = encode(x, scale, zp, spec);
        }
        scales.push(scale);
        if spec.scheme == Scheme::Asymmetric {
            zero_points.push(zp);
        }
    }
    QuantTensor::from_parts(*spec, tensor.shape(), codes, scales, zero_points, mask, sparsity, false)
}

pub fn dequantize(qt: &QuantTensor) -> Matrix {
    qt.dequantize()
}

/// Per-tensor quantize-then-dequantize for activations (8 or 16 bits).
pub fn fake_quant(x: &[f32], bits: u8, scheme: Scheme) -> Result<Vec<f32>> {
    if bits != 8 && bits != 16 {
        return Err(Error::Config(format!("activation fake-quant supports 8 or 16 bits, got {bits}")));
    }
    if x.is_empty() {
        return Ok(Vec::new());
    }
    let spec = QuantSpec { bits, scheme, granularity: Granularity::PerTensor, scale_bits: 16, zero_point_bits: 16 };
    let (scale, zp) = group_params(x, &spec);
    Ok(x.iter().map(|&v| decode(encode(v, scale, zp, &spec), scale, zp, scheme)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_half_even() {
        assert_eq!(round_even(2.5), 2.0);
        assert_eq!(round_even(3.5), 4.0);
        assert_eq!(round_even(-2.5), -2.0);
        assert_eq!(round_even(-0.4), 0.0);
        assert_eq!(round_even(1.6), 2.0);
    }

    #[test]
    fn zeros_round_trip_exactly() {
        let m = Matrix::zeros(3, 8);
        for &bits in &BIT_MENU {
            for scheme in [Scheme::Symmetric, Scheme::Asymmetric] {
                let qt = quantize(&m, &QuantSpec::new(bits, scheme, Granularity::PerGroup { g: 4 })).unwrap();
                assert_eq!(qt.dequantize(), m);
                assert!(qt.scales().iter().all(|&s| s == 1.0));
            }
        }
    }

    #[test]
    fn symmetric_8bit_extremes() {
        let m = Matrix::from_vec(1, 2, vec![-1.0, 1.0]).unwrap();
        let qt = quantize(&m, &QuantSpec::new(8, Scheme::Symmetric, Granularity::PerTensor)).unwrap();
        assert_eq!(qt.scales()[0], (1.0f64 / 127.0) as f32);
        assert_eq!(qt.codes(), &[-127, 127]);
        assert_eq!(qt.dequantize(), m);
    }

    #[test]
    fn constant_tensor_exact() {
        let m = Matrix::filled(2, 4, -0.75);
        for scheme in [Scheme::Symmetric, Scheme::Asymmetric] {
            let qt = quantize(&m, &QuantSpec::new(3, scheme, Granularity::PerRow)).unwrap();
            assert_eq!(qt.dequantize(), m);
        }
    }

    #[test]
    fn errors() {
        assert!(quantize(&Matrix::zeros(0, 0), &QuantSpec::symmetric_per_group(4, 2)).is_err());
        assert!(quantize(&Matrix::zeros(2, 4), &QuantSpec::symmetric_per_group(4, 8)).is_err());
        assert!(quantize(&Matrix::zeros(2, 4), &QuantSpec::symmetric_per_group(5, 2)).is_err());
    }

    #[test]
    fn frozen_rejects_mutation() {
        let m = Matrix::from_vec(1, 4, vec![0.1, -0.2, 0.3, 0.4]).unwrap();
        let mut qt = quantize(&m, &QuantSpec::new(4, Scheme::Asymmetric, Granularity::PerTensor)).unwrap();
        qt.set_scale(0, 0.5).unwrap();
        qt.freeze();
        let before = qt.encoding_hash();
        assert!(matches!(qt.set_scale(0, 0.25), Err(Error::Contract(_))));
        assert!(matches!(qt.set_zero_point(0, 1), Err(Error::Contract(_))));
        assert_eq!(qt.encoding_hash(), before);
    }

    #[test]
    fn bpw_dense_group128() {
        let m = Matrix::zeros(1, 1024);
        let qt = quantize(&m, &QuantSpec::symmetric_per_group(4, 128)).unwrap();
        assert_eq!(qt.bpw_ratio(), Ratio::new(4224, 1024));
        assert_eq!(qt.bpw(), 4.125);
        let qt8 = quantize(&m, &QuantSpec::symmetric_per_group(8, 128)).unwrap();
        assert_eq!(qt8.bpw(), 8.125);
    }

    #[test]
    fn fake_quant_contract() {
        assert!(fake_quant(&[1.0], 4, Scheme::Symmetric).is_err());
        assert_eq!(fake_quant(&[0.3; 5], 8, Scheme::Symmetric).unwrap(), vec![0.3; 5]);
        assert_eq!(fake_quant(&[0.3; 5], 8, Scheme::Asymmetric).unwrap(), vec![0.3; 5]);
        let grid: Vec<f32> = (0..1000).map(|i| -1.0 + 2.0 * i as f32 / 999.0).collect();
        let out = fake_quant(&grid, 8, Scheme::Symmetric).unwrap();
        let worst = grid.iter().zip(&out).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        assert!(worst <= 0.5 / 127.0 + 1e-7, "{worst}");
    }

    #[test]
    fn group_ranges_cover_ragged_rows() {
        let spec = QuantSpec::symmetric_per_group(4, 3);
        let r = spec.group_ranges(2, 7);
        assert_eq!(r, vec![0..3, 3..6, 6..7, 7..10, 10..13, 13..14]);
        assert_eq!(spec.group_count(2, 7), 6);
    }
}
