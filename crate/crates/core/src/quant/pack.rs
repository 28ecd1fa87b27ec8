//! Little-endian, LSB-first bit packing of quantization codes.
//!
//! Code `i` occupies bits `[i·bits, (i+1)·bits)` of the stream, where bit `k`
//! is bit `k % 8` of byte `k / 8`. Symmetric codes are stored offset by
//! `2^(bits-1)` so every stored value is unsigned.

use super::tensor::Scheme;
use crate::error::{Error, Result};

fn offset(bits: u8, scheme: Scheme) -> i64 {
    match scheme {
        Scheme::Symmetric => 1 << (bits - 1),
        Scheme::Asymmetric => 0,
    }
}

pub fn pack_codes(codes: &[i32], bits: u8, scheme: Scheme) -> Vec<u8> {
    let off = offset(bits, scheme);
    let mut out = vec![0u8; (codes.len() * bits as usize).div_ceil(8)];
    for (i, &c) in codes.iter().enumerate() {
        let u = (c as i64 + off) as u64;
        for b in 0..bits as usize {
            if (u >> b) & 1 == 1 {
                let k = i * bits as usize + b;
                out[k / 8] |= 1 << (k % 8);
            }
        }
    }
    out
}

pub fn unpack_codes(bytes: &[u8], count: usize, bits: u8, scheme: Scheme) -> Result<Vec<i32>> {
    if bytes.len() != (count * bits as usize).div_ceil(8) {
        return Err(Error::Format(format!("{} code bytes for {count} codes of {bits} bits", bytes.len())));
    }
    let off = offset(bits, scheme);
    Ok((0..count)
        .map(|i| {
            let mut u = 0i64;
            for b in 0..bits as usize {
                let k = i * bits as usize + b;
                u |= (((bytes[k / 8] >> (k % 8)) & 1) as i64) << b;
            }
            (u - off) as i32
        })
        .collect())
}

pub fn pack_mask(mask: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; mask.len().div_ceil(8)];
    for (i, &m) in mask.iter().enumerate() {
        if m {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

pub fn unpack_mask(bytes: &[u8], count: usize) -> Vec<bool> {
    (0..count).map(|i| (bytes[i / 8] >> (i % 8)) & 1 == 1).collect()
}
