//! Gray-coded K-PSK carrying a pair of single-precision floats.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{complex_normal, CVector, C64};

/// Bits carried per latent: two IEEE-754 singles.
pub const PAYLOAD_BITS: u32 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PskScheme {
    bits: u32,
}

/// Demodulated latent and the number of non-finite values replaced by zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Demodulated {
    pub values: [f32; 2],
    pub replaced: usize,
}

impl PskScheme {
    /// `order` must be a power of two between 2 and 2³².
    pub fn new(order: u64) -> Result<Self> {
        if order < 2 || !order.is_power_of_two() || order > 1 << 32 {
            return Err(Error::Domain(format!("PSK order {order} is not a power of two in 2..=2^32")));
        }
        Ok(PskScheme {
            bits: order.trailing_zeros(),
        })
    }

    /// Smallest order whose symbol count fits in `min(n_t, n_r)` streams.
    pub fn select(n_t: usize, n_r: usize) -> Result<Self> {
        let streams = n_t.min(n_r);
        (1..=32)
            .find(|&b| PAYLOAD_BITS.div_ceil(b) as usize <= streams)
            .map(|bits| PskScheme { bits })
            .ok_or_else(|| {
                Error::Capacity(format!(
                    "{streams} streams cannot carry {PAYLOAD_BITS} bits with at most 32 bits per symbol"
                ))
            })
    }

    pub fn order(&self) -> u64 {
        1u64 << self.bits
    }

    pub fn bits_per_symbol(&self) -> u32 {
        self.bits
    }

    /// Symbols per latent, `⌈64 / log₂K⌉`.
    pub fn symbols(&self) -> usize {
        PAYLOAD_BITS.div_ceil(self.bits) as usize
    }

    fn point(&self, index: u64) -> C64 {
        C64::from_polar(1.0, 2.0 * PI * index as f64 / self.order() as f64)
    }

    fn chunk_mask(&self) -> u64 {
        if self.bits == 64 {
            u64::MAX
        } else {
            (1u64 << self.bits) - 1
        }
    }

    /// Unit-energy symbols, most significant bits first; the last symbol is
    /// zero-padded.
    pub fn modulate(&self, latent: [f32; 2]) -> CVector {
        let word = ((latent[0].to_bits() as u64) << 32) | latent[1].to_bits() as u64;
        let pad = self.symbols() as u32 * self.bits - PAYLOAD_BITS;
        let padded = (word as u128) << pad;
        (0..self.symbols())
            .map(|k| {
                let shift = (self.symbols() - 1 - k) as u32 * self.bits;
                let bits = ((padded >> shift) as u64) & self.chunk_mask();
                self.point(gray_decode(bits))
            })
            .collect()
    }

    /// Nearest constellation point per symbol; any amplitude scaling of the
    /// estimates is irrelevant.
    pub fn demodulate(&self, symbols: &CVector) -> Result<Demodulated> {
        if symbols.len() != self.symbols() {
            return Err(Error::dim(format!(
                "{} symbols for a scheme that uses {}",
                symbols.len(),
                self.symbols()
            )));
        }
        let pad = self.symbols() as u32 * self.bits - PAYLOAD_BITS;
        let mut padded: u128 = 0;
        for z in symbols.iter() {
            padded = (padded << self.bits) | gray_encode(self.nearest(*z)) as u128;
        }
        let word = (padded >> pad) as u64;
        let mut replaced = 0;
        let mut values = [f32::from_bits((word >> 32) as u32), f32::from_bits(word as u32)];
        for v in &mut values {
            if !v.is_finite() {
                *v = 0.0;
                replaced += 1;
            }
        }
        Ok(Demodulated { values, replaced })
    }

    /// Constellation index closest to `z`.
    pub fn nearest(&self, z: C64) -> u64 {
        let k = self.order() as f64;
        let idx = (z.arg().rem_euclid(2.0 * PI) * k / (2.0 * PI)).round() as u64;
        idx % self.order()
    }

    /// Monte-Carlo symbol error rate over an AWGN channel at per-symbol SNR
    /// `snr` (linear).
    pub fn simulate_ser<R: Rng + ?Sized>(&self, snr: f64, trials: usize, rng: &mut R) -> f64 {
        let noise = 1.0 / snr;
        let mut errors = 0usize;
        for _ in 0..trials {
            let idx = rng.random_range(0..self.order());
            let y = self.point(idx) + complex_normal(rng, noise);
            errors += usize::from(self.nearest(y) != idx);
        }
        errors as f64 / trials as f64
    }
}

pub fn gray_encode(n: u64) -> u64 {
    n ^ (n >> 1)
}

pub fn gray_decode(mut g: u64) -> u64 {
    let mut n = g;
    while g > 0 {
        g >>= 1;
        n ^= g;
    }
    n
}

/// Gaussian tail probability.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// High-SNR approximation `2Q(√(2·snr)·sin(π/K))` of the K-PSK symbol error rate.
pub fn psk_ser_approx(order: u64, snr: f64) -> f64 {
    (2.0 * q_function((2.0 * snr).sqrt() * (PI / order as f64).sin())).min(1.0)
}
