//! Fixed-point encoding into `Z_{2^w}`, wrapping ring arithmetic, one-time-pad
//! masks derived from the shared seed, and quantized server noise.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::RingWidth;
use crate::rng::{QueryKind, SeededRng, Stream};

/// Matrix of ring words. Words are kept reduced to the low `width` bits and
/// read as two's-complement signed values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RingMatrix {
    pub rows: usize,
    pub cols: usize,
    pub width: RingWidth,
    pub words: Vec<u64>,
}

impl RingMatrix {
    pub fn zeros(rows: usize, cols: usize, width: RingWidth) -> Self {
        RingMatrix { rows, cols, width, words: vec![0; rows * cols] }
    }

    pub fn from_words(rows: usize, cols: usize, width: RingWidth, words: Vec<u64>) -> Result<Self> {
        if words.len() != rows * cols {
            return Err(Error::invalid(format!(
                "{} words do not fill a {rows} x {cols} matrix",
                words.len()
            )));
        }
        let mask = width.word_mask();
        Ok(RingMatrix { rows, cols, width, words: words.into_iter().map(|w| w & mask).collect() })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn same_shape(&self, other: &RingMatrix) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.width == other.width
    }

    fn check_shape(&self, other: &RingMatrix) {
        assert!(
            self.same_shape(other),
            "ring matrix shape mismatch: {}x{}/{} vs {}x{}/{}",
            self.rows,
            self.cols,
            self.width.bits(),
            other.rows,
            other.cols,
            other.width.bits()
        );
    }

    pub fn wrapping_add_assign(&mut self, other: &RingMatrix) {
        self.check_shape(other);
        let mask = self.width.word_mask();
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a = a.wrapping_add(*b) & mask;
        }
    }

    pub fn wrapping_sub_assign(&mut self, other: &RingMatrix) {
        self.check_shape(other);
        let mask = self.width.word_mask();
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a = a.wrapping_sub(*b) & mask;
        }
    }

    /// Signed value of word `i`.
    pub fn signed(&self, i: usize) -> i64 {
        to_signed(self.words[i], self.width)
    }
}

pub fn to_signed(word: u64, width: RingWidth) -> i64 {
    match width {
        RingWidth::W32 => word as u32 as i32 as i64,
        RingWidth::W64 => word as i64,
    }
}

pub fn from_signed(value: i64, width: RingWidth) -> u64 {
    value as u64 & width.word_mask()
}

/// Fixed-point codec with `q` fraction bits over a `width`-bit ring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub q: u32,
    pub width: RingWidth,
}

impl FixedPoint {
    pub fn new(q: u32, width: RingWidth) -> Result<Self> {
        if q >= width.bits() {
            return Err(Error::invalid(format!("q = {q} leaves no integer bits in a {}-bit ring", width.bits())));
        }
        Ok(FixedPoint { q, width })
    }

    pub fn scale(&self) -> f64 {
        (self.q as f64).exp2()
    }

    /// Largest magnitude (exclusive) of a scaled value the ring can hold.
    pub fn limit(&self) -> f64 {
        ((self.width.bits() - 1) as f64).exp2()
    }

    /// `round(v * 2^q)`, ties away from zero, or `None` if it does not fit.
    pub fn quantize(&self, v: f64) -> Option<i64> {
        let scaled = (v * self.scale()).round();
        (scaled.abs() < self.limit()).then_some(scaled as i64)
    }

    pub fn encode_value(&self, v: f64) -> Option<u64> {
        self.quantize(v).map(|n| from_signed(n, self.width))
    }

    /// Encode a row-major `rows x cols` matrix.
    pub fn encode(&self, values: &[f64], rows: usize, cols: usize) -> Result<RingMatrix> {
        assert_eq!(values.len(), rows * cols, "value count must match the shape");
        let mut words = Vec::with_capacity(values.len());
        for (index, &value) in values.iter().enumerate() {
            let word = self.encode_value(value).ok_or(Error::Overflow {
                index,
                value,
                width: self.width.bits(),
                q: self.q,
            })?;
            words.push(word);
        }
        Ok(RingMatrix { rows, cols, width: self.width, words })
    }

    pub fn decode_word(&self, word: u64) -> f64 {
        to_signed(word, self.width) as f64 / self.scale()
    }

    pub fn decode(&self, m: &RingMatrix) -> Vec<f64> {
        m.words.iter().map(|&w| self.decode_word(w)).collect()
    }

    /// Server noise as a ring word: `round(gamma * 2^q)` reduced mod `2^w`.
    pub fn quantize_noise(&self, gamma: f64) -> u64 {
        // saturating float-to-int cast, then wrap into the ring
        from_signed((gamma * self.scale()).round() as i64, self.width)
    }
}

/// Masks of every party for one `(round, kind)` and their ring sum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSet {
    pub masks: Vec<RingMatrix>,
    pub total: RingMatrix,
}

impl MaskSet {
    pub fn party(&self, i: usize) -> &RingMatrix {
        &self.masks[i]
    }

    /// All-zero masks (test hook).
    pub fn zeros(parties: usize, rows: usize, cols: usize, width: RingWidth) -> Self {
        let zero = RingMatrix::zeros(rows, cols, width);
        MaskSet { masks: vec![zero.clone(); parties], total: zero }
    }

    /// Whether the masks still add up to `total`.
    pub fn cancels(&self) -> bool {
        let mut acc = self.total.clone();
        for m in &self.masks {
            acc.wrapping_sub_assign(m);
        }
        acc.words.iter().all(|&w| w == 0)
    }
}

/// Word `element` of `party`'s mask in `(round, kind)`; each element uses one
/// 64-bit stream word, truncated to the ring width.
pub fn mask_word(rng: &SeededRng, round: u32, kind: QueryKind, party: u32, element: u64, width: RingWidth) -> u64 {
    rng.word_at(Stream::Mask { round, kind, party }, element) & width.word_mask()
}

/// Derive the masks of all `parties` for one round and query.
pub fn derive_masks(
    rng: &SeededRng,
    round: u32,
    kind: QueryKind,
    parties: usize,
    rows: usize,
    cols: usize,
    width: RingWidth,
) -> MaskSet {
    let mask = width.word_mask();
    let mut total = RingMatrix::zeros(rows, cols, width);
    let masks: Vec<RingMatrix> = (0..parties)
        .map(|party| {
            let mut stream = rng.stream(Stream::Mask { round, kind, party: party as u32 });
            let words = (0..rows * cols).map(|_| stream.next_u64() & mask).collect();
            let m = RingMatrix { rows, cols, width, words };
            total.wrapping_add_assign(&m);
            m
        })
        .collect();
    MaskSet { masks, total }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FP64: FixedPoint = FixedPoint { q: 16, width: RingWidth::W64 };
    const FP32: FixedPoint = FixedPoint { q: 16, width: RingWidth::W32 };

    #[test]
    fn encode_examples() {
        assert_eq!(FP64.encode_value(1.0), Some(65536));
        assert_eq!(FP64.encode_value(-0.5), Some((-32768i64) as u64));
        assert_eq!(FP32.encode_value(-0.5), Some(0xFFFF_8000));
        assert_eq!(FP64.encode_value(2f64.powi(-17)), Some(1));
        assert_eq!(FP64.encode_value(-(2f64.powi(-17))), Some(u64::MAX));
    }

    #[test]
    fn decode_examples() {
        assert_eq!(FP64.decode_word(FP64.encode_value(0.25).unwrap()), 0.25);
        assert_eq!(FP64.decode_word(0), 0.0);
        assert_eq!(FP32.decode_word(0xFFFF_8000), -0.5);
        let x = 0.123_456_789;
        assert!((FP64.decode_word(FP64.encode_value(x).unwrap()) - x).abs() <= 2f64.powi(-17));
    }

    #[test]
    fn encode_overflow_names_index() {
        // 2^15 * 2^16 = 2^31 hits the 32-bit limit
        let err = FP32.encode(&[0.0, 1.0, 32768.0], 1, 3).unwrap_err();
        assert!(matches!(err, Error::Overflow { index: 2, .. }), "{err}");
        assert!(FP32.encode(&[32767.0], 1, 1).is_ok());
        assert!(FixedPoint::new(32, RingWidth::W32).is_err());
    }

    #[test]
    fn quantize_noise_examples() {
        assert_eq!(FP64.quantize_noise(0.0), 0);
        assert_eq!(FP64.quantize_noise(1.5 * 2f64.powi(-16)), 2);
        assert_eq!(FP64.quantize_noise(-1.5 * 2f64.powi(-16)), (-2i64) as u64);
    }

    #[test]
    fn masks_are_reproducible_and_cancel() {
        let rng = SeededRng::new(1234);
        let a = derive_masks(&rng, 3, QueryKind::Sums, 4, 5, 3, RingWidth::W64);
        let b = derive_masks(&SeededRng::new(1234), 3, QueryKind::Sums, 4, 5, 3, RingWidth::W64);
        assert_eq!(a, b);
        assert!(a.cancels());
        let c = derive_masks(&rng, 3, QueryKind::Counts, 4, 5, 3, RingWidth::W64);
        assert_ne!(a.masks[0].words, c.masks[0].words);
        for e in 0..15u64 {
            assert_eq!(a.masks[2].words[e as usize], mask_word(&rng, 3, QueryKind::Sums, 2, e, RingWidth::W64));
        }
    }

    #[test]
    fn ring_cancellation() {
        let rng = SeededRng::new(5);
        let set = derive_masks(&rng, 1, QueryKind::Sums, 3, 2, 2, RingWidth::W32);
        let inputs = [[1.0, -2.0, 0.5, 3.25], [0.0, 0.0, -0.75, 1.0], [10.0, 2.0, 0.25, -4.0]];
        let mut acc = RingMatrix::zeros(2, 2, RingWidth::W32);
        for (i, v) in inputs.iter().enumerate() {
            let mut enc = FP32.encode(v, 2, 2).unwrap();
            enc.wrapping_add_assign(set.party(i));
            acc.wrapping_add_assign(&enc);
        }
        acc.wrapping_sub_assign(&set.total);
        assert_eq!(FP32.decode(&acc), vec![11.0, 0.0, 0.0, 0.25]);
    }

    /// Chi-square over the top four bits of the mask stream.
    fn chi_square_top_nibble(words: &[u64], width: RingWidth) -> f64 {
        let shift = width.bits() - 4;
        let mut bins = [0usize; 16];
        for &w in words {
            bins[(w >> shift) as usize & 15] += 1;
        }
        let expected = words.len() as f64 / 16.0;
        bins.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum()
    }

    #[test]
    fn mask_words_look_uniform() {
        let rng = SeededRng::new(2024);
        for width in [RingWidth::W32, RingWidth::W64] {
            let set = derive_masks(&rng, 1, QueryKind::Sums, 1, 1000, 100, width);
            let words = &set.masks[0].words;
            // 15 degrees of freedom, 0.1% critical value
            assert!(chi_square_top_nibble(words, width) < 37.7);
            let low_bits: Vec<u64> = words.iter().map(|w| w << (64 - 4)).collect();
            assert!(chi_square_top_nibble(&low_bits, RingWidth::W64) < 37.7);
        }
    }

    proptest! {
        #[test]
        fn aggregation_is_exact(
            parties in 1usize..=8,
            seed in any::<u64>(),
            values in prop::collection::vec(-1000.0f64..1000.0, 6 * 8),
        ) {
            let rng = SeededRng::new(seed);
            let set = derive_masks(&rng, 7, QueryKind::Sums, parties, 2, 3, RingWidth::W64);
            let mut acc = RingMatrix::zeros(2, 3, RingWidth::W64);
            let mut expected = [0i64; 6];
            for i in 0..parties {
                let v = &values[i * 6..(i + 1) * 6];
                let mut enc = FP64.encode(v, 2, 3).unwrap();
                for (e, x) in expected.iter_mut().zip(v) {
                    *e += FP64.quantize(*x).unwrap();
                }
                enc.wrapping_add_assign(set.party(i));
                acc.wrapping_add_assign(&enc);
            }
            acc.wrapping_sub_assign(&set.total);
            let decoded = FP64.decode(&acc);
            for (got, want) in decoded.iter().zip(expected) {
                prop_assert_eq!(*got, want as f64 / FP64.scale());
            }
        }

        #[test]
        fn round_trip_within_half_ulp(x in -1e6f64..1e6) {
            let back = FP64.decode_word(FP64.encode_value(x).unwrap());
            prop_assert!((back - x).abs() <= 2f64.powi(-17) * (1.0 + 1e-9));
        }
    }
}
