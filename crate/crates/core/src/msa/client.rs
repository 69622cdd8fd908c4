//! Client side of one aggregation round: mask, send, unmask.

use super::wire::{MsaMessage, MsgKind};
use crate::cluster::{GlobalUpdate, LocalUpdate};
use crate::error::{Error, Result};
use crate::ringcodec::{derive_masks, FixedPoint, MaskSet, RingMatrix};
use crate::rng::{QueryKind, SeededRng};

/// Masks of both queries in one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundMasks {
    pub sums: MaskSet,
    pub counts: MaskSet,
}

impl RoundMasks {
    pub fn derive(rng: &SeededRng, round: u32, parties: usize, k: usize, d: usize, codec: FixedPoint) -> Self {
        let masks = RoundMasks {
            sums: derive_masks(rng, round, QueryKind::Sums, parties, k, d, codec.width),
            counts: derive_masks(rng, round, QueryKind::Counts, parties, k, 1, codec.width),
        };
        debug_assert!(masks.sums.cancels() && masks.counts.cancels());
        masks
    }

    /// All-zero masks (test hook).
    pub fn zeros(parties: usize, k: usize, d: usize, codec: FixedPoint) -> Self {
        RoundMasks {
            sums: MaskSet::zeros(parties, k, d, codec.width),
            counts: MaskSet::zeros(parties, k, 1, codec.width),
        }
    }
}

fn masked(values: &[f64], rows: usize, cols: usize, mask: &RingMatrix, codec: FixedPoint) -> Result<RingMatrix> {
    let mut m = codec.encode(values, rows, cols)?;
    m.wrapping_add_assign(mask);
    Ok(m)
}

/// Encode and one-time-pad `party`'s update: a `k x d` sums message and a
/// `k x 1` counts message.
pub fn client_send(
    update: &LocalUpdate,
    round: u32,
    party: usize,
    masks: &RoundMasks,
    codec: FixedPoint,
) -> Result<[MsaMessage; 2]> {
    let (k, d) = (update.k, update.d);
    let sums = masked(&update.sums, k, d, masks.sums.party(party), codec)?;
    let counts = masked(&update.counts, k, 1, masks.counts.party(party), codec)?;
    Ok([MsaMessage::new(round, MsgKind::RelSums, sums)?, MsaMessage::new(round, MsgKind::Counts, counts)?])
}

/// Remove the mask total from a broadcast result and decode it.
pub fn client_receive(msg: &MsaMessage, round: u32, masks: &MaskSet, codec: FixedPoint) -> Result<Vec<f64>> {
    if msg.round != round {
        return Err(Error::violation(format!("result for round {}, expected {round}", msg.round)));
    }
    if msg.kind != MsgKind::NoisedResult {
        return Err(Error::violation(format!("expected a noised result, got {:?}", msg.kind)));
    }
    if !msg.matrix.same_shape(&masks.total) {
        return Err(Error::violation("result shape differs from the mask shape"));
    }
    let mut m = msg.matrix.clone();
    m.wrapping_sub_assign(&masks.total);
    Ok(codec.decode(&m))
}

/// Decode both broadcast results of a round into a global update.
pub fn receive_update(
    sums: &MsaMessage,
    counts: &MsaMessage,
    round: u32,
    masks: &RoundMasks,
    codec: FixedPoint,
) -> Result<GlobalUpdate> {
    let k = masks.counts.total.rows;
    let d = masks.sums.total.cols;
    Ok(GlobalUpdate {
        k,
        d,
        sums: client_receive(sums, round, &masks.sums, codec)?,
        counts: client_receive(counts, round, &masks.counts, codec)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msa::server::{server_aggregate, Noise, NoiseSource};
    use crate::params::RingWidth;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const FP: FixedPoint = FixedPoint { q: 16, width: RingWidth::W64 };

    fn update(k: usize, d: usize, rng: &mut impl Rng) -> LocalUpdate {
        LocalUpdate {
            k,
            d,
            sums: (0..k * d).map(|_| rng.random_range(-50.0..50.0)).collect(),
            counts: (0..k).map(|_| rng.random_range(0..100) as f64).collect(),
        }
    }

    fn aggregate(msgs: &[[MsaMessage; 2]], round: u32) -> [MsaMessage; 2] {
        let mut rng = NoiseSource::Seeded(0).rng(round, QueryKind::Sums);
        let col = |i: usize| msgs.iter().map(|m| m[i].clone()).collect::<Vec<_>>();
        [
            server_aggregate(&col(0), round, MsgKind::RelSums, Noise::None, FP, &mut rng).unwrap(),
            server_aggregate(&col(1), round, MsgKind::Counts, Noise::None, FP, &mut rng).unwrap(),
        ]
    }

    #[test]
    fn zero_update_zero_mask_is_zero_payload() {
        let masks = RoundMasks::zeros(1, 2, 3, FP);
        let [s, c] = client_send(&LocalUpdate::zeros(2, 3), 1, 0, &masks, FP).unwrap();
        assert!(s.matrix.words.iter().chain(&c.matrix.words).all(|&w| w == 0));
        assert_eq!((s.matrix.rows, s.matrix.cols, c.matrix.cols), (2, 3, 1));
    }

    #[test]
    fn fresh_masks_per_round() {
        let rng = SeededRng::new(4);
        let u = LocalUpdate::zeros(2, 2);
        let a = client_send(&u, 1, 0, &RoundMasks::derive(&rng, 1, 2, 2, 2, FP), FP).unwrap();
        let b = client_send(&u, 2, 0, &RoundMasks::derive(&rng, 2, 2, 2, 2, FP), FP).unwrap();
        assert_ne!(a[0].matrix, b[0].matrix);
        assert_ne!(a[1].matrix, b[1].matrix);
    }

    #[test]
    fn decode_path_matches_plaintext_sum() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let seed = SeededRng::new(77);
        for trial in 0..50u32 {
            let (m, k, d) = (r.random_range(1..6), r.random_range(1..5), r.random_range(1..5));
            let masks = RoundMasks::derive(&seed, trial, m, k, d, FP);
            let updates: Vec<_> = (0..m).map(|_| update(k, d, &mut r)).collect();
            let msgs: Vec<_> = updates.iter().enumerate().map(|(i, u)| client_send(u, trial, i, &masks, FP).unwrap()).collect();
            let [s, c] = aggregate(&msgs, trial);
            let global = receive_update(&s, &c, trial, &masks, FP).unwrap();
            for e in 0..k * d {
                let expected: i64 = updates.iter().map(|u| FP.quantize(u.sums[e]).unwrap()).sum();
                assert_eq!(global.sums[e], expected as f64 / FP.scale());
            }
            for j in 0..k {
                assert_eq!(global.counts[j], updates.iter().map(|u| u.counts[j]).sum::<f64>());
            }
        }
    }

    #[test]
    fn clients_decode_identically_and_tampering_is_linear() {
        let seed = SeededRng::new(5);
        let masks = RoundMasks::derive(&seed, 3, 2, 1, 2, FP);
        let u = LocalUpdate { k: 1, d: 2, sums: vec![0.5, -0.25], counts: vec![3.0] };
        let msgs = [client_send(&u, 3, 0, &masks, FP).unwrap(), client_send(&u, 3, 1, &masks, FP).unwrap()];
        let [s, _] = aggregate(&msgs, 3);
        let a = client_receive(&s, 3, &masks.sums, FP).unwrap();
        let b = client_receive(&s, 3, &masks.sums, FP).unwrap();
        assert_eq!(a, vec![1.0, -0.5]);
        assert_eq!(a, b);
        let mut tampered = s.clone();
        tampered.matrix.words[1] = tampered.matrix.words[1].wrapping_add(3);
        let t = client_receive(&tampered, 3, &masks.sums, FP).unwrap();
        assert_eq!(t[1] - a[1], 3.0 / FP.scale());
        assert!(client_receive(&s, 4, &masks.sums, FP).is_err());
    }

    #[test]
    fn overflow_aborts_send() {
        let fp32 = FixedPoint { q: 16, width: RingWidth::W32 };
        let masks = RoundMasks::zeros(1, 1, 1, fp32);
        let u = LocalUpdate { k: 1, d: 1, sums: vec![40_000.0], counts: vec![1.0] };
        assert!(matches!(client_send(&u, 1, 0, &masks, fp32), Err(Error::Overflow { index: 0, .. })));
    }
}
