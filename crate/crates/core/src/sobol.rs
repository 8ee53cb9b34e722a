//! Sobol low-discrepancy sequences for space-filling designs.
//!
//! Gray-code construction with Joe-Kuo direction numbers, supporting up to
//! ten dimensions (plenty for the configuration boxes used here). `point(i)`
//! is random-access and skips the all-zero first element of the raw sequence.

use crate::error::{Error, Result};

const BITS: u32 = 32;

/// Primitive polynomial data per dimension beyond the first:
/// (degree s, coefficient bits a, initial direction integers m).
const JOE_KUO: [(u32, u32, &[u32]); 9] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
];

pub const MAX_DIMENSION: usize = JOE_KUO.len() + 1;

pub struct SobolSequence {
    /// `directions[d][k]` is V_k for dimension d, scaled to 32 bits.
    directions: Vec<[u32; BITS as usize]>,
}

impl SobolSequence {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIMENSION {
            return Err(Error::InvalidArgument(format!(
                "Sobol dimension {dim} outside 1..={MAX_DIMENSION}"
            )));
        }
        let mut directions = Vec::with_capacity(dim);
        // First dimension: van der Corput in base 2.
        let mut first = [0u32; BITS as usize];
        for (k, v) in first.iter_mut().enumerate() {
            *v = 1 << (BITS - 1 - k as u32);
        }
        directions.push(first);

        for &(s, a, m_init) in JOE_KUO.iter().take(dim - 1) {
            let mut m = vec![0u32; BITS as usize];
            m[..s as usize].copy_from_slice(m_init);
            for k in s as usize..BITS as usize {
                let mut value = m[k - s as usize] ^ (m[k - s as usize] << s);
                for bit in 1..s {
                    if (a >> (s - 1 - bit)) & 1 == 1 {
                        value ^= m[k - bit as usize] << bit;
                    }
                }
                m[k] = value;
            }
            let mut v = [0u32; BITS as usize];
            for (k, vk) in v.iter_mut().enumerate() {
                *vk = m[k] << (BITS - 1 - k as u32);
            }
            directions.push(v);
        }
        Ok(SobolSequence { directions })
    }

    pub fn dim(&self) -> usize {
        self.directions.len()
    }

    /// The i-th point of the sequence (0-based, origin skipped), each
    /// coordinate in [0, 1).
    pub fn point(&self, index: usize) -> Vec<f64> {
        let n = (index + 1) as u32;
        let gray = n ^ (n >> 1);
        self.directions
            .iter()
            .map(|v| {
                let mut x = 0u32;
                for (k, vk) in v.iter().enumerate() {
                    if (gray >> k) & 1 == 1 {
                        x ^= vk;
                    }
                }
                x as f64 / 2f64.powi(BITS as i32)
            })
            .collect()
    }

    /// The first `count` points.
    pub fn points(&self, count: usize) -> Vec<Vec<f64>> {
        (0..count).map(|i| self.point(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_reference_sequence() {
        // Reference values for the unscrambled Joe-Kuo construction
        // (origin skipped).
        let expected: [[f64; 6]; 8] = [
            [0.5, 0.5, 0.5, 0.5, 0.5, 0.5],
            [0.75, 0.25, 0.25, 0.25, 0.75, 0.75],
            [0.25, 0.75, 0.75, 0.75, 0.25, 0.25],
            [0.375, 0.375, 0.625, 0.875, 0.375, 0.125],
            [0.875, 0.875, 0.125, 0.375, 0.875, 0.625],
            [0.625, 0.125, 0.875, 0.625, 0.625, 0.875],
            [0.125, 0.625, 0.375, 0.125, 0.125, 0.375],
            [0.1875, 0.3125, 0.9375, 0.4375, 0.5625, 0.3125],
        ];
        let seq = SobolSequence::new(6).unwrap();
        for (i, want) in expected.iter().enumerate() {
            let got = seq.point(i);
            for (g, w) in got.iter().zip(want) {
                assert!((g - w).abs() < 1e-12, "point {i}: {got:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn stays_in_unit_cube() {
        let seq = SobolSequence::new(MAX_DIMENSION).unwrap();
        for i in 0..4096 {
            for x in seq.point(i) {
                assert!((0.0..1.0).contains(&x));
            }
        }
    }

    #[test]
    fn rejects_unsupported_dimension() {
        assert!(SobolSequence::new(0).is_err());
        assert!(SobolSequence::new(MAX_DIMENSION + 1).is_err());
    }

    #[test]
    fn aligned_block_fills_dyadic_intervals() {
        // Raw indices 8..16 form an aligned block: every dyadic interval
        // [k/8, (k+1)/8) of the first dimension gets exactly one point.
        // (`point(i)` skips the origin, so that block is i = 7..15.)
        let seq = SobolSequence::new(2).unwrap();
        let mut buckets = [0usize; 8];
        for i in 7..15 {
            let x = seq.point(i)[0];
            buckets[(x * 8.0) as usize] += 1;
        }
        assert!(buckets.iter().all(|&b| b == 1), "{buckets:?}");
    }
}
