use crate::error::{Error, Result};

/// Preferred pairs of primitive polynomials, as exponent lists without the
/// constant term. `(degree, [taps_a], [taps_b])`.
const PREFERRED_PAIRS: &[(u32, &[u32], &[u32])] = &[
    (5, &[5, 2], &[5, 4, 3, 2]),
    (6, &[6, 1], &[6, 5, 2, 1]),
    (7, &[7, 3], &[7, 3, 2, 1]),
    (9, &[9, 4], &[9, 6, 4, 3]),
    (10, &[10, 3], &[10, 8, 3, 2]),
    (11, &[11, 2], &[11, 8, 5, 2]),
];

fn preferred_pair(degree: u32) -> Result<(&'static [u32], &'static [u32])> {
    PREFERRED_PAIRS
        .iter()
        .find(|(d, _, _)| *d == degree)
        .map(|(_, a, b)| (*a, *b))
        .ok_or_else(|| {
            Error::Config(format!(
                "no preferred m-sequence pair for degree {degree} (supported: 5, 6, 7, 9, 10, 11)"
            ))
        })
}

/// One period of the binary m-sequence with the given feedback polynomial.
///
/// `taps` holds the nonzero exponents of `x^n + ... + 1` except the constant
/// term; the register starts at all ones. The recurrence is
/// `a[t + n] = sum over k in taps, k < n, of a[t + k]` plus `a[t]`.
pub fn m_sequence(taps: &[u32]) -> Vec<u8> {
    let n = *taps.iter().max().expect("nonempty taps") as usize;
    let period = (1usize << n) - 1;
    let mut a = vec![1u8; n];
    a.reserve(period);
    for t in 0..period - n {
        let mut bit = a[t];
        for &k in taps {
            let k = k as usize;
            if k < n {
                bit ^= a[t + k];
            }
        }
        a.push(bit);
    }
    a
}

/// Peak cross-correlation magnitude `t(m)` of the Gold family of degree `m`.
pub fn gold_threshold(degree: u32) -> i64 {
    if degree % 2 == 1 {
        (1i64 << degree.div_ceil(2)) + 1
    } else {
        (1i64 << ((degree + 2) / 2)) + 1
    }
}

/// Bipolar (+1/-1) Gold sequence.
///
/// Index 0 and 1 are the two m-sequences of the preferred pair; index
/// `k >= 2` is their XOR with the second sequence cyclically shifted by
/// `k - 2`. A family of degree `m` has `2^m + 1` members of period
/// `2^m - 1`; `length` truncates the period.
pub fn gold_sequence(degree: u32, index: usize, length: usize) -> Result<Vec<i8>> {
    let (taps_a, taps_b) = preferred_pair(degree)?;
    let period = (1usize << degree) - 1;
    if length == 0 || length > period {
        return Err(Error::Bounds(format!(
            "Gold length {length} outside 1..={period} for degree {degree}"
        )));
    }
    if index > period + 1 {
        return Err(Error::Bounds(format!(
            "Gold index {index} outside the family of {} sequences",
            period + 2
        )));
    }
    let u = m_sequence(taps_a);
    let v = m_sequence(taps_b);
    let bits: Vec<u8> = match index {
        0 => u,
        1 => v,
        k => {
            let shift = k - 2;
            (0..period).map(|t| u[t] ^ v[(t + shift) % period]).collect()
        }
    };
    Ok(bits
        .into_iter()
        .take(length)
        .map(|b| if b == 0 { 1 } else { -1 })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circular_xcorr(a: &[i8], b: &[i8], lag: usize) -> i64 {
        let n = a.len();
        (0..n).map(|t| a[t] as i64 * b[(t + lag) % n] as i64).sum()
    }

    #[test]
    fn m_sequences_are_maximal_length() {
        for (d, a, b) in PREFERRED_PAIRS {
            for taps in [*a, *b] {
                let s = m_sequence(taps);
                assert_eq!(s.len(), (1 << d) - 1);
                // balance property: one more 1 than 0
                let ones = s.iter().filter(|&&x| x == 1).count();
                assert_eq!(ones, 1 << (d - 1), "degree {d} taps {taps:?}");
            }
        }
    }

    #[test]
    fn autocorrelation_peak_equals_length() {
        let s = gold_sequence(7, 0, 127).unwrap();
        assert_eq!(circular_xcorr(&s, &s, 0), 127);
    }

    #[test]
    fn preferred_pairs_are_three_valued() {
        // Exhaustive for the small degrees; the set is {-t, -1, t-2}.
        for degree in [5u32, 6, 7, 9] {
            let n = (1usize << degree) - 1;
            let t = gold_threshold(degree);
            let u = gold_sequence(degree, 0, n).unwrap();
            let v = gold_sequence(degree, 1, n).unwrap();
            for lag in 0..n {
                let c = circular_xcorr(&u, &v, lag);
                assert!(c == -t || c == -1 || c == t - 2, "degree {degree} lag {lag}: {c}");
            }
        }
    }

    #[test]
    fn distinct_indices_give_distinct_sequences() {
        let family: Vec<Vec<i8>> = (0..129).map(|k| gold_sequence(7, k, 127).unwrap()).collect();
        for i in 0..family.len() {
            for j in i + 1..family.len() {
                assert_ne!(family[i], family[j], "{i} vs {j}");
            }
        }
    }

    #[test]
    fn bounds_and_degree_errors() {
        assert!(matches!(gold_sequence(8, 0, 10), Err(Error::Config(_))));
        assert!(matches!(gold_sequence(7, 0, 128), Err(Error::Bounds(_))));
        assert!(matches!(gold_sequence(7, 129, 127), Err(Error::Bounds(_))));
        assert!(matches!(gold_sequence(7, 0, 0), Err(Error::Bounds(_))));
        assert_eq!(gold_sequence(7, 3, 31).unwrap().len(), 31);
    }
}
