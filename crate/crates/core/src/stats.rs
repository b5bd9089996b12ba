//! Small order-statistics helpers shared by preprocessing, aggregation, and
//! evaluation.

use alloc::vec::Vec;

/// Rounds to the nearest integer with halves rounding up. Negative inputs
/// clamp to zero; callers only round nonnegative counts.
pub fn round_half_up(x: f64) -> usize {
    let r = libm::floor(x + 0.5);
    if r <= 0.0 {
        0
    } else {
        r as usize
    }
}

/// Arithmetic mean. Returns NaN on an empty slice.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Median, sorting `buf` in place. Even-length inputs take the mean of the
/// two middle values. Returns NaN on an empty slice.
pub fn median_in_place(buf: &mut [f64]) -> f64 {
    if buf.is_empty() {
        return f64::NAN;
    }
    buf.sort_unstable_by(f64::total_cmp);
    let n = buf.len();
    if n % 2 == 1 {
        buf[n / 2]
    } else {
        0.5 * (buf[n / 2 - 1] + buf[n / 2])
    }
}

/// Median of a slice, leaving the input untouched.
pub fn median(values: &[f64]) -> f64 {
    let mut buf: Vec<f64> = values.to_vec();
    median_in_place(&mut buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_odd_is_middle_element() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }

    #[test]
    fn median_even_is_mean_of_middles() {
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn median_single() {
        assert_eq!(median(&[7.5]), 7.5);
    }

    #[test]
    fn mean_of_known_values() {
        assert_eq!(mean(&[1.0, 2.0, 3.0, 4.0]), 2.5);
    }

    #[test]
    fn empty_inputs_give_nan() {
        assert!(mean(&[]).is_nan());
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn round_half_up_behaviour() {
        assert_eq!(round_half_up(2.4), 2);
        assert_eq!(round_half_up(2.5), 3);
        assert_eq!(round_half_up(2.6), 3);
        assert_eq!(round_half_up(0.0), 0);
        assert_eq!(round_half_up(-1.2), 0);
    }
}
