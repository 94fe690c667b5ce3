use crate::{Error, Result};

/// Loss-driven level count `clamp(round(√(F_initial / F_current) · s_1), s_min, s_max)`.
///
/// A nonpositive current loss means the floor is reached and yields `s_max`.
pub fn adaptive_level_schedule(f_initial: f64, f_current: f64, s_1: usize, s_min: usize, s_max: usize) -> Result<usize> {
    if !(f_initial > 0.0 && f_initial.is_finite()) {
        return Err(Error::invalid(format!("initial loss must be positive and finite, got {f_initial}")));
    }
    if s_min < 1 || s_min > s_1 || s_1 > s_max {
        return Err(Error::invalid("need 1 <= s_min <= s_1 <= s_max"));
    }
    if f_current.is_nan() {
        return Err(Error::invalid("current loss is NaN"));
    }
    if f_current <= 0.0 {
        return Ok(s_max);
    }
    let s = ((f_initial / f_current).sqrt() * s_1 as f64).round();
    Ok(s.clamp(s_min as f64, s_max as f64) as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(adaptive_level_schedule(4.0, 1.0, 4, 2, 1024).unwrap(), 8);
        assert_eq!(adaptive_level_schedule(0.7, 0.7, 5, 2, 1024).unwrap(), 5);
        assert_eq!(adaptive_level_schedule(1.0, 100.0, 4, 2, 1024).unwrap(), 2);
        assert_eq!(adaptive_level_schedule(1.0, 0.0, 4, 2, 1024).unwrap(), 1024);
        assert_eq!(adaptive_level_schedule(1.0, 1e-12, 4, 2, 1024).unwrap(), 1024);
        assert!(adaptive_level_schedule(0.0, 1.0, 4, 2, 1024).is_err());
    }

    #[test]
    fn nonincreasing_losses_give_nondecreasing_levels() {
        let losses = [2.0, 1.9, 1.9, 1.2, 0.8, 0.8, 0.3, 0.01];
        let s: Vec<usize> = losses.iter().map(|&f| adaptive_level_schedule(2.0, f, 3, 2, 64).unwrap()).collect();
        assert!(s.windows(2).all(|w| w[0] <= w[1]), "{s:?}");
    }
}
