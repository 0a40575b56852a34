//! Inter-annotator agreement metrics.

/// Metric value plus a flag for inputs where the standard formula is
/// undefined (returned instead of silently picking a value).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricValue {
    pub value: f64,
    pub degenerate: bool,
}

impl MetricValue {
    fn ok(value: f64) -> Self {
        MetricValue { value, degenerate: false }
    }

    fn degenerate(value: f64) -> Self {
        MetricValue { value, degenerate: true }
    }
}

/// Binary F1 with `a` as reference and `b` as prediction (positive = true).
/// All-negative inputs on both sides are flagged degenerate with value 0.
pub fn f1(a: &[bool], b: &[bool]) -> MetricValue {
    assert_eq!(a.len(), b.len(), "f1 needs equal-length vectors");
    assert!(!a.is_empty(), "f1 needs at least one element");
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fnn = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        match (x, y) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fnn += 1,
            (false, false) => {}
        }
    }
    if tp + fp + fnn == 0 {
        return MetricValue::degenerate(0.0);
    }
    if tp == 0 {
        return MetricValue::ok(0.0);
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fnn) as f64;
    MetricValue::ok(2.0 * precision * recall / (precision + recall))
}

/// Cohen's kappa with marginal-product expected agreement.
/// `p_e == 1` with perfect observed agreement is defined as 1; otherwise the
/// result is flagged degenerate.
pub fn cohens_kappa(a: &[bool], b: &[bool]) -> MetricValue {
    assert_eq!(a.len(), b.len(), "kappa needs equal-length vectors");
    assert!(!a.is_empty(), "kappa needs at least one element");
    let n = a.len() as f64;
    let po = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let pa = a.iter().filter(|&&x| x).count() as f64 / n;
    let pb = b.iter().filter(|&&x| x).count() as f64 / n;
    let pe = pa * pb + (1.0 - pa) * (1.0 - pb);
    if (1.0 - pe).abs() < 1e-15 {
        return if (1.0 - po).abs() < 1e-15 {
            MetricValue::ok(1.0)
        } else {
            MetricValue::degenerate(0.0)
        };
    }
    MetricValue::ok((po - pe) / (1.0 - pe))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_perfect_agreement() {
        let a = [true, false, true];
        assert_eq!(f1(&a, &a).value, 1.0);
    }

    #[test]
    fn f1_hand_worked_example() {
        let a = [true, true, false, false];
        let b = [true, false, true, false];
        let m = f1(&a, &b);
        assert!((m.value - 0.5).abs() < 1e-12);
        assert!(!m.degenerate);
    }

    #[test]
    fn f1_all_negative_is_degenerate_zero() {
        let m = f1(&[false, false], &[false, false]);
        assert_eq!(m.value, 0.0);
        assert!(m.degenerate);
    }

    #[test]
    fn kappa_identical_is_one() {
        let a = [true, false, true, true];
        assert_eq!(cohens_kappa(&a, &a).value, 1.0);
    }

    #[test]
    fn kappa_hand_worked_example() {
        let a = [true, true, false, false];
        let b = [true, false, true, false];
        let m = cohens_kappa(&a, &b);
        assert!(m.value.abs() < 1e-12, "{}", m.value);
    }

    #[test]
    fn kappa_complementary_balanced_is_minus_one() {
        let a = [true, true, false, false];
        let b = [false, false, true, true];
        let m = cohens_kappa(&a, &b);
        assert!((m.value + 1.0).abs() < 1e-12);
    }

    #[test]
    fn kappa_degenerate_marginals() {
        // Both raters constant and equal: p_e = 1, p_o = 1 -> 1.0.
        let m = cohens_kappa(&[true, true], &[true, true]);
        assert_eq!(m.value, 1.0);
        assert!(!m.degenerate);
        // Constant but opposite: p_e = 0... marginals give pe = 0, po = 0.
        let m = cohens_kappa(&[true, true], &[false, false]);
        assert!((m.value - (0.0 - 0.0) / 1.0).abs() < 1e-12);
    }
}
