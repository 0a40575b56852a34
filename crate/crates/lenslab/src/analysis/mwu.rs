//! Mann-Whitney U rank test.
//!
//! U is computed from rank sums with midrank ties. The one-sided p-value
//! tests the alternative "x tends smaller than y": p = P(U <= U_obs) under
//! the permutation null. For |x|*|y| <= 400 the p-value is exact, computed
//! by dynamic programming over the observed (tied) value groups — the same
//! distribution a brute-force enumeration of all C(n+m, n) assignments
//! produces. Larger samples use the normal approximation with tie and
//! continuity corrections.

/// Largest |x|*|y| handled by the exact path.
pub const EXACT_LIMIT: usize = 400;

#[derive(Debug, Clone, Copy)]
pub struct MwuResult {
    /// U statistic of `x` (rank-sum form, midranks for ties).
    pub u: f64,
    /// One-sided p for the alternative "x < y".
    pub p_one_sided: f64,
    /// Whether the exact permutation distribution was used.
    pub exact: bool,
}

/// Midranks of the combined sample, returned aligned to the sorted order,
/// plus the tied group sizes.
fn midranks(sorted: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let n = sorted.len();
    let mut ranks = vec![0.0; n];
    let mut groups = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && sorted[j] == sorted[i] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for r in ranks.iter_mut().take(j).skip(i) {
            *r = rank;
        }
        groups.push(j - i);
        i = j;
    }
    (ranks, groups)
}

pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> MwuResult {
    assert!(!x.is_empty() && !y.is_empty(), "mann_whitney_u needs nonempty samples");
    let (n, m) = (x.len(), y.len());
    let total = n + m;

    let mut combined: Vec<(f64, bool)> = x
        .iter()
        .map(|&v| (v, true))
        .chain(y.iter().map(|&v| (v, false)))
        .collect();
    combined.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite sample values"));
    let values: Vec<f64> = combined.iter().map(|c| c.0).collect();
    let (ranks, groups) = midranks(&values);

    let r_x: f64 = ranks.iter().zip(&combined).filter(|(_, c)| c.1).map(|(r, _)| r).sum();
    let u = r_x - (n * (n + 1)) as f64 / 2.0;

    let p = if n * m <= EXACT_LIMIT {
        exact_p(&combined, &ranks, &groups, n, u)
    } else {
        approx_p(u, n, m, &groups)
    };
    MwuResult { u, p_one_sided: p, exact: n * m <= EXACT_LIMIT }
}

/// Exact P(U <= u_obs) by DP over tied groups. Counting in f64 is exact:
/// with n*m <= 400 every intermediate count is an integer below 2^53.
fn exact_p(
    combined: &[(f64, bool)],
    ranks: &[f64],
    groups: &[usize],
    n: usize,
    u_obs: f64,
) -> f64 {
    // Work with doubled rank sums so midranks are integers.
    let mut group_rank2 = Vec::with_capacity(groups.len());
    let mut pos = 0usize;
    for &g in groups {
        group_rank2.push((2.0 * ranks[pos]).round() as usize);
        pos += g;
    }
    let max_s2: usize = {
        // Maximum achievable doubled rank sum for n items.
        let total = combined.len();
        (total - n + 1..=total).map(|r| 2 * r).sum()
    };

    // ways[k][s] = number of assignments of k x-items with doubled rank sum s.
    let mut ways = vec![vec![0.0f64; max_s2 + 1]; n + 1];
    ways[0][0] = 1.0;
    for (gi, &g) in groups.iter().enumerate() {
        let r2 = group_rank2[gi];
        // Iterate k downward so each group is used once.
        for k in (0..n).rev() {
            for s in 0..=max_s2 {
                let w = ways[k][s];
                if w == 0.0 {
                    continue;
                }
                // Choose t items of this group for x.
                let mut choose = 1.0f64;
                for t in 1..=g.min(n - k) {
                    choose = choose * (g - t + 1) as f64 / t as f64;
                    let s2 = s + t * r2;
                    if s2 <= max_s2 {
                        ways[k + t][s2] += w * choose;
                    }
                }
            }
        }
    }

    let r_obs2 = (2.0 * (u_obs + (n * (n + 1)) as f64 / 2.0)).round() as usize;
    let mut count = 0.0f64;
    let mut total_ways = 0.0f64;
    for (s, &w) in ways[n].iter().enumerate() {
        total_ways += w;
        if s <= r_obs2 {
            count += w;
        }
    }
    count / total_ways
}

/// Normal approximation with tie-corrected variance and continuity
/// correction.
fn approx_p(u: f64, n: usize, m: usize, groups: &[usize]) -> f64 {
    let nf = n as f64;
    let mf = m as f64;
    let big_n = nf + mf;
    let mean = nf * mf / 2.0;
    let tie_term: f64 = groups.iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = nf * mf / 12.0 * ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)));
    if var <= 0.0 {
        return 0.5;
    }
    let z = (u + 0.5 - mean) / var.sqrt();
    normal_cdf(z)
}

/// Standard normal CDF via the Abramowitz-Stegun 7.1.26 erf polynomial
/// (|error| < 1.5e-7).
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let y = 1.0
        - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
            + 0.254829592)
            * t
            * (-x * x).exp();
    sign * y
}

/// Brute-force oracle: enumerates every C(n+m, n) assignment of the combined
/// multiset and counts U values at or below the observed one. Exponential;
/// intended for small inputs in tests and the acceptance suite.
pub fn mann_whitney_u_bruteforce(x: &[f64], y: &[f64]) -> MwuResult {
    let (n, m) = (x.len(), y.len());
    let total = n + m;
    let mut combined: Vec<(f64, bool)> = x
        .iter()
        .map(|&v| (v, true))
        .chain(y.iter().map(|&v| (v, false)))
        .collect();
    combined.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let values: Vec<f64> = combined.iter().map(|c| c.0).collect();
    let (ranks, _) = midranks(&values);
    let r_obs: f64 = ranks.iter().zip(&combined).filter(|(_, c)| c.1).map(|(r, _)| r).sum();
    let u_obs = r_obs - (n * (n + 1)) as f64 / 2.0;

    let mut count = 0u64;
    let mut total_count = 0u64;
    let mut indices: Vec<usize> = (0..n).collect();
    loop {
        let r: f64 = indices.iter().map(|&i| ranks[i]).sum();
        total_count += 1;
        if r <= r_obs + 1e-9 {
            count += 1;
        }
        // Next combination in lexicographic order.
        let mut i = n;
        loop {
            if i == 0 {
                return MwuResult {
                    u: u_obs,
                    p_one_sided: count as f64 / total_count as f64,
                    exact: true,
                };
            }
            i -= 1;
            if indices[i] != i + total - n {
                break;
            }
        }
        indices[i] += 1;
        for j in i + 1..n {
            indices[j] = indices[j - 1] + 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_shift_example() {
        let r = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0]);
        assert_eq!(r.u, 0.0);
        assert!((r.p_one_sided - 1.0 / 6.0).abs() < 1e-12);
        assert!(r.exact);
    }

    #[test]
    fn shifted_cohorts_example() {
        let r = mann_whitney_u(&[2.0, 2.0, 4.0], &[8.0, 10.0, 10.0]);
        assert_eq!(r.u, 0.0);
        assert!((r.p_one_sided - 0.05).abs() < 1e-12, "p {}", r.p_one_sided);
    }

    #[test]
    fn identical_singletons_tie_convention() {
        let r = mann_whitney_u(&[5.0], &[5.0]);
        assert_eq!(r.u, 0.5);
        assert!((r.p_one_sided - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_samples_give_high_p() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = mann_whitney_u(&x, &x);
        assert!(r.p_one_sided > 0.4, "p {}", r.p_one_sided);
    }

    #[test]
    fn u_symmetry_invariant() {
        let x = [1.0, 3.0, 3.0, 7.0];
        let y = [2.0, 3.0, 8.0];
        let a = mann_whitney_u(&x, &y);
        let b = mann_whitney_u(&y, &x);
        assert!((a.u + b.u - (x.len() * y.len()) as f64).abs() < 1e-9);
    }

    #[test]
    fn exact_matches_bruteforce_with_ties() {
        let cases: [(&[f64], &[f64]); 4] = [
            (&[1.0, 2.0, 2.0, 3.0], &[2.0, 3.0, 3.0, 4.0]),
            (&[1.0, 1.0, 1.0], &[1.0, 1.0]),
            (&[1.0, 3.0, 5.0, 7.0], &[2.0, 4.0, 6.0, 8.0]),
            (&[2.0, 2.0, 4.0], &[8.0, 10.0, 10.0]),
        ];
        for (x, y) in cases {
            let fast = mann_whitney_u(x, y);
            let slow = mann_whitney_u_bruteforce(x, y);
            assert_eq!(fast.u, slow.u);
            assert!(
                (fast.p_one_sided - slow.p_one_sided).abs() < 1e-12,
                "{x:?} vs {y:?}: {} vs {}",
                fast.p_one_sided,
                slow.p_one_sided
            );
        }
    }

    #[test]
    fn conditional_tie_distribution() {
        // Enumerating [1,2,2,3] vs [2,3,3,4] over its 70 assignments gives
        // P(U <= 3) = 10/70.
        let r = mann_whitney_u(&[1.0, 2.0, 2.0, 3.0], &[2.0, 3.0, 3.0, 4.0]);
        assert_eq!(r.u, 3.0);
        assert!((r.p_one_sided - 10.0 / 70.0).abs() < 1e-12, "p {}", r.p_one_sided);
    }

    #[test]
    fn exact_and_approx_agree_on_moderate_samples() {
        // Deterministic pseudo-random samples of size 15 each.
        let mut state = 12345u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f64) / (u32::MAX as f64 / 2.0)
        };
        for trial in 0..20 {
            let shift = 0.15 * (trial % 5) as f64;
            let x: Vec<f64> = (0..15).map(|_| next()).collect();
            let y: Vec<f64> = (0..15).map(|_| next() + shift).collect();
            let exact = exact_p_of(&x, &y);
            let approx = approx_p_of(&x, &y);
            assert!(
                (exact - approx).abs() < 0.01,
                "trial {trial}: exact {exact} vs approx {approx}"
            );
        }
    }

    fn exact_p_of(x: &[f64], y: &[f64]) -> f64 {
        mann_whitney_u(x, y).p_one_sided
    }

    fn approx_p_of(x: &[f64], y: &[f64]) -> f64 {
        // Rebuild the pieces the approximate path uses.
        let (n, m) = (x.len(), y.len());
        let mut combined: Vec<(f64, bool)> = x
            .iter()
            .map(|&v| (v, true))
            .chain(y.iter().map(|&v| (v, false)))
            .collect();
        combined.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let values: Vec<f64> = combined.iter().map(|c| c.0).collect();
        let (ranks, groups) = midranks(&values);
        let r_x: f64 = ranks.iter().zip(&combined).filter(|(_, c)| c.1).map(|(r, _)| r).sum();
        let u = r_x - (n * (n + 1)) as f64 / 2.0;
        approx_p(u, n, m, &groups)
    }

    #[test]
    fn normal_cdf_reference_values() {
        let cases = [
            (-3.0, 0.001349898032),
            (-0.5, 0.308537538726),
            (0.0, 0.5),
            (0.5, 0.691462461274),
            (1.96, 0.975002104852),
        ];
        for (z, want) in cases {
            assert!((normal_cdf(z) - want).abs() < 1e-6, "Phi({z})");
        }
    }
}
