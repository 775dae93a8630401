//! Exact expected answer-call count for i.i.d. categorical answers under the
//! repeat-to-confirm stopping rule, by enumeration over distinct-answer-set
//! states. Independent of the engine; used by `simulate` and as the reference
//! for the stochastic acceptance check.
//!
//! With answers drawn i.i.d. uniform over m options, the only state that
//! matters is the number of distinct answers seen so far, k: the next draw
//! confirms with probability k/m, otherwise k grows by one. The iteration cap
//! ends the episode at max_calls regardless.

/// Expected number of answer calls with uniform draws over `m` options and at
/// most `max_calls` calls. Panics on m = 0 or max_calls = 0.
pub fn expected_answer_calls_uniform(m: u32, max_calls: u32) -> f64 {
    assert!(m >= 1 && max_calls >= 1);
    let weights = vec![1.0 / m as f64; m as usize];
    expected_answer_calls(&weights, max_calls)
}

/// General form: `weights` is the categorical distribution over the answer
/// space (must sum to ~1). Enumerates over subsets of already-seen options, so
/// it is exact for any (possibly non-uniform) i.i.d. distribution. Practical
/// for answer spaces up to ~20 options.
pub fn expected_answer_calls(weights: &[f64], max_calls: u32) -> f64 {
    assert!(!weights.is_empty() && max_calls >= 1);
    let total: f64 = weights.iter().sum();
    assert!((total - 1.0).abs() < 1e-9, "distribution must sum to 1");
    let m = weights.len();
    assert!(m <= 24, "answer space too large for exact enumeration");

    // states[mask] = probability of holding exactly that set of seen answers.
    let mut states = vec![0.0f64; 1 << m];
    states[0] = 1.0;
    let mut expectation = 0.0;

    for call in 1..=max_calls {
        let mut next = vec![0.0f64; 1 << m];
        let mut stopped_now = 0.0;
        for (mask, &p) in states.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (i, &w) in weights.iter().enumerate() {
                let bit = 1usize << i;
                let p_draw = p * w;
                if mask & bit != 0 {
                    stopped_now += p_draw;
                } else {
                    next[mask | bit] += p_draw;
                }
            }
        }
        if call == max_calls {
            // Cap: everything still running ends here too.
            let still_running: f64 = next.iter().sum();
            expectation += (stopped_now + still_running) * call as f64;
        } else {
            expectation += stopped_now * call as f64;
        }
        states = next;
    }
    expectation
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_m2_is_2_5() {
        let e = expected_answer_calls_uniform(2, 10);
        assert!((e - 2.5).abs() < 1e-12, "got {e}");
    }

    #[test]
    fn uniform_m3_is_26_ninths() {
        let e = expected_answer_calls_uniform(3, 10);
        assert!((e - 26.0 / 9.0).abs() < 1e-12, "got {e}");
    }

    #[test]
    fn single_option_confirms_at_two() {
        let e = expected_answer_calls_uniform(1, 10);
        assert!((e - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cap_binds_when_space_exceeds_budget() {
        // m=5 uniform capped at 3 calls: call 2 stops w.p. 1/5; call 3 ends
        // everything else. E = 2*(1/5) + 3*(4/5) = 2.8.
        let e = expected_answer_calls_uniform(5, 3);
        assert!((e - 2.8).abs() < 1e-12, "got {e}");
    }

    #[test]
    fn degenerate_distribution_confirms_at_two() {
        let e = expected_answer_calls(&[1.0, 0.0], 10);
        assert!((e - 2.0).abs() < 1e-12);
    }

    #[test]
    fn matches_direct_recursion_for_small_cases() {
        // Independent route: recursion on distinct-count only (valid for the
        // uniform case), cross-checking the subset enumeration.
        fn rec(k: u32, call: u32, m: u32, max: u32) -> f64 {
            if call > max {
                return 0.0;
            }
            let p_stop = k as f64 / m as f64;
            if call == max {
                return max as f64;
            }
            p_stop * call as f64 + (1.0 - p_stop) * rec(k + 1, call + 1, m, max)
        }
        for m in 1..=6u32 {
            let direct = rec(0, 1, m, 10);
            let enumerated = expected_answer_calls_uniform(m, 10);
            assert!(
                (direct - enumerated).abs() < 1e-10,
                "m={m}: {direct} vs {enumerated}"
            );
        }
    }
}
