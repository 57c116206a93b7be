//! Point-set geometry kernels: farthest point sampling and ball query.
//!
//! Both operate on one cloud at a time, laid out as a flat `[n * 3]` f32
//! slice, and return indices into that cloud. They are exact, deterministic
//! and tie-stable (lowest index wins), which the training loop relies on for
//! reproducibility.

use crate::error::{Error, Result};

#[inline]
fn dist_sq(xyz: &[f32], a: usize, b: usize) -> f32 {
    let (pa, pb) = (&xyz[a * 3..a * 3 + 3], &xyz[b * 3..b * 3 + 3]);
    let dx = pa[0] - pb[0];
    let dy = pa[1] - pb[1];
    let dz = pa[2] - pb[2];
    dx * dx + dy * dy + dz * dz
}

/// Farthest point sampling: greedy max-min selection of `m` of `n` points.
/// The first pick is `start_index`; each subsequent pick maximizes the
/// minimum distance to everything already picked, ties broken by lowest
/// index.
pub fn fps(xyz: &[f32], n: usize, m: usize, start_index: usize) -> Result<Vec<usize>> {
    if n == 0 || xyz.len() != n * 3 {
        return Err(Error::Contract(format!(
            "fps: buffer of {} floats inconsistent with {n} points",
            xyz.len()
        )));
    }
    if m == 0 || m > n {
        return Err(Error::Contract(format!(
            "fps: cannot sample {m} of {n} points"
        )));
    }
    if start_index >= n {
        return Err(Error::Contract(format!(
            "fps: start index {start_index} out of range for {n} points"
        )));
    }
    let mut picks = Vec::with_capacity(m);
    let mut min_d = vec![f32::INFINITY; n];
    let mut last = start_index;
    picks.push(last);
    for _ in 1..m {
        let mut best = f32::NEG_INFINITY;
        let mut best_i = 0usize;
        for i in 0..n {
            let d = dist_sq(xyz, i, last);
            if d < min_d[i] {
                min_d[i] = d;
            }
            // Strict comparison keeps the lowest index on ties.
            if min_d[i] > best {
                best = min_d[i];
                best_i = i;
            }
        }
        last = best_i;
        picks.push(last);
    }
    Ok(picks)
}

/// Ball query: for every center (given as a point index), the first `k`
/// points within `radius`, in ascending index order. A short group is padded
/// by repeating its first member; an empty ball falls back to the center's
/// nearest neighbor (ties broken by lowest index) repeated `k` times.
/// Returns `centers.len() * k` indices.
pub fn ball_query(
    xyz: &[f32],
    n: usize,
    centers: &[usize],
    radius: f32,
    k: usize,
) -> Result<Vec<usize>> {
    if n == 0 || xyz.len() != n * 3 {
        return Err(Error::Contract(format!(
            "ball_query: buffer of {} floats inconsistent with {n} points",
            xyz.len()
        )));
    }
    if k == 0 {
        return Err(Error::Contract("ball_query: k must be positive".to_string()));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Contract(format!(
            "ball_query: radius must be positive and finite, got {radius}"
        )));
    }
    let r_sq = radius * radius;
    let mut out = Vec::with_capacity(centers.len() * k);
    for &c in centers {
        if c >= n {
            return Err(Error::Contract(format!(
                "ball_query: center index {c} out of range for {n} points"
            )));
        }
        let group_start = out.len();
        for i in 0..n {
            if dist_sq(xyz, i, c) <= r_sq {
                out.push(i);
                if out.len() - group_start == k {
                    break;
                }
            }
        }
        let found = out.len() - group_start;
        if found == 0 {
            // Nearest neighbor fallback. The center itself is distance 0, so
            // this can only trigger when the center is excluded numerically;
            // scan anyway for robustness.
            let mut best = f32::INFINITY;
            let mut best_i = 0usize;
            for i in 0..n {
                let d = dist_sq(xyz, i, c);
                if d < best {
                    best = d;
                    best_i = i;
                }
            }
            out.extend(std::iter::repeat_n(best_i, k));
        } else if found < k {
            let first = out[group_start];
            out.extend(std::iter::repeat_n(first, k - found));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(pts: &[[f32; 3]]) -> Vec<f32> {
        pts.iter().flatten().copied().collect()
    }

    /// Reference FPS: recompute min distances from scratch each step.
    fn fps_reference(xyz: &[f32], n: usize, m: usize, start: usize) -> Vec<usize> {
        let mut picks = vec![start];
        while picks.len() < m {
            let mut best = f32::NEG_INFINITY;
            let mut best_i = 0;
            for i in 0..n {
                let d = picks
                    .iter()
                    .map(|&p| dist_sq(xyz, i, p))
                    .fold(f32::INFINITY, f32::min);
                if d > best {
                    best = d;
                    best_i = i;
                }
            }
            picks.push(best_i);
        }
        picks
    }

    #[test]
    fn fps_line_picks_extremes_first() {
        // Points at x = 0..5: from 0 the farthest is 5, then 2 (distance
        // min(2,3)=2 beats 3's min(3,2)=2? both 2 -> lowest index wins: x=2).
        let pts: Vec<[f32; 3]> = (0..6).map(|i| [i as f32, 0.0, 0.0]).collect();
        let xyz = flat(&pts);
        let picks = fps(&xyz, 6, 3, 0).unwrap();
        assert_eq!(picks[0], 0);
        assert_eq!(picks[1], 5);
        assert_eq!(picks[2], 2);
    }

    #[test]
    fn fps_matches_reference_on_random_clouds() {
        use rand::Rng;
        let mut rng = crate::stream::rng(31, &[]);
        for trial in 0..20 {
            let n = 30 + (trial % 5) * 10;
            let pts: Vec<f32> = (0..n * 3).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            let m = 8 + trial % 7;
            let got = fps(&pts, n, m, 0).unwrap();
            let want = fps_reference(&pts, n, m, 0);
            assert_eq!(got, want, "trial {trial}");
        }
    }

    #[test]
    fn fps_first_pick_is_start_index() {
        let pts: Vec<[f32; 3]> = (0..5).map(|i| [i as f32, 1.0, -1.0]).collect();
        let picks = fps(&flat(&pts), 5, 2, 3).unwrap();
        assert_eq!(picks[0], 3);
    }

    #[test]
    fn fps_m_equals_n_covers_all_points() {
        let pts: Vec<[f32; 3]> = (0..7).map(|i| [i as f32 * 0.3, 0.1, 0.0]).collect();
        let mut picks = fps(&flat(&pts), 7, 7, 0).unwrap();
        picks.sort_unstable();
        assert_eq!(picks, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn fps_rejects_bad_arguments() {
        let xyz = flat(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        assert!(fps(&xyz, 2, 3, 0).is_err());
        assert!(fps(&xyz, 2, 0, 0).is_err());
        assert!(fps(&xyz, 2, 1, 5).is_err());
        assert!(fps(&[], 0, 1, 0).is_err());
    }

    #[test]
    fn ball_query_ascending_until_k() {
        // Center at origin (index 0); points at distances 0, .1, .2, .9.
        let pts = [[0.0f32, 0.0, 0.0], [0.1, 0.0, 0.0], [0.2, 0.0, 0.0], [0.9, 0.0, 0.0]];
        let xyz = flat(&pts);
        let idx = ball_query(&xyz, 4, &[0], 0.5, 2).unwrap();
        assert_eq!(idx, vec![0, 1]);
        let idx = ball_query(&xyz, 4, &[0], 0.5, 3).unwrap();
        assert_eq!(idx, vec![0, 1, 2]);
    }

    #[test]
    fn ball_query_pads_short_group_with_first_member() {
        let pts = [[0.0f32, 0.0, 0.0], [0.1, 0.0, 0.0], [5.0, 0.0, 0.0]];
        let xyz = flat(&pts);
        let idx = ball_query(&xyz, 3, &[0], 0.5, 4).unwrap();
        assert_eq!(idx, vec![0, 1, 0, 0]);
    }

    #[test]
    fn ball_query_boundary_is_inclusive() {
        let pts = [[0.0f32, 0.0, 0.0], [0.5, 0.0, 0.0]];
        let xyz = flat(&pts);
        let idx = ball_query(&xyz, 2, &[0], 0.5, 2).unwrap();
        assert_eq!(idx, vec![0, 1]);
    }

    #[test]
    fn ball_query_multiple_centers_concatenate() {
        let pts = [[0.0f32, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let xyz = flat(&pts);
        let idx = ball_query(&xyz, 2, &[0, 1], 0.1, 2).unwrap();
        assert_eq!(idx, vec![0, 0, 1, 1]);
    }

    #[test]
    fn ball_query_rejects_bad_arguments() {
        let xyz = flat(&[[0.0, 0.0, 0.0]]);
        assert!(ball_query(&xyz, 1, &[0], 0.5, 0).is_err());
        assert!(ball_query(&xyz, 1, &[0], -1.0, 1).is_err());
        assert!(ball_query(&xyz, 1, &[2], 0.5, 1).is_err());
        assert!(ball_query(&[], 0, &[0], 0.5, 1).is_err());
    }
}
