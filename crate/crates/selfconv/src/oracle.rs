//! Brute-force block matching and non-local-means weighting.
//!
//! These are the reference implementations the fast engines are tested
//! against, and they double as the `naive` engine. They evaluate every
//! pairwise distance directly, with no transforms and no shared partial
//! sums. Kept deliberately simple; performance is a non-goal.

use crate::error::Result;
use crate::similarity::{select_matches, Candidate, MatchSet, Metric, OpCount, Tiebreak, WeightMap};
use crate::tensor::{valid_positions, ImageTensor, PatchGeometry, PatchRef, SearchWindow};

/// Squared Frobenius distance between the patches at `a` and `b`.
fn patch_distance(img: &ImageTensor, a: &PatchRef, b: &PatchRef, geom: &PatchGeometry) -> f64 {
    let mut acc = 0.0;
    for d in 0..geom.depth {
        for l in 0..geom.side {
            let ra = &img.row(a.row + l, a.chan + d)[a.col..a.col + geom.side];
            let rb = &img.row(b.row + l, b.chan + d)[b.col..b.col + geom.side];
            for (x, y) in ra.iter().zip(rb) {
                let diff = x - y;
                acc += diff * diff;
            }
        }
    }
    acc
}

/// Inner product of the patches at `a` and `b`.
fn patch_inner(img: &ImageTensor, a: &PatchRef, b: &PatchRef, geom: &PatchGeometry) -> f64 {
    let mut acc = 0.0;
    for d in 0..geom.depth {
        for l in 0..geom.side {
            let ra = &img.row(a.row + l, a.chan + d)[a.col..a.col + geom.side];
            let rb = &img.row(b.row + l, b.chan + d)[b.col..b.col + geom.side];
            for (x, y) in ra.iter().zip(rb) {
                acc += x * y;
            }
        }
    }
    acc
}

fn patch_norm(img: &ImageTensor, p: &PatchRef, geom: &PatchGeometry) -> f64 {
    patch_inner(img, p, p, geom).sqrt()
}

/// Exhaustive block matching: evaluates the metric on every window position,
/// then keeps the best K under the shared (reference-first, raster) tiebreak.
///
/// Scores are in the metric's native units: squared Euclidean distance
/// (ascending) or NCC score (descending).
pub fn bm_naive(
    img: &ImageTensor,
    reference: &PatchRef,
    geom: &PatchGeometry,
    win: &SearchWindow,
    k: usize,
    metric: Metric,
    ops: Option<&OpCount>,
) -> Result<MatchSet> {
    let positions = valid_positions(img, geom, win, reference)?;
    let mut candidates = Vec::with_capacity(positions.len());
    match metric {
        Metric::Euclidean => {
            for pos in &positions {
                let d =
                    if pos == reference { 0.0 } else { patch_distance(img, reference, pos, geom) };
                // Selection objective is larger-is-better; negate distances.
                candidates.push(Candidate { pos: *pos, objective: -d, score: d });
            }
        }
        Metric::Ncc => {
            let ref_norm = patch_norm(img, reference, geom);
            crate::similarity::check_ncc_reference(ref_norm)?;
            for pos in &positions {
                let s = if pos == reference {
                    1.0
                } else {
                    let denom = (ref_norm * patch_norm(img, pos, geom)).max(crate::similarity::NCC_EPS);
                    patch_inner(img, reference, pos, geom) / denom
                };
                candidates.push(Candidate { pos: *pos, objective: s, score: s });
            }
        }
    }
    if let Some(ops) = ops {
        // One multiply-add per patch scalar per candidate (Table-2 BM cost model).
        ops.add((geom.len() * positions.len()) as u64);
    }
    Ok(select_matches(candidates, k, metric, *reference, Tiebreak::ReferenceFirst))
}

/// Literal non-local-means weighting: per-position exponential of the
/// pairwise distance, normalized over the window.
pub fn nlm_naive(
    img: &ImageTensor,
    reference: &PatchRef,
    geom: &PatchGeometry,
    win: &SearchWindow,
    bandwidth: f64,
) -> Result<WeightMap> {
    assert!(bandwidth > 0.0, "bandwidth must be positive");
    let positions = valid_positions(img, geom, win, reference)?;
    let distances: Vec<f64> = positions
        .iter()
        .map(|pos| {
            if pos == reference {
                0.0
            } else {
                patch_distance(img, reference, pos, geom)
            }
        })
        .collect();
    // Shift by the minimum distance before exponentiation; the normalized
    // weights are invariant under this shift and it avoids total underflow.
    let dmin = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let b2 = bandwidth * bandwidth;
    let mut weights: Vec<f64> = distances.iter().map(|d| (-(d - dmin) / b2).exp()).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok(WeightMap { positions, weights, reference: *reference, bandwidth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::extract_patch;

    fn demo3x3() -> ImageTensor {
        ImageTensor::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], &[7.0, 8.0, 9.0]]).unwrap()
    }

    #[test]
    fn degenerate_window_self_match() {
        let img = demo3x3();
        let geom = PatchGeometry::new(2, 1, 1).unwrap();
        let m = bm_naive(
            &img,
            &PatchRef::new(1, 1),
            &geom,
            &SearchWindow::symmetric(0, 0),
            4,
            Metric::Euclidean,
            None,
        )
        .unwrap();
        assert_eq!(m.indices, vec![PatchRef::new(1, 1)]);
        assert_eq!(m.scores, vec![0.0]);
        assert!(m.short_set);
    }

    #[test]
    fn demo_distances_in_order() {
        let img = demo3x3();
        let geom = PatchGeometry::new(2, 1, 1).unwrap();
        let m = bm_naive(
            &img,
            &PatchRef::new(0, 0),
            &geom,
            &SearchWindow::whole_image(),
            4,
            Metric::Euclidean,
            None,
        )
        .unwrap();
        assert_eq!(
            m.indices,
            vec![
                PatchRef::new(0, 0),
                PatchRef::new(0, 1),
                PatchRef::new(1, 0),
                PatchRef::new(1, 1)
            ]
        );
        assert_eq!(m.scores, vec![0.0, 4.0, 36.0, 64.0]);
    }

    #[test]
    fn ncc_scale_invariant() {
        let img = demo3x3();
        let scaled = ImageTensor::new(
            3,
            3,
            1,
            img.data().iter().map(|v| 2.0 * v).collect(),
        )
        .unwrap();
        let geom = PatchGeometry::new(2, 1, 1).unwrap();
        let win = SearchWindow::whole_image();
        let a =
            bm_naive(&img, &PatchRef::new(0, 0), &geom, &win, 4, Metric::Ncc, None).unwrap();
        let b =
            bm_naive(&scaled, &PatchRef::new(0, 0), &geom, &win, 4, Metric::Ncc, None).unwrap();
        assert_eq!(a.indices, b.indices);
        for (x, y) in a.scores.iter().zip(&b.scores) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn nlm_uniform_image_uniform_weights() {
        let img = ImageTensor::new(4, 4, 1, vec![9.0; 16]).unwrap();
        let geom = PatchGeometry::new(2, 1, 1).unwrap();
        let w = nlm_naive(&img, &PatchRef::new(1, 1), &geom, &SearchWindow::whole_image(), 10.0)
            .unwrap();
        assert_eq!(w.weights.len(), 9);
        for v in &w.weights {
            assert!((v - 1.0 / 9.0).abs() < 1e-12);
        }
    }

    #[test]
    fn nlm_weights_sum_to_one() {
        let img = demo3x3();
        let geom = PatchGeometry::new(2, 1, 1).unwrap();
        let w = nlm_naive(&img, &PatchRef::new(0, 0), &geom, &SearchWindow::whole_image(), 10.0)
            .unwrap();
        let sum: f64 = w.weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-10);
        // Max weight at the reference position.
        let self_idx = w.positions.iter().position(|p| *p == PatchRef::new(0, 0)).unwrap();
        let max = w.weights.iter().copied().fold(0.0f64, f64::max);
        assert_eq!(w.weights[self_idx], max);
    }

    #[test]
    fn nlm_large_bandwidth_approaches_uniform() {
        let img = demo3x3();
        let geom = PatchGeometry::new(2, 1, 1).unwrap();
        let w = nlm_naive(&img, &PatchRef::new(0, 0), &geom, &SearchWindow::whole_image(), 1e6)
            .unwrap();
        for v in &w.weights {
            assert!((v - 0.25).abs() < 1e-6);
        }
    }

    #[test]
    fn op_count_scales_with_window() {
        let img = ImageTensor::zeros(64, 64, 1);
        let geom = PatchGeometry::new(6, 1, 1).unwrap();
        let reference = PatchRef::new(30, 30);
        let count_for = |size: usize| {
            let ops = OpCount::default();
            let win = SearchWindow::from_size(size, size).unwrap();
            bm_naive(&img, &reference, &geom, &win, 8, Metric::Euclidean, Some(&ops)).unwrap();
            ops.get()
        };
        let c10 = count_for(10);
        let c20 = count_for(20);
        assert_eq!(c10, 36 * 100);
        assert_eq!(c20, 36 * 400);
    }

    #[test]
    fn distances_match_extracted_patches() {
        let img = demo3x3();
        let geom = PatchGeometry::new(2, 1, 1).unwrap();
        let a = PatchRef::new(0, 1);
        let b = PatchRef::new(1, 0);
        let pa = extract_patch(&img, &a, &geom).unwrap();
        let pb = extract_patch(&img, &b, &geom).unwrap();
        let direct: f64 =
            pa.data.iter().zip(&pb.data).map(|(x, y)| (x - y) * (x - y)).sum();
        assert_eq!(patch_distance(&img, &a, &b, &geom), direct);
    }
}
