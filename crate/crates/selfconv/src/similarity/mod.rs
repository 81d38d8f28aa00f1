//! The self-convolution engine: correlation surfaces, distance and weight
//! maps, top-K selection, and block matching over three interchangeable
//! engines (`naive`, `spatial`, `fft`) that must produce identical results.

mod window;

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::oracle;
use crate::spectral::{self, Spectrum};
use crate::tensor::{
    extract_patch, squared_norm_map, vectorize, ImageTensor, NormMap, PatchGeometry, PatchRef,
    PatchTensor, SearchWindow, WindowBounds,
};

pub(crate) use window::fast_size;

/// Guard on the NCC denominator.
pub const NCC_EPS: f64 = 1e-12;

/// Fraction of the image's anchor grid above which the fft engine switches
/// from per-window transforms to one precomputed whole-image spectrum.
const WHOLE_IMAGE_FRACTION: f64 = 0.25;

pub(crate) fn check_ncc_reference(ref_norm: f64) -> Result<()> {
    if ref_norm == 0.0 {
        return Err(Error::DegeneratePatch(
            "reference patch has zero norm; NCC is undefined".into(),
        ));
    }
    Ok(())
}

/// Distance metric for block matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    Ncc,
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Metric::Euclidean => write!(f, "euclidean"),
            Metric::Ncc => write!(f, "ncc"),
        }
    }
}

/// Which implementation computes the similarity surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    /// Pairwise metric evaluation (the oracle).
    Naive,
    /// Direct spatial correlation plus the norm-map identities.
    Spatial,
    /// FFT correlation plus the norm-map identities.
    Fft,
}

impl std::fmt::Display for EngineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EngineKind::Naive => write!(f, "naive"),
            EngineKind::Spatial => write!(f, "spatial"),
            EngineKind::Fft => write!(f, "fft"),
        }
    }
}

/// Tie handling for equal objective values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tiebreak {
    /// Raster order of the anchor only.
    Raster,
    /// The reference patch wins ties (it is the zero-distance self-match),
    /// then raster order.
    ReferenceFirst,
}

/// Atomic multiply-add counter for the complexity instrumentation.
#[derive(Debug, Default)]
pub struct OpCount(AtomicU64);

impl OpCount {
    pub fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.0.store(0, Ordering::Relaxed);
    }
}

/// Processing stage of a [`SimilarityMap`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricStage {
    RawCorrelation,
    EuclideanDistance,
    NccScore,
    BmObjective,
}

/// A per-anchor value surface over one (clipped) search window.
#[derive(Debug, Clone)]
pub struct SimilarityMap {
    pub bounds: WindowBounds,
    /// Values in raster order of the bounds (row-major, then channel).
    pub values: Vec<f64>,
    pub reference: PatchRef,
    pub stage: MetricStage,
}

impl SimilarityMap {
    pub fn get(&self, p: &PatchRef) -> f64 {
        self.values[self.bounds.flat_index(p)]
    }
}

/// Result of block matching: up to K anchors ordered best-first.
#[derive(Debug, Clone)]
pub struct MatchSet {
    pub reference: PatchRef,
    pub indices: Vec<PatchRef>,
    /// Native metric values: squared distances (ascending) for euclidean,
    /// NCC scores (descending) for ncc. `top_k_select` instead reports the
    /// raw objective it ranked, descending.
    pub scores: Vec<f64>,
    pub metric: Metric,
    pub k_requested: usize,
    /// Set when fewer than K valid positions existed.
    pub short_set: bool,
}

/// Normalized non-local-means weights over one window.
#[derive(Debug, Clone)]
pub struct WeightMap {
    pub positions: Vec<PatchRef>,
    pub weights: Vec<f64>,
    pub reference: PatchRef,
    pub bandwidth: f64,
}

/// One scored anchor during selection. `objective` is larger-is-better;
/// `score` is the value reported in the metric's native units.
#[derive(Debug, Clone, Copy)]
pub struct Candidate {
    pub pos: PatchRef,
    pub objective: f64,
    pub score: f64,
}

fn candidate_cmp(
    a: &Candidate,
    b: &Candidate,
    reference: &PatchRef,
    tiebreak: Tiebreak,
) -> std::cmp::Ordering {
    // Larger objective first; ties by the configured rule. Objectives are
    // finite by construction.
    b.objective
        .partial_cmp(&a.objective)
        .expect("finite objectives")
        .then_with(|| {
            if tiebreak == Tiebreak::ReferenceFirst {
                match (a.pos == *reference, b.pos == *reference) {
                    (true, false) => return std::cmp::Ordering::Less,
                    (false, true) => return std::cmp::Ordering::Greater,
                    _ => {}
                }
            }
            a.pos.raster_key().cmp(&b.pos.raster_key())
        })
}

/// Shared top-K selection used by every engine and by the oracle: identical
/// ordering semantics are what make the equivalence suites byte-for-byte.
pub fn select_matches(
    mut candidates: Vec<Candidate>,
    k: usize,
    metric: Metric,
    reference: PatchRef,
    tiebreak: Tiebreak,
) -> MatchSet {
    let n = candidates.len();
    let kk = k.min(n);
    if kk < n {
        candidates
            .select_nth_unstable_by(kk - 1, |a, b| candidate_cmp(a, b, &reference, tiebreak));
        candidates.truncate(kk);
    }
    candidates.sort_unstable_by(|a, b| candidate_cmp(a, b, &reference, tiebreak));
    MatchSet {
        reference,
        indices: candidates.iter().map(|c| c.pos).collect(),
        scores: candidates.iter().map(|c| c.score).collect(),
        metric,
        k_requested: k,
        short_set: n < k,
    }
}

/// Keeps the K positions of largest value (not largest magnitude) of a
/// larger-is-better objective map. Reported scores are the objective values,
/// descending.
pub fn top_k_select(objective: &SimilarityMap, k: usize, tiebreak: Tiebreak) -> MatchSet {
    assert!(k >= 1, "K must be >= 1");
    let candidates: Vec<Candidate> = objective
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| Candidate { pos: objective.bounds.position(i), objective: v, score: v })
        .collect();
    select_matches(candidates, k, Metric::Euclidean, objective.reference, tiebreak)
}

/// Direct spatial self-convolution: the raw correlation surface of a patch
/// against every anchor of the window, channels summed.
pub fn selfconv_spatial(
    img: &ImageTensor,
    patch: &PatchTensor,
    win: &SearchWindow,
    reference: &PatchRef,
) -> Result<SimilarityMap> {
    let geom = PatchGeometry::new(patch.side, patch.depth, 1)?;
    geom.validate_for(img)?;
    reference.validate(img, &geom)?;
    let bounds = win.clip(img, &geom, reference);
    let mut values = Vec::with_capacity(bounds.len());
    for ch in bounds.chan_range.0..=bounds.chan_range.1 {
        for q in bounds.row_range.0..=bounds.row_range.1 {
            for s in bounds.col_range.0..=bounds.col_range.1 {
                let mut acc = 0.0;
                for d in 0..patch.depth {
                    for l in 0..patch.side {
                        let prow = patch.row(l, d);
                        let irow = &img.row(q + l, ch + d)[s..s + patch.side];
                        for (p, v) in prow.iter().zip(irow) {
                            acc += p * v;
                        }
                    }
                }
                values.push(acc);
            }
        }
    }
    Ok(SimilarityMap { bounds, values, reference: *reference, stage: MetricStage::RawCorrelation })
}

/// FFT self-convolution against a precomputed spectrum of the whole image
/// (or search region): `ifft2(conj_multiply(F x, F x_i))` restricted to the
/// valid anchor region. Channel slabs of the patch are summed.
pub fn selfconv_fft(
    img_spectrum: &Spectrum,
    patch: &PatchTensor,
    reference: &PatchRef,
) -> Result<SimilarityMap> {
    let (h, w) = (img_spectrum.height, img_spectrum.width);
    if patch.side > h || patch.side > w {
        return Err(Error::Shape(format!(
            "patch side {} exceeds spectrum dims {h}x{w}",
            patch.side
        )));
    }
    if reference.chan + patch.depth > img_spectrum.channels {
        return Err(Error::Shape(format!(
            "patch depth {} at channel {} exceeds {} spectrum channels",
            patch.depth, reference.chan, img_spectrum.channels
        )));
    }
    let padded = crate::tensor::zero_pad(patch, h, w)?;
    let pat_spec = spectral::fft2(&padded);
    let plane = h * w;
    let mut acc = vec![rustfft::num_complex::Complex::new(0.0, 0.0); plane];
    for d in 0..patch.depth {
        let xs = img_spectrum.channel(reference.chan + d);
        let ps = pat_spec.channel(d);
        for (a, (x, p)) in acc.iter_mut().zip(xs.iter().zip(ps)) {
            *a += x * p.conj();
        }
    }
    let full = spectral::ifft2(&Spectrum { height: h, width: w, channels: 1, data: acc })?;
    let bounds = WindowBounds {
        row_range: (0, h - patch.side),
        col_range: (0, w - patch.side),
        chan_range: (reference.chan, reference.chan),
    };
    let mut values = Vec::with_capacity(bounds.len());
    for q in 0..=h - patch.side {
        values.extend_from_slice(&full.row(q, 0)[..w - patch.side + 1]);
    }
    Ok(SimilarityMap { bounds, values, reference: *reference, stage: MetricStage::RawCorrelation })
}

/// Squared Euclidean distances from a raw correlation map:
/// `d(j) = |X_j|^2 + |X_i|^2 - 2 C_i(j)`, clamped at zero.
pub fn euclidean_map(
    c: &SimilarityMap,
    norms: &NormMap,
    ref_norm_sq: f64,
) -> Result<SimilarityMap> {
    debug_assert_eq!(c.stage, MetricStage::RawCorrelation);
    let b = &c.bounds;
    if b.row_range.1 >= norms.n_rows()
        || b.col_range.1 >= norms.n_cols()
        || b.chan_range.1 >= norms.n_chans()
    {
        return Err(Error::Shape("correlation map exceeds norm map extent".into()));
    }
    let mut values = Vec::with_capacity(c.values.len());
    let mut i = 0;
    for ch in b.chan_range.0..=b.chan_range.1 {
        for q in b.row_range.0..=b.row_range.1 {
            for s in b.col_range.0..=b.col_range.1 {
                let d = norms.get(q, s, ch) + ref_norm_sq - 2.0 * c.values[i];
                values.push(d.max(0.0));
                i += 1;
            }
        }
    }
    Ok(SimilarityMap {
        bounds: *b,
        values,
        reference: c.reference,
        stage: MetricStage::EuclideanDistance,
    })
}

/// NCC scores from a raw correlation map:
/// `s(j) = C_i(j) / max(|X_i| * |X_j|, eps)`, to be maximized.
pub fn ncc_map(
    c: &SimilarityMap,
    norms: &NormMap,
    ref_norm: f64,
    eps: f64,
) -> Result<SimilarityMap> {
    debug_assert_eq!(c.stage, MetricStage::RawCorrelation);
    assert!(eps > 0.0, "eps must be positive");
    check_ncc_reference(ref_norm)?;
    let b = &c.bounds;
    if b.row_range.1 >= norms.n_rows()
        || b.col_range.1 >= norms.n_cols()
        || b.chan_range.1 >= norms.n_chans()
    {
        return Err(Error::Shape("correlation map exceeds norm map extent".into()));
    }
    let mut values = Vec::with_capacity(c.values.len());
    let mut i = 0;
    for ch in b.chan_range.0..=b.chan_range.1 {
        for q in b.row_range.0..=b.row_range.1 {
            for s in b.col_range.0..=b.col_range.1 {
                let denom = (ref_norm * norms.get(q, s, ch).sqrt()).max(eps);
                values.push(c.values[i] / denom);
                i += 1;
            }
        }
    }
    Ok(SimilarityMap { bounds: *b, values, reference: c.reference, stage: MetricStage::NccScore })
}

/// Non-local-means weights from a Euclidean distance map:
/// `w(j) = exp(-d(j)/b^2) / Theta`, stabilized by subtracting the minimum
/// distance before exponentiation (the normalized weights are invariant
/// under that shift).
pub fn nlm_weights(d: &SimilarityMap, bandwidth: f64) -> WeightMap {
    debug_assert_eq!(d.stage, MetricStage::EuclideanDistance);
    assert!(bandwidth > 0.0, "bandwidth must be positive");
    let dmin = d.values.iter().copied().fold(f64::INFINITY, f64::min);
    let b2 = bandwidth * bandwidth;
    let mut weights: Vec<f64> = d.values.iter().map(|&v| (-(v - dmin) / b2).exp()).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    let positions = (0..d.values.len()).map(|i| d.bounds.position(i)).collect();
    WeightMap { positions, weights, reference: d.reference, bandwidth }
}

/// NLM weighting through the self-convolution path (correlate, apply the
/// distance identity, exponentiate). Equivalent to the direct evaluation in
/// [`oracle::nlm_naive`].
pub fn nlm_selfconv(
    img: &ImageTensor,
    reference: &PatchRef,
    geom: &PatchGeometry,
    win: &SearchWindow,
    bandwidth: f64,
) -> Result<WeightMap> {
    let patch = extract_patch(img, reference, geom)?;
    let c = selfconv_spatial(img, &patch, win, reference)?;
    let norms = squared_norm_map(img, geom)?;
    let d = euclidean_map(&c, &norms, patch.squared_norm())?;
    Ok(nlm_weights(&d, bandwidth))
}

/// 2D versus cross-channel 3D search for multi-channel tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMode {
    /// Channel-wise correlation summed over channels; candidates share the
    /// reference channel.
    Search2d,
    /// Patches span `depth < channels` and candidates may sit at other
    /// channel offsets within the window's channel span.
    Search3d,
}

/// Matched patch group: vectorized full-depth patches as columns.
#[derive(Debug, Clone)]
pub struct PatchGroup {
    /// Rows per column: side * side * channels.
    pub np: usize,
    pub refs: Vec<PatchRef>,
    /// Column-major np x refs.len().
    pub data: Vec<f64>,
}

impl PatchGroup {
    pub fn n_cols(&self) -> usize {
        self.refs.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.np..(j + 1) * self.np]
    }
}

/// Stacks the full-depth patches at the matched anchors into a matrix, in
/// match order.
pub fn group_patches(
    tensor: &ImageTensor,
    matches: &MatchSet,
    geom: &PatchGeometry,
) -> Result<PatchGroup> {
    if matches.indices.is_empty() {
        return Err(Error::Config("cannot group an empty match set".into()));
    }
    let full = PatchGeometry::new(geom.side, tensor.channels(), geom.stride)?;
    let np = full.len();
    let mut data = Vec::with_capacity(np * matches.indices.len());
    for m in &matches.indices {
        let anchor = PatchRef::new(m.row, m.col);
        let patch = extract_patch(tensor, &anchor, &full)?;
        data.extend_from_slice(&vectorize(&patch));
    }
    Ok(PatchGroup { np, refs: matches.indices.clone(), data })
}

enum FftStrategy {
    PerWindow,
    WholeImage(Box<Spectrum>),
}

/// Amortized block matcher: precomputes the squared-norm map (and, when the
/// window covers most of the image, the whole-image spectrum) once, then
/// matches any number of reference patches.
pub struct Matcher<'a> {
    img: &'a ImageTensor,
    geom: PatchGeometry,
    win: SearchWindow,
    k: usize,
    metric: Metric,
    engine: EngineKind,
    norms: NormMap,
    fft: Option<FftStrategy>,
    ops: OpCount,
}

impl<'a> Matcher<'a> {
    pub fn new(
        img: &'a ImageTensor,
        geom: PatchGeometry,
        win: SearchWindow,
        k: usize,
        metric: Metric,
        engine: EngineKind,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("K must be >= 1".into()));
        }
        geom.validate_for(img)?;
        let norms = squared_norm_map(img, &geom)?;
        let fft = if engine == EngineKind::Fft {
            let total = norms.n_rows() * norms.n_cols();
            let per_window = match win.nominal_area() {
                Some(area) => (area as f64) <= WHOLE_IMAGE_FRACTION * total as f64,
                None => false,
            };
            if per_window {
                Some(FftStrategy::PerWindow)
            } else {
                Some(FftStrategy::WholeImage(Box::new(spectral::fft2(img))))
            }
        } else {
            None
        };
        Ok(Self { img, geom, win, k, metric, engine, norms, fft, ops: OpCount::default() })
    }

    pub fn ops(&self) -> &OpCount {
        &self.ops
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn engine(&self) -> EngineKind {
        self.engine
    }

    /// Raw correlation over the window, via the engine's strategy.
    fn correlation(&self, reference: &PatchRef, bounds: &WindowBounds) -> Result<Vec<f64>> {
        match self.engine {
            EngineKind::Naive => unreachable!("naive engine does not build correlation maps"),
            EngineKind::Spatial => {
                let patch = extract_patch(self.img, reference, &self.geom)?;
                let map = selfconv_spatial(self.img, &patch, &self.win, reference)?;
                self.ops.add((self.geom.len() * map.values.len()) as u64);
                Ok(map.values)
            }
            EngineKind::Fft => match self.fft.as_ref().expect("fft strategy") {
                FftStrategy::PerWindow => {
                    let mut values = Vec::new();
                    let mut chan_values = Vec::new();
                    for ch in bounds.chan_range.0..=bounds.chan_range.1 {
                        let req = window::CorrRequest {
                            img: self.img,
                            patch_row: reference.row,
                            patch_col: reference.col,
                            patch_chan: reference.chan,
                            side: self.geom.side,
                            depth: self.geom.depth,
                            img_chan0: ch,
                            row0: bounds.row_range.0,
                            row1: bounds.row_range.1,
                            col0: bounds.col_range.0,
                            col1: bounds.col_range.1,
                        };
                        let flops = window::correlate(&req, &mut chan_values);
                        self.ops.add(flops);
                        values.extend_from_slice(&chan_values);
                    }
                    Ok(values)
                }
                FftStrategy::WholeImage(spec) => {
                    let (h, w) = (self.img.height(), self.img.width());
                    let patch = extract_patch(self.img, reference, &self.geom)?;
                    let mut values = Vec::with_capacity(bounds.len());
                    for ch in bounds.chan_range.0..=bounds.chan_range.1 {
                        let anchored = PatchRef::new3(reference.row, reference.col, ch);
                        let full = selfconv_fft(spec, &patch, &anchored)?;
                        // Model count: patch forward + product + one inverse, per slab.
                        let fft2d = (5.0
                            * (h * w) as f64
                            * ((h as f64).log2() + (w as f64).log2()))
                        .round() as u64;
                        self.ops
                            .add(fft2d * (self.geom.depth as u64 + 1) + (h * w * 6) as u64);
                        for q in bounds.row_range.0..=bounds.row_range.1 {
                            for s in bounds.col_range.0..=bounds.col_range.1 {
                                values.push(full.get(&PatchRef::new3(q, s, ch)));
                            }
                        }
                    }
                    Ok(values)
                }
            },
        }
    }

    /// Matches one reference patch.
    pub fn match_one(&self, reference: &PatchRef) -> Result<MatchSet> {
        reference.validate(self.img, &self.geom)?;
        if self.engine == EngineKind::Naive {
            return oracle::bm_naive(
                self.img,
                reference,
                &self.geom,
                &self.win,
                self.k,
                self.metric,
                Some(&self.ops),
            );
        }
        let bounds = self.win.clip(self.img, &self.geom, reference);
        let c = self.correlation(reference, &bounds)?;
        let ref_norm_sq = self.norms.get(reference.row, reference.col, reference.chan);
        let mut candidates = Vec::with_capacity(c.len());
        match self.metric {
            Metric::Euclidean => {
                let mut i = 0;
                for ch in bounds.chan_range.0..=bounds.chan_range.1 {
                    for q in bounds.row_range.0..=bounds.row_range.1 {
                        for s in bounds.col_range.0..=bounds.col_range.1 {
                            let pos = PatchRef::new3(q, s, ch);
                            let d = if pos == *reference {
                                0.0
                            } else {
                                (self.norms.get(q, s, ch) + ref_norm_sq - 2.0 * c[i]).max(0.0)
                            };
                            candidates.push(Candidate { pos, objective: -d, score: d });
                            i += 1;
                        }
                    }
                }
                self.ops.add(3 * c.len() as u64);
            }
            Metric::Ncc => {
                let ref_norm = ref_norm_sq.sqrt();
                check_ncc_reference(ref_norm)?;
                let mut i = 0;
                for ch in bounds.chan_range.0..=bounds.chan_range.1 {
                    for q in bounds.row_range.0..=bounds.row_range.1 {
                        for s in bounds.col_range.0..=bounds.col_range.1 {
                            let pos = PatchRef::new3(q, s, ch);
                            let score = if pos == *reference {
                                1.0
                            } else {
                                let denom =
                                    (ref_norm * self.norms.get(q, s, ch).sqrt()).max(NCC_EPS);
                                c[i] / denom
                            };
                            candidates.push(Candidate { pos, objective: score, score });
                            i += 1;
                        }
                    }
                }
                self.ops.add(3 * c.len() as u64);
            }
        }
        Ok(select_matches(candidates, self.k, self.metric, *reference, Tiebreak::ReferenceFirst))
    }

    /// Matches every reference in order.
    pub fn match_all(&self, references: &[PatchRef]) -> Result<Vec<MatchSet>> {
        references.iter().map(|r| self.match_one(r)).collect()
    }

    /// Parallel variant; the output order is still the reference order.
    pub fn match_all_par(&self, references: &[PatchRef]) -> Result<Vec<MatchSet>>
    where
        Self: Sync,
    {
        use rayon::prelude::*;
        references.par_iter().map(|r| self.match_one(r)).collect()
    }
}

/// One-shot block matching; engines must agree on indices and, to 1e-6, on
/// scores. For repeated matching against the same image prefer [`Matcher`].
pub fn block_match(
    img: &ImageTensor,
    reference: &PatchRef,
    geom: &PatchGeometry,
    win: &SearchWindow,
    k: usize,
    metric: Metric,
    engine: EngineKind,
) -> Result<MatchSet> {
    Matcher::new(img, *geom, *win, k, metric, engine)?.match_one(reference)
}

/// Multi-channel block matching per the tensor formulation: channel-wise
/// correlation with channel summation (`search2d`), or cross-channel search
/// over channel offsets (`search3d`, requiring `depth < channels`).
///
/// Scores are squared Euclidean distances over the 3D patches.
pub fn selfconv_mm(
    tensor: &ImageTensor,
    reference: &PatchRef,
    geom: &PatchGeometry,
    win: &SearchWindow,
    k: usize,
    mode: SearchMode,
) -> Result<MatchSet> {
    match mode {
        SearchMode::Search2d => {
            let win2d = if win.is_whole_image() { *win } else { win.with_chan_span(1)? };
            block_match(tensor, reference, geom, &win2d, k, Metric::Euclidean, EngineKind::Fft)
        }
        SearchMode::Search3d => {
            if geom.depth >= tensor.channels() {
                return Err(Error::Config(format!(
                    "search3d requires patch depth < channels ({} >= {})",
                    geom.depth,
                    tensor.channels()
                )));
            }
            if !win.is_whole_image() && win.chan_span() <= 1 {
                return Err(Error::Config(
                    "search3d requires a window channel span > 1".into(),
                ));
            }
            block_match(tensor, reference, geom, win, k, Metric::Euclidean, EngineKind::Fft)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::SearchWindow;

    fn demo3x3() -> ImageTensor {
        ImageTensor::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], &[7.0, 8.0, 9.0]]).unwrap()
    }

    fn demo_patch() -> PatchTensor {
        extract_patch(&demo3x3(), &PatchRef::new(0, 0), &PatchGeometry::new(2, 1, 1).unwrap())
            .unwrap()
    }

    #[test]
    fn spatial_demo_surface() {
        let img = demo3x3();
        let c = selfconv_spatial(&img, &demo_patch(), &SearchWindow::whole_image(), &PatchRef::new(0, 0))
            .unwrap();
        assert_eq!(c.values, vec![46.0, 58.0, 82.0, 94.0]);
        // Self position equals the squared norm.
        assert_eq!(c.get(&PatchRef::new(0, 0)), 46.0);
    }

    #[test]
    fn spatial_all_ones() {
        let img = ImageTensor::new(4, 4, 1, vec![1.0; 16]).unwrap();
        let patch = PatchTensor { side: 2, depth: 1, data: vec![1.0; 4] };
        let c =
            selfconv_spatial(&img, &patch, &SearchWindow::whole_image(), &PatchRef::new(0, 0))
                .unwrap();
        assert!(c.values.iter().all(|&v| v == 4.0));
    }

    #[test]
    fn fft_demo_surface_matches_oracle() {
        let img = demo3x3();
        let spec = spectral::fft2(&img);
        let c = selfconv_fft(&spec, &demo_patch(), &PatchRef::new(0, 0)).unwrap();
        for (got, want) in c.values.iter().zip([46.0, 58.0, 82.0, 94.0]) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn fft_zero_patch_zero_map() {
        let img = demo3x3();
        let spec = spectral::fft2(&img);
        let patch = PatchTensor { side: 2, depth: 1, data: vec![0.0; 4] };
        let c = selfconv_fft(&spec, &patch, &PatchRef::new(0, 0)).unwrap();
        assert!(c.values.iter().all(|&v| v.abs() < 1e-9));
    }

    #[test]
    fn euclidean_map_demo() {
        let img = demo3x3();
        let geom = PatchGeometry::new(2, 1, 1).unwrap();
        let c = selfconv_spatial(&img, &demo_patch(), &SearchWindow::whole_image(), &PatchRef::new(0, 0))
            .unwrap();
        let norms = squared_norm_map(&img, &geom).unwrap();
        let d = euclidean_map(&c, &norms, 46.0).unwrap();
        assert_eq!(d.values, vec![0.0, 4.0, 36.0, 64.0]);
    }

    #[test]
    fn ncc_map_self_is_one() {
        let img = demo3x3();
        let geom = PatchGeometry::new(2, 1, 1).unwrap();
        let c = selfconv_spatial(&img, &demo_patch(), &SearchWindow::whole_image(), &PatchRef::new(0, 0))
            .unwrap();
        let norms = squared_norm_map(&img, &geom).unwrap();
        let s = ncc_map(&c, &norms, 46.0f64.sqrt(), NCC_EPS).unwrap();
        assert!((s.get(&PatchRef::new(0, 0)) - 1.0).abs() < 1e-12);
        for &v in &s.values {
            assert!((-1.0..=1.0 + 1e-9).contains(&v));
        }
    }

    #[test]
    fn ncc_degenerate_reference_rejected() {
        let img = demo3x3();
        let geom = PatchGeometry::new(2, 1, 1).unwrap();
        let c = selfconv_spatial(&img, &demo_patch(), &SearchWindow::whole_image(), &PatchRef::new(0, 0))
            .unwrap();
        let norms = squared_norm_map(&img, &geom).unwrap();
        assert!(matches!(
            ncc_map(&c, &norms, 0.0, NCC_EPS),
            Err(Error::DegeneratePatch(_))
        ));
    }

    #[test]
    fn nlm_weights_demo() {
        let img = demo3x3();
        let geom = PatchGeometry::new(2, 1, 1).unwrap();
        let c = selfconv_spatial(&img, &demo_patch(), &SearchWindow::whole_image(), &PatchRef::new(0, 0))
            .unwrap();
        let norms = squared_norm_map(&img, &geom).unwrap();
        let d = euclidean_map(&c, &norms, 46.0).unwrap();
        let w = nlm_weights(&d, 10.0);
        let raw: Vec<f64> = [0.0f64, 4.0, 36.0, 64.0].iter().map(|d| (-d / 100.0).exp()).collect();
        let total: f64 = raw.iter().sum();
        for (got, want) in w.weights.iter().zip(raw.iter().map(|r| r / total)) {
            assert!((got - want).abs() < 1e-12);
        }
        let sum: f64 = w.weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-10);
    }

    #[test]
    fn nlm_two_equal_positions() {
        let img = ImageTensor::from_rows(&[&[5.0, 5.0, 5.0], &[5.0, 5.0, 5.0]]).unwrap();
        let geom = PatchGeometry::new(2, 1, 1).unwrap();
        let win = SearchWindow::from_size(1, 2).unwrap();
        let w = nlm_selfconv(&img, &PatchRef::new(0, 1), &geom, &win, 3.0).unwrap();
        assert_eq!(w.weights.len(), 2);
        for v in &w.weights {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn top_k_demo_objective() {
        let img = demo3x3();
        let geom = PatchGeometry::new(2, 1, 1).unwrap();
        let reference = PatchRef::new(0, 0);
        let c = selfconv_spatial(&img, &demo_patch(), &SearchWindow::whole_image(), &reference)
            .unwrap();
        let norms = squared_norm_map(&img, &geom).unwrap();
        // b = C - h.^2 / 2 : the block-matching objective.
        let mut b = c.clone();
        let bounds = b.bounds;
        for (i, v) in b.values.iter_mut().enumerate() {
            let p = bounds.position(i);
            *v -= 0.5 * norms.get(p.row, p.col, p.chan);
        }
        b.stage = MetricStage::BmObjective;
        assert_eq!(b.values, vec![23.0, 21.0, 5.0, -9.0]);

        let top2 = top_k_select(&b, 2, Tiebreak::Raster);
        assert_eq!(top2.indices, vec![PatchRef::new(0, 0), PatchRef::new(0, 1)]);
        // Value selection, not magnitude: K=3 keeps 5 at (1,0), not -9.
        let top3 = top_k_select(&b, 3, Tiebreak::Raster);
        assert_eq!(
            top3.indices,
            vec![PatchRef::new(0, 0), PatchRef::new(0, 1), PatchRef::new(1, 0)]
        );
        let all = top_k_select(&b, 10, Tiebreak::Raster);
        assert_eq!(all.indices.len(), 4);
        assert!(all.short_set);
        assert_eq!(all.scores, vec![23.0, 21.0, 5.0, -9.0]);
    }

    #[test]
    fn engines_agree_on_demo() {
        let img = demo3x3();
        let geom = PatchGeometry::new(2, 1, 1).unwrap();
        let win = SearchWindow::whole_image();
        let reference = PatchRef::new(0, 0);
        for metric in [Metric::Euclidean, Metric::Ncc] {
            let base =
                block_match(&img, &reference, &geom, &win, 4, metric, EngineKind::Naive).unwrap();
            for engine in [EngineKind::Spatial, EngineKind::Fft] {
                let got = block_match(&img, &reference, &geom, &win, 4, metric, engine).unwrap();
                assert_eq!(got.indices, base.indices, "{metric} {engine}");
                for (a, b) in got.scores.iter().zip(&base.scores) {
                    assert!((a - b).abs() < 1e-6, "{metric} {engine}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn reference_first_among_duplicates() {
        // Tiled 2x2 motif: every aligned patch is identical.
        let (h, w) = (8, 8);
        let mut data = vec![0.0; h * w];
        for r in 0..h {
            for c in 0..w {
                data[r * w + c] = ((r % 2) * 2 + c % 2) as f64 + 1.0;
            }
        }
        let img = ImageTensor::new(h, w, 1, data).unwrap();
        let geom = PatchGeometry::new(2, 1, 1).unwrap();
        let win = SearchWindow::whole_image();
        let reference = PatchRef::new(4, 4);
        for engine in [EngineKind::Naive, EngineKind::Spatial, EngineKind::Fft] {
            let m =
                block_match(&img, &reference, &geom, &win, 4, Metric::Euclidean, engine).unwrap();
            assert_eq!(m.indices[0], reference, "{engine}");
            assert!(m.scores[0] <= 1e-9);
        }
    }

    #[test]
    fn group_patches_shapes() {
        let img = demo3x3();
        let geom = PatchGeometry::new(2, 1, 1).unwrap();
        let m = block_match(
            &img,
            &PatchRef::new(0, 0),
            &geom,
            &SearchWindow::whole_image(),
            1,
            Metric::Euclidean,
            EngineKind::Naive,
        )
        .unwrap();
        let g = group_patches(&img, &m, &geom).unwrap();
        assert_eq!(g.np, 4);
        assert_eq!(g.n_cols(), 1);
        assert_eq!(g.column(0), &[1.0, 4.0, 2.0, 5.0]);
    }

    #[test]
    fn search3d_config_errors() {
        let img = ImageTensor::zeros(8, 8, 2);
        let geom = PatchGeometry::new(2, 2, 1).unwrap();
        let win = SearchWindow::from_size(3, 3).unwrap().with_chan_span(2).unwrap();
        assert!(matches!(
            selfconv_mm(&img, &PatchRef::new(2, 2), &geom, &win, 4, SearchMode::Search3d),
            Err(Error::Config(_))
        ));
    }
}
