//! Image and patch geometry: the shared data substrate.
//!
//! Images are real-valued `H x W x C` rasters stored planar (channel-major,
//! row-major within a channel). Patches are square `side x side x depth`
//! blocks anchored at their top-left corner. Search windows are centered on
//! the reference patch anchor and clipped at the image borders.

use crate::error::{Error, Result};

/// Real-valued image raster.
///
/// `data` is planar: channel 0's rows first, then channel 1, and so on.
/// Intensities are doubles on the 0..255 scale; 8/16-bit files are promoted
/// on read. All values must be finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "data length {} does not match {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("image contains non-finite values".into()));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    /// Single-channel constructor from a row-major matrix, for tests and
    /// small fixtures.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let height = rows.len();
        let width = if height > 0 { rows[0].len() } else { 0 };
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Shape("ragged row lengths".into()));
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(height, width, 1, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Plane of one channel, `height * width` values row-major.
    pub fn channel(&self, chan: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.data[chan * plane..(chan + 1) * plane]
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, chan: usize) -> f64 {
        self.data[(chan * self.height + row) * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, chan: usize, value: f64) {
        self.data[(chan * self.height + row) * self.width + col] = value;
    }

    /// One image row restricted to a channel, as a slice.
    #[inline]
    pub fn row(&self, row: usize, chan: usize) -> &[f64] {
        let start = (chan * self.height + row) * self.width;
        &self.data[start..start + self.width]
    }
}

/// Patch extraction parameters: square spatial side, channel depth and the
/// stride of the reference-patch grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGeometry {
    pub side: usize,
    pub depth: usize,
    pub stride: usize,
}

impl PatchGeometry {
    pub fn new(side: usize, depth: usize, stride: usize) -> Result<Self> {
        if side == 0 || depth == 0 || stride == 0 {
            return Err(Error::Config("patch side, depth and stride must be >= 1".into()));
        }
        Ok(Self { side, depth, stride })
    }

    /// Number of scalars in one patch.
    pub fn len(&self) -> usize {
        self.side * self.side * self.depth
    }

    pub fn validate_for(&self, img: &ImageTensor) -> Result<()> {
        if self.side > img.height() || self.side > img.width() || self.depth > img.channels() {
            return Err(Error::Bounds(format!(
                "patch {}x{}x{} does not fit in image {}x{}x{}",
                self.side,
                self.side,
                self.depth,
                img.height(),
                img.width(),
                img.channels()
            )));
        }
        Ok(())
    }
}

/// Top-left corner of a patch: row, column and first channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PatchRef {
    pub row: usize,
    pub col: usize,
    pub chan: usize,
}

impl PatchRef {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col, chan: 0 }
    }

    pub fn new3(row: usize, col: usize, chan: usize) -> Self {
        Self { row, col, chan }
    }

    /// Raster ordering key: within a channel plane row-major, channels last.
    #[inline]
    pub fn raster_key(&self) -> (usize, usize, usize) {
        (self.chan, self.row, self.col)
    }

    pub fn validate(&self, img: &ImageTensor, geom: &PatchGeometry) -> Result<()> {
        if self.row + geom.side > img.height()
            || self.col + geom.side > img.width()
            || self.chan + geom.depth > img.channels()
        {
            return Err(Error::Bounds(format!(
                "patch at ({},{},{}) with side {} depth {} exceeds image {}x{}x{}",
                self.row,
                self.col,
                self.chan,
                geom.side,
                geom.depth,
                img.height(),
                img.width(),
                img.channels()
            )));
        }
        Ok(())
    }
}

/// Search window, centered on the reference patch anchor and clipped at the
/// image borders.
///
/// A window of size `s` along one axis spans anchor offsets
/// `[-floor((s-1)/2), s-1-floor((s-1)/2)]`, so odd sizes are symmetric and
/// even sizes carry the extra position after the anchor. `chan_span = 1`
/// means 2D search (candidates share the reference channel).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchWindow {
    rows_before: usize,
    rows_after: usize,
    cols_before: usize,
    cols_after: usize,
    chans_before: usize,
    chans_after: usize,
    whole_image: bool,
}

fn split_size(size: usize) -> (usize, usize) {
    let before = (size - 1) / 2;
    (before, size - 1 - before)
}

impl SearchWindow {
    /// Symmetric window: `2*half + 1` anchor positions per spatial axis.
    pub fn symmetric(half_height: usize, half_width: usize) -> Self {
        Self {
            rows_before: half_height,
            rows_after: half_height,
            cols_before: half_width,
            cols_after: half_width,
            chans_before: 0,
            chans_after: 0,
            whole_image: false,
        }
    }

    /// Window covering `size_h x size_w` anchor positions (before clipping).
    pub fn from_size(size_h: usize, size_w: usize) -> Result<Self> {
        if size_h == 0 || size_w == 0 {
            return Err(Error::Config("window size must be >= 1".into()));
        }
        let (rb, ra) = split_size(size_h);
        let (cb, ca) = split_size(size_w);
        Ok(Self {
            rows_before: rb,
            rows_after: ra,
            cols_before: cb,
            cols_after: ca,
            chans_before: 0,
            chans_after: 0,
            whole_image: false,
        })
    }

    /// Window spanning the entire image regardless of the reference position.
    pub fn whole_image() -> Self {
        Self {
            rows_before: usize::MAX,
            rows_after: usize::MAX,
            cols_before: usize::MAX,
            cols_after: usize::MAX,
            chans_before: usize::MAX,
            chans_after: usize::MAX,
            whole_image: true,
        }
    }

    pub fn is_whole_image(&self) -> bool {
        self.whole_image
    }

    /// Extends the search across `chan_span` channel offsets.
    pub fn with_chan_span(mut self, chan_span: usize) -> Result<Self> {
        if chan_span == 0 {
            return Err(Error::Config("chan_span must be >= 1".into()));
        }
        let (before, after) = split_size(chan_span);
        self.chans_before = before;
        self.chans_after = after;
        Ok(self)
    }

    pub fn chan_span(&self) -> usize {
        if self.whole_image {
            usize::MAX
        } else {
            self.chans_before + self.chans_after + 1
        }
    }

    /// Nominal number of spatial anchor positions before clipping.
    pub fn nominal_area(&self) -> Option<usize> {
        if self.whole_image {
            None
        } else {
            Some((self.rows_before + self.rows_after + 1) * (self.cols_before + self.cols_after + 1))
        }
    }

    /// Anchor ranges (inclusive) after clipping to the valid anchor grid of
    /// `img` under `geom`, centered at `reference`.
    pub fn clip(
        &self,
        img: &ImageTensor,
        geom: &PatchGeometry,
        reference: &PatchRef,
    ) -> WindowBounds {
        let max_row = img.height() - geom.side;
        let max_col = img.width() - geom.side;
        let max_chan = img.channels() - geom.depth;
        let clamp_axis = |pos: usize, before: usize, after: usize, max: usize| -> (usize, usize) {
            let lo = pos.saturating_sub(before);
            let hi = pos.saturating_add(after).min(max);
            (lo, hi)
        };
        if self.whole_image {
            return WindowBounds {
                row_range: (0, max_row),
                col_range: (0, max_col),
                chan_range: (0, max_chan),
            };
        }
        WindowBounds {
            row_range: clamp_axis(reference.row, self.rows_before, self.rows_after, max_row),
            col_range: clamp_axis(reference.col, self.cols_before, self.cols_after, max_col),
            chan_range: clamp_axis(reference.chan, self.chans_before, self.chans_after, max_chan),
        }
    }
}

/// Inclusive anchor ranges of a clipped window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowBounds {
    pub row_range: (usize, usize),
    pub col_range: (usize, usize),
    pub chan_range: (usize, usize),
}

impl WindowBounds {
    pub fn n_rows(&self) -> usize {
        self.row_range.1 - self.row_range.0 + 1
    }

    pub fn n_cols(&self) -> usize {
        self.col_range.1 - self.col_range.0 + 1
    }

    pub fn n_chans(&self) -> usize {
        self.chan_range.1 - self.chan_range.0 + 1
    }

    pub fn len(&self) -> usize {
        self.n_rows() * self.n_cols() * self.n_chans()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, p: &PatchRef) -> bool {
        p.row >= self.row_range.0
            && p.row <= self.row_range.1
            && p.col >= self.col_range.0
            && p.col <= self.col_range.1
            && p.chan >= self.chan_range.0
            && p.chan <= self.chan_range.1
    }

    /// Flat index of an anchor in raster order (row-major, then channel).
    pub fn flat_index(&self, p: &PatchRef) -> usize {
        debug_assert!(self.contains(p));
        let r = p.row - self.row_range.0;
        let c = p.col - self.col_range.0;
        let ch = p.chan - self.chan_range.0;
        (ch * self.n_rows() + r) * self.n_cols() + c
    }

    pub fn position(&self, flat: usize) -> PatchRef {
        let nc = self.n_cols();
        let nr = self.n_rows();
        let ch = flat / (nr * nc);
        let rem = flat % (nr * nc);
        PatchRef {
            row: self.row_range.0 + rem / nc,
            col: self.col_range.0 + rem % nc,
            chan: self.chan_range.0 + ch,
        }
    }
}

/// Dense copy of one patch: `side x side x depth`, planar, row-major within
/// each channel plane (image layout, not vectorization layout).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchTensor {
    pub side: usize,
    pub depth: usize,
    pub data: Vec<f64>,
}

impl PatchTensor {
    #[inline]
    pub fn get(&self, row: usize, col: usize, chan: usize) -> f64 {
        self.data[(chan * self.side + row) * self.side + col]
    }

    /// One patch row within a channel plane.
    #[inline]
    pub fn row(&self, row: usize, chan: usize) -> &[f64] {
        let start = (chan * self.side + row) * self.side;
        &self.data[start..start + self.side]
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Copies the patch at `reference` out of the image.
pub fn extract_patch(
    img: &ImageTensor,
    reference: &PatchRef,
    geom: &PatchGeometry,
) -> Result<PatchTensor> {
    reference.validate(img, geom)?;
    let mut data = Vec::with_capacity(geom.len());
    for ch in reference.chan..reference.chan + geom.depth {
        for r in reference.row..reference.row + geom.side {
            let row = img.row(r, ch);
            data.extend_from_slice(&row[reference.col..reference.col + geom.side]);
        }
    }
    Ok(PatchTensor { side: geom.side, depth: geom.depth, data })
}

/// First-mode unfolding of a patch: rows vary fastest, then columns, then
/// channels. For a 2x2 patch [[1,2],[4,5]] this yields [1,4,2,5].
pub fn vectorize(patch: &PatchTensor) -> Vec<f64> {
    let s = patch.side;
    let mut out = Vec::with_capacity(patch.data.len());
    for ch in 0..patch.depth {
        for col in 0..s {
            for row in 0..s {
                out.push(patch.get(row, col, ch));
            }
        }
    }
    out
}

/// Inverse of [`vectorize`].
pub fn devectorize(v: &[f64], side: usize, depth: usize) -> Result<PatchTensor> {
    if v.len() != side * side * depth {
        return Err(Error::Shape(format!(
            "vector length {} does not match {side}x{side}x{depth}",
            v.len()
        )));
    }
    let mut data = vec![0.0; v.len()];
    let mut i = 0;
    for ch in 0..depth {
        for col in 0..side {
            for row in 0..side {
                data[(ch * side + row) * side + col] = v[i];
                i += 1;
            }
        }
    }
    Ok(PatchTensor { side, depth, data })
}

/// Places the patch at the top-left corner of a zero canvas.
pub fn zero_pad(patch: &PatchTensor, target_h: usize, target_w: usize) -> Result<ImageTensor> {
    if target_h < patch.side || target_w < patch.side {
        return Err(Error::Bounds(format!(
            "target {}x{} smaller than patch side {}",
            target_h, target_w, patch.side
        )));
    }
    let mut out = ImageTensor::zeros(target_h, target_w, patch.depth);
    for ch in 0..patch.depth {
        for r in 0..patch.side {
            let src = patch.row(r, ch);
            let start = (ch * target_h + r) * target_w;
            out.data_mut()[start..start + patch.side].copy_from_slice(src);
        }
    }
    Ok(out)
}

/// All anchor positions whose patch lies fully inside both the image and the
/// window centered at `reference`, in raster order (row-major within a
/// channel, then channel). Always contains `reference` itself.
///
/// Candidate enumeration is stride-1; `geom.stride` only governs the
/// reference grid (see [`reference_positions`]).
pub fn valid_positions(
    img: &ImageTensor,
    geom: &PatchGeometry,
    win: &SearchWindow,
    reference: &PatchRef,
) -> Result<Vec<PatchRef>> {
    reference.validate(img, geom)?;
    let b = win.clip(img, geom, reference);
    let mut out = Vec::with_capacity(b.len());
    for ch in b.chan_range.0..=b.chan_range.1 {
        for row in b.row_range.0..=b.row_range.1 {
            for col in b.col_range.0..=b.col_range.1 {
                out.push(PatchRef { row, col, chan: ch });
            }
        }
    }
    Ok(out)
}

/// Reference-patch grid at `geom.stride`, with the last valid row/column
/// always included so that stride > 1 still covers the whole image.
pub fn reference_positions(img: &ImageTensor, geom: &PatchGeometry) -> Vec<PatchRef> {
    let axis = |extent: usize| -> Vec<usize> {
        let last = extent - geom.side;
        let mut v: Vec<usize> = (0..=last).step_by(geom.stride).collect();
        if *v.last().unwrap() != last {
            v.push(last);
        }
        v
    };
    let rows = axis(img.height());
    let cols = axis(img.width());
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for &row in &rows {
        for &col in &cols {
            out.push(PatchRef { row, col, chan: 0 });
        }
    }
    out
}

/// Per-anchor squared Frobenius norms of all stride-1 patches.
///
/// Entry (r, c, ch) is the sum of squared intensities of the
/// `side x side x depth` patch anchored there. Built from per-channel
/// summed-area tables of the squared image in O(N).
#[derive(Debug, Clone)]
pub struct NormMap {
    n_rows: usize,
    n_cols: usize,
    n_chans: usize,
    values: Vec<f64>,
}

impl NormMap {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn n_chans(&self) -> usize {
        self.n_chans
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, chan: usize) -> f64 {
        self.values[(chan * self.n_rows + row) * self.n_cols + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Computes the squared-norm map of all valid patch anchors.
pub fn squared_norm_map(img: &ImageTensor, geom: &PatchGeometry) -> Result<NormMap> {
    geom.validate_for(img)?;
    let h = img.height();
    let w = img.width();
    let side = geom.side;
    let n_rows = h - side + 1;
    let n_cols = w - side + 1;

    // Summed-area table of squares, one per channel, with a zero border.
    let mut block = vec![0.0f64; img.channels() * n_rows * n_cols];
    let mut sat = vec![0.0f64; (h + 1) * (w + 1)];
    for ch in 0..img.channels() {
        for r in 0..h {
            let row = img.row(r, ch);
            let mut run = 0.0;
            for c in 0..w {
                run += row[c] * row[c];
                sat[(r + 1) * (w + 1) + (c + 1)] = sat[r * (w + 1) + (c + 1)] + run;
            }
        }
        let plane = &mut block[ch * n_rows * n_cols..(ch + 1) * n_rows * n_cols];
        for r in 0..n_rows {
            for c in 0..n_cols {
                let a = sat[r * (w + 1) + c];
                let b = sat[r * (w + 1) + c + side];
                let d = sat[(r + side) * (w + 1) + c];
                let e = sat[(r + side) * (w + 1) + c + side];
                plane[r * n_cols + c] = e - b - d + a;
            }
        }
    }

    // Sum `depth` consecutive channel slabs per anchor channel.
    let n_chans = img.channels() - geom.depth + 1;
    let mut values = vec![0.0f64; n_chans * n_rows * n_cols];
    for ch in 0..n_chans {
        let plane = &mut values[ch * n_rows * n_cols..(ch + 1) * n_rows * n_cols];
        for d in 0..geom.depth {
            let src = &block[(ch + d) * n_rows * n_cols..(ch + d + 1) * n_rows * n_cols];
            for (dst, s) in plane.iter_mut().zip(src) {
                *dst += s;
            }
        }
    }
    Ok(NormMap { n_rows, n_cols, n_chans, values })
}

/// Deposits each patch at its reference location and normalizes every pixel
/// by its deposit count. Returns the normalized canvas plus a coverage mask;
/// pixels never touched stay 0 and are flagged `false`.
pub fn aggregate(
    groups: &[(PatchTensor, PatchRef)],
    canvas_h: usize,
    canvas_w: usize,
    channels: usize,
) -> Result<(ImageTensor, Vec<bool>)> {
    if groups.is_empty() {
        return Err(Error::EmptyAggregation);
    }
    let mut sum = ImageTensor::zeros(canvas_h, canvas_w, channels);
    let mut count = vec![0u32; canvas_h * canvas_w * channels];
    for (patch, at) in groups {
        if at.row + patch.side > canvas_h
            || at.col + patch.side > canvas_w
            || at.chan + patch.depth > channels
        {
            return Err(Error::Bounds(format!(
                "deposit at ({},{},{}) exceeds canvas {}x{}x{}",
                at.row, at.col, at.chan, canvas_h, canvas_w, channels
            )));
        }
        for ch in 0..patch.depth {
            for r in 0..patch.side {
                let src = patch.row(r, ch);
                let base = ((at.chan + ch) * canvas_h + at.row + r) * canvas_w + at.col;
                let dst = &mut sum.data_mut()[base..base + patch.side];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
                for c in &mut count[base..base + patch.side] {
                    *c += 1;
                }
            }
        }
    }
    let mask: Vec<bool> = count.iter().map(|&c| c > 0).collect();
    for (v, &c) in sum.data_mut().iter_mut().zip(&count) {
        if c > 0 {
            *v /= c as f64;
        }
    }
    Ok((sum, mask))
}
