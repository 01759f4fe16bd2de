/// Binary mask of `m * C` entries, one length-`m` pattern per input channel.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskVector {
    values: Vec<f64>,
}

impl MaskVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn ones(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1.0).count()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Boundary mask for one kernel tap of the same-shape 3x3 convolution.
///
/// `sp` leading zeros, then runs of `w` ones each followed by a single zero
/// until `m - ep` entries exist; the result is truncated or zero-padded to
/// `m`, its last `ep` entries are cleared, and the pattern is repeated for
/// each of the `channels` blocks.
pub fn build_mask(sp: usize, ep: usize, w: usize, m: usize, channels: usize) -> MaskVector {
    let mut mask: Vec<f64> = Vec::with_capacity(m + w + 1);
    mask.extend(std::iter::repeat_n(0.0, sp));
    let fill_to = m.saturating_sub(ep);
    while mask.len() < fill_to {
        mask.extend(std::iter::repeat_n(1.0, w));
        mask.push(0.0);
    }
    mask.truncate(m);
    mask.resize(m, 0.0);
    for i in 0..ep.min(m) {
        mask[m - i - 1] = 0.0;
    }
    let mut values = Vec::with_capacity(m * channels);
    for _ in 0..channels {
        values.extend_from_slice(&mask);
    }
    MaskVector { values }
}

/// The nine tap masks of the same-shape 3x3 convolution, in tap order
/// `(di, dj)` = `(-1,-1), (-1,0), ..., (1,1)`.
pub fn build_all_masks(m: usize, channels: usize, width: usize) -> [MaskVector; 9] {
    let w = width;
    [
        build_mask(w + 1, 0, w.saturating_sub(1), m, channels),
        build_mask(w, 0, m, m, channels),
        build_mask(w, 0, w.saturating_sub(1), m, channels),
        build_mask(1, 0, w.saturating_sub(1), m, channels),
        build_mask(0, 0, m, m, channels),
        build_mask(0, 1, w.saturating_sub(1), m, channels),
        build_mask(1, w.saturating_sub(1), w.saturating_sub(1), m, channels),
        build_mask(0, w, m, m, channels),
        build_mask(0, w + 1, w.saturating_sub(1), m, channels),
    ]
}

/// `W^2` ones followed by zeros through slot `C * W^2`: selects channel block 0.
pub fn extraction_mask(width: usize, channels: usize) -> MaskVector {
    let m = width * width;
    let mut values = vec![0.0; m * channels.max(1)];
    values[..m].fill(1.0);
    MaskVector { values }
}
