//! Sliding-window extraction and automatic labeling.
//!
//! Stage 1 labels come from the cell's life span: a window is Healthy when it
//! starts inside the first `p` fraction of cycles and Unhealthy when it ends
//! inside the last `p` fraction; everything in between stays unlabeled.
//! Stage 2 targets are the remaining-life fraction at the window's anchor
//! (its last cycle): 1 at the first prediction cycle, 0 at end of life.

use crate::dataio::CellChannels;
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Default window length in cycles.
pub const DEFAULT_WINDOW: usize = 50;
/// Default stride between consecutive windows.
pub const DEFAULT_STEP: usize = 1;

/// One `n_channels x n_w` slice of a cell, anchored to its last cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub cell_id: String,
    /// First cycle covered (1-based).
    pub start_cycle: usize,
    /// Last cycle covered; the cycle this window "speaks for".
    pub anchor_cycle: usize,
    /// Row r = selected channel r over cycles `start..=anchor`.
    pub features: Matrix,
}

impl WindowSample {
    pub fn window_len(&self) -> usize {
        self.anchor_cycle - self.start_cycle + 1
    }
}

/// Stage-1 health-state label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HsLabel {
    Healthy,
    Unhealthy,
    Unlabeled,
}

impl HsLabel {
    /// Training target value; only labeled windows enter training.
    pub fn target(self) -> Option<f64> {
        match self {
            HsLabel::Healthy => Some(0.0),
            HsLabel::Unhealthy => Some(1.0),
            HsLabel::Unlabeled => None,
        }
    }
}

/// Stage-2 regression target: remaining life as a fraction of the
/// FPC-to-EOL span, in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RulTarget {
    pub fraction: f64,
}

/// Cuts `cell` into windows of `n_w` cycles every `step` cycles. Windows
/// never cross cell boundaries and short cells are an error, not padded.
pub fn make_windows(cell: &CellChannels, n_w: usize, step: usize) -> Result<Vec<WindowSample>> {
    if n_w == 0 || step == 0 {
        return Err(Error::Config("window size and step must be >= 1".into()));
    }
    let eol = cell.eol();
    if eol < n_w {
        return Err(Error::Data(format!(
            "cell {}: too short for windowing (eol {} < window {})",
            cell.cell_id(),
            eol,
            n_w
        )));
    }
    let count = (eol - n_w) / step + 1;
    let mut out = Vec::with_capacity(count);
    let mut start = 1usize;
    while start + n_w - 1 <= eol {
        let mut features = Matrix::zeros(cell.n_channels(), n_w);
        for (r, row) in cell.rows().iter().enumerate() {
            for c in 0..n_w {
                features[(r, c)] = row[start - 1 + c];
            }
        }
        out.push(WindowSample {
            cell_id: cell.cell_id().to_string(),
            start_cycle: start,
            anchor_cycle: start + n_w - 1,
            features,
        });
        start += step;
    }
    debug_assert_eq!(out.len(), count);
    Ok(out)
}

/// `ceil(frac * n)` with a small slack absorbing binary representation error,
/// so decimal fractions like 0.1 hit exact integer boundaries.
fn frac_ceil(frac: f64, n: usize) -> usize {
    (frac * n as f64 - 1e-9).ceil().max(0.0) as usize
}

/// `floor(frac * n)` with the same slack, biased the other way.
fn frac_floor(frac: f64, n: usize) -> usize {
    (frac * n as f64 + 1e-9).floor().max(0.0) as usize
}

/// Last start cycle still inside the healthy head region.
pub fn healthy_start_limit(eol: usize, p: f64) -> usize {
    frac_ceil(p, eol)
}

/// First anchor cycle inside the unhealthy tail region.
pub fn unhealthy_anchor_start(eol: usize, p: f64) -> usize {
    frac_floor(1.0 - p, eol)
}

/// Labels each window Healthy / Unhealthy / Unlabeled. Fails when the head
/// and tail regions overlap for this window length (tiny cells), which would
/// let one window carry both labels.
pub fn assign_hs_labels(windows: &[WindowSample], eol: usize, p: f64) -> Result<Vec<HsLabel>> {
    if !(p > 0.0 && p <= 0.5) {
        return Err(Error::Config(format!("p must be in (0, 0.5], got {p}")));
    }
    if windows.is_empty() {
        return Ok(Vec::new());
    }
    let cell_id = &windows[0].cell_id;
    let n_w = windows[0].window_len();
    for w in windows {
        if &w.cell_id != cell_id || w.window_len() != n_w {
            return Err(Error::Data(
                "assign_hs_labels expects windows from a single cell with one window length"
                    .into(),
            ));
        }
        if w.anchor_cycle > eol {
            return Err(Error::Data(format!(
                "window anchored at {} exceeds eol {eol}",
                w.anchor_cycle
            )));
        }
    }
    let healthy_max_start = healthy_start_limit(eol, p);
    let unhealthy_min_anchor = unhealthy_anchor_start(eol, p);
    if healthy_max_start + n_w - 1 >= unhealthy_min_anchor {
        return Err(Error::Data(format!(
            "cell {cell_id}: healthy/unhealthy regions overlap for eol {eol}, \
             window {n_w}, p {p}; labeling infeasible"
        )));
    }
    Ok(windows
        .iter()
        .map(|w| {
            if w.start_cycle <= healthy_max_start {
                HsLabel::Healthy
            } else if w.anchor_cycle >= unhealthy_min_anchor {
                HsLabel::Unhealthy
            } else {
                HsLabel::Unlabeled
            }
        })
        .collect())
}

/// Keeps windows anchored at or after `fpc` and pairs each with its
/// remaining-life fraction `(eol - anchor) / (eol - fpc)`.
pub fn assign_rul_targets(
    windows: &[WindowSample],
    eol: usize,
    fpc: usize,
) -> Result<Vec<(WindowSample, RulTarget)>> {
    if fpc >= eol {
        return Err(Error::Data(format!(
            "fpc ({fpc}) must precede eol ({eol})"
        )));
    }
    let span = (eol - fpc) as f64;
    Ok(windows
        .iter()
        .filter(|w| w.anchor_cycle >= fpc)
        .map(|w| {
            let fraction = (eol - w.anchor_cycle) as f64 / span;
            (w.clone(), RulTarget { fraction })
        })
        .collect())
}
