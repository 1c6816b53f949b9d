//! Plate rendering: one glyph per fixed-width slot on a solid background.
//!
//! Layout for an `H×W` plate with `n` tokens: horizontal margin
//! `max(1, W/32)`, vertical margin `max(1, H/8)`, slot width
//! `(W − 2·margin_x)/n`, and a gap of `max(1, slot/6)` inside each slot. The
//! glyph bitmap is stretched over the remaining box with nearest-neighbour
//! sampling.

use crate::error::{Error, Result};
use crate::synth::alphabet::Alphabet;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Style {
    /// Light glyphs on a dark blue field.
    Blue,
    /// Dark glyphs on a yellow field.
    Yellow,
}

impl Style {
    pub fn colors(self) -> ([f64; 3], [f64; 3]) {
        match self {
            Style::Blue => ([0.08, 0.22, 0.70], [0.95, 0.95, 0.97]),
            Style::Yellow => ([0.96, 0.80, 0.12], [0.06, 0.06, 0.05]),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Style::Blue => "blue",
            Style::Yellow => "yellow",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "blue" => Some(Style::Blue),
            "yellow" => Some(Style::Yellow),
            _ => None,
        }
    }
}

/// Glyph box `(x0, y0, width, height)` of every slot.
pub fn slot_boxes(n: usize, height: usize, width: usize) -> Result<Vec<(usize, usize, usize, usize)>> {
    if n == 0 {
        return Err(Error::Layout("nothing to render".into()));
    }
    let mx = (width / 32).max(1);
    let my = (height / 8).max(1);
    let too_small = || Error::Layout(format!("{height}x{width} cannot hold {n} glyph slots"));
    let inner = width.checked_sub(2 * mx).ok_or_else(too_small)?;
    let slot = inner / n;
    let gap = (slot / 6).max(1);
    let bw = slot.checked_sub(gap).ok_or_else(too_small)?;
    let bh = height.checked_sub(2 * my).ok_or_else(too_small)?;
    if bw < crate::synth::alphabet::GLYPH_W || bh < crate::synth::alphabet::GLYPH_H {
        return Err(too_small());
    }
    Ok((0..n).map(|k| (mx + k * slot + gap / 2, my, bw, bh)).collect())
}

/// Ink mask, row-major `H×W`.
pub fn glyph_mask(plate: &[usize], alphabet: &Alphabet, height: usize, width: usize) -> Result<Vec<bool>> {
    let boxes = slot_boxes(plate.len(), height, width)?;
    let mut mask = vec![false; height * width];
    for (&id, &(x0, y0, bw, bh)) in plate.iter().zip(&boxes) {
        let g = &alphabet.token(id)?.glyph;
        for y in 0..bh {
            for x in 0..bw {
                if g.at(x * g.width / bw, y * g.height / bh) {
                    mask[(y0 + y) * width + x0 + x] = true;
                }
            }
        }
    }
    Ok(mask)
}

pub fn colorize(mask: &[bool], height: usize, width: usize, style: Style) -> Result<Tensor> {
    let (bg, fg) = style.colors();
    let mut data = Vec::with_capacity(height * width * 3);
    for &m in mask {
        data.extend_from_slice(if m { &fg } else { &bg });
    }
    Tensor::from_vec(&[height, width, 3], data)
}

/// `[H, W, 3]` image with values in [0, 1].
pub fn render_plate(plate: &[usize], alphabet: &Alphabet, height: usize, width: usize, style: Style) -> Result<Tensor> {
    let mask = glyph_mask(plate, alphabet, height, width)?;
    colorize(&mask, height, width, style)
}
