//! Visual prompt generation: region proposals become numbered set-of-mark
//! candidates drawn onto the observation.
//!
//! Ids run 1..=N in raster order of each box's top-left corner. Every
//! proposal is kept; filtering is the verifier's job.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::image::{Image, PixelPoint, PixelRect, Rgb};
use crate::oracle::{CandidateSource, Detection, OracleContext, OracleError, ReasoningOracle};

/// Mark colors, indexed by `id % 8`.
pub const PALETTE: [Rgb; 8] = [
    [255, 255, 255],
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
];

pub const RING_WIDTH: i64 = 3;
const GLYPH_SCALE: i64 = 2;
const GLYPH_W: i64 = 3;
const GLYPH_H: i64 = 5;
const TAG_PAD: i64 = 2;

/// 3x5 digit glyphs, one row per entry, most significant bit leftmost.
const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b001, 0b001, 0b001],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: u32,
    pub label: String,
    pub bbox: PixelRect,
    pub centroid: PixelPoint,
    pub source: CandidateSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SomRepresentation {
    pub annotated: Image,
    pub mapping: BTreeMap<u32, Candidate>,
    pub prompt_used: String,
    /// False when marks were not drawn (raw image handed on).
    pub marked: bool,
}

impl SomRepresentation {
    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.mapping.keys().copied()
    }

    pub fn candidates(&self) -> impl Iterator<Item = &Candidate> {
        self.mapping.values()
    }
}

fn clamp_rect(r: &PixelRect, width: u32, height: u32) -> PixelRect {
    let (w, h) = (width as f64, height as f64);
    let x0 = r.x0.clamp(0.0, w);
    let y0 = r.y0.clamp(0.0, h);
    PixelRect {
        x0,
        y0,
        x1: r.x1.clamp(x0, w),
        y1: r.y1.clamp(y0, h),
    }
}

/// Clamps proposals into the frame and numbers them in raster order.
/// Never drops a proposal.
pub fn assign_ids<T>(proposals: Vec<(Detection, T)>, width: u32, height: u32) -> Vec<(Candidate, T)> {
    let mut items: Vec<(Detection, T)> = proposals
        .into_iter()
        .map(|(mut d, extra)| {
            d.bbox = clamp_rect(&d.bbox, width, height);
            (d, extra)
        })
        .collect();
    items.sort_by(|(a, _), (b, _)| a.bbox.y0.total_cmp(&b.bbox.y0).then(a.bbox.x0.total_cmp(&b.bbox.x0)));
    items
        .into_iter()
        .enumerate()
        .map(|(i, (d, extra))| {
            let bbox = d.bbox;
            let c = d.centroid.unwrap_or_else(|| bbox.center());
            let centroid = PixelPoint::new(c.u.clamp(bbox.x0, bbox.x1), c.v.clamp(bbox.y0, bbox.y1));
            (
                Candidate {
                    id: i as u32 + 1,
                    label: d.label,
                    bbox,
                    centroid,
                    source: d.source,
                },
                extra,
            )
        })
        .collect()
}

/// Builds a set-of-mark representation from finished proposals.
pub fn build_som(image: &Image, detections: Vec<Detection>, prompt: &str, mark: bool) -> SomRepresentation {
    let candidates: Vec<Candidate> = assign_ids(
        detections.into_iter().map(|d| (d, ())).collect(),
        image.width(),
        image.height(),
    )
    .into_iter()
    .map(|(c, ())| c)
    .collect();
    som_from_candidates(image, candidates, prompt, mark)
}

/// Wraps already-numbered candidates, drawing marks when `mark` is set.
pub fn som_from_candidates(image: &Image, candidates: Vec<Candidate>, prompt: &str, mark: bool) -> SomRepresentation {
    let annotated = if mark {
        annotate_som(image, &candidates)
    } else {
        image.clone()
    };
    SomRepresentation {
        annotated,
        mapping: candidates.into_iter().map(|c| (c.id, c)).collect(),
        prompt_used: prompt.to_string(),
        marked: mark,
    }
}

/// Asks the oracle for proposals and turns them into marks.
pub fn perceive(
    image: &Image,
    prompt: &str,
    oracle: &dyn ReasoningOracle,
    ctx: &OracleContext<'_>,
) -> Result<SomRepresentation, OracleError> {
    let detections = oracle.detect(image, prompt, ctx)?;
    Ok(build_som(image, detections, prompt, ctx.annotated))
}

fn tag_size(id: u32) -> (i64, i64) {
    let digits = id.to_string().len() as i64;
    (
        TAG_PAD + digits * (GLYPH_W * GLYPH_SCALE + TAG_PAD),
        2 * TAG_PAD + GLYPH_H * GLYPH_SCALE,
    )
}

/// Pixels a candidate's mark may touch: its box ring and its id tag.
fn mark_pixels(c: &Candidate) -> impl Iterator<Item = (i64, i64)> {
    let (c0, r0, c1, r1) = c.bbox.pixel_span();
    let (tw, th) = tag_size(c.id);
    let ring = (r0..r1).flat_map(move |y| {
        (c0..c1).filter_map(move |x| {
            let edge = x < c0 + RING_WIDTH || x >= c1 - RING_WIDTH || y < r0 + RING_WIDTH || y >= r1 - RING_WIDTH;
            edge.then_some((x, y))
        })
    });
    let tag = (r0..r0 + th).flat_map(move |y| (c0..c0 + tw).map(move |x| (x, y)));
    ring.chain(tag)
}

/// Boolean mask (row-major) of every pixel `annotate_som` may modify.
pub fn mark_mask(width: u32, height: u32, candidates: &[Candidate]) -> Vec<bool> {
    let mut mask = vec![false; width as usize * height as usize];
    for c in candidates {
        for (x, y) in mark_pixels(c) {
            if x >= 0 && y >= 0 && x < width as i64 && y < height as i64 {
                mask[y as usize * width as usize + x as usize] = true;
            }
        }
    }
    mask
}

fn ink_for(bg: Rgb) -> Rgb {
    let luma = 299 * bg[0] as u32 + 587 * bg[1] as u32 + 114 * bg[2] as u32;
    if luma > 128_000 {
        [0, 0, 0]
    } else {
        [255, 255, 255]
    }
}

/// Draws each candidate's box outline and a filled id tag at its top-left.
/// Pixels outside the marks are left untouched.
pub fn annotate_som(image: &Image, candidates: &[Candidate]) -> Image {
    let mut out = image.clone();
    let mut ordered: Vec<&Candidate> = candidates.iter().collect();
    ordered.sort_by_key(|c| c.id);
    for c in ordered {
        let color = PALETTE[c.id as usize % PALETTE.len()];
        let (c0, r0, c1, r1) = c.bbox.pixel_span();
        out.fill_span(c0, r0, c1, r0 + RING_WIDTH, color);
        out.fill_span(c0, r1 - RING_WIDTH, c1, r1, color);
        out.fill_span(c0, r0, c0 + RING_WIDTH, r1, color);
        out.fill_span(c1 - RING_WIDTH, r0, c1, r1, color);

        let (tw, th) = tag_size(c.id);
        out.fill_span(c0, r0, c0 + tw, r0 + th, color);
        let ink = ink_for(color);
        for (k, ch) in c.id.to_string().bytes().enumerate() {
            let glyph = DIGITS[(ch - b'0') as usize];
            let gx = c0 + TAG_PAD + k as i64 * (GLYPH_W * GLYPH_SCALE + TAG_PAD);
            let gy = r0 + TAG_PAD;
            for (row, bits) in glyph.iter().enumerate() {
                for col in 0..GLYPH_W {
                    if bits >> (GLYPH_W - 1 - col) & 1 == 1 {
                        let x = gx + col * GLYPH_SCALE;
                        let y = gy + row as i64 * GLYPH_SCALE;
                        out.fill_span(x, y, x + GLYPH_SCALE, y + GLYPH_SCALE, ink);
                    }
                }
            }
        }
    }
    out
}
