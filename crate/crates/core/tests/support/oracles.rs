//! Independent reference implementations used by the integration and
//! acceptance tests. They favour obviousness over speed.
#![allow(dead_code)]
// Index loops mirror the textbook formulas on purpose.
#![allow(clippy::needless_range_loop)]

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use rand::Rng;

use slidespin::aggregator::{AggregatorWeights, AttentionKind};
use slidespin::geometry::Rect;
use slidespin::tissue::TissueMask;

/// Otsu by literal between-class variance `w0 w1 (mu0 - mu1)^2` in exact
/// rationals over every threshold; first maximum wins.
pub fn otsu(counts: &[u64; 256]) -> u8 {
    let total: u64 = counts.iter().sum();
    let n = BigRational::from_integer(BigInt::from(total));
    let mut best = BigRational::zero();
    let mut best_t = 0u8;
    for t in 0..256usize {
        let (mut c0, mut s0, mut c1, mut s1) = (0u64, 0u64, 0u64, 0u64);
        for (v, &c) in counts.iter().enumerate() {
            if v <= t {
                c0 += c;
                s0 += v as u64 * c;
            } else {
                c1 += c;
                s1 += v as u64 * c;
            }
        }
        if c0 == 0 || c1 == 0 {
            continue;
        }
        let r = |a: u64| BigRational::from_integer(BigInt::from(a));
        let w0 = r(c0) / &n;
        let w1 = r(c1) / &n;
        let mu0 = r(s0) / r(c0);
        let mu1 = r(s1) / r(c1);
        let d = mu0 - mu1;
        let var = w0 * w1 * &d * &d;
        if var > best {
            best = var;
            best_t = t as u8;
        }
    }
    best_t
}

/// A random histogram: sparse, dense, bimodal or degenerate.
pub fn random_histogram(rng: &mut impl Rng) -> [u64; 256] {
    let mut counts = [0u64; 256];
    match rng.random_range(0..4) {
        0 => {
            for c in counts.iter_mut() {
                *c = rng.random_range(0..1000);
            }
        }
        1 => {
            for _ in 0..rng.random_range(1..6) {
                counts[rng.random_range(0..256)] += rng.random_range(1..100_000);
            }
        }
        2 => {
            let (a, b) = (rng.random_range(0..128), rng.random_range(128..256));
            for v in 0..256i64 {
                let da = (v - a).abs();
                let db = (v - b).abs();
                counts[v as usize] = (2000 / (1 + da * da)) as u64 + (3000 / (1 + db * db)) as u64;
            }
        }
        _ => counts[rng.random_range(0..256)] = rng.random_range(1..10_000),
    }
    if counts.iter().all(|&c| c == 0) {
        counts[0] = 1;
    }
    counts
}

/// Tissue fraction by testing every mask pixel for overlap with the
/// rectangle in exact integer arithmetic: pixel `i` spans level-0
/// `[i W / m, (i + 1) W / m)`.
pub fn tissue_fraction(mask: &TissueMask, level0: (u32, u32), rect: Rect) -> f64 {
    let (mw, mh) = (mask.width as u64, mask.height as u64);
    let (lw, lh) = (level0.0 as u64, level0.1 as u64);
    let overlaps = |i: u64, m: u64, l: u64, start: u64, len: u64| i * l < (start + len) * m && (i + 1) * l > start * m;
    let (mut hit, mut tissue) = (0u64, 0u64);
    for y in 0..mh {
        if !overlaps(y, mh, lh, rect.y as u64, rect.h as u64) {
            continue;
        }
        for x in 0..mw {
            if overlaps(x, mw, lw, rect.x as u64, rect.w as u64) {
                hit += 1;
                tissue += mask.get(x as u32, y as u32) as u64;
            }
        }
    }
    if hit == 0 {
        0.0
    } else {
        tissue as f64 / hit as f64
    }
}

/// Grid cells `(x, y, side)` anchored at the origin that fit inside the
/// slide and meet the threshold, row-major.
pub fn plan(mask: &TissueMask, level0: (u32, u32), side: u32, stride: u32, threshold: f64) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    let mut y = 0u32;
    while y as u64 + side as u64 <= level0.1 as u64 {
        let mut x = 0u32;
        while x as u64 + side as u64 <= level0.0 as u64 {
            if tissue_fraction(mask, level0, Rect::square(x, y, side)) >= threshold {
                out.push((x, y));
            }
            x += stride;
        }
        y += stride;
    }
    out
}

/// Mean of each horizontal gray band, per-pixel, scaled to [0, 1].
pub fn band_means(gray: &[u8], width: usize, height: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    if dim > height {
        for (y, o) in out.iter_mut().enumerate().take(height) {
            let row = &gray[y * width..(y + 1) * width];
            *o = row.iter().map(|&g| g as f64).sum::<f64>() / width as f64 / 255.0;
        }
        return out;
    }
    let band = height / dim;
    for (j, o) in out.iter_mut().enumerate() {
        let y1 = if j + 1 == dim { height } else { (j + 1) * band };
        let mut sum = 0.0;
        let mut n = 0.0;
        for y in j * band..y1 {
            for x in 0..width {
                sum += gray[y * width + x] as f64;
                n += 1.0;
            }
        }
        *o = sum / n / 255.0;
    }
    out
}

pub struct NaiveOutput {
    pub logits: Vec<f64>,
    pub attention: Vec<f64>,
}

/// Attention MIL forward pass written as plain loops over the definition.
pub fn mil_forward(w: &AggregatorWeights, rows: &[Vec<f32>]) -> NaiveOutput {
    let (d, l, c) = (w.embed_dim, w.attention_dim, w.n_classes);
    let mut e = Vec::new();
    for h in rows {
        let mut score = 0.0f64;
        for i in 0..l {
            let mut vh = 0.0f64;
            for j in 0..d {
                vh += w.v[i * d + j] as f64 * h[j] as f64;
            }
            let mut act = vh.tanh();
            if w.attention == AttentionKind::Gated {
                let u = w.u.as_ref().unwrap();
                let mut uh = 0.0f64;
                for j in 0..d {
                    uh += u[i * d + j] as f64 * h[j] as f64;
                }
                act *= 1.0 / (1.0 + (-uh).exp());
            }
            score += w.w[i] as f64 * act;
        }
        e.push(score);
    }
    let m = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = e.iter().map(|x| (x - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    let attention: Vec<f64> = exps.iter().map(|x| x / total).collect();
    let mut z = vec![0.0f64; d];
    for (k, h) in rows.iter().enumerate() {
        for j in 0..d {
            z[j] += attention[k] * h[j] as f64;
        }
    }
    let mut logits = vec![0.0f64; c];
    for i in 0..c {
        logits[i] = w.b_out[i] as f64;
        for j in 0..d {
            logits[i] += w.w_out[i * d + j] as f64 * z[j];
        }
    }
    NaiveOutput { logits, attention }
}

/// Random weights with the given shape, entries in [-2, 2].
pub fn random_weights(rng: &mut impl Rng, d: usize, l: usize, c: usize, gated: bool) -> AggregatorWeights {
    let mut m = |n: usize| -> Vec<f32> { (0..n).map(|_| rng.random_range(-2.0f32..2.0)).collect() };
    AggregatorWeights {
        embed_dim: d,
        attention_dim: l,
        n_classes: c,
        attention: if gated {
            AttentionKind::Gated
        } else {
            AttentionKind::Tanh
        },
        v: m(l * d),
        u: if gated { Some(m(l * d)) } else { None },
        w: m(l),
        w_out: m(c * d),
        b_out: m(c),
        class_names: (0..c).map(|i| format!("class{i}")).collect(),
    }
}

pub fn random_rows(rng: &mut impl Rng, n: usize, d: usize) -> Vec<Vec<f32>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-3.0f32..3.0)).collect())
        .collect()
}

/// Random mask with rectangular tissue blobs.
pub fn random_mask(rng: &mut impl Rng, width: u32, height: u32, level0: (u32, u32)) -> TissueMask {
    let mut bits = vec![0u8; (width * height) as usize];
    for _ in 0..rng.random_range(1..5) {
        let x0 = rng.random_range(0..width);
        let y0 = rng.random_range(0..height);
        let x1 = rng.random_range(x0..=width);
        let y1 = rng.random_range(y0..=height);
        for y in y0..y1 {
            for x in x0..x1 {
                bits[(y * width + x) as usize] = 1;
            }
        }
    }
    for b in bits.iter_mut() {
        if rng.random_bool(0.05) {
            *b ^= 1;
        }
    }
    TissueMask::from_bits(width, height, bits, level0, 128)
}
