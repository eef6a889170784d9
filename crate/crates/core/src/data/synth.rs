//! Synthetic datasets: Gaussian class blobs (fast fixture for anything that
//! only needs a separable problem) and procedural stroke digits (a 28×28
//! ten-class image problem with the same shape and value conventions as
//! MNIST, used as the default image source when no IDX files are supplied).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::LabeledDataset;
use crate::error::Result;

/// Standard normal via Box–Muller (keeps the dependency set to `rand` core).
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// SplitMix64 finalizer; decorrelates (seed, index) pairs into stream seeds.
fn mix(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Gaussian clusters with pairwise-distinct means, clipped to `[0,1]`.
/// Labels are grouped: samples `[c·per_class, (c+1)·per_class)` carry class
/// `c`. Deterministic in `seed`.
pub fn synthetic_blobs(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    assert!(num_classes >= 2, "need at least two classes");
    assert!(per_class >= 1 && dim >= 1, "need positive per_class and dim");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Rejection-sample means, demanding comfortable pairwise separation
    // relative to the σ=0.04 cluster noise; the requirement relaxes (halves)
    // whenever a round of attempts fails, so crowded (K, dim) combinations
    // still place, just tighter.
    let mut min_sep = 0.35 * (dim as f64).sqrt().min(4.0);
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
    while means.len() < num_classes && min_sep > 1e-3 {
        'outer: for _ in 0..2_000 {
            let cand: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.15..0.85)).collect();
            for m in &means {
                let d2: f64 = m.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum();
                if d2.sqrt() < min_sep {
                    continue 'outer;
                }
            }
            means.push(cand);
            if means.len() == num_classes {
                break;
            }
        }
        min_sep *= 0.5;
    }
    assert_eq!(
        means.len(),
        num_classes,
        "could not place {num_classes} separated means in dim {dim}"
    );
    let mut images = Vec::with_capacity(num_classes * per_class * dim);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            for &mu in mean {
                images.push((mu + 0.04 * normal(&mut rng)).clamp(0.0, 1.0));
            }
            labels.push(c);
        }
    }
    LabeledDataset::new(images, labels, (1, 1, dim), num_classes)
}

/// Seven-segment stroke table. Segments on a unit box, x right, y down:
/// A top, B upper-right, C lower-right, D bottom, E lower-left, F
/// upper-left, G middle.
const SEGMENTS: [((f64, f64), (f64, f64)); 7] = [
    ((0.2, 0.12), (0.8, 0.12)), // A
    ((0.8, 0.12), (0.8, 0.5)),  // B
    ((0.8, 0.5), (0.8, 0.88)),  // C
    ((0.2, 0.88), (0.8, 0.88)), // D
    ((0.2, 0.5), (0.2, 0.88)),  // E
    ((0.2, 0.12), (0.2, 0.5)),  // F
    ((0.2, 0.5), (0.8, 0.5)),   // G
];

const DIGIT_SEGMENTS: [&[usize]; 10] = [
    &[0, 1, 2, 3, 4, 5],    // 0
    &[1, 2],                // 1
    &[0, 1, 6, 4, 3],       // 2
    &[0, 1, 6, 2, 3],       // 3
    &[5, 6, 1, 2],          // 4
    &[0, 5, 6, 2, 3],       // 5
    &[0, 5, 4, 3, 2, 6],    // 6
    &[0, 1, 2],             // 7
    &[0, 1, 2, 3, 4, 5, 6], // 8
    &[0, 1, 2, 3, 5, 6],    // 9
];

fn dist_to_segment(px: f64, py: f64, (ax, ay): (f64, f64), (bx, by): (f64, f64)) -> f64 {
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

const DIGIT_SIZE: usize = 28;

/// Render one jittered digit glyph into a 28×28 patch in `[0,1]`.
fn render_digit(class: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let scale = rng.gen_range(0.75..1.05) * 22.0;
    let angle: f64 = rng.gen_range(-0.12..0.12);
    let shear: f64 = rng.gen_range(-0.18..0.18);
    let (tx, ty) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
    let thickness = rng.gen_range(1.1..2.0);
    let intensity = rng.gen_range(0.8..1.0);
    let noise = 0.04;
    let (sin, cos) = angle.sin_cos();
    let center = DIGIT_SIZE as f64 / 2.0;
    // Unit-box point → pixel coordinates.
    let map = |(ux, uy): (f64, f64)| {
        let (u, v) = (ux - 0.5 + shear * (uy - 0.5), uy - 0.5);
        let (rx, ry) = (cos * u - sin * v, sin * u + cos * v);
        (center + scale * rx + tx, center + scale * ry + ty)
    };
    let segs: Vec<((f64, f64), (f64, f64))> = DIGIT_SEGMENTS[class]
        .iter()
        .map(|&s| {
            let (a, b) = SEGMENTS[s];
            (map(a), map(b))
        })
        .collect();
    let mut img = Vec::with_capacity(DIGIT_SIZE * DIGIT_SIZE);
    for y in 0..DIGIT_SIZE {
        for x in 0..DIGIT_SIZE {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut d = f64::INFINITY;
            for (a, b) in &segs {
                d = d.min(dist_to_segment(px, py, *a, *b));
            }
            // Soft-edged stroke band plus pixel noise.
            let ink = (thickness - d).clamp(0.0, 1.0) * intensity;
            img.push((ink + noise * normal(rng)).clamp(0.0, 1.0));
        }
    }
    img
}

/// Procedural ten-class 28×28 digit dataset. Sample `i` has class `i % 10`
/// and is rendered from the decorrelated stream `mix(seed, start_index+i)`,
/// so disjoint `start_index` ranges give disjoint samples from one "universe"
/// (train/test splits that never overlap).
pub fn synthetic_digits(count: usize, seed: u64, start_index: u64) -> Result<LabeledDataset> {
    let mut images = Vec::with_capacity(count * DIGIT_SIZE * DIGIT_SIZE);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let class = i % 10;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, start_index + i as u64));
        images.extend_from_slice(&render_digit(class, &mut rng));
        labels.push(class);
    }
    LabeledDataset::new(images, labels, (1, DIGIT_SIZE, DIGIT_SIZE), 10)
}
