//! Synthetic image generators for tests, benchmarks, and demos: a learnable
//! digit-glyph set rendered from a 5x7 font with jitter and noise, and a
//! pure-noise set for chance-level checks. Images follow the dataset
//! convention of bright ink on a dark background.

use crate::dataset::RawImages;
use crate::rng::{derive_seed, Rng};

const GLYPH_H: usize = 7;
const GLYPH_W: usize = 5;

// 5x7 digit font; '1' marks an ink pixel.
const DIGITS: [[&str; GLYPH_H]; 10] = [
    [
        "01110", "10001", "10011", "10101", "11001", "10001", "01110",
    ],
    [
        "00100", "01100", "00100", "00100", "00100", "00100", "01110",
    ],
    [
        "01110", "10001", "00001", "00010", "00100", "01000", "11111",
    ],
    [
        "11111", "00010", "00100", "00010", "00001", "10001", "01110",
    ],
    [
        "00010", "00110", "01010", "10010", "11111", "00010", "00010",
    ],
    [
        "11111", "10000", "11110", "00001", "00001", "10001", "01110",
    ],
    [
        "00110", "01000", "10000", "11110", "10001", "10001", "01110",
    ],
    [
        "11111", "00001", "00010", "00100", "01000", "01000", "01000",
    ],
    [
        "01110", "10001", "10001", "01110", "10001", "10001", "01110",
    ],
    [
        "01110", "10001", "10001", "01111", "00001", "00010", "01100",
    ],
];

const SIDE: usize = 32;
const SCALE: usize = 3; // rendered glyph is 15x21

/// Render one digit glyph into a 32x32 canvas with positional jitter, a
/// random ink intensity, and uniform pixel noise.
fn render_digit(digit: usize, rng: &mut Rng) -> Vec<u8> {
    let mut canvas = vec![0i32; SIDE * SIDE];
    let glyph_w = GLYPH_W * SCALE;
    let glyph_h = GLYPH_H * SCALE;
    let x0 = 2 + rng.next_below(SIDE - glyph_w - 4);
    let y0 = 2 + rng.next_below(SIDE - glyph_h - 4);
    let ink = 170 + rng.next_below(86) as i32;
    for (gy, row) in DIGITS[digit].iter().enumerate() {
        for (gx, ch) in row.bytes().enumerate() {
            if ch == b'1' {
                for dy in 0..SCALE {
                    for dx in 0..SCALE {
                        let y = y0 + gy * SCALE + dy;
                        let x = x0 + gx * SCALE + dx;
                        canvas[y * SIDE + x] = ink;
                    }
                }
            }
        }
    }
    canvas
        .into_iter()
        .map(|v| {
            let noise = rng.next_below(51) as i32 - 25;
            (v + noise).clamp(0, 255) as u8
        })
        .collect()
}

/// A learnable 10-class set: `count` images of 32x32 digit glyphs, labels
/// cycling 0..10 so classes stay balanced.
pub fn digit_images(count: usize, seed: u64) -> (RawImages, Vec<u8>) {
    let mut pixels = Vec::with_capacity(count * SIDE * SIDE);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let digit = i % 10;
        let mut rng = Rng::new(derive_seed(seed, i as u64));
        pixels.extend(render_digit(digit, &mut rng));
        labels.push(digit as u8);
    }
    (
        RawImages {
            count,
            height: SIDE,
            width: SIDE,
            pixels,
        },
        labels,
    )
}

/// Label map for the digit set: characters '0'..='9'.
pub fn digit_label_map() -> Vec<char> {
    ('0'..='9').collect()
}

/// Unlearnable noise images with cycling labels, for chance-level baselines
/// and format-level fixtures. Any class count up to 256 works.
pub fn noise_images(classes: usize, count: usize, seed: u64) -> (RawImages, Vec<u8>) {
    assert!((1..=256).contains(&classes), "classes must be in 1..=256");
    let mut rng = Rng::new(seed);
    let pixels = (0..count * SIDE * SIDE)
        .map(|_| rng.next_below(256) as u8)
        .collect();
    let labels = (0..count).map(|i| (i % classes) as u8).collect();
    (
        RawImages {
            count,
            height: SIDE,
            width: SIDE,
            pixels,
        },
        labels,
    )
}
