//! Annotated-image output: boxes for trucks and axles, a highlight for
//! lifted axles, and ordinal digits, drawn straight onto pixel buffers.

use std::path::Path;

use anyhow::{Context, Result};
use image::{Rgb, RgbImage};
use liftaxle::cascade::CascadeOutput;
use liftaxle::geometry::BoundingBox;

const TRUCK_COLOR: Rgb<u8> = Rgb([66, 133, 244]);
const AXLE_COLOR: Rgb<u8> = Rgb([52, 168, 83]);
const LIFTED_COLOR: Rgb<u8> = Rgb([234, 67, 53]);

/// 3x5 digit glyphs, one row per entry, low three bits used.
const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn draw_rect(img: &mut RgbImage, bbox: &BoundingBox, color: Rgb<u8>, thickness: i64) {
    let (x0, y0) = (bbox.x_min().round() as i64, bbox.y_min().round() as i64);
    let (x1, y1) = (bbox.x_max().round() as i64, bbox.y_max().round() as i64);
    for t in 0..thickness {
        for x in x0 - t..=x1 + t {
            put(img, x, y0 - t, color);
            put(img, x, y1 + t, color);
        }
        for y in y0 - t..=y1 + t {
            put(img, x0 - t, y, color);
            put(img, x1 + t, y, color);
        }
    }
}

fn draw_digit(img: &mut RgbImage, digit: u8, x: i64, y: i64, scale: i64, color: Rgb<u8>) {
    let glyph = DIGITS[digit as usize];
    for (row, bits) in glyph.iter().enumerate() {
        for col in 0..3 {
            if bits >> (2 - col) & 1 == 1 {
                for dy in 0..scale {
                    for dx in 0..scale {
                        put(
                            img,
                            x + col as i64 * scale + dx,
                            y + row as i64 * scale + dy,
                            color,
                        );
                    }
                }
            }
        }
    }
}

fn draw_number(img: &mut RgbImage, n: u32, x: i64, y: i64, scale: i64, color: Rgb<u8>) {
    let text = n.to_string();
    for (i, ch) in text.bytes().enumerate() {
        draw_digit(img, ch - b'0', x + i as i64 * 4 * scale, y, scale, color);
    }
}

/// Read `source`, draw the cascade's findings over it, and write the result
/// to `target` as PNG.
pub fn render(source: &Path, target: &Path, output: &CascadeOutput) -> Result<()> {
    let mut img = image::open(source)
        .with_context(|| format!("opening {}", source.display()))?
        .to_rgb8();

    for record in &output.records {
        draw_rect(&mut img, &record.truck.bbox, TRUCK_COLOR, 3);
        for axle in &record.axles {
            let color = if axle.lifted { LIFTED_COLOR } else { AXLE_COLOR };
            let thickness = if axle.lifted { 4 } else { 2 };
            draw_rect(&mut img, &axle.bbox, color, thickness);
            draw_number(
                &mut img,
                axle.ordinal,
                axle.bbox.x_min().round() as i64 + 2,
                axle.bbox.y_min().round() as i64 - 18,
                3,
                color,
            );
        }
    }
    for orphan in &output.orphan_axles {
        draw_rect(&mut img, &orphan.bbox, AXLE_COLOR, 1);
    }
    for mask in &output.unassociated_masks {
        draw_rect(&mut img, &mask.bbox, LIFTED_COLOR, 1);
    }

    img.save(target)
        .with_context(|| format!("writing {}", target.display()))
}
