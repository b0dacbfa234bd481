use std::fmt::Write;
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};
use stereocal_core::boardfinder::Checkerboard;
use stereocal_core::edgesegments::{EdgeClass, EdgeSegment};
use stereocal_core::imagegrad::FloatImage;

use crate::error::{Error, Result};

const CORNER_COLOR: Rgb<u8> = Rgb([255, 0, 255]);

/// Red, yellow, blue and green for the four edge classes.
pub fn class_color(class: EdgeClass) -> Rgb<u8> {
    match class {
        EdgeClass::VerticalPositive => Rgb([255, 0, 0]),
        EdgeClass::VerticalNegative => Rgb([255, 255, 0]),
        EdgeClass::HorizontalPositive => Rgb([0, 0, 255]),
        EdgeClass::HorizontalNegative => Rgb([0, 255, 0]),
    }
}

/// Image darkened to half intensity with segment pixels colored by class and
/// a cross on every board corner.
pub fn edge_overlay(img: &FloatImage, segments: &[EdgeSegment], boards: &[Checkerboard]) -> RgbImage {
    let gray = img.to_gray8();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let mut out = RgbImage::from_fn(w, h, |x, y| {
        let v = gray[(y * w + x) as usize] / 2;
        Rgb([v, v, v])
    });
    for s in segments {
        let c = class_color(s.class);
        for &[x, y] in &s.pixels {
            out.put_pixel(x as u32, y as u32, c);
        }
    }
    for b in boards {
        for p in &b.corners {
            let (cx, cy) = (p.x.round() as i64, p.y.round() as i64);
            for d in -2i64..=2 {
                for (x, y) in [(cx + d, cy), (cx, cy + d)] {
                    if x >= 0 && y >= 0 && (x as u32) < w && (y as u32) < h {
                        out.put_pixel(x as u32, y as u32, CORNER_COLOR);
                    }
                }
            }
        }
    }
    out
}

pub fn save_overlay(path: &Path, img: &RgbImage) -> Result<()> {
    img.save_with_format(path, ImageFormat::Png).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn class_tag(c: EdgeClass) -> &'static str {
    match c {
        EdgeClass::VerticalPositive => "VP",
        EdgeClass::VerticalNegative => "VN",
        EdgeClass::HorizontalPositive => "HP",
        EdgeClass::HorizontalNegative => "HN",
    }
}

/// One line per segment: index, class, point count, length, end points.
pub fn segment_listing(segments: &[EdgeSegment]) -> String {
    let mut out = String::from("# segment class points length u0 v0 u1 v1\n");
    for (i, s) in segments.iter().enumerate() {
        let (a, b) = (s.first(), s.last());
        writeln!(
            out,
            "{i} {} {} {:.3} {:.3} {:.3} {:.3} {:.3}",
            class_tag(s.class),
            s.len(),
            s.length,
            a.x,
            a.y,
            b.x,
            b.y
        )
        .unwrap();
    }
    out
}
