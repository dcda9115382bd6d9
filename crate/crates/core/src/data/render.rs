//! Flat-shaded shape rendering. Anti-aliasing is off: a pixel is filled iff
//! its center lies inside the shape, which keeps image bytes a pure
//! function of the scene.

use super::SceneSpec;
use crate::matching::GtEntity;
use image::{Rgb, RgbImage};

const BACKGROUND: Rgb<u8> = Rgb([200, 200, 200]);
const COLORS: [Rgb<u8>; 3] = [
    Rgb([214, 40, 40]),  // red
    Rgb([60, 172, 80]),  // green
    Rgb([50, 90, 214]),  // blue
];

pub fn render_scene(spec: &SceneSpec, entities: &[GtEntity]) -> RgbImage {
    let size = spec.image_size as u32;
    let mut img = RgbImage::from_pixel(size, size, BACKGROUND);
    // later entities draw on top, so contained shapes stay visible
    for e in entities {
        let color = COLORS[spec.color_of(e.class_id)];
        let shape = spec.shape_of(e.class_id);
        let (x1, y1, x2, y2) = e.bbox.corners();
        let px1 = ((x1 * size as f64).floor().max(0.0)) as u32;
        let py1 = ((y1 * size as f64).floor().max(0.0)) as u32;
        let px2 = ((x2 * size as f64).ceil().min(size as f64)) as u32;
        let py2 = ((y2 * size as f64).ceil().min(size as f64)) as u32;
        for py in py1..py2 {
            for px in px1..px2 {
                let xn = (px as f64 + 0.5) / size as f64;
                let yn = (py as f64 + 0.5) / size as f64;
                if inside_shape(shape, &e.bbox, xn, yn) {
                    img.put_pixel(px, py, color);
                }
            }
        }
    }
    img
}

fn inside_shape(shape: usize, b: &crate::geometry::BBox, xn: f64, yn: f64) -> bool {
    let dx = xn - b.cx;
    let dy = yn - b.cy;
    let hw = b.w / 2.0;
    let hh = b.h / 2.0;
    match shape {
        // square
        0 => dx.abs() <= hw && dy.abs() <= hh,
        // ellipse inscribed in the box
        1 => (dx / hw) * (dx / hw) + (dy / hh) * (dy / hh) <= 1.0,
        // isoceles triangle, apex at top center
        _ => {
            if dy.abs() > hh {
                return false;
            }
            // width shrinks linearly toward the apex
            let frac = (dy + hh) / (2.0 * hh);
            dx.abs() <= hw * frac
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;

    #[test]
    fn shapes_fill_expected_pixels() {
        let spec = SceneSpec::default();
        let entities = vec![GtEntity {
            bbox: BBox::new(0.5, 0.5, 0.5, 0.5).unwrap(),
            class_id: 0, // red square
        }];
        let img = render_scene(&spec, &entities);
        // center is filled with the entity color, corner is background
        assert_eq!(*img.get_pixel(64, 64), COLORS[0]);
        assert_eq!(*img.get_pixel(2, 2), BACKGROUND);
        // square edge: pixel just inside the box boundary is filled
        let edge = (0.5 - 0.25) * 128.0; // x1 = 32
        assert_eq!(*img.get_pixel(edge as u32 + 1, 64), COLORS[0]);
        assert_eq!(*img.get_pixel(edge as u32 - 2, 64), BACKGROUND);
    }

    #[test]
    fn triangle_narrows_toward_apex() {
        let spec = SceneSpec::default();
        let entities = vec![GtEntity {
            bbox: BBox::new(0.5, 0.5, 0.5, 0.5).unwrap(),
            class_id: 2 * spec.num_colors, // triangle, red
        }];
        let img = render_scene(&spec, &entities);
        // near the base the triangle is wide
        assert_eq!(*img.get_pixel(40, 92), COLORS[0]);
        // near the apex the same x is background
        assert_eq!(*img.get_pixel(40, 40), BACKGROUND);
    }
}
