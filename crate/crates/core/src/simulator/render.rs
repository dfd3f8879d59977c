//! Synthetic nadir observations: gray ground, landmark regions in a muted
//! per-label hue, objects as filled disks in an attribute-derived color.

use crate::error::Result;
use crate::executor::{project_world, unproject};
use crate::geometry::{Point2, Rect};
use crate::image::{Image, PixelPoint, Rgb};
use crate::scene::{Pose, Scene, SceneObject};

pub const GROUND: Rgb = [128, 128, 128];

fn label_hash(label: &str) -> u32 {
    label
        .bytes()
        .fold(0x811c_9dc5u32, |h, b| (h ^ b as u32).wrapping_mul(0x0100_0193))
}

/// Muted color for a landmark label. Channels stay within 70..=190 so a
/// landmark never collides with a saturated object color.
pub fn landmark_color(label: &str) -> Rgb {
    let h = label_hash(label);
    let ch = |shift: u32| 70 + ((h >> shift) & 0xff) as u8 % 121;
    let mut c = [ch(0), ch(8), ch(16)];
    if c == GROUND {
        c[0] = 150;
    }
    c
}

fn color_word(word: &str) -> Option<Rgb> {
    Some(match word {
        "red" => [255, 0, 0],
        "green" => [0, 200, 0],
        "blue" => [0, 0, 255],
        "yellow" => [255, 255, 0],
        "orange" => [255, 140, 0],
        "white" => [250, 250, 250],
        "black" => [20, 20, 20],
        "silver" => [200, 200, 210],
        "gray" | "grey" => [90, 90, 90],
        "purple" => [160, 0, 200],
        _ => return None,
    })
}

/// First color-naming attribute wins; otherwise a saturated class hue.
pub fn object_color(o: &SceneObject) -> Rgb {
    o.attributes
        .iter()
        .find_map(|a| color_word(&a.to_lowercase()))
        .unwrap_or_else(|| {
            let h = label_hash(&o.class);
            [
                (h & 0xff) as u8 | 0x80,
                ((h >> 8) & 0x7f) as u8,
                ((h >> 16) & 0xff) as u8 | 0x40,
            ]
        })
}

fn ground_rect(scene: &Scene, pose: &Pose) -> Result<Rect> {
    let cam = &scene.camera;
    let (w, h) = (cam.width as f64, cam.height as f64);
    let corners = [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)]
        .into_iter()
        .map(|(u, v)| unproject(PixelPoint::new(u, v), pose, cam))
        .collect::<Result<Vec<Point2>>>()?;
    Ok(Rect::enclosing(corners).expect("four corners"))
}

/// Renders the view from `pose`. Each pixel takes the color of whatever
/// covers the ground point under its center; objects draw over landmarks
/// and later entries over earlier ones.
pub fn render(scene: &Scene, pose: &Pose) -> Result<Image> {
    let cam = &scene.camera;
    let mut img = Image::new(cam.width, cam.height, GROUND)?;
    let view = ground_rect(scene, pose)?;
    let landmarks: Vec<_> = scene
        .landmarks
        .iter()
        .filter(|l| {
            let b = l.contour.bounding_box();
            b.min.x <= view.max.x && b.max.x >= view.min.x && b.min.y <= view.max.y && b.max.y >= view.min.y
        })
        .map(|l| (l, landmark_color(&l.label)))
        .collect();
    let objects: Vec<_> = scene
        .objects
        .iter()
        .filter(|o| view.expanded(o.extent).contains(o.position))
        .map(|o| (o, object_color(o)))
        .collect();

    for v in 0..cam.height {
        for u in 0..cam.width {
            let p = unproject(PixelPoint::new(u as f64 + 0.5, v as f64 + 0.5), pose, cam)?;
            let mut color = GROUND;
            for (l, c) in &landmarks {
                if l.contour.contains(p) {
                    color = *c;
                }
            }
            for (o, c) in &objects {
                if p.distance(&o.position) <= o.extent {
                    color = *c;
                }
            }
            if color != GROUND {
                img.set(u, v, color);
            }
        }
    }
    Ok(img)
}

/// Pixel centroid of all pixels with exactly `color`.
pub fn color_centroid(img: &Image, color: Rgb) -> Option<PixelPoint> {
    let (mut su, mut sv, mut n) = (0.0, 0.0, 0usize);
    for v in 0..img.height() {
        for u in 0..img.width() {
            if img.get(u, v) == color {
                su += u as f64 + 0.5;
                sv += v as f64 + 0.5;
                n += 1;
            }
        }
    }
    (n > 0).then(|| PixelPoint::new(su / n as f64, sv / n as f64))
}

/// Pixel location of a world point, `None` when outside the frame.
pub fn visible_at(scene: &Scene, pose: &Pose, world: Point2) -> Option<PixelPoint> {
    let p = project_world(world, pose, &scene.camera).ok()?;
    crate::executor::in_frame(p, &scene.camera).then_some(p)
}
