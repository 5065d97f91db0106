//! Schematic rasters standing in for camera images.

use std::sync::Arc;

use image::{ImageEncoder, Rgb, RgbImage};
use sha2::{Digest, Sha256};

use super::markers::{AnnotatedScene, CandidateValue, MarkerSet};
use super::{DetectionKind, LocalMap, Observation};
use crate::world::{Cell, Point};

const CELL_PX: u32 = 8;
const THUMB_CELL_PX: u32 = 4;

const WALL: Rgb<u8> = Rgb([60, 60, 60]);
const FURNITURE: Rgb<u8> = Rgb([150, 110, 70]);
const FLOOR: Rgb<u8> = Rgb([235, 235, 235]);
const DOOR_CLOSED: Rgb<u8> = Rgb([200, 40, 40]);
const DOOR_OPEN: Rgb<u8> = Rgb([240, 180, 180]);
const ROBOT: Rgb<u8> = Rgb([40, 90, 220]);
const OBJECT: Rgb<u8> = Rgb([40, 160, 60]);
const BUTTON: Rgb<u8> = Rgb([240, 150, 20]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const STAGE1_TAG: Rgb<u8> = Rgb([255, 230, 90]);

/// Immutable raster shared between prompts and logs.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneImage(Arc<RgbImage>);

impl SceneImage {
    pub fn new(img: RgbImage) -> Self {
        Self(Arc::new(img))
    }

    pub fn image(&self) -> &RgbImage {
        &self.0
    }

    pub fn png(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        image::codecs::png::PngEncoder::new(&mut buf)
            .write_image(self.0.as_raw(), self.0.width(), self.0.height(), image::ExtendedColorType::Rgb8)
            .expect("png encoding into memory");
        buf
    }

    /// Content hash over dimensions and raw pixels.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.0.width().to_le_bytes());
        h.update(self.0.height().to_le_bytes());
        h.update(self.0.as_raw());
        hex::encode(h.finalize())
    }
}

// 3x5 digit glyphs, one row per byte, 3 low bits per row
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

fn fill_rect(img: &mut RgbImage, x: i64, y: i64, w: i64, h: i64, color: Rgb<u8>) {
    for yy in y..y + h {
        for xx in x..x + w {
            put(img, xx, yy, color);
        }
    }
}

fn fill_circle(img: &mut RgbImage, cx: i64, cy: i64, r: i64, color: Rgb<u8>) {
    for yy in -r..=r {
        for xx in -r..=r {
            if xx * xx + yy * yy <= r * r {
                put(img, cx + xx, cy + yy, color);
            }
        }
    }
}

fn draw_line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let n = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
    for i in 0..=n {
        put(img, x0 + (x1 - x0) * i / n, y0 + (y1 - y0) * i / n, color);
    }
}

/// Draws a number tag with its top-left corner at (x, y), clamped inside.
fn draw_tag(img: &mut RgbImage, x: i64, y: i64, n: u32, bg: Rgb<u8>) {
    const SCALE: i64 = 2;
    let digits: Vec<usize> = n.to_string().bytes().map(|b| (b - b'0') as usize).collect();
    let w = digits.len() as i64 * 4 * SCALE + SCALE;
    let h = 5 * SCALE + 2 * SCALE;
    let x = x.clamp(0, (img.width() as i64 - w).max(0));
    let y = y.clamp(0, (img.height() as i64 - h).max(0));
    fill_rect(img, x, y, w, h, bg);
    for (i, d) in digits.iter().enumerate() {
        let ox = x + SCALE + i as i64 * 4 * SCALE;
        for (row, bits) in DIGITS[*d].iter().enumerate() {
            for col in 0..3 {
                if bits & (0b100 >> col) != 0 {
                    fill_rect(img, ox + col * SCALE, y + SCALE + row as i64 * SCALE, SCALE, SCALE, BLACK);
                }
            }
        }
    }
}

fn map_color(ch: char) -> Rgb<u8> {
    match ch {
        '.' => FLOOR,
        'o' => FURNITURE,
        'D' => DOOR_CLOSED,
        'd' => DOOR_OPEN,
        _ => WALL,
    }
}

fn draw_map(map: &LocalMap, cell_px: u32) -> RgbImage {
    let rows = map.rows.len() as u32;
    let cols = map.rows.first().map_or(0, |r| r.chars().count()) as u32;
    let mut img = RgbImage::from_pixel(cols * cell_px, rows * cell_px, WALL);
    for (r, line) in map.rows.iter().enumerate() {
        for (c, ch) in line.chars().enumerate() {
            fill_rect(
                &mut img,
                c as i64 * cell_px as i64,
                r as i64 * cell_px as i64,
                cell_px as i64,
                cell_px as i64,
                map_color(ch),
            );
        }
    }
    img
}

struct TopDown<'a> {
    obs: &'a Observation,
    img: RgbImage,
}

impl<'a> TopDown<'a> {
    fn new(obs: &'a Observation) -> Self {
        let mut img = draw_map(&obs.local_map, CELL_PX);
        let rc = obs.robot_cell;
        let (x, y) = cell_px(&obs.local_map, rc);
        fill_rect(&mut img, x + 1, y + 1, CELL_PX as i64 - 2, CELL_PX as i64 - 2, ROBOT);
        let (dx, dy) = obs.robot_heading.vector();
        let c = (x + CELL_PX as i64 / 2, y + CELL_PX as i64 / 2);
        draw_line(&mut img, c, (c.0 + (dx * 10.0) as i64, c.1 + (dy * 10.0) as i64), ROBOT);
        for d in &obs.detections {
            let (px, py) = point_px(obs, d.position);
            match d.kind {
                DetectionKind::Object | DetectionKind::Phantom => fill_circle(&mut img, px, py, 2, OBJECT),
                DetectionKind::Button { .. } => fill_circle(&mut img, px, py, 2, BUTTON),
                DetectionKind::Door { .. } => {}
            }
        }
        Self { obs, img }
    }

    fn tag_at(&mut self, p: Point, n: u32, bg: Rgb<u8>) {
        let (x, y) = point_px(self.obs, p);
        draw_tag(&mut self.img, x + 3, y - 14, n, bg);
    }
}

fn cell_px(map: &LocalMap, c: Cell) -> (i64, i64) {
    (
        (c.col - map.origin.col) as i64 * CELL_PX as i64,
        (c.row - map.origin.row) as i64 * CELL_PX as i64,
    )
}

fn point_px(obs: &Observation, p: Point) -> (i64, i64) {
    let cs = obs.cell_size;
    let x = (p.x / cs - obs.local_map.origin.col as f64) * CELL_PX as f64;
    let y = (p.y / cs - obs.local_map.origin.row as f64) * CELL_PX as f64;
    (x.round() as i64, y.round() as i64)
}

/// Stage-1 scene: the top-down view with every visible entity tagged
/// `obj N`, plus its text twin.
pub fn overview(obs: &Observation) -> AnnotatedScene {
    let mut td = TopDown::new(obs);
    let mut text = format!(
        "Robot location: {} (facing {}).\nHolding: {}.\n",
        obs.location,
        super::heading_word(obs.robot_heading),
        obs.holding.as_deref().unwrap_or("nothing")
    );
    if obs.detections.is_empty() {
        text.push_str("Nothing of interest is visible.\n");
    } else {
        text.push_str("Visible (tagged in the image):\n");
    }
    for (i, d) in obs.detections.iter().enumerate() {
        let n = i as u32 + 1;
        td.tag_at(d.position, n, STAGE1_TAG);
        text.push_str(&format!("obj {n}: {}, {}, {}\n", d.appearance, d.direction_text(), d.distance_text()));
    }
    AnnotatedScene {
        image: SceneImage::new(td.img),
        text,
    }
}

/// Top-down view without any tags.
pub fn plain(obs: &Observation) -> SceneImage {
    SceneImage::new(TopDown::new(obs).img)
}

/// Stage-2 scene with marker tags drawn on the candidates.
pub fn annotated(obs: &Observation, set: &MarkerSet) -> SceneImage {
    let has = |f: fn(&CandidateValue) -> bool| set.markers.iter().any(|m| f(&m.candidate.value));
    if has(|v| matches!(v, CandidateValue::Landmark { .. })) {
        return gallery(set);
    }
    if has(|v| matches!(v, CandidateValue::Detection(d) if d.is_button())) {
        return panel(set);
    }
    let mut td = TopDown::new(obs);
    let robot = obs.robot_point();
    for m in &set.markers {
        match &m.candidate.value {
            CandidateValue::Detection(d) => td.tag_at(d.position, m.id, WHITE),
            CandidateValue::Direction(dir) => {
                let (dx, dy) = dir.apply(obs.robot_heading).vector();
                let end = Point { x: robot.x + dx, y: robot.y + dy };
                let a = point_px(obs, robot);
                let b = point_px(obs, end);
                draw_line(&mut td.img, a, b, BLACK);
                fill_circle(&mut td.img, b.0, b.1, 2, BLACK);
                td.tag_at(end, m.id, WHITE);
            }
            CandidateValue::Side(side) => {
                let (hx, hy) = obs.robot_heading.vector();
                let lateral = match side {
                    crate::world::Side::Left => obs.robot_heading.left(),
                    crate::world::Side::Right => obs.robot_heading.right(),
                };
                let (lx, ly) = lateral.vector();
                let p = Point {
                    x: robot.x + 0.5 * hx + 0.4 * lx,
                    y: robot.y + 0.5 * hy + 0.4 * ly,
                };
                let px = point_px(obs, p);
                fill_circle(&mut td.img, px.0, px.1, 2, BLACK);
                td.tag_at(p, m.id, WHITE);
            }
            CandidateValue::Landmark { .. } => unreachable!("handled by gallery"),
        }
    }
    SceneImage::new(td.img)
}

fn panel(set: &MarkerSet) -> SceneImage {
    let (w, h) = (160u32, 220u32);
    let mut img = RgbImage::from_pixel(w, h, Rgb([190, 190, 195]));
    fill_rect(&mut img, 40, 10, 80, 200, Rgb([120, 120, 130]));
    for m in &set.markers {
        let CandidateValue::Detection(d) = &m.candidate.value else { continue };
        let DetectionKind::Button { label, panel_pos, .. } = &d.kind else { continue };
        let cx = 80 + (panel_pos[0] * 300.0).round() as i64;
        let cy = 110 - (panel_pos[1] * 300.0).round() as i64;
        fill_circle(&mut img, cx, cy, 9, Rgb([220, 220, 220]));
        match label.as_str() {
            "up" => {
                for i in 0..6 {
                    draw_line(&mut img, (cx - i, cy - 3 + i), (cx + i, cy - 3 + i), BLACK);
                }
            }
            "down" => {
                for i in 0..6 {
                    draw_line(&mut img, (cx - i, cy + 3 - i), (cx + i, cy + 3 - i), BLACK);
                }
            }
            other => {
                if let Ok(n) = other.parse::<u32>() {
                    draw_tag(&mut img, cx - 5, cy - 7, n, Rgb([220, 220, 220]));
                }
            }
        }
        draw_tag(&mut img, cx + 14, cy - 7, m.id, WHITE);
    }
    SceneImage::new(img)
}

fn gallery(set: &MarkerSet) -> SceneImage {
    const PER_ROW: u32 = 4;
    let thumbs: Vec<(u32, RgbImage)> = set
        .markers
        .iter()
        .filter_map(|m| match &m.candidate.value {
            CandidateValue::Landmark { thumbnail, .. } => Some((m.id, draw_map(thumbnail, THUMB_CELL_PX))),
            _ => None,
        })
        .collect();
    let tw = thumbs.iter().map(|(_, t)| t.width()).max().unwrap_or(1);
    let th = thumbs.iter().map(|(_, t)| t.height()).max().unwrap_or(1);
    let tile_w = tw + 8;
    let tile_h = th + 22;
    let n = thumbs.len() as u32;
    let rows = n.div_ceil(PER_ROW).max(1);
    let cols = n.clamp(1, PER_ROW);
    let mut img = RgbImage::from_pixel(cols * tile_w, rows * tile_h, WHITE);
    for (i, (id, t)) in thumbs.iter().enumerate() {
        let x0 = (i as u32 % PER_ROW) * tile_w + 4;
        let y0 = (i as u32 / PER_ROW) * tile_h + 18;
        image::imageops::overlay(&mut img, t, x0 as i64, y0 as i64);
        // robot mark at the landmark pose, which sits at the thumbnail center
        let c = (x0 + t.width() / 2) as i64;
        let r = (y0 + t.height() / 2) as i64;
        fill_circle(&mut img, c, r, 2, ROBOT);
        draw_tag(&mut img, x0 as i64, y0 as i64 - 16, *id, Rgb([230, 230, 230]));
    }
    SceneImage::new(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_stay_inside_the_image() {
        let mut img = RgbImage::from_pixel(20, 20, WHITE);
        draw_tag(&mut img, 100, -50, 42, WHITE);
        draw_tag(&mut img, -5, 30, 7, WHITE);
        assert!(img.pixels().any(|p| *p == BLACK));
    }

    #[test]
    fn png_round_trips_and_hash_is_stable() {
        let img = SceneImage::new(RgbImage::from_pixel(4, 3, FLOOR));
        let png = img.png();
        let back = image::load_from_memory(&png).unwrap().to_rgb8();
        assert_eq!(&back, img.image());
        assert_eq!(img.hash(), SceneImage::new(RgbImage::from_pixel(4, 3, FLOOR)).hash());
    }
}
