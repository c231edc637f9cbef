use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use image::{Rgb, RgbImage};
use serde::Serialize;

use crate::error::{Error, Result};

/// A `3×H×W` image with values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ImageTensor {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; 3 * height * width],
        }
    }

    fn from_rgb(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Self::zeros(h, w);
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                out.data[c * h * w + y as usize * w + x as usize] = px[c] as f32 / 127.5 - 1.0;
            }
        }
        out
    }

    fn to_rgb(&self) -> RgbImage {
        let (h, w) = (self.height, self.width);
        RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let px = |c: usize| {
                let v = self.data[c * h * w + y as usize * w + x as usize];
                ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
            };
            Rgb([px(0), px(1), px(2)])
        })
    }
}

pub fn load_png(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path)?.to_rgb8();
    Ok(ImageTensor::from_rgb(&img))
}

pub fn save_png(path: &Path, image: &ImageTensor) -> Result<()> {
    image.to_rgb().save(path)?;
    Ok(())
}

/// Read-only PNG store keyed by image id, with an in-process cache.
#[derive(Debug, Clone)]
pub struct ImageStore {
    dir: PathBuf,
    cache: Arc<RwLock<HashMap<String, Arc<ImageTensor>>>>,
}

impl ImageStore {
    pub fn open(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::Data(format!("image directory {} not found", dir.display())));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            cache: Arc::default(),
        })
    }

    pub fn path_of(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.png"))
    }

    pub fn load(&self, id: &str) -> Result<Arc<ImageTensor>> {
        if let Some(img) = self.cache.read().expect("image cache poisoned").get(id) {
            return Ok(img.clone());
        }
        let path = self.path_of(id);
        if !path.is_file() {
            return Err(Error::Data(format!("image `{id}` missing at {}", path.display())));
        }
        let img = Arc::new(load_png(&path)?);
        self.cache
            .write()
            .expect("image cache poisoned")
            .insert(id.to_string(), img.clone());
        Ok(img)
    }
}

const SHAPES: usize = 8;

/// Hue in degrees to RGB in `[0,1]` at full saturation and value.
fn hue_rgb(hue: f32) -> [f32; 3] {
    let h = (hue.rem_euclid(360.0)) / 60.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    match h as u32 {
        0 => [1.0, x, 0.0],
        1 => [x, 1.0, 0.0],
        2 => [0.0, 1.0, x],
        3 => [0.0, x, 1.0],
        4 => [x, 0.0, 1.0],
        _ => [1.0, 0.0, x],
    }
}

fn inside(shape: usize, dx: f32, dy: f32, r: f32) -> bool {
    let (ax, ay) = (dx.abs(), dy.abs());
    match shape {
        0 => dx * dx + dy * dy <= r * r,
        1 => ax <= r * 0.85 && ay <= r * 0.85,
        2 => dy <= r * 0.8 && dy >= -r && ax <= (dy + r) * 0.55,
        3 => (ax <= r * 0.3 && ay <= r) || (ay <= r * 0.3 && ax <= r),
        4 => {
            let d2 = dx * dx + dy * dy;
            d2 <= r * r && d2 >= (0.55 * r).powi(2)
        }
        5 => ax + ay <= r,
        6 => ay <= r * 0.35 && ax <= r,
        _ => ax <= r * 0.35 && ay <= r,
    }
}

/// Renders a class-shaped image. `latent` in `[-1,1]^4` perturbs position,
/// size and brightness of the class shape.
pub fn render_class_image(class: usize, latent: &[f32; 4], size: usize) -> ImageTensor {
    let shape = class % SHAPES;
    let hue = (class / SHAPES) as f32 * 45.0 + class as f32 * 137.5;
    let color = hue_rgb(hue);
    let s = size as f32;
    let cx = s / 2.0 + latent[0] * s * 0.15;
    let cy = s / 2.0 + latent[1] * s * 0.15;
    let r = s * (0.28 + 0.06 * latent[2]);
    let bright = 0.75 + 0.25 * latent[3];
    let mut img = ImageTensor::zeros(size, size);
    let plane = size * size;
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
            let on = inside(shape, dx, dy, r);
            for c in 0..3 {
                let v = if on { color[c] * bright } else { 0.12 };
                img.data[c * plane + y * size + x] = v * 2.0 - 1.0;
            }
        }
    }
    img
}

/// One tile of a mosaic plus its sidecar row.
#[derive(Debug, Clone, Serialize)]
pub struct MosaicCell {
    pub row: usize,
    pub col: usize,
    pub class: usize,
    pub eeg_record_id: String,
    pub seed: u64,
}

/// Writes images as a PNG grid and the matching sidecar CSV
/// (`row,col,class,eeg_record_id,seed`).
pub fn save_mosaic(
    png_path: &Path,
    csv_path: &Path,
    images: &[ImageTensor],
    cells: &[MosaicCell],
    cols: usize,
) -> Result<()> {
    if images.is_empty() || images.len() != cells.len() || cols == 0 {
        return Err(Error::Data(format!(
            "mosaic needs one cell per image ({} images, {} cells)",
            images.len(),
            cells.len()
        )));
    }
    let (h, w) = (images[0].height, images[0].width);
    let rows = images.len().div_ceil(cols);
    let mut canvas = RgbImage::new((cols * w) as u32, (rows * h) as u32);
    for (img, cell) in images.iter().zip(cells) {
        if img.height != h || img.width != w {
            return Err(Error::Geometry("mosaic images differ in size".into()));
        }
        let tile = img.to_rgb();
        image::imageops::replace(&mut canvas, &tile, (cell.col * w) as i64, (cell.row * h) as i64);
    }
    canvas.save(png_path)?;
    let mut wtr = csv::Writer::from_path(csv_path)?;
    for c in cells {
        wtr.serialize(c)?;
    }
    wtr.flush().map_err(|e| Error::io(csv_path, e))?;
    Ok(())
}
