use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::explainer::{min_max_normalize, upsample_bilinear};

/// Explanation channels shown per sample by default.
pub const DEFAULT_GRID_CHANNELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TileKind {
    Input,
    GradCam,
    Channel(usize),
}

/// One normalized tile: RGB for the input, a single channel otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct Tile {
    pub kind: TileKind,
    pub channels: usize,
    pub data: Vec<f32>,
}

/// Rows of `[input, Grad-CAM, channel 0, ..., channel c-1]`, each tile independently
/// normalized to `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExplanationGrid {
    pub rows: usize,
    pub cols: usize,
    pub tile_size: (usize, usize),
    pub tiles: Vec<Tile>,
}

impl ExplanationGrid {
    pub fn tile(&self, row: usize, col: usize) -> &Tile {
        &self.tiles[row * self.cols + col]
    }

    /// RGB8 pixels of the whole grid with a 2-pixel white gutter.
    pub fn to_rgb8(&self) -> (usize, usize, Vec<u8>) {
        let gap = 2;
        let (th, tw) = self.tile_size;
        let width = self.cols * tw + (self.cols + 1) * gap;
        let height = self.rows * th + (self.rows + 1) * gap;
        let mut px = vec![255u8; width * height * 3];
        for r in 0..self.rows {
            for c in 0..self.cols {
                let tile = self.tile(r, c);
                let (oy, ox) = (gap + r * (th + gap), gap + c * (tw + gap));
                for y in 0..th {
                    for x in 0..tw {
                        let rgb = match tile.channels {
                            3 => [0, 1, 2].map(|ch| tile.data[ch * th * tw + y * tw + x]),
                            _ => heat_color(tile.data[y * tw + x]),
                        };
                        let at = ((oy + y) * width + ox + x) * 3;
                        for (k, v) in rgb.iter().enumerate() {
                            px[at + k] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                        }
                    }
                }
            }
        }
        (width, height, px)
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let (w, h, px) = self.to_rgb8();
        let mut enc = png::Encoder::new(BufWriter::new(File::create(path)?), w as u32, h as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Format(e.to_string()))?;
        writer
            .write_image_data(&px)
            .map_err(|e| Error::Format(e.to_string()))?;
        writer.finish().map_err(|e| Error::Format(e.to_string()))?;
        Ok(())
    }
}

/// Blue-cyan-yellow-red ramp for single-channel tiles.
fn heat_color(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0);
    let ramp = |c: f32| (1.5 - (4.0 * v - c).abs()).clamp(0.0, 1.0);
    [ramp(3.0), ramp(2.0), ramp(1.0)]
}

fn resize_nearest(img: &Tensor<f32>, (th, tw): (usize, usize)) -> Vec<f32> {
    let (c, h, w) = (img.dim(0), img.dim(1), img.dim(2));
    let mut out = Vec::with_capacity(c * th * tw);
    for ch in 0..c {
        for y in 0..th {
            for x in 0..tw {
                out.push(img.data()[ch * h * w + (y * h / th) * w + x * w / tw]);
            }
        }
    }
    out
}

fn normalized_map(map: &Tensor<f32>, size: (usize, usize)) -> Result<Vec<f32>> {
    Ok(min_max_normalize(&upsample_bilinear(map, size)?).into_data())
}

/// Builds the grid from display-space images `[3,H,W]`, Grad-CAM maps `[h,w]` and
/// explanations `[d,u,v]`, one of each per row. Shows the first `min(channels, d)`
/// explanation channels; every tile is `scale` times the image size.
pub fn build_explanation_grid(
    images: &[Tensor<f32>],
    gradcams: &[Tensor<f32>],
    explanations: &[Tensor<f32>],
    channels: usize,
    scale: usize,
) -> Result<ExplanationGrid> {
    if images.len() != gradcams.len() || images.len() != explanations.len() {
        return Err(Error::InvalidArgument(format!(
            "{} images, {} Grad-CAM maps and {} explanations",
            images.len(),
            gradcams.len(),
            explanations.len()
        )));
    }
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("no images to show".into()))?;
    if first.ndim() != 3 {
        return Err(Error::Shape(format!(
            "images must be [C,H,W], got {:?}",
            first.shape()
        )));
    }
    let size = (first.dim(1) * scale.max(1), first.dim(2) * scale.max(1));
    let shown = explanations
        .iter()
        .map(|e| e.dim(0))
        .min()
        .unwrap_or(0)
        .min(channels);
    let mut tiles = Vec::new();
    for ((img, cam), ex) in images.iter().zip(gradcams).zip(explanations) {
        let rgb = Tensor::new(vec![img.dim(0), size.0, size.1], resize_nearest(img, size))?;
        tiles.push(Tile {
            kind: TileKind::Input,
            channels: img.dim(0),
            data: min_max_normalize(&rgb).into_data(),
        });
        tiles.push(Tile {
            kind: TileKind::GradCam,
            channels: 1,
            data: normalized_map(cam, size)?,
        });
        for ch in 0..shown {
            tiles.push(Tile {
                kind: TileKind::Channel(ch),
                channels: 1,
                data: normalized_map(&ex.slice0(ch), size)?,
            });
        }
    }
    Ok(ExplanationGrid {
        rows: images.len(),
        cols: 2 + shown,
        tile_size: size,
        tiles,
    })
}

pub fn render_explanation_grid(
    images: &[Tensor<f32>],
    gradcams: &[Tensor<f32>],
    explanations: &[Tensor<f32>],
    channels: usize,
    scale: usize,
    path: &Path,
) -> Result<ExplanationGrid> {
    let grid = build_explanation_grid(images, gradcams, explanations, channels, scale)?;
    grid.write_png(path)?;
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn layout_and_tile_ranges() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let images: Vec<_> = (0..4)
            .map(|_| Tensor::uniform([3, 8, 8], 0.2, 0.7, &mut rng))
            .collect();
        let cams: Vec<_> = (0..4)
            .map(|_| Tensor::uniform([8, 8], 0.0, 1.0, &mut rng))
            .collect();
        let ex: Vec<_> = (0..4)
            .map(|_| Tensor::uniform([16, 2, 2], 0.0, 3.0, &mut rng))
            .collect();
        let grid = build_explanation_grid(&images, &cams, &ex, DEFAULT_GRID_CHANNELS, 3).unwrap();
        assert_eq!((grid.rows, grid.cols), (4, 2 + 3));
        assert_eq!(grid.tile_size, (24, 24));
        for t in &grid.tiles {
            let lo = t.data.iter().cloned().fold(f32::INFINITY, f32::min);
            let hi = t.data.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            assert_eq!((lo, hi), (0.0, 1.0), "{:?}", t.kind);
        }
        assert_eq!(grid.tile(1, 3).kind, TileKind::Channel(1));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.png");
        grid.write_png(&path).unwrap();
        let decoder = png::Decoder::new(std::io::BufReader::new(File::open(&path).unwrap()));
        let info = decoder.read_info().unwrap().info().clone();
        assert_eq!(info.width as usize, 5 * 24 + 6 * 2);
        assert_eq!(info.height as usize, 4 * 24 + 5 * 2);
    }

    #[test]
    fn shallow_explanations_show_fewer_channels() {
        let images = vec![Tensor::full([3, 8, 8], 0.5)];
        let cams = vec![Tensor::full([8, 8], 0.0)];
        let ex = vec![Tensor::full([1, 2, 2], 1.0)];
        let grid = build_explanation_grid(&images, &cams, &ex, 3, 1).unwrap();
        assert_eq!(grid.cols, 3);
        assert!(grid.tiles.iter().all(|t| t.data.iter().all(|&v| v == 0.0)));
    }
}
