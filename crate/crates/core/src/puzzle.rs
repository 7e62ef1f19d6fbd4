//! Puzzle regularisation: split images into a 2x2 grid of tiles, run the
//! attention branch on each tile, stitch the tile CAMs back together and
//! penalise the L1 distance to the full-image CAM on the target class.

use candle_core::Tensor;

use crate::model::{ForwardOutput, Msabn};
use crate::nn::ops;
use crate::{Error, Result};

/// Tiles per side; tile `t` of image `b` sits at row `t / 2`, column `t % 2`.
pub const GRID: usize = 2;
pub const TILES: usize = GRID * GRID;

/// `4B` tiles, image-major: tiles `4b..4b+4` are top-left, top-right,
/// bottom-left and bottom-right of source image `b`.
#[derive(Clone, Debug)]
pub struct TileBatch {
    pub tiles: Tensor,
    pub sources: usize,
}

impl TileBatch {
    pub fn source_of(&self, tile: usize) -> usize {
        tile / TILES
    }
}

pub fn tile(images: &Tensor) -> Result<TileBatch> {
    let (b, c, h, w) = images.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "odd spatial size {h}x{w}; pad or resize to even sides before tiling"
        )));
    }
    let (th, tw) = (h / 2, w / 2);
    let tiles = images
        .reshape((b, c, GRID, th, GRID, tw))?
        .permute((0, 2, 4, 1, 3, 5))?
        .contiguous()?
        .reshape((b * TILES, c, th, tw))?;
    Ok(TileBatch { tiles, sources: b })
}

/// Inverse of [`tile`] on a `(4B, K, h, w)` tensor.
pub fn merge(tile_maps: &Tensor) -> Result<Tensor> {
    let (n, k, h, w) = tile_maps.dims4()?;
    if n % TILES != 0 {
        return Err(Error::Shape(format!("{n} tiles is not a multiple of {TILES}")));
    }
    let b = n / TILES;
    Ok(tile_maps
        .reshape((b, GRID, GRID, k, h, w))?
        .permute((0, 3, 1, 4, 2, 5))?
        .contiguous()?
        .reshape((b, k, GRID * h, GRID * w))?)
}

/// Merges four separately computed tile maps (each `(K, h, w)` or
/// `(B, K, h, w)`), checking that they agree in shape.
pub fn merge_quad(tiles: [&Tensor; 4]) -> Result<Tensor> {
    let reference = tiles[0].dims().to_vec();
    for (i, t) in tiles.iter().enumerate().skip(1) {
        if t.dims() != reference.as_slice() {
            return Err(Error::Shape(format!(
                "tile {i} has shape {:?}, tile 0 has {reference:?}",
                t.dims()
            )));
        }
    }
    let batched: Vec<Tensor> = tiles
        .iter()
        .map(|t| if t.rank() == 3 { t.unsqueeze(0) } else { Ok((*t).clone()) })
        .collect::<candle_core::Result<_>>()?;
    let (b, k, h, w) = batched[0].dims4()?;
    let stacked = Tensor::stack(&batched, 1)?.reshape((b * TILES, k, h, w))?;
    let merged = merge(&stacked)?;
    if tiles[0].rank() == 3 {
        Ok(merged.squeeze(0)?)
    } else {
        Ok(merged)
    }
}

/// Mean absolute difference between the two CAMs on each sample's target
/// channel, averaged over batch and positions. A merged CAM of a different
/// spatial size is bilinearly resized to the full CAM first.
pub fn reconstruction_loss(cam_full: &Tensor, cam_merged: &Tensor, labels: &Tensor) -> Result<Tensor> {
    let (b, k, h, w) = cam_full.dims4()?;
    let (mb, mk, mh, mw) = cam_merged.dims4()?;
    if (mb, mk) != (b, k) {
        return Err(Error::Shape(format!(
            "full CAM is {b}x{k}, merged CAM is {mb}x{mk}"
        )));
    }
    let merged = if (mh, mw) != (h, w) {
        ops::resize_bilinear(cam_merged, h, w)?
    } else {
        cam_merged.clone()
    };
    if labels.dims() != [b] {
        return Err(Error::Shape(format!("{:?} labels for batch of {b}", labels.dims())));
    }
    let index = labels
        .to_dtype(candle_core::DType::U32)?
        .reshape((b, 1, 1, 1))?
        .broadcast_as((b, 1, h, w))?
        .contiguous()?;
    let full_t = cam_full.contiguous()?.gather(&index, 1)?;
    let merged_t = merged.contiguous()?.gather(&index, 1)?;
    Ok((full_t - merged_t)?.abs()?.mean_all()?)
}

/// Standard forward on the images plus the reconstruction loss from their
/// tiles. Tiles only feed the backbone and attention branch, sharing weights
/// with the full pass.
pub fn puzzle_forward(model: &Msabn, images: &Tensor, labels: &Tensor, train: bool) -> Result<(ForwardOutput, Tensor)> {
    let out = model.forward(images, train)?;
    let branch = out
        .branch
        .as_ref()
        .ok_or_else(|| Error::Config("puzzle loss needs an attention branch".into()))?;
    let tiles = tile(images)?;
    let tile_cams = model.attention_branch(&tiles.tiles, train)?.cam;
    let merged = merge(&tile_cams)?;
    let l_re = reconstruction_loss(&branch.cam, &merged, labels)?;
    Ok((out, l_re))
}
