//! Splitting a global configuration into per-block SET_CONFIG payloads and back.
//!
//! Tile `(i, j)` is addressed `i·tile_cols + j`. Each block's sub-matrix is
//! packed into an 8×8 bit field, one byte per row, MSB = leftmost column.
//! Blocks smaller than 8×8 occupy the top-left corner; unused bits are zero.

use std::collections::BTreeMap;

use super::frame::{BlockAddress, SURFACE_BYTES};
use super::ControlError;
use crate::array::{ArrayGeometry, PhaseConfig};

pub const MAX_BLOCKS: usize = 16;

pub type BlockPayloads = BTreeMap<BlockAddress, [u8; SURFACE_BYTES]>;

fn check_tiling(geom: &ArrayGeometry) -> Result<(), ControlError> {
    if geom.block_count() > MAX_BLOCKS {
        return Err(ControlError::TooManyBlocks(geom.block_count()));
    }
    if geom.block_rows > 8 || geom.block_cols > 8 {
        return Err(ControlError::BlockTooLarge { rows: geom.block_rows, cols: geom.block_cols });
    }
    Ok(())
}

/// Address of tile `(i, j)`.
pub fn tile_address(geom: &ArrayGeometry, tile_row: usize, tile_col: usize) -> BlockAddress {
    BlockAddress::new((tile_row * geom.tile_cols + tile_col) as u8).expect("at most 16 tiles")
}

pub fn partition_config(global: &PhaseConfig, geom: &ArrayGeometry) -> Result<BlockPayloads, ControlError> {
    check_tiling(geom)?;
    geom.check_config(global)?;
    let mut out = BTreeMap::new();
    for i in 0..geom.tile_rows {
        for j in 0..geom.tile_cols {
            let mut field = [0u8; SURFACE_BYTES];
            for (r, byte) in field.iter_mut().enumerate().take(geom.block_rows) {
                for c in 0..geom.block_cols {
                    if global.get(i * geom.block_rows + r, j * geom.block_cols + c) {
                        *byte |= 0x80 >> c;
                    }
                }
            }
            out.insert(tile_address(geom, i, j), field);
        }
    }
    Ok(out)
}

/// Inverse of [`partition_config`]. Every tile address must be present.
pub fn reassemble(payloads: &BlockPayloads, geom: &ArrayGeometry) -> Result<PhaseConfig, ControlError> {
    check_tiling(geom)?;
    let mut config = geom.empty_config();
    for i in 0..geom.tile_rows {
        for j in 0..geom.tile_cols {
            let addr = tile_address(geom, i, j);
            let field = payloads.get(&addr).ok_or(ControlError::MissingBlock(addr))?;
            for (r, byte) in field.iter().enumerate().take(geom.block_rows) {
                for c in 0..geom.block_cols {
                    config.set(i * geom.block_rows + r, j * geom.block_cols + c, byte & (0x80 >> c) != 0);
                }
            }
        }
    }
    Ok(config)
}
