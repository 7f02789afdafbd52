//! Halo-aware tiling: split a large input into overlapping tiles, run each
//! one, and stitch the halo-free cores back into the full output.
//!
//! Per tiled axis of size `N` with tile extent `T` and input halo `h`, the
//! core is `C = T - 2h`. Tile `j` owns output core `[jC, min((j+1)C, N))`
//! (times the output scale) and reads input `[s - h, s - h + T)`, where
//! `s = min(jC, N - C)` so the last tile is shifted left instead of shrunk.
//! Samples outside `[0, N)` are filled by edge replication. Halos are
//! declared in output pixels, so `h = halo / scale` must be integral.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::model_spec::{output_shape_for, Scale, ShapeRule, TensorSpecEntry};
use crate::tensor::{Axes, Axis, Tensor, TensorError};

/// Extent used on spatial axes larger than this when no tile size is given.
pub const DEFAULT_TILE_EXTENT: usize = 512;

#[derive(Debug, Error)]
pub enum TilingError {
    #[error("bad tile: {0}")]
    BadTile(String),
    #[error("non-integral scale on axis '{axis}': {detail}")]
    NonIntegralScale { axis: char, detail: String },
    #[error("tile {tile}: {detail}")]
    ShapeMismatch { tile: usize, detail: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Failure of [`run_tiled`]: either the tiling itself or the per-tile
/// inference callback.
#[derive(Debug, Error)]
pub enum TiledRunError<E: std::error::Error + 'static> {
    #[error(transparent)]
    Tiling(#[from] TilingError),
    #[error("tile {tile}: {source}")]
    Infer {
        tile: usize,
        #[source]
        source: E,
    },
}

/// Decomposition of one tiled axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AxisTiling {
    pub axis: Axis,
    pub size: usize,
    pub extent: usize,
    pub halo: usize,
    pub core: usize,
    /// `(input window start, core start, core end)` per tile, input units.
    pub windows: Vec<(isize, usize, usize)>,
}

/// One tile: per-axis input window and owned core, in input units and
/// in the plan's axes order. Untiled axes span the whole input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tile {
    pub index: usize,
    pub input_start: Vec<isize>,
    pub input_len: Vec<usize>,
    pub core_start: Vec<usize>,
    pub core_end: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TilePlan {
    pub axes: Axes,
    pub input_shape: Vec<usize>,
    pub axis_tilings: Vec<Option<AxisTiling>>,
    pub tiles: Vec<Tile>,
}

impl TilePlan {
    /// Shape every tile input has.
    pub fn tile_shape(&self) -> Vec<usize> {
        self.axis_tilings
            .iter()
            .zip(&self.input_shape)
            .map(|(t, &n)| t.as_ref().map_or(n, |t| t.extent))
            .collect()
    }

    fn tiling_for(&self, axis: Axis) -> Option<&AxisTiling> {
        self.axes.position(axis).and_then(|i| self.axis_tilings[i].as_ref())
    }
}

impl fmt::Display for TilePlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} tile(s)", self.tiles.len())?;
        for t in self.axis_tilings.iter().flatten() {
            write!(
                f,
                ", {}: size {} extent {} halo {} core {} x{}",
                t.axis.as_char(),
                t.size,
                t.extent,
                t.halo,
                t.core,
                t.windows.len()
            )?;
        }
        Ok(())
    }
}

/// `scale * n` when integral.
fn mul(scale: Scale, n: usize) -> Option<usize> {
    let v = scale * Scale::from_integer(n as i64);
    (v.is_integer() && *v.numer() >= 0).then(|| *v.numer() as usize)
}

/// Plan tiles over the spatial axes listed in `tile_extent`.
///
/// `halo` (output pixels) and `scale` are per axis of `axes`. Spatial axes
/// without an extent are covered by a single tile that still carries the
/// halo padding; non-spatial axes always pass through whole.
pub fn plan_tiles(
    input_shape: &[usize],
    axes: &Axes,
    tile_extent: &BTreeMap<Axis, usize>,
    halo: &[usize],
    scale: &[Scale],
) -> Result<TilePlan, TilingError> {
    let rank = axes.len();
    if input_shape.len() != rank || halo.len() != rank || scale.len() != rank {
        return Err(TilingError::BadTile(format!(
            "shape, halo and scale must all have rank {rank}"
        )));
    }
    for &axis in tile_extent.keys() {
        if !axis.is_spatial() {
            return Err(TilingError::BadTile(format!(
                "only z, y and x can be tiled, not '{}'",
                axis.as_char()
            )));
        }
        if !axes.contains(axis) {
            return Err(TilingError::BadTile(format!(
                "tile axis '{}' not in tensor axes '{axes}'",
                axis.as_char()
            )));
        }
    }
    let mut axis_tilings = Vec::with_capacity(rank);
    for (i, axis) in axes.iter().enumerate() {
        let n = input_shape[i];
        if !axis.is_spatial() {
            if halo[i] != 0 {
                return Err(TilingError::BadTile(format!(
                    "halo on non-spatial axis '{}'",
                    axis.as_char()
                )));
            }
            axis_tilings.push(None);
            continue;
        }
        let nonintegral = |detail: String| TilingError::NonIntegralScale {
            axis: axis.as_char(),
            detail,
        };
        let s = scale[i];
        if *s.numer() <= 0 {
            return Err(nonintegral(format!("scale {s} cannot be tiled")));
        }
        let h_in = halo[i] * *s.denom() as usize;
        if !h_in.is_multiple_of(*s.numer() as usize) {
            return Err(nonintegral(format!("halo {} / scale {s} is not an integer", halo[i])));
        }
        let h_in = h_in / *s.numer() as usize;
        let extent = tile_extent.get(&axis).copied().unwrap_or(n + 2 * h_in);
        if n == 0 {
            return Err(TilingError::BadTile(format!("axis '{}' is empty", axis.as_char())));
        }
        if extent <= 2 * h_in {
            return Err(TilingError::BadTile(format!(
                "extent {extent} on axis '{}' leaves no core with halo {h_in}",
                axis.as_char()
            )));
        }
        let core = extent - 2 * h_in;
        if mul(s, core).is_none() || mul(s, extent).is_none() {
            return Err(nonintegral(format!("scale {s} times tile extent {extent} or core {core}")));
        }
        let count = n.div_ceil(core);
        let windows = (0..count)
            .map(|j| {
                let core_start = j * core;
                let core_end = ((j + 1) * core).min(n);
                let window_core = core_start.min(n.saturating_sub(core));
                (window_core as isize - h_in as isize, core_start, core_end)
            })
            .collect();
        axis_tilings.push(Some(AxisTiling {
            axis,
            size: n,
            extent,
            halo: h_in,
            core,
            windows,
        }));
    }

    // cartesian product of per-axis windows, row-major over axes
    let counts: Vec<usize> = axis_tilings
        .iter()
        .map(|t| t.as_ref().map_or(1, |t| t.windows.len()))
        .collect();
    let mut tiles = Vec::new();
    crate::tensor::for_each_index(&counts, |idx| {
        let mut tile = Tile {
            index: tiles.len(),
            input_start: Vec::with_capacity(rank),
            input_len: Vec::with_capacity(rank),
            core_start: Vec::with_capacity(rank),
            core_end: Vec::with_capacity(rank),
        };
        for (a, &j) in idx.iter().enumerate() {
            match &axis_tilings[a] {
                None => {
                    tile.input_start.push(0);
                    tile.input_len.push(input_shape[a]);
                    tile.core_start.push(0);
                    tile.core_end.push(input_shape[a]);
                }
                Some(t) => {
                    let (start, cs, ce) = t.windows[j];
                    tile.input_start.push(start);
                    tile.input_len.push(t.extent);
                    tile.core_start.push(cs);
                    tile.core_end.push(ce);
                }
            }
        }
        tiles.push(tile);
    });
    Ok(TilePlan {
        axes: axes.clone(),
        input_shape: input_shape.to_vec(),
        axis_tilings,
        tiles,
    })
}

/// Default tile extents: spatial axes larger than [`DEFAULT_TILE_EXTENT`]
/// get that extent, everything else stays whole.
pub fn default_extents(axes: &Axes, shape: &[usize]) -> BTreeMap<Axis, usize> {
    axes.iter()
        .zip(shape)
        .filter(|(a, &n)| a.is_spatial() && n > DEFAULT_TILE_EXTENT)
        .map(|(a, _)| (a, DEFAULT_TILE_EXTENT))
        .collect()
}

/// Per-axis window of one tile for a tensor with `axes`.
fn window_for(plan: &TilePlan, tile: &Tile, axes: &Axes, shape: &[usize]) -> Result<(Vec<isize>, Vec<usize>), TilingError> {
    let mut starts = Vec::with_capacity(axes.len());
    let mut lens = Vec::with_capacity(axes.len());
    for (a, &n) in axes.iter().zip(shape) {
        match plan.axes.position(a).filter(|&p| plan.axis_tilings[p].is_some()) {
            Some(p) => {
                if plan.input_shape[p] != n {
                    return Err(TilingError::BadTile(format!(
                        "input has size {n} on axis '{}', plan expects {}",
                        a.as_char(),
                        plan.input_shape[p]
                    )));
                }
                starts.push(tile.input_start[p]);
                lens.push(tile.input_len[p]);
            }
            None => {
                starts.push(0);
                lens.push(n);
            }
        }
    }
    Ok((starts, lens))
}

/// Run `infer` tile by tile and stitch the outputs.
///
/// `infer` receives the tile index and tile-shaped inputs (named like the
/// originals) and must return one tensor per entry of `output_specs`,
/// matched by name. Outputs use the implicit shape law of their spec;
/// offsets on tiled axes are not supported.
pub fn run_tiled<E, F>(
    mut infer: F,
    inputs: &[Tensor],
    plan: &TilePlan,
    output_specs: &[TensorSpecEntry],
) -> Result<Vec<Tensor>, TiledRunError<E>>
where
    E: std::error::Error + 'static,
    F: FnMut(usize, Vec<Tensor>) -> Result<Vec<Tensor>, E>,
{
    // per output: reference input and per-axis scale
    let mut layouts = Vec::with_capacity(output_specs.len());
    for spec in output_specs {
        let ShapeRule::Implicit {
            reference_input,
            scale,
            offset,
        } = &spec.shape
        else {
            return Err(TilingError::BadTile(format!(
                "output '{}' has a fixed shape and cannot be stitched",
                spec.name
            ))
            .into());
        };
        let reference = inputs
            .iter()
            .find(|t| t.name() == reference_input)
            .ok_or_else(|| TilingError::BadTile(format!("no input named '{reference_input}'")))?;
        let tiled: Vec<Option<&AxisTiling>> = reference.axes().iter().map(|a| plan.tiling_for(a)).collect();
        for (i, t) in tiled.iter().enumerate() {
            if t.is_some() && offset[i] != 0 {
                return Err(TilingError::BadTile(format!(
                    "output '{}' has an offset on tiled axis {i}",
                    spec.name
                ))
                .into());
            }
        }
        let full_shape = output_shape_for(spec, reference.shape()).map_err(|e| {
            TilingError::BadTile(format!("output '{}': {e}", spec.name))
        })?;
        layouts.push((reference, scale.clone(), tiled, full_shape));
    }

    let mut outputs: Vec<Option<Tensor>> = vec![None; output_specs.len()];
    for tile in &plan.tiles {
        let mut tile_inputs = Vec::with_capacity(inputs.len());
        for t in inputs {
            let (starts, lens) = window_for(plan, tile, t.axes(), t.shape())?;
            tile_inputs.push(t.slice_replicate(&starts, &lens).map_err(TilingError::from)?);
        }
        let ref_tile_shapes: Vec<Vec<usize>> = layouts
            .iter()
            .map(|(r, ..)| {
                tile_inputs
                    .iter()
                    .find(|t| t.name() == r.name())
                    .map(|t| t.shape().to_vec())
                    .unwrap_or_default()
            })
            .collect();
        let results = infer(tile.index, tile_inputs).map_err(|source| TiledRunError::Infer {
            tile: tile.index,
            source,
        })?;

        for (o, spec) in output_specs.iter().enumerate() {
            let mismatch = |detail: String| TilingError::ShapeMismatch {
                tile: tile.index,
                detail,
            };
            let result = results
                .iter()
                .find(|t| t.name() == spec.name)
                .ok_or_else(|| mismatch(format!("no output named '{}'", spec.name)))?;
            let (_, scale, tiled, full_shape) = &layouts[o];
            let expected = output_shape_for(spec, &ref_tile_shapes[o])
                .map_err(|e| mismatch(format!("output '{}': {e}", spec.name)))?;
            if result.shape() != expected.as_slice() {
                return Err(mismatch(format!(
                    "output '{}' has shape {:?}, shape law gives {:?}",
                    spec.name,
                    result.shape(),
                    expected
                ))
                .into());
            }
            let mut crop = Vec::with_capacity(expected.len());
            let mut dest = Vec::with_capacity(expected.len());
            for (i, t) in tiled.iter().enumerate() {
                match t {
                    None => {
                        crop.push(0..expected[i]);
                        dest.push(0);
                    }
                    Some(t) => {
                        let p = plan.axes.position(t.axis).expect("tiled axis in plan");
                        let s = scale[i];
                        let rel = (tile.core_start[p] as isize - tile.input_start[p]) as usize;
                        let from = mul(s, rel);
                        let len = mul(s, tile.core_end[p] - tile.core_start[p]);
                        let at = mul(s, tile.core_start[p]);
                        match (from, len, at) {
                            (Some(f), Some(l), Some(a)) => {
                                crop.push(f..f + l);
                                dest.push(a);
                            }
                            _ => {
                                return Err(TilingError::NonIntegralScale {
                                    axis: t.axis.as_char(),
                                    detail: format!("scale {s} on tile {}", tile.index),
                                }
                                .into())
                            }
                        }
                    }
                }
            }
            let core = result.slice(&crop).map_err(TilingError::from)?;
            let full = outputs[o].get_or_insert_with(|| {
                Tensor::zeros(&spec.name, result.axes().clone(), full_shape.clone(), result.dtype())
                    .expect("output shape is valid")
            });
            full.write_block(&core, &dest).map_err(TilingError::from)?;
        }
    }
    Ok(outputs
        .into_iter()
        .map(|o| o.expect("plans always contain at least one tile"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one() -> Scale {
        Scale::from_integer(1)
    }

    fn plan_x(n: usize, t: usize, h: usize) -> Result<TilePlan, TilingError> {
        let axes: Axes = "x".parse().unwrap();
        plan_tiles(&[n], &axes, &BTreeMap::from([(Axis::X, t)]), &[h], &[one()])
    }

    #[test]
    fn two_tiles_with_halo() {
        let p = plan_x(8, 6, 1).unwrap();
        let w = &p.axis_tilings[0].as_ref().unwrap().windows;
        assert_eq!(w, &vec![(-1, 0, 4), (3, 4, 8)]);
    }

    #[test]
    fn last_tile_shifts_left() {
        let p = plan_x(7, 6, 1).unwrap();
        let w = &p.axis_tilings[0].as_ref().unwrap().windows;
        assert_eq!(w, &vec![(-1, 0, 4), (2, 4, 7)]);
    }

    #[test]
    fn single_full_tile() {
        let p = plan_x(8, 10, 1).unwrap();
        assert_eq!(p.tiles.len(), 1);
        assert_eq!(p.tiles[0].core_start, vec![0]);
        assert_eq!(p.tiles[0].core_end, vec![8]);
        assert_eq!(p.tiles[0].input_start, vec![-1]);
    }

    #[test]
    fn no_halo_partition() {
        let p = plan_x(8, 4, 0).unwrap();
        let w = &p.axis_tilings[0].as_ref().unwrap().windows;
        assert_eq!(w, &vec![(0, 0, 4), (4, 4, 8)]);
    }

    #[test]
    fn bad_tiles() {
        assert!(matches!(plan_x(8, 2, 1), Err(TilingError::BadTile(_))));
        let axes: Axes = "yx".parse().unwrap();
        let half = Scale::new(1, 2);
        let err = plan_tiles(&[8, 8], &axes, &BTreeMap::from([(Axis::X, 5)]), &[0, 0], &[one(), half]);
        assert!(matches!(err, Err(TilingError::NonIntegralScale { axis: 'x', .. })));
        let err = plan_tiles(&[8, 8], &axes, &BTreeMap::from([(Axis::X, 6)]), &[0, 1], &[one(), Scale::from_integer(2)]);
        assert!(matches!(err, Err(TilingError::NonIntegralScale { .. })));
        let bx: Axes = "bx".parse().unwrap();
        assert!(plan_tiles(&[2, 8], &bx, &BTreeMap::from([(Axis::Batch, 1)]), &[0, 0], &[one(), one()]).is_err());
    }

    #[test]
    fn grid_order_is_row_major() {
        let axes: Axes = "yx".parse().unwrap();
        let p = plan_tiles(
            &[4, 4],
            &axes,
            &BTreeMap::from([(Axis::Y, 2), (Axis::X, 2)]),
            &[0, 0],
            &[one(), one()],
        )
        .unwrap();
        let starts: Vec<_> = p.tiles.iter().map(|t| t.input_start.clone()).collect();
        assert_eq!(starts, vec![vec![0, 0], vec![0, 2], vec![2, 0], vec![2, 2]]);
        assert_eq!(p.tile_shape(), vec![2, 2]);
    }
}
