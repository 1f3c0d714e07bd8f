//! Power-map unit conversions and tile→grid interpolation.

use crate::config::{PowerUnits, SurfacePower};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Converts a unit-power-per-tile map to flux density: each entry `e`
/// becomes `e · unit_power_w / tile_area` W/m².
pub fn unit_power_to_flux(map: &SurfacePower, tile_area: f64) -> Result<SurfacePower> {
    if map.units != PowerUnits::UnitPower {
        return Err(Error::Config("unit_power_to_flux: map is not in unit-power units".into()));
    }
    if !(tile_area > 0.0) {
        return Err(Error::Config(format!(
            "unit_power_to_flux: tile area must be positive, got {tile_area}"
        )));
    }
    let scale = map.unit_power_w / tile_area;
    Ok(SurfacePower {
        surface: map.surface,
        grid: map.grid.scale(scale),
        units: PowerUnits::FluxWm2,
        unit_power_w: map.unit_power_w,
    })
}

/// Interpolates an m×n matrix of tile-center values (tiles centered at
/// ((i+0.5)/m, (j+0.5)/n) on the unit surface) to the (m+1)×(n+1) mesh-node
/// grid. Interior nodes average their four surrounding tiles; boundary nodes
/// clamp to the nearest tile.
pub fn tile_to_grid(tiles: &Tensor) -> Result<Tensor> {
    if tiles.rows == 0 || tiles.cols == 0 || tiles.data.is_empty() {
        return Err(Error::Config("tile_to_grid: empty matrix".into()));
    }
    let (m, n) = (tiles.rows, tiles.cols);
    let mut grid = Tensor::zeros(m + 1, n + 1);
    let clamp = |v: isize, hi: usize| -> usize { v.clamp(0, hi as isize - 1) as usize };
    for r in 0..=m {
        for c in 0..=n {
            let r0 = clamp(r as isize - 1, m);
            let r1 = clamp(r as isize, m);
            let c0 = clamp(c as isize - 1, n);
            let c1 = clamp(c as isize, n);
            *grid.at_mut(r, c) =
                (tiles.at(r0, c0) + tiles.at(r0, c1) + tiles.at(r1, c0) + tiles.at(r1, c1)) / 4.0;
        }
    }
    Ok(grid)
}

/// Uniform volumetric heat density of a slab dissipating `total_w` watts
/// over `extent` (m): q_V = total / volume, W/m³.
pub fn volumetric_power_density(total_w: f64, extent: [f64; 3]) -> Result<f64> {
    let volume = extent[0] * extent[1] * extent[2];
    if !(volume > 0.0) {
        return Err(Error::Config(format!(
            "volumetric_power_density: slab volume must be positive, got {volume}"
        )));
    }
    if !(total_w >= 0.0) {
        return Err(Error::Config(format!(
            "volumetric_power_density: total power must be ≥ 0, got {total_w}"
        )));
    }
    Ok(total_w / volume)
}
