//! Chip thermal model description: geometry, mesh, boundary conditions,
//! power maps, conductivity — plus the experiment config file format.
//!
//! All stored quantities are SI (metres, watts, kelvin). The file format
//! uses millimetres/milliwatts for the keys suffixed `_mm`/`_mw` and
//! converts on parse (see [`crate::numfmt`] for why conversion is done in
//! decimal space).

mod parse;
mod power;

pub use parse::{parse_config_path, parse_config_str, serialize_config, write_config};
pub use parse::{parse_matrix, serialize_matrix};
pub use power::{tile_to_grid, unit_power_to_flux, volumetric_power_density};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The six exterior surfaces of a cuboid stack, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Surface {
    XMin,
    XMax,
    YMin,
    YMax,
    ZMin,
    ZMax,
}

impl Surface {
    pub const ALL: [Surface; 6] =
        [Surface::XMin, Surface::XMax, Surface::YMin, Surface::YMax, Surface::ZMin, Surface::ZMax];

    /// Axis this surface is normal to: 0 = x, 1 = y, 2 = z.
    pub fn axis(self) -> usize {
        match self {
            Surface::XMin | Surface::XMax => 0,
            Surface::YMin | Surface::YMax => 1,
            Surface::ZMin | Surface::ZMax => 2,
        }
    }

    pub fn is_max(self) -> bool {
        matches!(self, Surface::XMax | Surface::YMax | Surface::ZMax)
    }

    /// Sign of the outward normal along `axis()`: +1 on max faces, −1 on min.
    pub fn outward_sign(self) -> f64 {
        if self.is_max() {
            1.0
        } else {
            -1.0
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Surface::XMin => "xmin",
            Surface::XMax => "xmax",
            Surface::YMin => "ymin",
            Surface::YMax => "ymax",
            Surface::ZMin => "zmin",
            Surface::ZMax => "zmax",
        }
    }

    pub fn from_key(key: &str) -> Option<Surface> {
        Surface::ALL.iter().copied().find(|s| s.key() == key)
    }

    /// The in-plane axes (u, v) of this surface in ascending axis order;
    /// surface grids store `v` along rows (row 0 = v-min) and `u` along
    /// columns. For z surfaces that is the familiar (x cols, y rows).
    pub fn plane_axes(self) -> (usize, usize) {
        match self.axis() {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        }
    }

    pub fn array_index(self) -> usize {
        match self {
            Surface::XMin => 0,
            Surface::XMax => 1,
            Surface::YMin => 2,
            Surface::YMax => 3,
            Surface::ZMin => 4,
            Surface::ZMax => 5,
        }
    }
}

/// Dense 3D nodal field indexed (i, j, k) along (x, y, z); i varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid3 {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub data: Vec<f64>,
}

impl Grid3 {
    pub fn new(nx: usize, ny: usize, nz: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), nx * ny * nz, "Grid3 data length must equal nx*ny*nz");
        Grid3 { nx, ny, nz, data }
    }

    pub fn filled(nx: usize, ny: usize, nz: usize, value: f64) -> Self {
        Grid3 { nx, ny, nz, data: vec![value; nx * ny * nz] }
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny && k < self.nz);
        (k * self.ny + j) * self.nx + i
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.idx(i, j, k)]
    }
}

/// Axis-aligned cuboid, SI metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cuboid {
    pub origin: [f64; 3],
    pub extent: [f64; 3],
}

/// One or more cuboids stacked along z with a shared x/y footprint.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub cuboids: Vec<Cuboid>,
}

impl Geometry {
    pub fn single(extent: [f64; 3]) -> Self {
        Geometry { cuboids: vec![Cuboid { origin: [0.0; 3], extent }] }
    }

    pub fn origin(&self) -> [f64; 3] {
        self.cuboids[0].origin
    }

    /// Bounding extent of the stack: x/y from the shared footprint, z summed.
    pub fn total_extent(&self) -> [f64; 3] {
        let base = self.cuboids[0].extent;
        let z: f64 = self.cuboids.iter().map(|c| c.extent[2]).sum();
        [base[0], base[1], z]
    }

    pub fn validate(&self) -> Result<()> {
        if self.cuboids.is_empty() {
            return Err(Error::Config("geometry: at least one cuboid required".into()));
        }
        for (n, c) in self.cuboids.iter().enumerate() {
            for (a, &e) in c.extent.iter().enumerate() {
                if !(e > 0.0) || !e.is_finite() {
                    return Err(Error::Config(format!(
                        "geometry: cuboid {n} extent axis {a} must be strictly positive, got {e}"
                    )));
                }
            }
        }
        let first = &self.cuboids[0];
        for (n, pair) in self.cuboids.windows(2).enumerate() {
            let (lo, hi) = (&pair[0], &pair[1]);
            for a in 0..2 {
                if hi.origin[a] != first.origin[a] || hi.extent[a] != first.extent[a] {
                    return Err(Error::Config(format!(
                        "geometry: cuboid {} must share the x/y footprint of the stack",
                        n + 1
                    )));
                }
            }
            if hi.origin[2] != lo.origin[2] + lo.extent[2] {
                return Err(Error::Config(format!(
                    "geometry: cuboid {} must start exactly where cuboid {n} ends in z",
                    n + 1
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: [f64; 3], tol: f64) -> bool {
        let o = self.origin();
        let e = self.total_extent();
        (0..3).all(|a| p[a] >= o[a] - tol && p[a] <= o[a] + e[a] + tol)
    }
}

/// Uniform structured node grid spanning the geometry. Node (i, j, k) sits
/// exactly at `origin + (i·dx, j·dy, k·dz)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub counts: [usize; 3],
    pub origin: [f64; 3],
    pub extent: [f64; 3],
}

impl Mesh {
    pub fn new(counts: [usize; 3], geometry: &Geometry) -> Self {
        Mesh { counts, origin: geometry.origin(), extent: geometry.total_extent() }
    }

    pub fn validate(&self) -> Result<()> {
        for (a, &c) in self.counts.iter().enumerate() {
            if c < 2 {
                return Err(Error::Config(format!(
                    "mesh.counts: each count ≥ 2 required, axis {a} has {c}"
                )));
            }
        }
        Ok(())
    }

    pub fn spacing(&self) -> [f64; 3] {
        [
            self.extent[0] / (self.counts[0] - 1) as f64,
            self.extent[1] / (self.counts[1] - 1) as f64,
            self.extent[2] / (self.counts[2] - 1) as f64,
        ]
    }

    pub fn node_count(&self) -> usize {
        self.counts[0] * self.counts[1] * self.counts[2]
    }

    #[inline]
    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.counts[0] && j < self.counts[1] && k < self.counts[2]);
        (k * self.counts[1] + j) * self.counts[0] + i
    }

    #[inline]
    pub fn node_ijk(&self, index: usize) -> (usize, usize, usize) {
        let nx = self.counts[0];
        let ny = self.counts[1];
        (index % nx, (index / nx) % ny, index / (nx * ny))
    }

    pub fn node_coord(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let d = self.spacing();
        [
            self.origin[0] + i as f64 * d[0],
            self.origin[1] + j as f64 * d[1],
            self.origin[2] + k as f64 * d[2],
        ]
    }

    /// (cols, rows) of a nodal grid on `surface`: columns span the first
    /// in-plane axis, rows the second (see [`Surface::plane_axes`]).
    pub fn surface_dims(&self, surface: Surface) -> (usize, usize) {
        let (u, v) = surface.plane_axes();
        (self.counts[u], self.counts[v])
    }
}

/// Scalar-or-grid value attached to a surface (flux, HTC, or fixed
/// temperature). Grids are nodal: shape must match [`Mesh::surface_dims`].
#[derive(Debug, Clone, PartialEq)]
pub enum SurfaceField {
    Uniform(f64),
    Grid(Tensor),
}

impl SurfaceField {
    pub fn is_zero(&self) -> bool {
        match self {
            SurfaceField::Uniform(v) => *v == 0.0,
            SurfaceField::Grid(g) => g.data.iter().all(|&v| v == 0.0),
        }
    }

    /// Value at surface-grid position (col = first in-plane axis index,
    /// row = second).
    pub fn at(&self, col: usize, row: usize) -> f64 {
        match self {
            SurfaceField::Uniform(v) => *v,
            SurfaceField::Grid(g) => g.at(row, col),
        }
    }

    pub fn all_finite(&self) -> bool {
        match self {
            SurfaceField::Uniform(v) => v.is_finite(),
            SurfaceField::Grid(g) => g.data.iter().all(|v| v.is_finite()),
        }
    }

    pub fn min(&self) -> f64 {
        match self {
            SurfaceField::Uniform(v) => *v,
            SurfaceField::Grid(g) => g.data.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }
}

/// Boundary condition on one exterior surface. Flux sign convention:
/// `q_n > 0` means heat flowing INTO the domain (a power source).
#[derive(Debug, Clone)]
pub enum BoundaryCondition {
    /// Fixed surface temperature, K.
    Dirichlet { temp: SurfaceField },
    /// Prescribed heat flux, W/m².
    Neumann { flux: SurfaceField },
    /// Zero flux; identified with `Neumann { flux ≡ 0 }`.
    Adiabatic,
    /// Conduction–convection balance `−k·∂T/∂n = h·(T − T_amb)`.
    Convection { h: SurfaceField, t_amb: f64 },
}

impl PartialEq for BoundaryCondition {
    fn eq(&self, other: &Self) -> bool {
        use BoundaryCondition::*;
        match (self, other) {
            (Dirichlet { temp: a }, Dirichlet { temp: b }) => a == b,
            (Neumann { flux: a }, Neumann { flux: b }) => a == b,
            (Adiabatic, Adiabatic) => true,
            // Adiabatic ≡ zero-flux Neumann, in both directions.
            (Adiabatic, Neumann { flux }) | (Neumann { flux }, Adiabatic) => flux.is_zero(),
            (Convection { h: ha, t_amb: ta }, Convection { h: hb, t_amb: tb }) => {
                ha == hb && ta == tb
            }
            _ => false,
        }
    }
}

/// Units a surface power map's entries are expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowerUnits {
    /// Dimensionless units-per-tile; one unit dissipates `unit_power_w` watts.
    UnitPower,
    /// Heat flux density, W/m².
    FluxWm2,
}

/// 2D power map attached to one surface. Entries are nodal (grid-based);
/// the surface acquires Neumann source semantics.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePower {
    pub surface: Surface,
    pub grid: Tensor,
    pub units: PowerUnits,
    /// Watts dissipated by a one-unit entry; meaningful for `UnitPower`.
    pub unit_power_w: f64,
}

/// Heat source description.
#[derive(Debug, Clone, PartialEq)]
pub enum PowerMap {
    Surface2D(SurfacePower),
    /// Uniform volumetric source filling `z ∈ [z0, z1]` across the full
    /// footprint, dissipating `total_w` watts in total.
    VolumetricSlab { z0_m: f64, z1_m: f64, total_w: f64 },
}

/// Thermal conductivity, W/(m·K): homogeneous or nodal.
#[derive(Debug, Clone, PartialEq)]
pub enum ConductivityField {
    Uniform(f64),
    Grid(Grid3),
}

impl ConductivityField {
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        match self {
            ConductivityField::Uniform(v) => *v,
            ConductivityField::Grid(g) => g.at(i, j, k),
        }
    }

    /// Homogeneous value, if the field is uniform.
    pub fn uniform(&self) -> Option<f64> {
        match self {
            ConductivityField::Uniform(v) => Some(*v),
            ConductivityField::Grid(_) => None,
        }
    }
}

/// Complete, validated thermal model of one chip configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ChipConfig {
    pub geometry: Geometry,
    pub mesh: Mesh,
    /// One BC per surface, indexed by [`Surface::array_index`].
    pub bcs: [BoundaryCondition; 6],
    pub power: Vec<PowerMap>,
    pub conductivity: ConductivityField,
    /// Reference ambient temperature, K. Derived from the first convection
    /// surface in canonical order at parse time (298.15 K if none).
    pub ambient: f64,
}

impl ChipConfig {
    pub fn bc(&self, surface: Surface) -> &BoundaryCondition {
        &self.bcs[surface.array_index()]
    }

    pub fn surface_power(&self, surface: Surface) -> Option<&SurfacePower> {
        self.power.iter().find_map(|p| match p {
            PowerMap::Surface2D(sp) if sp.surface == surface => Some(sp),
            _ => None,
        })
    }

    pub fn volumetric_slab(&self) -> Option<(f64, f64, f64)> {
        self.power.iter().find_map(|p| match p {
            PowerMap::VolumetricSlab { z0_m, z1_m, total_w } => Some((*z0_m, *z1_m, *total_w)),
            _ => None,
        })
    }

    /// Tile/cell area of a surface power map: dx·dy of the surface mesh
    /// spacing (the per-node patch a grid entry's power dissipates over).
    pub fn surface_tile_area(&self, surface: Surface) -> f64 {
        let (u, v) = surface.plane_axes();
        let d = self.mesh.spacing();
        d[u] * d[v]
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.mesh.validate()?;
        if self.mesh.origin != self.geometry.origin()
            || self.mesh.extent != self.geometry.total_extent()
        {
            return Err(Error::Config("mesh: must span the geometry exactly".into()));
        }
        if !(self.ambient > 0.0) {
            return Err(Error::Config(format!(
                "ambient: must be positive kelvin, got {}",
                self.ambient
            )));
        }
        for surface in Surface::ALL {
            let key = surface.key();
            let dims = self.mesh.surface_dims(surface);
            let check_shape = |field: &SurfaceField, what: &str| -> Result<()> {
                if let SurfaceField::Grid(g) = field {
                    if (g.cols, g.rows) != dims {
                        return Err(Error::Config(format!(
                            "bc.{key}: {what} grid is {}×{} but surface needs {}×{} (cols×rows)",
                            g.cols, g.rows, dims.0, dims.1
                        )));
                    }
                }
                if !field.all_finite() {
                    return Err(Error::Config(format!("bc.{key}: {what} has non-finite entries")));
                }
                Ok(())
            };
            match self.bc(surface) {
                BoundaryCondition::Dirichlet { temp } => {
                    check_shape(temp, "dirichlet temperature")?;
                    if !(temp.min() > 0.0) {
                        return Err(Error::Config(format!(
                            "bc.{key}: dirichlet temperature must be > 0 K"
                        )));
                    }
                }
                BoundaryCondition::Neumann { flux } => check_shape(flux, "neumann flux")?,
                BoundaryCondition::Adiabatic => {}
                BoundaryCondition::Convection { h, t_amb } => {
                    check_shape(h, "convection coefficient")?;
                    if !(h.min() > 0.0) {
                        return Err(Error::Config(format!("bc.{key}: convection h must be > 0")));
                    }
                    if !t_amb.is_finite() || !(*t_amb > 0.0) {
                        return Err(Error::Config(format!(
                            "bc.{key}: ambient temperature must be > 0 K"
                        )));
                    }
                }
            }
        }
        let mut seen_surface = [false; 6];
        for (n, p) in self.power.iter().enumerate() {
            match p {
                PowerMap::Surface2D(sp) => {
                    let key = sp.surface.key();
                    let idx = sp.surface.array_index();
                    if seen_surface[idx] {
                        return Err(Error::Config(format!(
                            "power.surface.{key}: at most one 2D power map per surface"
                        )));
                    }
                    seen_surface[idx] = true;
                    let dims = self.mesh.surface_dims(sp.surface);
                    if (sp.grid.cols, sp.grid.rows) != dims {
                        return Err(Error::Config(format!(
                            "power.surface.{key}: grid is {}×{} but surface needs {}×{} (cols×rows)",
                            sp.grid.cols, sp.grid.rows, dims.0, dims.1
                        )));
                    }
                    if sp.grid.data.iter().any(|v| !v.is_finite() || *v < 0.0) {
                        return Err(Error::Config(format!(
                            "power.surface.{key}: entries must be finite and ≥ 0"
                        )));
                    }
                    if sp.units == PowerUnits::UnitPower && !(sp.unit_power_w > 0.0) {
                        return Err(Error::Config(format!(
                            "power.surface.{key}: unit power must be > 0 W"
                        )));
                    }
                    // The map supplies the surface flux; a Dirichlet or
                    // convection BC there would contradict it.
                    match self.bc(sp.surface) {
                        BoundaryCondition::Adiabatic | BoundaryCondition::Neumann { .. } => {}
                        _ => {
                            return Err(Error::Config(format!(
                                "power.surface.{key}: surface must have neumann/adiabatic BC \
                                 (the power map provides its flux)"
                            )));
                        }
                    }
                }
                PowerMap::VolumetricSlab { z0_m, z1_m, total_w } => {
                    let z_lo = self.geometry.origin()[2];
                    let z_hi = z_lo + self.geometry.total_extent()[2];
                    if !(z0_m < z1_m) || *z0_m < z_lo || *z1_m > z_hi {
                        return Err(Error::Config(format!(
                            "power.volume: slab [{z0_m}, {z1_m}] must satisfy \
                             {z_lo} ≤ z0 < z1 ≤ {z_hi}"
                        )));
                    }
                    if !(*total_w >= 0.0) || !total_w.is_finite() {
                        return Err(Error::Config(format!(
                            "power.volume: total power must be ≥ 0 W, got {total_w} (entry {n})"
                        )));
                    }
                }
            }
        }
        match &self.conductivity {
            ConductivityField::Uniform(v) => {
                if !(*v > 0.0) || !v.is_finite() {
                    return Err(Error::Config(format!(
                        "conductivity: must be strictly positive, got {v}"
                    )));
                }
            }
            ConductivityField::Grid(g) => {
                if (g.nx, g.ny, g.nz)
                    != (self.mesh.counts[0], self.mesh.counts[1], self.mesh.counts[2])
                {
                    return Err(Error::Config(
                        "conductivity: grid shape must match mesh counts".into(),
                    ));
                }
                if g.data.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                    return Err(Error::Config(
                        "conductivity: all values must be strictly positive".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_config() -> ChipConfig {
        let geometry = Geometry::single([1e-3, 1e-3, 5e-4]);
        let mesh = Mesh::new([5, 5, 3], &geometry);
        ChipConfig {
            geometry,
            mesh,
            bcs: [
                BoundaryCondition::Adiabatic,
                BoundaryCondition::Adiabatic,
                BoundaryCondition::Adiabatic,
                BoundaryCondition::Adiabatic,
                BoundaryCondition::Convection { h: SurfaceField::Uniform(500.0), t_amb: 298.15 },
                BoundaryCondition::Adiabatic,
            ],
            power: vec![],
            conductivity: ConductivityField::Uniform(0.1),
            ambient: 298.15,
        }
    }

    #[test]
    fn surface_axis_and_sign_table() {
        assert_eq!(Surface::XMin.axis(), 0);
        assert_eq!(Surface::ZMax.axis(), 2);
        assert_eq!(Surface::ZMax.outward_sign(), 1.0);
        assert_eq!(Surface::YMin.outward_sign(), -1.0);
        assert_eq!(Surface::from_key("zmin"), Some(Surface::ZMin));
        assert_eq!(Surface::from_key("nope"), None);
        for (n, s) in Surface::ALL.iter().enumerate() {
            assert_eq!(s.array_index(), n, "canonical order must match array index");
        }
    }

    #[test]
    fn adiabatic_equals_zero_flux_neumann() {
        let a = BoundaryCondition::Adiabatic;
        let n0 = BoundaryCondition::Neumann { flux: SurfaceField::Uniform(0.0) };
        let ng0 = BoundaryCondition::Neumann { flux: SurfaceField::Grid(Tensor::zeros(3, 2)) };
        let n1 = BoundaryCondition::Neumann { flux: SurfaceField::Uniform(1.0) };
        assert_eq!(a, n0);
        assert_eq!(n0, a);
        assert_eq!(a, ng0);
        assert_ne!(a, n1);
        assert_ne!(n1, a);
    }

    #[test]
    fn mesh_nodes_and_spacing() {
        let g = Geometry::single([1e-3, 1e-3, 5e-4]);
        let m = Mesh::new([21, 21, 11], &g);
        assert_eq!(m.node_count(), 4851);
        let d = m.spacing();
        assert!((d[0] - 5e-5).abs() < 1e-20);
        assert!((d[2] - 5e-5).abs() < 1e-20);
        assert_eq!(m.node_index(0, 0, 0), 0);
        assert_eq!(m.node_index(1, 0, 0), 1);
        assert_eq!(m.node_index(0, 1, 0), 21);
        assert_eq!(m.node_index(0, 0, 1), 441);
        assert_eq!(m.node_ijk(m.node_index(7, 13, 5)), (7, 13, 5));
        let c = m.node_coord(2, 3, 4);
        assert_eq!(c[0], 2.0 * d[0]);
        assert_eq!(c[1], 3.0 * d[1]);
        assert_eq!(c[2], 4.0 * d[2]);
        assert_eq!(m.surface_dims(Surface::ZMax), (21, 21));
        assert_eq!(
            Mesh::new([21, 21, 1], &g).validate().unwrap_err().to_string().contains("count ≥ 2"),
            true
        );
    }

    #[test]
    fn stacked_geometry_validation() {
        let good = Geometry {
            cuboids: vec![
                Cuboid { origin: [0.0; 3], extent: [1e-3, 1e-3, 2e-4] },
                Cuboid { origin: [0.0, 0.0, 2e-4], extent: [1e-3, 1e-3, 3e-4] },
            ],
        };
        good.validate().unwrap();
        assert_eq!(good.total_extent(), [1e-3, 1e-3, 5e-4]);

        let gap = Geometry {
            cuboids: vec![
                Cuboid { origin: [0.0; 3], extent: [1e-3, 1e-3, 2e-4] },
                Cuboid { origin: [0.0, 0.0, 3e-4], extent: [1e-3, 1e-3, 2e-4] },
            ],
        };
        assert!(gap.validate().is_err(), "non-contiguous stack must fail");

        let footprint = Geometry {
            cuboids: vec![
                Cuboid { origin: [0.0; 3], extent: [1e-3, 1e-3, 2e-4] },
                Cuboid { origin: [0.0, 0.0, 2e-4], extent: [2e-3, 1e-3, 2e-4] },
            ],
        };
        assert!(footprint.validate().is_err(), "footprint mismatch must fail");

        let flat = Geometry::single([1e-3, 0.0, 5e-4]);
        assert!(flat.validate().is_err(), "zero extent must fail");
    }

    #[test]
    fn config_validation_catches_contradictions() {
        let mut c = minimal_config();
        c.validate().unwrap();

        // Power map on a convection surface contradicts the BC.
        c.power.push(PowerMap::Surface2D(SurfacePower {
            surface: Surface::ZMin,
            grid: Tensor::filled(5, 5, 1.0),
            units: PowerUnits::UnitPower,
            unit_power_w: 6.25e-6,
        }));
        assert!(c.validate().is_err());
        c.power.clear();

        // Negative entries are not power sources.
        c.power.push(PowerMap::Surface2D(SurfacePower {
            surface: Surface::ZMax,
            grid: Tensor::filled(5, 5, -1.0),
            units: PowerUnits::UnitPower,
            unit_power_w: 6.25e-6,
        }));
        assert!(c.validate().is_err());
        c.power.clear();

        // Slab outside the geometry.
        c.power.push(PowerMap::VolumetricSlab { z0_m: 4e-4, z1_m: 6e-4, total_w: 1e-3 });
        assert!(c.validate().is_err());
        c.power.clear();

        c.conductivity = ConductivityField::Uniform(0.0);
        assert!(c.validate().is_err());
        c.conductivity = ConductivityField::Uniform(0.1);

        c.bcs[Surface::ZMin.array_index()] =
            BoundaryCondition::Convection { h: SurfaceField::Uniform(0.0), t_amb: 298.15 };
        assert!(c.validate().is_err());
    }

    #[test]
    fn tile_area_is_surface_cell_area() {
        let c = minimal_config();
        // 5 nodes across 1 mm → 0.25 mm spacing; z surfaces use dx·dy.
        let a = c.surface_tile_area(Surface::ZMax);
        assert!((a - 6.25e-8).abs() < 1e-22);
    }
}
