//! Config document format: flat `key = value` lines.
//!
//! ```text
//! geometry.extent_mm = 1 1 0.5
//! mesh.counts = 21 21 11
//! conductivity = 0.1
//! bc.xmin = adiabatic
//! bc.zmin = convection 500 298.15
//! bc.zmax = neumann 2500
//! power.surface.zmax = file:power_zmax.txt unit_power_mw:0.00625
//! power.volume = slab z0_mm:0.25 z1_mm:0.3 total_w:0.000625
//! ```
//!
//! Lengths are millimetres (`_mm` keys), unit powers milliwatts (`_mw`);
//! everything else is SI (W/m², W/(m²·K), W/(m·K), K, W). Blank lines and
//! `#` comments are ignored. `file:` values reference matrix files resolved
//! relative to the document: one row per line, space-separated decimals,
//! row 0 = the second in-plane axis minimum (y-min for z surfaces). 3D
//! conductivity files hold nz such blocks separated by blank lines,
//! bottom block first.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::config::{
    BoundaryCondition, ChipConfig, ConductivityField, Geometry, Grid3, Mesh, PowerMap,
    PowerUnits, Surface, SurfaceField, SurfacePower,
};
use crate::error::{Error, Result};
use crate::numfmt::{format_f64, scale_pow10};
use crate::tensor::Tensor;

fn bad(key: &str, reason: impl std::fmt::Display) -> Error {
    Error::Config(format!("{key}: {reason}"))
}

fn parse_float(key: &str, token: &str) -> Result<f64> {
    token.parse::<f64>().map_err(|_| bad(key, format!("expected a number, got '{token}'")))
}

fn parse_floats(key: &str, value: &str, n: usize) -> Result<Vec<f64>> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    if parts.len() != n {
        return Err(bad(key, format!("expected {n} numbers, got {}", parts.len())));
    }
    parts.iter().map(|t| parse_float(key, t)).collect()
}

/// Parses a matrix file body: one row per line, space-separated decimals.
pub fn parse_matrix(text: &str) -> Result<Tensor> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Result<Vec<f64>> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::Config(format!("matrix line {}: bad number '{t}'", n + 1)))
            })
            .collect();
        rows.push(row?);
    }
    if rows.is_empty() {
        return Err(Error::Config("matrix file has no rows".into()));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Config("matrix rows have unequal lengths".into()));
    }
    let data: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(Tensor::from_vec(data.len() / cols, cols, data))
}

/// Formats a matrix in the file format `parse_matrix` reads, bit-exactly.
pub fn serialize_matrix(grid: &Tensor) -> String {
    let mut out = String::new();
    for r in 0..grid.rows {
        let row: Vec<String> = grid.row(r).iter().map(|&v| format_f64(v)).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

fn parse_grid3(text: &str, key: &str) -> Result<Grid3> {
    let mut blocks: Vec<Tensor> = Vec::new();
    let mut current = String::new();
    for line in text.lines().chain(std::iter::once("")) {
        if line.trim().is_empty() {
            if !current.trim().is_empty() {
                blocks.push(parse_matrix(&current)?);
                current.clear();
            }
        } else {
            current.push_str(line);
            current.push('\n');
        }
    }
    if blocks.is_empty() {
        return Err(bad(key, "3D field file has no blocks"));
    }
    let (rows, cols) = (blocks[0].rows, blocks[0].cols);
    if blocks.iter().any(|b| b.rows != rows || b.cols != cols) {
        return Err(bad(key, "3D field blocks have unequal shapes"));
    }
    let data: Vec<f64> = blocks.iter().flat_map(|b| b.data.iter().copied()).collect();
    Ok(Grid3::new(cols, rows, blocks.len(), data))
}

fn serialize_grid3(g: &Grid3) -> String {
    let mut out = String::new();
    for k in 0..g.nz {
        let start = k * g.nx * g.ny;
        let block = Tensor::from_vec(g.ny, g.nx, g.data[start..start + g.nx * g.ny].to_vec());
        out.push_str(&serialize_matrix(&block));
        if k + 1 < g.nz {
            out.push('\n');
        }
    }
    out
}

/// Splits `prefix:rest` tokens like `file:power.txt` or `z0_mm:0.25`.
fn tagged<'a>(token: &'a str, tag: &str) -> Option<&'a str> {
    token.strip_prefix(tag).and_then(|r| r.strip_prefix(':'))
}

fn parse_bc(
    key: &str,
    value: &str,
    resolver: &dyn Fn(&str) -> Result<String>,
) -> Result<BoundaryCondition> {
    let mut parts = value.split_whitespace();
    let kind = parts.next().ok_or_else(|| bad(key, "empty value"))?;
    let rest: Vec<&str> = parts.collect();
    match kind {
        "adiabatic" => {
            if !rest.is_empty() {
                return Err(bad(key, "adiabatic takes no arguments"));
            }
            Ok(BoundaryCondition::Adiabatic)
        }
        "dirichlet" => {
            if rest.len() != 1 {
                return Err(bad(key, "dirichlet takes one argument: temperature in K"));
            }
            Ok(BoundaryCondition::Dirichlet {
                temp: SurfaceField::Uniform(parse_float(key, rest[0])?),
            })
        }
        "convection" => {
            if rest.len() != 2 {
                return Err(bad(key, "convection takes two arguments: h and T_amb"));
            }
            Ok(BoundaryCondition::Convection {
                h: SurfaceField::Uniform(parse_float(key, rest[0])?),
                t_amb: parse_float(key, rest[1])?,
            })
        }
        "neumann" => {
            if rest.len() != 1 {
                return Err(bad(key, "neumann takes one argument: flux in W/m² or file:<path>"));
            }
            let flux = if let Some(path) = tagged(rest[0], "file") {
                SurfaceField::Grid(parse_matrix(&resolver(path)?)?)
            } else {
                SurfaceField::Uniform(parse_float(key, rest[0])?)
            };
            Ok(BoundaryCondition::Neumann { flux })
        }
        other => Err(bad(
            key,
            format!("unknown kind '{other}' (expected adiabatic|dirichlet|convection|neumann)"),
        )),
    }
}

/// Parses a config document. `resolver` returns the contents of `file:`
/// references (usually [`std::fs::read_to_string`] relative to the document).
pub fn parse_config_str(
    document: &str,
    resolver: &dyn Fn(&str) -> Result<String>,
) -> Result<ChipConfig> {
    let mut pairs: BTreeMap<String, String> = BTreeMap::new();
    for (n, line) in document.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", n + 1)))?;
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        if pairs.insert(key.clone(), value).is_some() {
            return Err(Error::Config(format!("{key}: duplicate key")));
        }
    }
    let mut take = |key: &str| pairs.remove(key);

    let extent_key = "geometry.extent_mm";
    let extent_mm = take(extent_key).ok_or_else(|| bad(extent_key, "missing required key"))?;
    let e = parse_floats(extent_key, &extent_mm, 3)?;
    let extent = [scale_pow10(e[0], -3), scale_pow10(e[1], -3), scale_pow10(e[2], -3)];
    let geometry = Geometry::single(extent);

    let counts_key = "mesh.counts";
    let counts_val = take(counts_key).ok_or_else(|| bad(counts_key, "missing required key"))?;
    let counts: Vec<usize> = counts_val
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| bad(counts_key, format!("bad count '{t}'"))))
        .collect::<Result<_>>()?;
    if counts.len() != 3 {
        return Err(bad(counts_key, format!("expected 3 counts, got {}", counts.len())));
    }
    let mesh = Mesh::new([counts[0], counts[1], counts[2]], &geometry);

    let cond_key = "conductivity";
    let cond_val = take(cond_key).ok_or_else(|| bad(cond_key, "missing required key"))?;
    let conductivity = if let Some(path) = tagged(cond_val.trim(), "file") {
        ConductivityField::Grid(parse_grid3(&resolver(path)?, cond_key)?)
    } else {
        ConductivityField::Uniform(parse_float(cond_key, cond_val.trim())?)
    };

    let mut bcs: Vec<BoundaryCondition> = Vec::with_capacity(6);
    for surface in Surface::ALL {
        let key = format!("bc.{}", surface.key());
        let value = take(&key).ok_or_else(|| bad(&key, "missing required key"))?;
        bcs.push(parse_bc(&key, &value, resolver)?);
    }
    let bcs: [BoundaryCondition; 6] =
        bcs.try_into().expect("exactly six surfaces were just parsed");

    let mut power: Vec<PowerMap> = Vec::new();
    for surface in Surface::ALL {
        let key = format!("power.surface.{}", surface.key());
        let Some(value) = take(&key) else { continue };
        let parts: Vec<&str> = value.split_whitespace().collect();
        if parts.len() != 2 {
            return Err(bad(&key, "expected 'file:<path> unit_power_mw:<v>'"));
        }
        let path = tagged(parts[0], "file")
            .ok_or_else(|| bad(&key, "first token must be file:<path>"))?;
        let mw = tagged(parts[1], "unit_power_mw")
            .ok_or_else(|| bad(&key, "second token must be unit_power_mw:<v>"))?;
        let grid = parse_matrix(&resolver(path)?)?;
        power.push(PowerMap::Surface2D(SurfacePower {
            surface,
            grid,
            units: PowerUnits::UnitPower,
            unit_power_w: scale_pow10(parse_float(&key, mw)?, -3),
        }));
    }
    if let Some(value) = take("power.volume") {
        let key = "power.volume";
        let parts: Vec<&str> = value.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "slab" {
            return Err(bad(key, "expected 'slab z0_mm:<a> z1_mm:<b> total_w:<v>'"));
        }
        let z0 = tagged(parts[1], "z0_mm").ok_or_else(|| bad(key, "expected z0_mm:<a>"))?;
        let z1 = tagged(parts[2], "z1_mm").ok_or_else(|| bad(key, "expected z1_mm:<b>"))?;
        let tw = tagged(parts[3], "total_w").ok_or_else(|| bad(key, "expected total_w:<v>"))?;
        power.push(PowerMap::VolumetricSlab {
            z0_m: scale_pow10(parse_float(key, z0)?, -3),
            z1_m: scale_pow10(parse_float(key, z1)?, -3),
            total_w: parse_float(key, tw)?,
        });
    }

    if let Some(unknown) = pairs.keys().next() {
        return Err(bad(unknown, "unknown key"));
    }

    let ambient = bcs
        .iter()
        .find_map(|bc| match bc {
            BoundaryCondition::Convection { t_amb, .. } => Some(*t_amb),
            _ => None,
        })
        .unwrap_or(298.15);

    let config = ChipConfig { geometry, mesh, bcs, power, conductivity, ambient };
    config.validate()?;
    Ok(config)
}

/// Parses a config document from disk; `file:` paths resolve relative to it.
pub fn parse_config_path(path: &Path) -> Result<ChipConfig> {
    let document = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let resolver = move |rel: &str| -> Result<String> {
        let p = dir.join(rel);
        std::fs::read_to_string(&p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
    };
    parse_config_str(&document, &resolver)
}

fn format_field(field: &SurfaceField, aux_name: &str, aux: &mut Vec<(String, String)>) -> String {
    match field {
        SurfaceField::Uniform(v) => format_f64(*v),
        SurfaceField::Grid(g) => {
            aux.push((aux_name.to_string(), serialize_matrix(g)));
            format!("file:{aux_name}")
        }
    }
}

/// Serializes a config to (document text, auxiliary matrix files).
/// Grid-valued fields get canonical file names (`power_zmax.txt`,
/// `neumann_xmin.txt`, `conductivity.txt`); `parse_config_str` over the
/// returned pieces reproduces the config exactly.
pub fn serialize_config(config: &ChipConfig) -> (String, Vec<(String, String)>) {
    let mut doc = String::new();
    let mut aux: Vec<(String, String)> = Vec::new();
    let e = config.geometry.total_extent();
    doc.push_str(&format!(
        "geometry.extent_mm = {} {} {}\n",
        format_f64(scale_pow10(e[0], 3)),
        format_f64(scale_pow10(e[1], 3)),
        format_f64(scale_pow10(e[2], 3)),
    ));
    let c = config.mesh.counts;
    doc.push_str(&format!("mesh.counts = {} {} {}\n", c[0], c[1], c[2]));
    match &config.conductivity {
        ConductivityField::Uniform(v) => {
            doc.push_str(&format!("conductivity = {}\n", format_f64(*v)));
        }
        ConductivityField::Grid(g) => {
            aux.push(("conductivity.txt".to_string(), serialize_grid3(g)));
            doc.push_str("conductivity = file:conductivity.txt\n");
        }
    }
    for surface in Surface::ALL {
        let key = surface.key();
        let line = match config.bc(surface) {
            BoundaryCondition::Adiabatic => "adiabatic".to_string(),
            BoundaryCondition::Dirichlet { temp } => {
                let SurfaceField::Uniform(v) = temp else {
                    // The documented format has no dirichlet-grid form; emit
                    // the value field through a neumann-style file reference
                    // would change semantics, so reject loudly instead.
                    panic!("dirichlet temperature grids are not expressible in the config format");
                };
                format!("dirichlet {}", format_f64(*v))
            }
            BoundaryCondition::Neumann { flux } => {
                format!("neumann {}", format_field(flux, &format!("neumann_{key}.txt"), &mut aux))
            }
            BoundaryCondition::Convection { h, t_amb } => {
                let SurfaceField::Uniform(v) = h else {
                    panic!("convection h grids are not expressible in the config format");
                };
                format!("convection {} {}", format_f64(*v), format_f64(*t_amb))
            }
        };
        doc.push_str(&format!("bc.{key} = {line}\n"));
    }
    for p in &config.power {
        match p {
            PowerMap::Surface2D(sp) => {
                let key = sp.surface.key();
                let name = format!("power_{key}.txt");
                assert!(
                    sp.units == PowerUnits::UnitPower,
                    "only unit-power surface maps are expressible in the config format"
                );
                aux.push((name.clone(), serialize_matrix(&sp.grid)));
                doc.push_str(&format!(
                    "power.surface.{key} = file:{name} unit_power_mw:{}\n",
                    format_f64(scale_pow10(sp.unit_power_w, 3))
                ));
            }
            PowerMap::VolumetricSlab { z0_m, z1_m, total_w } => {
                doc.push_str(&format!(
                    "power.volume = slab z0_mm:{} z1_mm:{} total_w:{}\n",
                    format_f64(scale_pow10(*z0_m, 3)),
                    format_f64(scale_pow10(*z1_m, 3)),
                    format_f64(*total_w)
                ));
            }
        }
    }
    (doc, aux)
}

/// Writes `<stem>.cfg` plus auxiliary matrix files into `dir`; returns the
/// config path.
pub fn write_config(config: &ChipConfig, dir: &Path, stem: &str) -> Result<PathBuf> {
    let (doc, aux) = serialize_config(config);
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{stem}.cfg"));
    std::fs::write(&path, doc)?;
    for (name, body) in aux {
        std::fs::write(dir.join(name), body)?;
    }
    Ok(path)
}
