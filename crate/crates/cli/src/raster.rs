//! Nodal fields to PNG images.
//!
//! Each pixel center is located in the mesh and interpolated barycentrically; pixels outside
//! every element are drawn black. Values map linearly onto `[min, max]` and are clamped.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use elasto_core::Mesh;

use crate::config::Colormap;
use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColorScale {
    pub min: f64,
    pub max: f64,
    pub colormap: Colormap,
}

impl ColorScale {
    /// Position of `v` on the color bar, clamped to `[0, 1]`.
    pub fn coordinate(&self, v: f64) -> f64 {
        ((v - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
    }
}

fn channel(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Piecewise-linear blue-cyan-yellow-red ramp.
pub fn jet(t: f64) -> [u8; 3] {
    [
        channel(1.5 - (4.0 * t - 3.0).abs()),
        channel(1.5 - (4.0 * t - 2.0).abs()),
        channel(1.5 - (4.0 * t - 1.0).abs()),
    ]
}

/// Samples the field at pixel centers, row 0 at the top. `NaN` marks pixels outside the mesh.
pub fn rasterize(mesh: &Mesh, field: &[f64], width: usize, height: usize) -> Vec<f64> {
    let (lo, hi) = mesh.bounds();
    let dx = (hi[0] - lo[0]) / width as f64;
    let dy = (hi[1] - lo[1]) / height as f64;
    let mut out = vec![f64::NAN; width * height];
    let eps = 1e-12;
    for (e, tri) in mesh.elements().iter().enumerate() {
        let pts = tri.map(|i| mesh.nodes()[i]);
        let xmin = pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let xmax = pts.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        let ymin = pts.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let ymax = pts.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
        let c0 = (((xmin - lo[0]) / dx - 0.5).floor().max(0.0)) as usize;
        let c1 = (((xmax - lo[0]) / dx - 0.5).ceil().max(0.0) as usize).min(width - 1);
        let r0 = (((hi[1] - ymax) / dy - 0.5).floor().max(0.0)) as usize;
        let r1 = (((hi[1] - ymin) / dy - 0.5).ceil().max(0.0) as usize).min(height - 1);
        for row in r0..=r1 {
            let y = hi[1] - (row as f64 + 0.5) * dy;
            for col in c0..=c1 {
                let idx = row * width + col;
                if !out[idx].is_nan() {
                    continue;
                }
                let x = lo[0] + (col as f64 + 0.5) * dx;
                let b = mesh.barycentric(e, [x, y]);
                if b.iter().all(|&w| w >= -eps) {
                    out[idx] = b[0] * field[tri[0]] + b[1] * field[tri[1]] + b[2] * field[tri[2]];
                }
            }
        }
    }
    out
}

/// Writes the field as an 8-bit PNG: RGB for jet, single-channel for gray.
pub fn export_raster(
    field: &[f64],
    mesh: &Mesh,
    path: &Path,
    scale: &ColorScale,
    size: [usize; 2],
) -> Result<(), CliError> {
    if field.len() != mesh.node_count() {
        return Err(CliError::Raster(format!(
            "field has {} values for {} nodes",
            field.len(),
            mesh.node_count()
        )));
    }
    if let Some(i) = field.iter().position(|v| !v.is_finite()) {
        return Err(CliError::Raster(format!("value at node {i} is not finite")));
    }
    let [width, height] = size;
    let samples = rasterize(mesh, field, width, height);
    let (color, bytes) = match scale.colormap {
        Colormap::Jet => (
            png::ColorType::Rgb,
            samples
                .iter()
                .flat_map(|&v| if v.is_nan() { [0; 3] } else { jet(scale.coordinate(v)) })
                .collect::<Vec<u8>>(),
        ),
        Colormap::Gray => (
            png::ColorType::Grayscale,
            samples
                .iter()
                .map(|&v| if v.is_nan() { 0 } else { channel(scale.coordinate(v)) })
                .collect(),
        ),
    };
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header()?;
    writer.write_image_data(&bytes)?;
    writer.finish()?;
    Ok(())
}
