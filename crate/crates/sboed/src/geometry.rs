//! Structured-grid finite-element geometry and the two-region material
//! map for the tumor growth model.
//!
//! The domain is a rectangle meshed with bilinear quadrilaterals; nodes
//! are ordered row-major (node `j * nx + i` sits at `(i*hx, j*hy)`).
//! Each node carries a gray/white region label with per-region
//! diffusion, prior mean, marginal std and correlation length, from
//! which the SPDE coefficients are derived as
//!
//! ```text
//! gamma = rho / (4 sqrt(2 pi) sigma),   delta = sqrt(2) / (sigma rho sqrt(pi))
//! ```

use crate::error::{Error, Result};
use crate::io::pgm;
use std::f64::consts::PI;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Gray,
    White,
}

/// Per-region physical parameters (diffusion in mm^2/day, growth-rate
/// log-mean in log(1/day), std dimensionless, correlation length in mm).
#[derive(Debug, Clone, Copy)]
pub struct RegionParams {
    pub log_diffusion: f64,
    pub prior_mean: f64,
    pub prior_variance: f64,
    pub correlation_length: f64,
}

/// Estimated hyper-parameters of the tumor growth model (gray matter).
pub const GRAY_DEFAULTS: RegionParams = RegionParams {
    log_diffusion: -0.9937,
    prior_mean: -0.7800,
    prior_variance: 0.0682,
    correlation_length: 6.0,
};

/// Estimated hyper-parameters of the tumor growth model (white matter).
pub const WHITE_DEFAULTS: RegionParams = RegionParams {
    log_diffusion: -0.3006,
    prior_mean: -0.8419,
    prior_variance: 0.0682,
    correlation_length: 12.0,
};

/// How the white-matter region is painted onto the grid.
#[derive(Debug, Clone)]
pub enum RegionSpec {
    /// White disk of radius `radius_frac * domain_width` centered at
    /// `center` (fractions of the domain size), inside gray matter.
    Disk { center: (f64, f64), radius_frac: f64 },
    /// Left half gray, right half white (split at x = width/2).
    HalfSplit,
    /// Grayscale PGM: 0 = gray matter, 255 = white matter.
    MaskFile(std::path::PathBuf),
}

impl Default for RegionSpec {
    fn default() -> Self {
        RegionSpec::Disk {
            center: (0.5, 0.5),
            radius_frac: 0.3,
        }
    }
}

/// Bilinear quadrilateral mesh on a rectangle.
#[derive(Debug, Clone)]
pub struct StructuredMesh {
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
}

impl StructuredMesh {
    pub fn new(nx: usize, ny: usize, width_mm: f64, height_mm: f64) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::invalid(format!(
                "mesh needs at least 3 nodes per axis, got {nx}x{ny}"
            )));
        }
        if width_mm <= 0.0 || height_mm <= 0.0 {
            return Err(Error::invalid("domain dimensions must be positive"));
        }
        Ok(StructuredMesh {
            nx,
            ny,
            hx: width_mm / (nx - 1) as f64,
            hy: height_mm / (ny - 1) as f64,
        })
    }

    /// Number of nodes (the parameter dimension `d_m`).
    pub fn n_nodes(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n_elements(&self) -> usize {
        (self.nx - 1) * (self.ny - 1)
    }

    pub fn width(&self) -> f64 {
        self.hx * (self.nx - 1) as f64
    }

    pub fn height(&self) -> f64 {
        self.hy * (self.ny - 1) as f64
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn node_coords(&self, idx: usize) -> (f64, f64) {
        let i = idx % self.nx;
        let j = idx / self.nx;
        (i as f64 * self.hx, j as f64 * self.hy)
    }

    /// Element `e` corner nodes in counterclockwise order
    /// (SW, SE, NE, NW).
    pub fn element_nodes(&self, e: usize) -> [usize; 4] {
        let ex = e % (self.nx - 1);
        let ey = e / (self.nx - 1);
        let sw = self.node_index(ex, ey);
        [sw, sw + 1, sw + self.nx + 1, sw + self.nx]
    }

    /// Half-bandwidth of any nodal FEM operator on this mesh.
    pub fn half_bandwidth(&self) -> usize {
        self.nx + 1
    }
}

/// Nodal material data: region label plus derived SPDE coefficients.
#[derive(Debug, Clone)]
pub struct MaterialMap {
    pub region: Vec<Region>,
    /// Diffusion D (mm^2/day) per node.
    pub diffusion: Vec<f64>,
    /// Prior mean of the log growth rate per node.
    pub prior_mean: Vec<f64>,
    /// Marginal std sigma per node.
    pub sigma: Vec<f64>,
    /// Correlation length rho (mm) per node.
    pub rho: Vec<f64>,
    /// gamma = rho / (4 sqrt(2 pi) sigma).
    pub gamma: Vec<f64>,
    /// delta = sqrt(2) / (sigma rho sqrt(pi)).
    pub delta: Vec<f64>,
}

impl MaterialMap {
    pub fn n_nodes(&self) -> usize {
        self.region.len()
    }

    pub fn n_gray(&self) -> usize {
        self.region.iter().filter(|r| **r == Region::Gray).count()
    }

    /// Centroid of the gray-matter nodes (tumor implantation site).
    pub fn gray_centroid(&self, mesh: &StructuredMesh) -> (f64, f64) {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for (idx, r) in self.region.iter().enumerate() {
            if *r == Region::Gray {
                let (x, y) = mesh.node_coords(idx);
                sx += x;
                sy += y;
                n += 1;
            }
        }
        if n == 0 {
            (mesh.width() / 2.0, mesh.height() / 2.0)
        } else {
            (sx / n as f64, sy / n as f64)
        }
    }
}

pub fn spde_gamma(sigma: f64, rho: f64) -> f64 {
    rho / (4.0 * (2.0 * PI).sqrt() * sigma)
}

pub fn spde_delta(sigma: f64, rho: f64) -> f64 {
    2f64.sqrt() / (sigma * rho * PI.sqrt())
}

/// Builds mesh + material map. `params` override the Table-1 defaults.
pub fn build_geometry(
    nx: usize,
    ny: usize,
    width_mm: f64,
    height_mm: f64,
    spec: &RegionSpec,
    gray: RegionParams,
    white: RegionParams,
) -> Result<(StructuredMesh, MaterialMap)> {
    let mesh = StructuredMesh::new(nx, ny, width_mm, height_mm)?;
    let n = mesh.n_nodes();

    let region: Vec<Region> = match spec {
        RegionSpec::Disk {
            center,
            radius_frac,
        } => {
            let cx = center.0 * mesh.width();
            let cy = center.1 * mesh.height();
            let r = radius_frac * mesh.width();
            (0..n)
                .map(|idx| {
                    let (x, y) = mesh.node_coords(idx);
                    if (x - cx).hypot(y - cy) <= r {
                        Region::White
                    } else {
                        Region::Gray
                    }
                })
                .collect()
        }
        RegionSpec::HalfSplit => {
            let half = mesh.width() / 2.0;
            (0..n)
                .map(|idx| {
                    let (x, _) = mesh.node_coords(idx);
                    if x < half {
                        Region::Gray
                    } else {
                        Region::White
                    }
                })
                .collect()
        }
        RegionSpec::MaskFile(path) => read_mask(path, nx, ny)?,
    };

    let mut mat = MaterialMap {
        region,
        diffusion: vec![0.0; n],
        prior_mean: vec![0.0; n],
        sigma: vec![0.0; n],
        rho: vec![0.0; n],
        gamma: vec![0.0; n],
        delta: vec![0.0; n],
    };
    for idx in 0..n {
        let p = match mat.region[idx] {
            Region::Gray => gray,
            Region::White => white,
        };
        let sigma = p.prior_variance.sqrt();
        mat.diffusion[idx] = p.log_diffusion.exp();
        mat.prior_mean[idx] = p.prior_mean;
        mat.sigma[idx] = sigma;
        mat.rho[idx] = p.correlation_length;
        mat.gamma[idx] = spde_gamma(sigma, p.correlation_length);
        mat.delta[idx] = spde_delta(sigma, p.correlation_length);
    }
    Ok((mesh, mat))
}

fn read_mask(path: &Path, nx: usize, ny: usize) -> Result<Vec<Region>> {
    let img = pgm::read_pgm(path)?;
    if img.width != nx || img.height != ny {
        return Err(Error::invalid(format!(
            "mask {} is {}x{}, mesh wants {}x{}",
            path.display(),
            img.width,
            img.height,
            nx,
            ny
        )));
    }
    Ok(img
        .pixels
        .iter()
        .map(|&p| if p >= 128 { Region::White } else { Region::Gray })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table1_gray_coefficients() {
        // sigma^2 = 0.0682, rho = 6.0
        let sigma = 0.0682f64.sqrt();
        let g = spde_gamma(sigma, 6.0);
        let d = spde_delta(sigma, 6.0);
        assert!((g - 2.2911).abs() < 5e-4, "gamma = {g}");
        assert!((d - 0.5091).abs() < 5e-4, "delta = {d}");
        // gamma * delta = 1 / (4 pi sigma^2): the pair reproduces the
        // target marginal variance of the Matern field
        let prod = g * d;
        assert!((prod - 1.0 / (4.0 * PI * 0.0682)).abs() < 1e-12);
    }

    #[test]
    fn diffusion_from_table1_logs() {
        let (_, mat) = build_geometry(
            4,
            4,
            10.0,
            10.0,
            &RegionSpec::HalfSplit,
            GRAY_DEFAULTS,
            WHITE_DEFAULTS,
        )
        .unwrap();
        let gray_idx = mat.region.iter().position(|r| *r == Region::Gray).unwrap();
        let white_idx = mat.region.iter().position(|r| *r == Region::White).unwrap();
        assert!((mat.diffusion[gray_idx] - (-0.9937f64).exp()).abs() < 1e-12);
        assert!((mat.diffusion[white_idx] - (-0.3006f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn half_split_on_4x4_is_balanced() {
        let (_, mat) = build_geometry(
            4,
            4,
            10.0,
            10.0,
            &RegionSpec::HalfSplit,
            GRAY_DEFAULTS,
            WHITE_DEFAULTS,
        )
        .unwrap();
        assert_eq!(mat.n_gray(), 8);
        assert_eq!(mat.n_nodes() - mat.n_gray(), 8);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(StructuredMesh::new(2, 4, 1.0, 1.0).is_err());
        assert!(StructuredMesh::new(4, 4, 0.0, 1.0).is_err());
    }

    #[test]
    fn element_connectivity_is_counterclockwise() {
        let mesh = StructuredMesh::new(3, 3, 2.0, 2.0).unwrap();
        assert_eq!(mesh.element_nodes(0), [0, 1, 4, 3]);
        assert_eq!(mesh.element_nodes(3), [4, 5, 8, 7]);
    }
}
