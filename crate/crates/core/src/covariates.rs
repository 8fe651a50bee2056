//! Gridded spatial covariates: reduced-rank Gaussian-process simulation,
//! plain-text raster ingestion, and piecewise-constant evaluation.

use std::io::Write;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, Rect, StudyRegion};
use crate::rng::{stream_rng, Stream};

/// Regular lattice of square cells. Cell `(col, row)` has flat index
/// `row * ncols + col`, with row 0 at the bottom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub origin: Point,
    pub cell_size: f64,
    pub ncols: usize,
    pub nrows: usize,
}

impl Grid {
    pub fn new(origin: Point, cell_size: f64, ncols: usize, nrows: usize) -> Result<Self> {
        if !(cell_size.is_finite() && cell_size > 0.0) || ncols == 0 || nrows == 0 {
            return Err(Error::Config(format!("invalid grid: {ncols}x{nrows} cells of size {cell_size}")));
        }
        Ok(Grid { origin, cell_size, ncols, nrows })
    }

    /// Smallest grid of the given spacing anchored at the rectangle's lower
    /// left corner that covers it.
    pub fn covering(rect: &Rect, spacing: f64) -> Result<Self> {
        let count = |extent: f64| ((extent / spacing) - 1e-9).ceil().max(1.0) as usize;
        Grid::new(rect.min, spacing, count(rect.width()), count(rect.height()))
    }

    pub fn ncells(&self) -> usize {
        self.ncols * self.nrows
    }

    pub fn bounds(&self) -> Rect {
        Rect {
            min: self.origin,
            max: Point::new(
                self.origin.x + self.ncols as f64 * self.cell_size,
                self.origin.y + self.nrows as f64 * self.cell_size,
            ),
        }
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_size * self.cell_size
    }

    /// Closed on the outer boundary, half-open between cells.
    pub fn cell_of(&self, p: &Point) -> Option<usize> {
        let fx = (p.x - self.origin.x) / self.cell_size;
        let fy = (p.y - self.origin.y) / self.cell_size;
        if !(fx >= 0.0 && fy >= 0.0 && fx <= self.ncols as f64 && fy <= self.nrows as f64) {
            return None;
        }
        let col = (fx.floor() as usize).min(self.ncols - 1);
        let row = (fy.floor() as usize).min(self.nrows - 1);
        Some(row * self.ncols + col)
    }

    pub fn cell_rect(&self, cell: usize) -> Rect {
        let (col, row) = (cell % self.ncols, cell / self.ncols);
        let min = Point::new(self.origin.x + col as f64 * self.cell_size, self.origin.y + row as f64 * self.cell_size);
        Rect { min, max: Point::new(min.x + self.cell_size, min.y + self.cell_size) }
    }

    pub fn cell_center(&self, cell: usize) -> Point {
        self.cell_rect(cell).center()
    }

    fn same_geometry(&self, other: &Grid) -> bool {
        self.ncols == other.ncols
            && self.nrows == other.nrows
            && (self.cell_size - other.cell_size).abs() <= 1e-9 * self.cell_size
            && (self.origin.x - other.origin.x).abs() <= 1e-9 * self.cell_size
            && (self.origin.y - other.origin.y).abs() <= 1e-9 * self.cell_size
    }
}

/// Piecewise-constant covariates `x_1(s), ..., x_q(s)` on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateField {
    pub grid: Grid,
    pub names: Vec<String>,
    /// Cell-major: the `q` covariates of cell `c` are `values[c*q..(c+1)*q]`.
    values: Vec<f64>,
}

impl CovariateField {
    pub fn new(grid: Grid, names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.ncells() * names.len() {
            return Err(Error::Data(format!(
                "covariate field needs {} values, got {}",
                grid.ncells() * names.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite covariate value in cell {}", i / names.len().max(1))));
        }
        Ok(CovariateField { grid, names, values })
    }

    /// Builds a field from one value vector per covariate.
    pub fn from_layers(grid: Grid, layers: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let q = layers.len();
        let n = grid.ncells();
        if let Some((name, layer)) = layers.iter().find(|(_, l)| l.len() != n) {
            return Err(Error::Data(format!("covariate '{name}' has {} cells, grid has {n}", layer.len())));
        }
        let mut values = vec![0.0; n * q];
        for (j, (_, layer)) in layers.iter().enumerate() {
            for (c, v) in layer.iter().enumerate() {
                values[c * q + j] = *v;
            }
        }
        CovariateField::new(grid, layers.into_iter().map(|(n, _)| n).collect(), values)
    }

    /// A single covariate with the same value everywhere.
    pub fn constant(grid: Grid, value: f64) -> Result<Self> {
        CovariateField::new(grid, vec!["x1".into()], vec![value; grid.ncells()])
    }

    /// An intercept-only field (`q = 0`).
    pub fn intercept_only(grid: Grid) -> Self {
        CovariateField { grid, names: Vec::new(), values: Vec::new() }
    }

    pub fn n_covariates(&self) -> usize {
        self.names.len()
    }

    /// Covariates of a grid cell, without the intercept.
    pub fn cell_covariates(&self, cell: usize) -> &[f64] {
        let q = self.n_covariates();
        &self.values[cell * q..(cell + 1) * q]
    }

    /// One covariate as a per-cell layer.
    pub fn layer(&self, j: usize) -> Vec<f64> {
        let q = self.n_covariates();
        (0..self.grid.ncells()).map(|c| self.values[c * q + j]).collect()
    }

    pub fn linear_predictor(&self, cell: usize, beta: &[f64]) -> f64 {
        beta[0] + self.cell_covariates(cell).iter().zip(&beta[1..]).map(|(x, b)| x * b).sum::<f64>()
    }

    /// `(1, x_1(s), ..., x_q(s))` from the cell containing `s`.
    pub fn evaluate(&self, s: &Point) -> Result<Vec<f64>> {
        let cell = self.cell_of(s)?;
        let mut out = Vec::with_capacity(self.n_covariates() + 1);
        out.push(1.0);
        out.extend_from_slice(self.cell_covariates(cell));
        Ok(out)
    }

    pub fn cell_of(&self, s: &Point) -> Result<usize> {
        self.grid
            .cell_of(s)
            .ok_or_else(|| Error::Data(format!("location ({}, {}) is outside the covariate grid", s.x, s.y)))
    }

    /// Area of each grid cell that falls inside the study region. With a
    /// mask, a cell counts in full when its centre lies inside the mask.
    pub fn cell_weights(&self, region: &StudyRegion) -> Vec<f64> {
        (0..self.grid.ncells())
            .map(|c| {
                let rect = self.grid.cell_rect(c);
                match &region.mask {
                    Some(mask) => {
                        let center = rect.center();
                        if region.bounds.contains(&center) && mask.contains(&center) {
                            rect.area()
                        } else {
                            0.0
                        }
                    }
                    None => rect.intersection_area(&region.bounds),
                }
            })
            .collect()
    }

    pub fn covers(&self, region: &StudyRegion) -> bool {
        let g = self.grid.bounds();
        let b = region.bounds;
        let tol = 1e-9 * self.grid.cell_size;
        g.min.x <= b.min.x + tol && g.min.y <= b.min.y + tol && g.max.x >= b.max.x - tol && g.max.y >= b.max.y - tol
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpConfig {
    /// Knots per axis.
    pub n_knots: usize,
    /// Gaussian kernel bandwidth in map units.
    pub kernel_range: f64,
    pub marginal_sd: f64,
    pub seed: u64,
    /// Centre the realised field to mean zero and rescale it to exactly
    /// `marginal_sd` over the region.
    pub standardize: bool,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig { n_knots: 12, kernel_range: 0.1, marginal_sd: 1.0, seed: 20, standardize: true }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_knots < 2 {
            return Err(Error::Config("GP needs at least 2 knots per axis".into()));
        }
        if !(self.kernel_range > 0.0 && self.kernel_range.is_finite()) {
            return Err(Error::Config("GP kernel range must be positive".into()));
        }
        if !(self.marginal_sd > 0.0 && self.marginal_sd.is_finite()) {
            return Err(Error::Config("GP marginal sd must be positive".into()));
        }
        Ok(())
    }
}

/// Simulates one covariate as a kernel convolution of i.i.d. normal knot
/// coefficients: `x(s) = Σ_k c_k K(s, knot_k)` with a Gaussian kernel and the
/// knots on a regular lattice spanning the region's bounds.
pub fn simulate_grf(region: &StudyRegion, cfg: &GpConfig, grid_resolution: f64) -> Result<CovariateField> {
    cfg.validate()?;
    let grid = Grid::covering(&region.bounds, grid_resolution)?;
    let b = region.bounds;
    let n = cfg.n_knots;
    let knots: Vec<Point> = (0..n)
        .flat_map(|j| {
            (0..n).map(move |i| {
                Point::new(
                    b.min.x + b.width() * i as f64 / (n - 1) as f64,
                    b.min.y + b.height() * j as f64 / (n - 1) as f64,
                )
            })
        })
        .collect();

    let mut rng = stream_rng(cfg.seed, Stream::Covariate);
    let coefs: Vec<f64> = knots.iter().map(|_| StandardNormal.sample(&mut rng)).collect();

    let two_r2 = 2.0 * cfg.kernel_range * cfg.kernel_range;
    let mut raw = vec![0.0; grid.ncells()];
    let mut kernel_power = 0.0;
    let mut kernel_sums = vec![0.0; knots.len()];
    for (c, value) in raw.iter_mut().enumerate() {
        let s = grid.cell_center(c);
        for ((k, coef), sum) in knots.iter().zip(&coefs).zip(kernel_sums.iter_mut()) {
            let kv = (-((s.x - k.x).powi(2) + (s.y - k.y).powi(2)) / two_r2).exp();
            *value += coef * kv;
            kernel_power += kv * kv;
            *sum += kv;
        }
    }
    // Expected empirical variance over the grid: mean pointwise variance
    // minus the variance of the grid mean.
    let ncells = grid.ncells() as f64;
    let mean_power = kernel_sums.iter().map(|s| (s / ncells).powi(2)).sum::<f64>();
    let expected_var = kernel_power / ncells - mean_power;
    let scale = cfg.marginal_sd / expected_var.max(f64::MIN_POSITIVE).sqrt();
    raw.iter_mut().for_each(|v| *v *= scale);

    if cfg.standardize {
        let weights = CovariateField::intercept_only(grid).cell_weights(region);
        let total: f64 = weights.iter().sum();
        let mean = raw.iter().zip(&weights).map(|(v, w)| v * w).sum::<f64>() / total;
        let var = raw.iter().zip(&weights).map(|(v, w)| w * (v - mean).powi(2)).sum::<f64>() / total;
        let sd = var.sqrt();
        let factor = if sd > 0.0 { cfg.marginal_sd / sd } else { 1.0 };
        raw.iter_mut().for_each(|v| *v = (*v - mean) * factor);
    }
    CovariateField::from_layers(grid, vec![("x1".into(), raw)])
}

struct RasterLayer {
    grid: Grid,
    values: Vec<f64>,
}

fn parse_raster(text: &str, path: &Path) -> Result<RasterLayer> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let mut header = std::collections::HashMap::new();
    let keys = ["ncols", "nrows", "xll", "yll", "cellsize", "nodata"];
    for _ in 0..keys.len() {
        let (no, line) = lines.next().ok_or_else(|| Error::parse(path, 0, "truncated raster header"))?;
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap_or("").to_ascii_lowercase();
        let key = match key.as_str() {
            "xllcorner" => "xll".to_string(),
            "yllcorner" => "yll".to_string(),
            "nodata_value" => "nodata".to_string(),
            _ => key,
        };
        if !keys.contains(&key.as_str()) {
            return Err(Error::parse(path, no + 1, format!("unexpected header key '{key}'")));
        }
        let value: f64 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::parse(path, no + 1, format!("missing or malformed value for '{key}'")))?;
        header.insert(key, value);
    }
    let get =
        |k: &str| header.get(k).copied().ok_or_else(|| Error::parse(path, 0, format!("raster header lacks '{k}'")));
    let ncols = get("ncols")?;
    let nrows = get("nrows")?;
    if ncols < 1.0 || nrows < 1.0 || ncols.fract() != 0.0 || nrows.fract() != 0.0 {
        return Err(Error::parse(path, 1, "ncols and nrows must be positive integers"));
    }
    let (ncols, nrows) = (ncols as usize, nrows as usize);
    let grid = Grid::new(Point::new(get("xll")?, get("yll")?), get("cellsize")?, ncols, nrows)
        .map_err(|e| Error::parse(path, 5, e.to_string()))?;
    let nodata = get("nodata")?;

    let mut values = vec![0.0; ncols * nrows];
    let mut file_row = 0;
    for (no, line) in lines {
        if file_row >= nrows {
            return Err(Error::parse(path, no + 1, "more data rows than nrows"));
        }
        let cells: Vec<&str> = line.split_whitespace().collect();
        if cells.len() != ncols {
            return Err(Error::parse(path, no + 1, format!("expected {ncols} values, found {}", cells.len())));
        }
        // First data row is the northernmost.
        let row = nrows - 1 - file_row;
        for (col, cell) in cells.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::parse(path, no + 1, format!("non-numeric cell '{cell}'")))?;
            if v == nodata || !v.is_finite() {
                return Err(Error::parse(path, no + 1, format!("missing value in cell (row {file_row}, col {col})")));
            }
            values[row * ncols + col] = v;
        }
        file_row += 1;
    }
    if file_row != nrows {
        return Err(Error::parse(path, 0, format!("expected {nrows} data rows, found {file_row}")));
    }
    Ok(RasterLayer { grid, values })
}

/// Reads one raster as a single-covariate field named after the file stem.
pub fn ingest_raster(path: impl AsRef<Path>) -> Result<CovariateField> {
    ingest_rasters(&[path.as_ref()])
}

/// Reads one raster per covariate; all rasters must share the same grid.
pub fn ingest_rasters<P: AsRef<Path>>(paths: &[P]) -> Result<CovariateField> {
    if paths.is_empty() {
        return Err(Error::Config("no covariate rasters given".into()));
    }
    let mut grid: Option<Grid> = None;
    let mut layers = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let layer = parse_raster(&text, p)?;
        match &grid {
            None => grid = Some(layer.grid),
            Some(g) if !g.same_geometry(&layer.grid) => {
                return Err(Error::Data(format!(
                    "raster {} does not share the grid of {}",
                    p.display(),
                    paths[0].as_ref().display()
                )))
            }
            _ => {}
        }
        let name =
            p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| format!("x{}", layers.len() + 1));
        layers.push((name, layer.values));
    }
    CovariateField::from_layers(grid.unwrap(), layers)
}

/// Writes a per-cell layer in the same plain-text raster format.
pub fn write_raster(path: impl AsRef<Path>, grid: &Grid, values: &[f64]) -> Result<()> {
    let path = path.as_ref();
    if values.len() != grid.ncells() {
        return Err(Error::Data("raster layer length does not match its grid".into()));
    }
    let mut out = Vec::new();
    writeln!(out, "ncols {}", grid.ncols).unwrap();
    writeln!(out, "nrows {}", grid.nrows).unwrap();
    writeln!(out, "xll {}", grid.origin.x).unwrap();
    writeln!(out, "yll {}", grid.origin.y).unwrap();
    writeln!(out, "cellsize {}", grid.cell_size).unwrap();
    writeln!(out, "nodata -9999").unwrap();
    for row in (0..grid.nrows).rev() {
        let line: Vec<String> = (0..grid.ncols).map(|col| format!("{}", values[row * grid.ncols + col])).collect();
        writeln!(out, "{}", line.join(" ")).unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_grid(n: usize) -> Grid {
        Grid::new(Point::new(0.0, 0.0), 1.0 / n as f64, n, n).unwrap()
    }

    #[test]
    fn evaluate_constant_and_intercept_only() {
        let f = CovariateField::constant(unit_grid(4), 3.0).unwrap();
        assert_eq!(f.evaluate(&Point::new(0.3, 0.9)).unwrap(), vec![1.0, 3.0]);
        let f = CovariateField::intercept_only(unit_grid(4));
        assert_eq!(f.evaluate(&Point::new(0.3, 0.9)).unwrap(), vec![1.0]);
        assert!(f.evaluate(&Point::new(1.2, 0.5)).is_err());
    }

    #[test]
    fn cell_center_lookup_is_exact() {
        let g = unit_grid(5);
        let values: Vec<f64> = (0..25).map(|c| c as f64 * 0.5 - 3.0).collect();
        let f = CovariateField::from_layers(g, vec![("x".into(), values.clone())]).unwrap();
        for (c, v) in values.iter().enumerate() {
            assert_eq!(f.evaluate(&g.cell_center(c)).unwrap()[1], *v);
        }
        // Far corner belongs to the last cell.
        assert_eq!(g.cell_of(&Point::new(1.0, 1.0)), Some(24));
    }

    #[test]
    fn grf_is_deterministic() {
        let region = StudyRegion::unit_square();
        let cfg = GpConfig::default();
        let a = simulate_grf(&region, &cfg, 0.02).unwrap();
        let b = simulate_grf(&region, &cfg, 0.02).unwrap();
        assert_eq!(a, b);
        let c = simulate_grf(&region, &GpConfig { seed: 99, ..cfg }, 0.02).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn grf_standardized_moments() {
        let region = StudyRegion::unit_square();
        let f = simulate_grf(&region, &GpConfig::default(), 0.01).unwrap();
        assert_eq!(f.grid.ncells(), 10_000);
        let x = f.layer(0);
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
        assert!(mean.abs() < 1e-12);
        assert!((sd - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grf_raw_sd_across_seeds() {
        let region = StudyRegion::unit_square();
        let mut sds = Vec::new();
        for seed in 0..100 {
            let cfg = GpConfig { seed, standardize: false, ..GpConfig::default() };
            let x = simulate_grf(&region, &cfg, 0.02).unwrap().layer(0);
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
            sds.push(sd);
        }
        sds.sort_by(f64::total_cmp);
        let inside = sds.iter().filter(|sd| (0.7..=1.3).contains(*sd)).count();
        assert!(inside >= 90, "only {inside} of 100 seeds in [0.7, 1.3]");
        assert!((0.9..=1.1).contains(&sds[50]), "median sd {}", sds[50]);
    }

    #[test]
    fn grf_flat_kernel_limit() {
        let region = StudyRegion::unit_square();
        for seed in 0..20 {
            let cfg = GpConfig { n_knots: 2, kernel_range: 1000.0, marginal_sd: 1.0, seed, standardize: false };
            let x = simulate_grf(&region, &cfg, 0.05).unwrap().layer(0);
            let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let size = lo.abs().max(hi.abs());
            assert!(hi - lo < 1e-3 * size, "seed {seed}: {} of {size}", hi - lo);
        }
    }

    #[test]
    fn grf_config_validation() {
        let region = StudyRegion::unit_square();
        let bad = GpConfig { n_knots: 1, ..GpConfig::default() };
        assert!(simulate_grf(&region, &bad, 0.1).is_err());
    }

    #[test]
    fn raster_round_trip_and_orientation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ones.asc");
        std::fs::write(&p, "ncols 2\nnrows 2\nxll 0\nyll 0\ncellsize 0.5\nnodata -9999\n1 1\n1 1\n").unwrap();
        let f = ingest_raster(&p).unwrap();
        assert!(f.layer(0).iter().all(|v| *v == 1.0));
        assert_eq!(f.names, vec!["ones".to_string()]);

        let p = dir.path().join("rows.asc");
        std::fs::write(
            &p,
            "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 0.5\nNODATA_value -9999\n10 11\n20 21\n",
        )
        .unwrap();
        let f = ingest_raster(&p).unwrap();
        assert_eq!(f.evaluate(&Point::new(0.25, 0.75)).unwrap()[1], 10.0);
        assert_eq!(f.evaluate(&Point::new(0.75, 0.25)).unwrap()[1], 21.0);

        let out = dir.path().join("out.asc");
        write_raster(&out, &f.grid, &f.layer(0)).unwrap();
        assert_eq!(ingest_raster(&out).unwrap().layer(0), f.layer(0));
    }

    #[test]
    fn raster_errors() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.asc");
        let b = dir.path().join("b.asc");
        std::fs::write(&a, "ncols 2\nnrows 2\nxll 0\nyll 0\ncellsize 0.5\nnodata -9999\n1 1\n1 1\n").unwrap();
        std::fs::write(&b, "ncols 2\nnrows 2\nxll 0\nyll 0\ncellsize 0.25\nnodata -9999\n1 1\n1 1\n").unwrap();
        assert!(matches!(ingest_rasters(&[&a, &b]), Err(Error::Data(_))));

        let c = dir.path().join("c.asc");
        std::fs::write(&c, "ncols 2\nnrows 2\nxll 0\nyll 0\ncellsize 0.5\nnodata -9999\n1 1\n1 -9999\n").unwrap();
        match ingest_raster(&c) {
            Err(Error::Parse { message, .. }) => assert!(message.contains("row 1, col 1"), "{message}"),
            other => panic!("unexpected {other:?}"),
        }

        let d = dir.path().join("d.asc");
        std::fs::write(&d, "ncols 2\nnrows 2\nxll 0\nyll 0\ncellsize 0.5\nnodata -9999\n1 x\n1 1\n").unwrap();
        assert!(matches!(ingest_raster(&d), Err(Error::Parse { line: 7, .. })));

        let e = dir.path().join("e.asc");
        std::fs::write(&e, "ncols 2\nnrows\nxll 0\nyll 0\ncellsize 0.5\nnodata -9999\n1 1\n1 1\n").unwrap();
        assert!(matches!(ingest_raster(&e), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn cell_weights_with_overhanging_grid() {
        let region = StudyRegion::rect(Rect::new(Point::new(0.0, 0.0), Point::new(1.0, 0.95)).unwrap());
        let f = CovariateField::intercept_only(Grid::covering(&region.bounds, 0.1).unwrap());
        let total: f64 = f.cell_weights(&region).iter().sum();
        assert!((total - 0.95).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn piecewise_constant_within_cells(cell in 0usize..36, u1 in 0.0f64..1.0, v1 in 0.0f64..1.0, u2 in 0.0f64..1.0, v2 in 0.0f64..1.0) {
            let g = Grid::new(Point::new(-1.0, 2.0), 0.3, 6, 6).unwrap();
            let values: Vec<f64> = (0..36).map(|c| (c as f64).sin()).collect();
            let f = CovariateField::from_layers(g, vec![("x".into(), values)]).unwrap();
            let r = g.cell_rect(cell);
            // Stay off the upper and right edges, which belong to the neighbour.
            let p1 = Point::new(r.min.x + 0.999 * u1 * g.cell_size, r.min.y + 0.999 * v1 * g.cell_size);
            let p2 = Point::new(r.min.x + 0.999 * u2 * g.cell_size, r.min.y + 0.999 * v2 * g.cell_size);
            prop_assert_eq!(f.evaluate(&p1).unwrap(), f.evaluate(&p2).unwrap());
        }

        #[test]
        fn native_grid_integral_is_exact_cell_sum(seed in 0u64..1000) {
            use crate::geometry::{area_rule, Shape};
            let region = StudyRegion::unit_square();
            let g = Grid::covering(&region.bounds, 0.125).unwrap();
            let values: Vec<f64> = (0..g.ncells()).map(|c| ((c as u64 * 31 + seed) % 17) as f64 / 4.0).collect();
            let f = CovariateField::from_layers(g, vec![("x".into(), values.clone())]).unwrap();
            let rule = area_rule(&Shape::Rect(region.bounds), g.cell_size).unwrap();
            let quad = rule.integrate(|p| f.evaluate(p).unwrap()[1].exp());
            let exact: f64 = values.iter().map(|v| v.exp() * g.cell_area()).sum();
            prop_assert!((quad - exact).abs() <= 1e-12 * exact);
        }
    }
}
