//! Box grids, cell-centered fields and the forward-difference gradient with
//! its exact negative adjoint.
//!
//! Faces are stored on an *extended* cell layout: one ghost layer is added on
//! the low side of every axis, and every extended cell owns its forward face
//! in each axis. With `n` cells on an axis this gives `n + 1` faces, the first
//! and last of which are boundary faces. Faces that lie entirely outside the
//! domain (forward x-faces of ghost rows, forward y-faces of ghost columns)
//! exist in the layout but always carry zero.
//!
//! Dirichlet mode uses ghost value `0`, so the boundary faces carry the jump
//! to the zero extension. Neumann mode reflects, so boundary faces carry `0`.

use std::fmt;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Boundary behavior of the discrete gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundaryCondition {
    Dirichlet,
    Neumann,
}

impl fmt::Display for BoundaryCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundaryCondition::Dirichlet => f.write_str("dirichlet"),
            BoundaryCondition::Neumann => f.write_str("neumann"),
        }
    }
}

impl std::str::FromStr for BoundaryCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dirichlet" | "d" => Ok(BoundaryCondition::Dirichlet),
            "neumann" | "n" => Ok(BoundaryCondition::Neumann),
            other => Err(Error::InvalidParameter(format!(
                "unknown boundary condition `{other}` (expected dirichlet or neumann)"
            ))),
        }
    }
}

/// Uniform grid on the box `(0, L_0) x (0, L_1)` (or `(0, L_0)` in 1D).
///
/// Cells are numbered row-major with the x index varying fastest:
/// `index = i + nx * j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    dim: usize,
    cells: [usize; 2],
    lengths: [f64; 2],
    bc: BoundaryCondition,
}

impl Grid {
    pub fn new_1d(cells: usize, length: f64, bc: BoundaryCondition) -> Result<Self> {
        Self::new(&[cells], &[length], bc)
    }

    pub fn new_2d(cells: [usize; 2], lengths: [f64; 2], bc: BoundaryCondition) -> Result<Self> {
        Self::new(&cells, &lengths, bc)
    }

    /// Unit interval or unit square with `n` cells per axis.
    pub fn unit(dim: usize, n: usize, bc: BoundaryCondition) -> Result<Self> {
        Self::new(&vec![n; dim], &vec![1.0; dim], bc)
    }

    pub fn new(cells: &[usize], lengths: &[f64], bc: BoundaryCondition) -> Result<Self> {
        let dim = cells.len();
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension must be 1 or 2, got {dim}")));
        }
        if lengths.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "{} lengths given for a {dim}-dimensional grid",
                lengths.len()
            )));
        }
        let mut c = [1usize; 2];
        let mut l = [1.0f64; 2];
        for a in 0..dim {
            if cells[a] == 0 {
                return Err(Error::InvalidGrid(format!("axis {a} has zero cells")));
            }
            if !(lengths[a].is_finite() && lengths[a] > 0.0) {
                return Err(Error::InvalidGrid(format!(
                    "axis {a} length must be positive and finite, got {}",
                    lengths[a]
                )));
            }
            c[a] = cells[a];
            l[a] = lengths[a];
        }
        Ok(Grid { dim, cells: c, lengths: l, bc })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.bc
    }

    /// Same geometry, different boundary mode.
    pub fn with_bc(&self, bc: BoundaryCondition) -> Grid {
        Grid { bc, ..*self }
    }

    pub fn cells_per_axis(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths[..self.dim]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.lengths[axis] / self.cells[axis] as f64
    }

    pub fn cell_count(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    /// Midpoint-rule volume element, the product of the spacings.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).product()
    }

    /// Total measure of the domain.
    pub fn measure(&self) -> f64 {
        self.lengths().iter().product()
    }

    /// Discrete perimeter: the boundary measure of the box (2 points in 1D).
    pub fn perimeter(&self) -> f64 {
        match self.dim {
            1 => 2.0,
            _ => 2.0 * (self.lengths[0] + self.lengths[1]),
        }
    }

    /// Upper bound for the operator norm of [`grad`] in the weighted norms:
    /// `sqrt(sum_a 4 / h_a^2)`.
    pub fn grad_norm_bound(&self) -> f64 {
        (0..self.dim)
            .map(|a| 4.0 / (self.spacing(a) * self.spacing(a)))
            .sum::<f64>()
            .sqrt()
    }

    /// Cell-center coordinates of cell `index`.
    pub fn center(&self, index: usize) -> [f64; 2] {
        let (i, j) = (index % self.cells[0], index / self.cells[0]);
        let x = (i as f64 + 0.5) * self.spacing(0);
        let y = if self.dim == 2 {
            (j as f64 + 0.5) * self.spacing(1)
        } else {
            0.0
        };
        [x, y]
    }

    /// Number of extended cells (interior plus one low-side ghost layer per axis).
    pub fn extended_count(&self) -> usize {
        self.ext_shape()[0] * self.ext_shape()[1]
    }

    fn ext_shape(&self) -> [usize; 2] {
        [
            self.cells[0] + 1,
            if self.dim == 2 { self.cells[1] + 1 } else { 1 },
        ]
    }

    /// Offset from real to extended y index (no ghost layer in 1D).
    fn ext_offset_y(&self) -> usize {
        usize::from(self.dim == 2)
    }

    /// Extended index of the extended cell whose real coordinates are `(i, j)`.
    /// `i` and `j` may be `-1` for the ghost layer.
    #[inline]
    fn ext_index(&self, i: isize, j: isize) -> usize {
        let ei = (i + 1) as usize;
        let ej = (j + self.ext_offset_y() as isize) as usize;
        ei + self.ext_shape()[0] * ej
    }

    fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

/// Cell-centered samples of a function in `L^2` of the box.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.cell_count() {
            return Err(Error::InvalidField(format!(
                "expected {} values, got {}",
                grid.cell_count(),
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!("non-finite value at cell {k}")));
        }
        Ok(Field { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Field { grid, values: vec![0.0; grid.cell_count()] }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Field { grid, values: vec![c; grid.cell_count()] }
    }

    /// Samples `f` at the cell centers.
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 2]) -> f64) -> Result<Self> {
        let values = (0..grid.cell_count()).map(|k| f(grid.center(k))).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Reinterprets the same samples under another boundary mode.
    pub fn with_bc(&self, bc: BoundaryCondition) -> Field {
        Field { grid: self.grid.with_bc(bc), values: self.values.clone() }
    }

    pub fn norm(&self) -> f64 {
        l2_inner_unchecked(&self.grid, &self.values, &self.values).sqrt()
    }

    pub fn distance(&self, other: &Field) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        let vol = self.grid.cell_volume();
        let s: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok((s * vol).sqrt())
    }

    /// `self + alpha * other`
    pub fn axpy(&self, alpha: f64, other: &Field) -> Result<Field> {
        self.grid.check_same(&other.grid)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + alpha * b)
            .collect();
        Ok(Field { grid: self.grid, values })
    }

    pub fn scaled(&self, alpha: f64) -> Field {
        Field { grid: self.grid, values: self.values.iter().map(|v| alpha * v).collect() }
    }

    /// Writes the `x[,y],value` CSV, one row per cell in index order.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        if self.grid.dim == 1 {
            writeln!(out, "x,value")?;
        } else {
            writeln!(out, "x,y,value")?;
        }
        for (k, v) in self.values.iter().enumerate() {
            let [x, y] = self.grid.center(k);
            if self.grid.dim == 1 {
                writeln!(out, "{x:.16e},{v:.16e}")?;
            } else {
                writeln!(out, "{x:.16e},{y:.16e},{v:.16e}")?;
            }
        }
        Ok(())
    }

    /// Reads a field written by [`Field::write_csv`]. Coordinates are checked
    /// against the grid's cell centers.
    pub fn read_csv<R: BufRead>(grid: Grid, input: R) -> Result<Field> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty field file".into()))?
            .map_err(Error::Io)?;
        let expected = if grid.dim == 1 { "x,value" } else { "x,y,value" };
        if header.replace(' ', "") != expected {
            return Err(Error::Parse(format!("field header must be `{expected}`, got `{header}`")));
        }
        let mut values = Vec::with_capacity(grid.cell_count());
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(Error::Io)?;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            if parts.len() != grid.dim + 1 {
                return Err(Error::Parse(format!("line {}: expected {} columns", lineno + 2, grid.dim + 1)));
            }
            let nums = parts
                .iter()
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 2)))?;
            let k = values.len();
            if k >= grid.cell_count() {
                return Err(Error::Parse(format!("more rows than the {} grid cells", grid.cell_count())));
            }
            let c = grid.center(k);
            for a in 0..grid.dim {
                if (nums[a] - c[a]).abs() > 1e-9 * grid.lengths[a].max(1.0) {
                    return Err(Error::Parse(format!(
                        "line {}: coordinate {} does not match cell center {}",
                        lineno + 2,
                        nums[a],
                        c[a]
                    )));
                }
            }
            values.push(nums[grid.dim]);
        }
        Field::new(grid, values)
    }
}

/// Values on the forward faces of the extended cells, one block per axis.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceField {
    grid: Grid,
    values: Vec<f64>,
}

impl FaceField {
    pub fn zeros(grid: Grid) -> Self {
        FaceField { grid, values: vec![0.0; grid.dim * grid.extended_count()] }
    }

    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.dim * grid.extended_count() {
            return Err(Error::InvalidField(format!(
                "expected {} face values, got {}",
                grid.dim * grid.extended_count(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidField("non-finite face value".into()));
        }
        Ok(FaceField { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// All face values, axis-major: `values[axis * extended_count + e]`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Face values of one axis, indexed by extended cell.
    pub fn axis(&self, axis: usize) -> &[f64] {
        let n = self.grid.extended_count();
        &self.values[axis * n..(axis + 1) * n]
    }

    /// Euclidean magnitude of the per-extended-cell vector.
    pub fn cell_magnitude(&self, e: usize) -> f64 {
        let n = self.grid.extended_count();
        match self.grid.dim {
            1 => self.values[e].abs(),
            _ => self.values[e].hypot(self.values[n + e]),
        }
    }
}

/// `sum_cells a * b * cellvol`. Summation is sequential in cell order.
pub fn l2_inner(a: &Field, b: &Field) -> Result<f64> {
    a.grid.check_same(&b.grid)?;
    Ok(l2_inner_unchecked(&a.grid, &a.values, &b.values))
}

pub(crate) fn l2_inner_unchecked(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * grid.cell_volume()
}

/// Face inner product with the same volume element as [`l2_inner`].
pub fn face_inner(a: &FaceField, b: &FaceField) -> Result<f64> {
    a.grid.check_same(&b.grid)?;
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum::<f64>() * a.grid.cell_volume())
}

/// Forward-difference gradient.
pub fn grad(u: &Field) -> FaceField {
    let mut g = FaceField::zeros(u.grid);
    grad_into(&u.grid, &u.values, &mut g.values);
    g
}

/// Negative adjoint of [`grad`]: `<div g, u> = -<g, grad u>`.
pub fn div(g: &FaceField) -> Field {
    let mut out = Field::zeros(g.grid);
    div_into(&g.grid, &g.values, &mut out.values);
    out
}

/// Checked variant of [`div`] for callers pairing `g` with a target grid.
pub fn div_on(grid: &Grid, g: &FaceField) -> Result<Field> {
    grid.check_same(&g.grid)?;
    Ok(div(g))
}

pub(crate) fn grad_into(grid: &Grid, u: &[f64], out: &mut [f64]) {
    let [nx, ny] = grid.cells;
    let ext = grid.extended_count();
    let dirichlet = grid.bc == BoundaryCondition::Dirichlet;
    out.iter_mut().for_each(|v| *v = 0.0);

    // x faces: extended cells i in -1..nx, rows j in 0..ny
    let hx = grid.spacing(0);
    for j in 0..ny {
        let row = &u[j * nx..(j + 1) * nx];
        let base = grid.ext_index(-1, j as isize);
        let gx = &mut out[base..base + nx + 1];
        gx[0] = if dirichlet { row[0] / hx } else { 0.0 };
        for i in 0..nx - 1 {
            gx[i + 1] = (row[i + 1] - row[i]) / hx;
        }
        gx[nx] = if dirichlet { -row[nx - 1] / hx } else { 0.0 };
    }

    if grid.dim == 2 {
        let hy = grid.spacing(1);
        let gy = &mut out[ext..2 * ext];
        for j in -1..ny as isize {
            for i in 0..nx {
                let below = if j >= 0 { Some(u[i + nx * j as usize]) } else { None };
                let above = if j + 1 < ny as isize { Some(u[i + nx * (j + 1) as usize]) } else { None };
                let v = match (below, above) {
                    (Some(b), Some(a)) => (a - b) / hy,
                    (None, Some(a)) if dirichlet => a / hy,
                    (Some(b), None) if dirichlet => -b / hy,
                    _ => 0.0,
                };
                gy[grid.ext_index(i as isize, j)] = v;
            }
        }
    }
}

pub(crate) fn div_into(grid: &Grid, g: &[f64], out: &mut [f64]) {
    let [nx, ny] = grid.cells;
    let ext = grid.extended_count();
    let dirichlet = grid.bc == BoundaryCondition::Dirichlet;

    // Neumann boundary faces are not in the range of grad, so they are masked.
    let hx = grid.spacing(0);
    for j in 0..ny {
        let base = grid.ext_index(-1, j as isize);
        let gx = &g[base..base + nx + 1];
        let row = &mut out[j * nx..(j + 1) * nx];
        for i in 0..nx {
            let left = if i == 0 && !dirichlet { 0.0 } else { gx[i] };
            let right = if i == nx - 1 && !dirichlet { 0.0 } else { gx[i + 1] };
            row[i] = (right - left) / hx;
        }
    }

    if grid.dim == 2 {
        let hy = grid.spacing(1);
        let gy = &g[ext..2 * ext];
        for j in 0..ny {
            for i in 0..nx {
                let lower = if j == 0 && !dirichlet { 0.0 } else { gy[grid.ext_index(i as isize, j as isize - 1)] };
                let upper = if j == ny - 1 && !dirichlet { 0.0 } else { gy[grid.ext_index(i as isize, j as isize)] };
                out[i + nx * j] += (upper - lower) / hy;
            }
        }
    }
}

/// Total face-L1 mass `sum_faces |g| * cellvol`.
pub fn face_l1_mass(g: &FaceField) -> f64 {
    g.values.iter().map(|v| v.abs()).sum::<f64>() * g.grid.cell_volume()
}

/// Face-L1 mass restricted to boundary faces (those adjacent to a ghost cell).
pub fn boundary_face_mass(g: &FaceField) -> f64 {
    let grid = &g.grid;
    let [nx, ny] = grid.cells;
    let ext = grid.extended_count();
    let mut s = 0.0;
    for j in 0..ny {
        s += g.values[grid.ext_index(-1, j as isize)].abs();
        s += g.values[grid.ext_index(nx as isize - 1, j as isize)].abs();
    }
    if grid.dim == 2 {
        for i in 0..nx {
            s += g.values[ext + grid.ext_index(i as isize, -1)].abs();
            s += g.values[ext + grid.ext_index(i as isize, ny as isize - 1)].abs();
        }
    }
    s * grid.cell_volume()
}
