//! Grid-based trapping cross-sections in the radial `xz` plane.
//!
//! Four nested masks are built per drive point:
//! bare (`U_tot < E_max`), kinetic-energy truncated (`U_tot < E_max - KE`),
//! photo-ionized (intersection with the PI beam disk) and micromotion
//! filtered. Every mask is the 4-connected component of its admitted cells
//! that contains the cell holding the rf null.
//!
//! Besides the per-KE constructors, [`VolumeModel::stability_levels`] encodes
//! the whole micromotion-filtered family for one drive point as a per-cell
//! critical level, so that a mask at any KE is a threshold test.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_model::{
    dc_energy, escape_height, pseudo_from_unit_grad_sq, rf_null_height, true_trap_depth, unit_gradient, DriveConfig,
    TrapGeometry,
};
use crate::loading_model::PIBeams;
use crate::trajectory::{walk_approximate, TrajectoryConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    /// Cell spacing `h` (m).
    pub spacing: f64,
}

impl GridSpec {
    pub fn new(x_min: f64, x_max: f64, z_min: f64, z_max: f64, spacing: f64) -> Result<Self> {
        let g = Self { x_min, x_max, z_min, z_max, spacing };
        g.validate()?;
        Ok(g)
    }

    /// `h = z₀/200`, `x ∈ [-2z_esc, 2z_esc]`, `z ∈ [h, 3z_esc]`.
    pub fn default_for(geom: &TrapGeometry) -> Self {
        Self::with_spacing(geom, rf_null_height(geom) / 200.0)
    }

    pub fn with_spacing(geom: &TrapGeometry, h: f64) -> Self {
        let ze = escape_height(geom);
        Self { x_min: -2.0 * ze, x_max: 2.0 * ze, z_min: h, z_max: 3.0 * ze, spacing: h }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::invalid("spacing", format!("must be positive, got {}", self.spacing)));
        }
        if !(self.z_min > 0.0) {
            return Err(Error::invalid("z_min", "grid must lie strictly above the electrode plane"));
        }
        if !(self.x_max > self.x_min && self.z_max > self.z_min) {
            return Err(Error::invalid("grid", "empty range"));
        }
        Ok(())
    }

    /// Checks that the domain encloses the rf null and the escape point.
    pub fn validate_for(&self, geom: &TrapGeometry) -> Result<()> {
        self.validate()?;
        let (z0, ze) = (rf_null_height(geom), escape_height(geom));
        if !(self.x_min < 0.0 && self.x_max > 0.0 && self.z_min <= z0 && self.z_max >= ze) {
            return Err(Error::invalid("grid", "domain must enclose (0, z0) and (0, z_esc)"));
        }
        Ok(())
    }

    pub fn nx(&self) -> usize {
        ((self.x_max - self.x_min) / self.spacing + 1e-9).floor() as usize + 1
    }

    pub fn nz(&self) -> usize {
        ((self.z_max - self.z_min) / self.spacing + 1e-9).floor() as usize + 1
    }

    pub fn len(&self) -> usize {
        self.nx() * self.nz()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_area(&self) -> f64 {
        self.spacing * self.spacing
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx() + i
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        let nx = self.nx();
        (idx % nx, idx / nx)
    }

    #[inline]
    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        (self.x_min + i as f64 * self.spacing, self.z_min + j as f64 * self.spacing)
    }

    /// Cell whose center is nearest to `(x, z)`, if inside the grid.
    #[inline]
    pub fn locate(&self, x: f64, z: f64) -> Option<(usize, usize)> {
        let fi = ((x - self.x_min) / self.spacing).round();
        let fj = ((z - self.z_min) / self.spacing).round();
        if fi < 0.0 || fj < 0.0 {
            return None;
        }
        let (i, j) = (fi as usize, fj as usize);
        (i < self.nx() && j < self.nz()).then_some((i, j))
    }

    fn neighbours(&self, idx: usize) -> impl Iterator<Item = usize> {
        let (nx, nz) = (self.nx(), self.nz());
        let (i, j) = (idx % nx, idx / nx);
        let left = (i > 0).then(|| idx - 1);
        let right = (i + 1 < nx).then(|| idx + 1);
        let down = (j > 0).then(|| idx - nx);
        let up = (j + 1 < nz).then(|| idx + nx);
        [left, right, down, up].into_iter().flatten()
    }

    fn on_boundary(&self, idx: usize) -> bool {
        let (i, j) = self.coords(idx);
        i == 0 || j == 0 || i + 1 == self.nx() || j + 1 == self.nz()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeStage {
    Bare,
    Ke,
    KePi,
    KePiMm,
}

impl std::fmt::Display for VolumeStage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VolumeStage::Bare => "bare",
            VolumeStage::Ke => "ke",
            VolumeStage::KePi => "ke_pi",
            VolumeStage::KePiMm => "ke_pi_mm",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeMask {
    pub grid: GridSpec,
    pub occupancy: Vec<bool>,
    pub stage: VolumeStage,
    /// Kinetic energy (J) the mask was truncated at; zero for the bare stage.
    pub kinetic_energy: f64,
}

impl VolumeMask {
    fn empty(grid: GridSpec, stage: VolumeStage, kinetic_energy: f64) -> Self {
        Self { occupancy: vec![false; grid.len()], grid, stage, kinetic_energy }
    }

    pub fn count(&self) -> usize {
        self.occupancy.iter().filter(|&&b| b).count()
    }

    /// Occupied-cell count × h² (m²).
    pub fn area(&self) -> f64 {
        self.count() as f64 * self.grid.cell_area()
    }

    pub fn is_empty(&self) -> bool {
        !self.occupancy.iter().any(|&b| b)
    }

    pub fn contains_cell(&self, i: usize, j: usize) -> bool {
        self.occupancy[self.grid.index(i, j)]
    }

    pub fn contains_point(&self, x: f64, z: f64) -> bool {
        self.grid.locate(x, z).is_some_and(|(i, j)| self.contains_cell(i, j))
    }

    /// Cell-by-cell inclusion `self ⊆ other`.
    pub fn is_subset_of(&self, other: &VolumeMask) -> bool {
        self.occupancy.iter().zip(&other.occupancy).all(|(&a, &b)| !a || b)
    }

    pub fn occupied_centers(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.occupancy
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(idx, _)| {
                let (i, j) = self.grid.coords(idx);
                self.grid.center(i, j)
            })
    }

    /// Plain-text portable bitmap (`P1`), top row at the largest `z`.
    pub fn to_pbm(&self) -> String {
        let (nx, nz) = (self.grid.nx(), self.grid.nz());
        let mut s = String::with_capacity(nx * nz * 2 + 64);
        s.push_str("P1\n");
        s.push_str(&format!("# stage {} h {:e} x_min {:e} z_min {:e}\n", self.stage, self.grid.spacing, self.grid.x_min, self.grid.z_min));
        s.push_str(&format!("{nx} {nz}\n"));
        for j in (0..nz).rev() {
            let row: Vec<&str> = (0..nx).map(|i| if self.contains_cell(i, j) { "1" } else { "0" }).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    /// Parses the output of [`VolumeMask::to_pbm`] back onto `grid`.
    pub fn from_pbm(text: &str, grid: GridSpec, stage: VolumeStage, kinetic_energy: f64) -> Result<Self> {
        let mut tokens = text.lines().filter(|l| !l.trim_start().starts_with('#')).flat_map(str::split_whitespace);
        if tokens.next() != Some("P1") {
            return Err(Error::Config("bitmap must start with P1".into()));
        }
        let mut dim = || -> Result<usize> {
            tokens
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::Config("bitmap header is missing dimensions".into()))
        };
        let (nx, nz) = (dim()?, dim()?);
        if nx != grid.nx() || nz != grid.nz() {
            return Err(Error::Config(format!("bitmap is {nx}x{nz}, grid is {}x{}", grid.nx(), grid.nz())));
        }
        let mut mask = Self::empty(grid, stage, kinetic_energy);
        for j in (0..nz).rev() {
            for i in 0..nx {
                match tokens.next() {
                    Some("1") => mask.occupancy[grid.index(i, j)] = true,
                    Some("0") => {}
                    _ => return Err(Error::Config("bitmap body is truncated or malformed".into())),
                }
            }
        }
        Ok(mask)
    }

    /// CSV of occupied cell centers with header `x_m,z_m`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["x_m", "z_m"])?;
        for (x, z) in self.occupied_centers() {
            wtr.write_record([format!("{x:e}"), format!("{z:e}")])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Reads `x_m,z_m` rows written by [`VolumeMask::write_csv`].
pub fn read_mask_csv<R: std::io::Read>(r: R) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let (x, z): (f64, f64) = rec?;
        out.push((x, z));
    }
    Ok(out)
}

/// Drive-independent per-cell field data for one geometry and grid.
#[derive(Debug, Clone)]
pub struct FieldGrid {
    pub geom: TrapGeometry,
    pub grid: GridSpec,
    grad_sq: Vec<f64>,
    r2: Vec<f64>,
}

impl FieldGrid {
    pub fn new(geom: TrapGeometry, grid: GridSpec) -> Result<Self> {
        geom.validate()?;
        grid.validate_for(&geom)?;
        let (nx, nz) = (grid.nx(), grid.nz());
        let z0 = rf_null_height(&geom);
        let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..nz)
            .into_par_iter()
            .map(|j| {
                let mut g = Vec::with_capacity(nx);
                let mut r = Vec::with_capacity(nx);
                for i in 0..nx {
                    let (x, z) = grid.center(i, j);
                    let (gx, gz) = unit_gradient(&geom, x, z);
                    g.push(gx * gx + gz * gz);
                    r.push(x * x + (z - z0) * (z - z0));
                }
                (g, r)
            })
            .collect();
        let mut grad_sq = Vec::with_capacity(nx * nz);
        let mut r2 = Vec::with_capacity(nx * nz);
        for (g, r) in rows {
            grad_sq.extend(g);
            r2.extend(r);
        }
        Ok(Self { geom, grid, grad_sq, r2 })
    }

    pub fn default_for(geom: TrapGeometry) -> Result<Self> {
        Self::new(geom, GridSpec::default_for(&geom))
    }

    /// Total potential energy `U_tot` at every cell (J).
    pub fn total_potential(&self, drive: &DriveConfig) -> Vec<f64> {
        self.grad_sq
            .iter()
            .zip(&self.r2)
            .map(|(&g, &r)| pseudo_from_unit_grad_sq(drive, g) + dc_energy(drive, r))
            .collect()
    }

    pub fn null_cell(&self) -> usize {
        let (i, j) = self
            .grid
            .locate(0.0, rf_null_height(&self.geom))
            .expect("grid encloses the rf null");
        self.grid.index(i, j)
    }
}

/// The four nested masks of one (drive, KE) point.
#[derive(Debug, Clone)]
pub struct Cascade {
    pub bare: VolumeMask,
    pub ke: VolumeMask,
    pub ke_pi: VolumeMask,
    pub ke_pi_mm: VolumeMask,
}

impl Cascade {
    pub fn areas(&self) -> [f64; 4] {
        [self.bare.area(), self.ke.area(), self.ke_pi.area(), self.ke_pi_mm.area()]
    }
}

/// Potential map and depth for one drive point over a [`FieldGrid`].
#[derive(Debug, Clone)]
pub struct VolumeModel<'a> {
    pub field: &'a FieldGrid,
    pub drive: DriveConfig,
    /// `E_max` used to truncate the masks (J).
    pub depth: f64,
    potential: Vec<f64>,
    null: usize,
}

impl<'a> VolumeModel<'a> {
    pub fn new(field: &'a FieldGrid, drive: DriveConfig) -> Self {
        let depth = true_trap_depth(&field.geom, &drive);
        Self::with_depth(field, drive, depth)
    }

    /// Same potential map, but masks truncated at `depth` instead of the closed-form true depth.
    pub fn with_depth(field: &'a FieldGrid, drive: DriveConfig, depth: f64) -> Self {
        let potential = field.total_potential(&drive);
        Self { field, drive, depth, potential, null: field.null_cell() }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.field.grid
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn null_cell(&self) -> usize {
        self.null
    }

    /// 4-connected flood fill from the null cell over cells with `U_tot < limit`.
    fn flood(&self, limit: f64, stage: VolumeStage, ke: f64) -> VolumeMask {
        let grid = *self.grid();
        let mut mask = VolumeMask::empty(grid, stage, ke);
        if !(limit > 0.0) || !(self.potential[self.null] < limit) {
            return mask;
        }
        let mut queue = VecDeque::from([self.null]);
        mask.occupancy[self.null] = true;
        while let Some(c) = queue.pop_front() {
            for n in grid.neighbours(c) {
                if !mask.occupancy[n] && self.potential[n] < limit {
                    mask.occupancy[n] = true;
                    queue.push_back(n);
                }
            }
        }
        mask
    }

    pub fn bare(&self) -> VolumeMask {
        self.flood(self.depth, VolumeStage::Bare, 0.0)
    }

    pub fn ke(&self, kinetic_energy: f64) -> VolumeMask {
        self.flood(self.depth - kinetic_energy, VolumeStage::Ke, kinetic_energy)
    }

    pub fn pi(&self, mask: &VolumeMask, beams: &PIBeams) -> VolumeMask {
        pi_volume(mask, beams, &self.field.geom)
    }

    /// Filters `ke_pi` by the approximate trajectory test against `ke`.
    pub fn micromotion(&self, ke: &VolumeMask, ke_pi: &VolumeMask, traj: &TrajectoryConfig) -> VolumeMask {
        let grid = *self.grid();
        let geom = self.field.geom;
        let drive = self.drive;
        let starts: Vec<usize> = (0..grid.len()).filter(|&c| ke_pi.occupancy[c]).collect();
        let kept: Vec<bool> = starts
            .par_iter()
            .map(|&c| {
                let (i, j) = grid.coords(c);
                let (x, z) = grid.center(i, j);
                walk_approximate(&geom, &drive, x, z, traj, |px, pz| ke.contains_point(px, pz)).retained()
            })
            .collect();
        let mut admitted = vec![false; grid.len()];
        for (&c, &k) in starts.iter().zip(&kept) {
            admitted[c] = k;
        }
        let mut mask = VolumeMask::empty(grid, VolumeStage::KePiMm, ke.kinetic_energy);
        mask.occupancy = connected_from(&grid, self.null, &admitted);
        mask
    }

    pub fn cascade(&self, beams: &PIBeams, traj: &TrajectoryConfig, kinetic_energy: f64) -> Cascade {
        let bare = self.bare();
        let ke = self.ke(kinetic_energy);
        let ke_pi = self.pi(&ke, beams);
        let ke_pi_mm = self.micromotion(&ke, &ke_pi, traj);
        Cascade { bare, ke, ke_pi, ke_pi_mm }
    }

    /// Minimax level from the null: a cell belongs to the KE mask iff its
    /// level is below `depth - KE`. Cells outside the bare region are `∞`.
    pub fn ke_levels(&self) -> Vec<f64> {
        minimax_levels(self.grid(), self.null, |c| {
            let u = self.potential[c];
            if u < self.depth {
                u
            } else {
                f64::INFINITY
            }
        })
    }

    /// Encodes the micromotion-filtered masks for every KE at once.
    ///
    /// Each candidate cell walks one trajectory; its path level is the largest
    /// KE level visited. A second minimax over path levels restores
    /// connectivity to the null, giving a critical level per cell.
    pub fn stability_levels(&self, beams: &PIBeams, traj: &TrajectoryConfig) -> StabilityLevels {
        let grid = *self.grid();
        let n = grid.len();
        if !(self.depth > 0.0) {
            return StabilityLevels { levels: vec![f64::INFINITY; n], sorted: Vec::new(), depth: self.depth, grid };
        }
        let ke_levels = self.ke_levels();
        let geom = self.field.geom;
        let drive = self.drive;
        let z0 = rf_null_height(&geom);
        let w2 = beams.waist * beams.waist;
        let starts: Vec<usize> = (0..n)
            .filter(|&c| {
                if !ke_levels[c].is_finite() {
                    return false;
                }
                let (i, j) = grid.coords(c);
                let (x, z) = grid.center(i, j);
                x * x + (z - z0) * (z - z0) < w2
            })
            .collect();
        let path: Vec<f64> = starts
            .par_iter()
            .map(|&c| {
                let (i, j) = grid.coords(c);
                let (x, z) = grid.center(i, j);
                let mut worst = ke_levels[c];
                let out = walk_approximate(&geom, &drive, x, z, traj, |px, pz| {
                    match grid.locate(px, pz) {
                        Some((pi, pj)) => {
                            worst = worst.max(ke_levels[grid.index(pi, pj)]);
                            worst.is_finite()
                        }
                        None => false,
                    }
                });
                if out.retained() {
                    worst
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        let mut node = vec![f64::INFINITY; n];
        for (&c, &p) in starts.iter().zip(&path) {
            node[c] = p;
        }
        let levels = minimax_levels(&grid, self.null, |c| node[c]);
        let mut sorted: Vec<f64> = levels.iter().copied().filter(|l| l.is_finite()).collect();
        sorted.sort_by(f64::total_cmp);
        StabilityLevels { levels, sorted, depth: self.depth, grid }
    }

    /// Depth of the perturbed potential `U_tot + extra(x, z)` found by grid
    /// search: minimax escape level from the local minimum to the domain edge,
    /// minus the minimum. `None` when no interior minimum exists.
    pub fn numeric_depth<F>(&self, extra: F) -> Option<f64>
    where
        F: Fn(f64, f64) -> f64,
    {
        let grid = *self.grid();
        let pot: Vec<f64> = (0..grid.len())
            .map(|c| {
                let (i, j) = grid.coords(c);
                let (x, z) = grid.center(i, j);
                self.potential[c] + extra(x, z)
            })
            .collect();
        // descend to the local minimum
        let mut cur = self.null;
        loop {
            let best = grid.neighbours(cur).min_by(|&a, &b| pot[a].total_cmp(&pot[b]))?;
            if pot[best] < pot[cur] {
                cur = best;
            } else {
                break;
            }
        }
        if grid.on_boundary(cur) {
            return None;
        }
        let escape = escape_level(&grid, cur, &pot)?;
        let depth = escape - pot[cur];
        (depth > 0.0).then_some(depth)
    }
}

/// Per-cell critical levels for the micromotion-filtered masks of one drive point.
#[derive(Debug, Clone)]
pub struct StabilityLevels {
    levels: Vec<f64>,
    sorted: Vec<f64>,
    depth: f64,
    grid: GridSpec,
}

impl StabilityLevels {
    pub fn depth(&self) -> f64 {
        self.depth
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Whether cell `c` lies in the micromotion-filtered mask at `kinetic_energy`.
    #[inline]
    pub fn contains(&self, c: usize, kinetic_energy: f64) -> bool {
        self.levels[c] < self.depth - kinetic_energy
    }

    pub fn area(&self, kinetic_energy: f64) -> f64 {
        let limit = self.depth - kinetic_energy;
        self.sorted.partition_point(|&l| l < limit) as f64 * self.grid.cell_area()
    }

    pub fn mask(&self, kinetic_energy: f64) -> VolumeMask {
        let occupancy = (0..self.levels.len()).map(|c| self.contains(c, kinetic_energy)).collect();
        VolumeMask { grid: self.grid, occupancy, stage: VolumeStage::KePiMm, kinetic_energy }
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Level(f64, usize);

impl Eq for Level {}

impl Ord for Level {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on the level, ties by index for determinism
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Level {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// For every cell, the smallest achievable maximum of `value` over 4-connected
/// paths from `start`. Infinite values are impassable.
fn minimax_levels<F: Fn(usize) -> f64>(grid: &GridSpec, start: usize, value: F) -> Vec<f64> {
    let mut level = vec![f64::INFINITY; grid.len()];
    let v0 = value(start);
    if !v0.is_finite() {
        return level;
    }
    level[start] = v0;
    let mut heap = BinaryHeap::from([Level(v0, start)]);
    while let Some(Level(l, c)) = heap.pop() {
        if l > level[c] {
            continue;
        }
        for n in grid.neighbours(c) {
            let v = value(n);
            if !v.is_finite() {
                continue;
            }
            let cand = l.max(v);
            if cand < level[n] {
                level[n] = cand;
                heap.push(Level(cand, n));
            }
        }
    }
    level
}

/// Lowest level at which the basin of `start` reaches the grid boundary.
fn escape_level(grid: &GridSpec, start: usize, pot: &[f64]) -> Option<f64> {
    let mut level = vec![f64::INFINITY; grid.len()];
    level[start] = pot[start];
    let mut heap = BinaryHeap::from([Level(pot[start], start)]);
    while let Some(Level(l, c)) = heap.pop() {
        if l > level[c] {
            continue;
        }
        if grid.on_boundary(c) {
            return Some(l);
        }
        for n in grid.neighbours(c) {
            let cand = l.max(pot[n]);
            if cand < level[n] {
                level[n] = cand;
                heap.push(Level(cand, n));
            }
        }
    }
    None
}

fn connected_from(grid: &GridSpec, start: usize, admitted: &[bool]) -> Vec<bool> {
    let mut out = vec![false; grid.len()];
    if !admitted[start] {
        return out;
    }
    out[start] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(c) = queue.pop_front() {
        for n in grid.neighbours(c) {
            if admitted[n] && !out[n] {
                out[n] = true;
                queue.push_back(n);
            }
        }
    }
    out
}

pub fn bare_volume(geom: &TrapGeometry, drive: &DriveConfig, grid: &GridSpec) -> Result<VolumeMask> {
    let field = FieldGrid::new(*geom, *grid)?;
    Ok(VolumeModel::new(&field, *drive).bare())
}

pub fn ke_volume(geom: &TrapGeometry, drive: &DriveConfig, grid: &GridSpec, kinetic_energy: f64) -> Result<VolumeMask> {
    if !(kinetic_energy >= 0.0) {
        return Err(Error::invalid("kinetic_energy", "must be non-negative"));
    }
    let field = FieldGrid::new(*geom, *grid)?;
    Ok(VolumeModel::new(&field, *drive).ke(kinetic_energy))
}

/// Intersects a mask with the PI beam disk of radius `w₀` centered on the rf null.
pub fn pi_volume(mask: &VolumeMask, beams: &PIBeams, geom: &TrapGeometry) -> VolumeMask {
    let z0 = rf_null_height(geom);
    let w2 = beams.waist * beams.waist;
    let grid = mask.grid;
    let inside: Vec<bool> = mask
        .occupancy
        .iter()
        .enumerate()
        .map(|(c, &occ)| {
            occ && {
                let (i, j) = grid.coords(c);
                let (x, z) = grid.center(i, j);
                x * x + (z - z0) * (z - z0) < w2
            }
        })
        .collect();
    let occupancy = match grid.locate(0.0, z0) {
        Some((i, j)) => connected_from(&grid, grid.index(i, j), &inside),
        None => vec![false; grid.len()],
    };
    VolumeMask { grid, occupancy, stage: VolumeStage::KePi, kinetic_energy: mask.kinetic_energy }
}

pub fn micromotion_volume(
    mask: &VolumeMask,
    geom: &TrapGeometry,
    drive: &DriveConfig,
    grid: &GridSpec,
    traj: &TrajectoryConfig,
) -> Result<VolumeMask> {
    if mask.stage != VolumeStage::KePi {
        return Err(Error::invalid("mask", format!("expected a ke_pi mask, got {}", mask.stage)));
    }
    traj.validate()?;
    let field = FieldGrid::new(*geom, *grid)?;
    let model = VolumeModel::new(&field, *drive);
    let ke = model.ke(mask.kinetic_energy);
    Ok(model.micromotion(&ke, mask, traj))
}

pub fn volume_cascade(
    geom: &TrapGeometry,
    drive: &DriveConfig,
    beams: &PIBeams,
    grid: &GridSpec,
    traj: &TrajectoryConfig,
    kinetic_energy: f64,
) -> Result<Cascade> {
    traj.validate()?;
    if !(kinetic_energy >= 0.0) {
        return Err(Error::invalid("kinetic_energy", "must be non-negative"));
    }
    let field = FieldGrid::new(*geom, *grid)?;
    Ok(VolumeModel::new(&field, *drive).cascade(beams, traj, kinetic_energy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::species::{ev_to_joules, IonSpecies};
    use std::f64::consts::TAU;

    fn mf(v: f64) -> DriveConfig {
        DriveConfig::new(v, TAU * 40e6, TAU * 500e3, IonSpecies::ba138()).unwrap()
    }

    fn coarse() -> FieldGrid {
        let g = TrapGeometry::microfab();
        FieldGrid::new(g, GridSpec::with_spacing(&g, g.rf_null_height() / 50.0)).unwrap()
    }

    #[test]
    fn grid_indexing_round_trips() {
        let g = GridSpec::new(-1.0, 1.0, 0.1, 2.0, 0.1).unwrap();
        assert_eq!(g.nx(), 21);
        assert_eq!(g.nz(), 20);
        let (i, j) = g.locate(0.04, 1.06).unwrap();
        assert_eq!(g.center(i, j), (g.x_min + 10.0 * 0.1, g.z_min + 10.0 * 0.1));
        assert_eq!(g.coords(g.index(i, j)), (i, j));
        assert!(g.locate(5.0, 1.0).is_none());
        assert!(GridSpec::new(-1.0, 1.0, 0.0, 2.0, 0.1).is_err());
    }

    #[test]
    fn default_grid_encloses_trap() {
        for g in [TrapGeometry::pcb(), TrapGeometry::microfab()] {
            GridSpec::default_for(&g).validate_for(&g).unwrap();
        }
        let g = TrapGeometry::microfab();
        let small = GridSpec::new(-1e-5, 1e-5, 1e-6, 8e-5, 1e-6).unwrap();
        assert!(small.validate_for(&g).is_err());
    }

    #[test]
    fn untrappable_gives_empty_masks() {
        let field = coarse();
        let m = VolumeModel::new(&field, mf(40.0));
        assert!(m.depth < 0.0);
        assert_eq!(m.bare().area(), 0.0);
        assert_eq!(m.bare().stage, VolumeStage::Bare);
    }

    #[test]
    fn ke_limits() {
        let field = coarse();
        let m = VolumeModel::new(&field, mf(100.0));
        assert_eq!(m.ke(0.0).occupancy, m.bare().occupancy);
        assert_eq!(m.ke(m.depth).area(), 0.0);
        let mut prev = f64::INFINITY;
        for k in 0..50 {
            let a = m.ke(m.depth * k as f64 / 49.0).area();
            assert!(a <= prev);
            prev = a;
        }
    }

    #[test]
    fn pi_disk_limits() {
        let field = coarse();
        let m = VolumeModel::new(&field, mf(100.0));
        let ke = m.ke(ev_to_joules(0.01));
        let wide = PIBeams { waist: 1.0, ..PIBeams::reference() };
        assert_eq!(m.pi(&ke, &wide).occupancy, ke.occupancy);
        let none = PIBeams { waist: 0.0, ..PIBeams::reference() };
        assert_eq!(m.pi(&ke, &none).area(), 0.0);
    }

    #[test]
    fn ke_levels_reproduce_flood_fill() {
        let field = coarse();
        let m = VolumeModel::new(&field, mf(120.0));
        let levels = m.ke_levels();
        for frac in [0.0, 0.2, 0.5, 0.9] {
            let ke = frac * m.depth;
            let flood = m.ke(ke);
            let from_levels: Vec<bool> = levels.iter().map(|&l| l < m.depth - ke).collect();
            assert_eq!(flood.occupancy, from_levels, "frac {frac}");
        }
    }

    #[test]
    fn stability_levels_reproduce_explicit_filter() {
        let field = coarse();
        let beams = PIBeams::reference();
        let traj = TrajectoryConfig::default();
        for v in [80.0, 140.0] {
            let m = VolumeModel::new(&field, mf(v));
            let levels = m.stability_levels(&beams, &traj);
            for frac in [0.0, 0.3, 0.7] {
                let ke = frac * m.depth;
                let c = m.cascade(&beams, &traj, ke);
                assert_eq!(c.ke_pi_mm.occupancy, levels.mask(ke).occupancy, "v {v} frac {frac}");
                assert!((levels.area(ke) - c.ke_pi_mm.area()).abs() < 1e-24);
            }
        }
    }

    #[test]
    fn mask_text_round_trip() {
        let field = coarse();
        let m = VolumeModel::new(&field, mf(100.0));
        let bare = m.bare();
        let back = VolumeMask::from_pbm(&bare.to_pbm(), bare.grid, VolumeStage::Bare, 0.0).unwrap();
        assert_eq!(back, bare);
        let mut buf = Vec::new();
        bare.write_csv(&mut buf).unwrap();
        let pts = read_mask_csv(buf.as_slice()).unwrap();
        assert_eq!(pts.len(), bare.count());
        assert!(VolumeMask::from_pbm("P2\n1 1\n0\n", bare.grid, VolumeStage::Bare, 0.0).is_err());
    }

    #[test]
    fn stage_checked_for_micromotion() {
        let g = TrapGeometry::microfab();
        let field = coarse();
        let m = VolumeModel::new(&field, mf(100.0));
        let bare = m.bare();
        let r = micromotion_volume(&bare, &g, &mf(100.0), &field.grid, &TrajectoryConfig::default());
        assert!(r.is_err());
    }

    #[test]
    fn unperturbed_numeric_depth_bounds_closed_form() {
        // the centered DC quadrupole lifts the saddle above the closed-form depth
        let field = coarse();
        let free = DriveConfig { omega_ax: 0.0, ..mf(100.0) };
        let m = VolumeModel::new(&field, free);
        let d = m.numeric_depth(|_, _| 0.0).unwrap();
        assert!((d - m.depth).abs() < 0.02 * m.depth, "{d} vs {}", m.depth);
        let m = VolumeModel::new(&field, mf(100.0));
        assert!(m.numeric_depth(|_, _| 0.0).unwrap() > m.depth);
    }
}
