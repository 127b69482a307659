//! Netlist and physical placement of an N-stage TMR shift register.
//!
//! Every stage owns four cells (three flip-flops and a voter) placed in one
//! row. Stages fill a row left to right and wrap after
//! [`GeometryParams::stages_per_row`]. Cell ids are `4 * stage + kind index`
//! for built layouts; imported layouts may carry any unique ids.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CellKind {
    #[serde(rename = "FF1")]
    Ff1,
    #[serde(rename = "FF2")]
    Ff2,
    #[serde(rename = "FF3")]
    Ff3,
    #[serde(rename = "VOTER")]
    Voter,
}

impl CellKind {
    pub const ALL: [CellKind; 4] = [CellKind::Ff1, CellKind::Ff2, CellKind::Ff3, CellKind::Voter];

    pub fn index(self) -> usize {
        match self {
            CellKind::Ff1 => 0,
            CellKind::Ff2 => 1,
            CellKind::Ff3 => 2,
            CellKind::Voter => 3,
        }
    }

    /// Flip-flop slot 0..3, `None` for the voter.
    pub fn ff_index(self) -> Option<usize> {
        match self {
            CellKind::Voter => None,
            k => Some(k.index()),
        }
    }

    pub fn is_ff(self) -> bool {
        self != CellKind::Voter
    }

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Ff1 => "FF1",
            CellKind::Ff2 => "FF2",
            CellKind::Ff3 => "FF3",
            CellKind::Voter => "VOTER",
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CellId(pub u32);

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// One placed cell. Lengths are micrometers, `(x, y)` is the lower-left corner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub id: CellId,
    pub stage: usize,
    pub kind: CellKind,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    /// Fraction of incident power blocked by metal fill above the cell.
    pub occlusion: f64,
}

impl Cell {
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn centroid(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    fn overlaps(&self, other: &Cell) -> bool {
        self.x < other.x + other.w
            && other.x < self.x + self.w
            && self.y < other.y + other.h
            && other.y < self.y + self.h
    }
}

/// Placement parameters. The defaults are plausible 130 nm standard-cell
/// magnitudes, not measured dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometryParams {
    pub ff_width_um: f64,
    pub voter_width_um: f64,
    pub cell_height_um: f64,
    pub intra_cell_gap_um: f64,
    pub row_pitch_um: f64,
    pub stages_per_row: usize,
    pub cell_order: [CellKind; 4],
}

impl Default for GeometryParams {
    fn default() -> Self {
        GeometryParams {
            ff_width_um: 10.0,
            voter_width_um: 6.0,
            cell_height_um: 3.9,
            intra_cell_gap_um: 0.5,
            row_pitch_um: 12.0,
            stages_per_row: 32,
            cell_order: CellKind::ALL,
        }
    }
}

impl GeometryParams {
    pub fn validate(&self) -> Result<()> {
        let lengths = [
            ("geometry.ff_width_um", self.ff_width_um),
            ("geometry.voter_width_um", self.voter_width_um),
            ("geometry.cell_height_um", self.cell_height_um),
            ("geometry.intra_cell_gap_um", self.intra_cell_gap_um),
            ("geometry.row_pitch_um", self.row_pitch_um),
        ];
        for (field, v) in lengths {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(field, format!("must be a positive length, got {v}")));
            }
        }
        if self.stages_per_row == 0 {
            return Err(Error::invalid("geometry.stages_per_row", "must be at least 1"));
        }
        if self.row_pitch_um < self.cell_height_um {
            return Err(Error::invalid(
                "geometry.row_pitch_um",
                "must be at least cell_height_um or rows overlap",
            ));
        }
        let mut seen = [false; 4];
        for k in self.cell_order {
            if core::mem::replace(&mut seen[k.index()], true) {
                return Err(Error::invalid(
                    "geometry.cell_order",
                    "must list FF1, FF2, FF3 and VOTER exactly once",
                ));
            }
        }
        Ok(())
    }

    pub fn width_of(&self, kind: CellKind) -> f64 {
        if kind.is_ff() {
            self.ff_width_um
        } else {
            self.voter_width_um
        }
    }

    /// Horizontal distance between the left edges of adjacent stages.
    pub fn stage_pitch_um(&self) -> f64 {
        3.0 * (self.ff_width_um + self.intra_cell_gap_um) + self.voter_width_um + self.intra_cell_gap_um
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOcclusion {
    pub id: CellId,
    pub occlusion: f64,
}

/// How metal-fill occlusion is assigned to cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OcclusionSpec {
    Uniform { value: f64 },
    PerCell {
        #[serde(default)]
        default: f64,
        cells: Vec<CellOcclusion>,
    },
    /// Each cell independently receives `occlusion` with `probability`, else 0.
    RandomMask { probability: f64, occlusion: f64, seed: u64 },
}

impl Default for OcclusionSpec {
    fn default() -> Self {
        OcclusionSpec::Uniform { value: 0.0 }
    }
}

fn check_fraction(field: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must lie in [0, 1], got {v}")))
    }
}

impl OcclusionSpec {
    /// Occlusion 1.0 over the three flip-flops of each listed stage.
    pub fn blocked_ffs(stages: &[usize]) -> Self {
        let cells = stages
            .iter()
            .flat_map(|&s| (0..3).map(move |k| CellOcclusion { id: CellId((4 * s + k) as u32), occlusion: 1.0 }))
            .collect();
        OcclusionSpec::PerCell { default: 0.0, cells }
    }

    fn validate(&self) -> Result<()> {
        match self {
            OcclusionSpec::Uniform { value } => check_fraction("occlusion.value", *value),
            OcclusionSpec::PerCell { default, cells } => {
                check_fraction("occlusion.default", *default)?;
                cells.iter().try_for_each(|c| check_fraction("occlusion.cells", c.occlusion))
            }
            OcclusionSpec::RandomMask { probability, occlusion, .. } => {
                check_fraction("occlusion.probability", *probability)?;
                check_fraction("occlusion.occlusion", *occlusion)
            }
        }
    }
}

/// Intensity profile of the illuminated spot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpotProfile {
    /// Uniform disk of the given diameter.
    #[default]
    Uniform,
    /// Gaussian with the diameter taken as the 1/e² width, peak normalized to 1.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayoutRecord {
    stages: usize,
    geometry: GeometryParams,
    cells: Vec<Cell>,
}

/// Immutable register layout. Cells are kept sorted by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LayoutRecord", into = "LayoutRecord")]
pub struct RegisterLayout {
    stages: usize,
    geometry: GeometryParams,
    cells: Vec<Cell>,
    /// Per stage, positions into `cells` indexed by `CellKind::index`.
    stage_cells: Vec<[u32; 4]>,
}

impl TryFrom<LayoutRecord> for RegisterLayout {
    type Error = Error;

    fn try_from(r: LayoutRecord) -> Result<Self> {
        RegisterLayout::from_parts(r.stages, r.geometry, r.cells)
    }
}

impl From<RegisterLayout> for LayoutRecord {
    fn from(l: RegisterLayout) -> Self {
        LayoutRecord { stages: l.stages, geometry: l.geometry, cells: l.cells }
    }
}

/// Builds an N-stage register with the given placement and occlusion.
pub fn build_register(stages: usize, geometry: GeometryParams, occlusion: &OcclusionSpec) -> Result<RegisterLayout> {
    if stages == 0 {
        return Err(Error::invalid("stages", "must be at least 1"));
    }
    geometry.validate()?;
    occlusion.validate()?;

    let pitch = geometry.stage_pitch_um();
    let mut cells = Vec::with_capacity(4 * stages);
    for stage in 0..stages {
        let col = stage % geometry.stages_per_row;
        let row = stage / geometry.stages_per_row;
        let y = row as f64 * geometry.row_pitch_um;
        let mut x = col as f64 * pitch;
        let mut placed = [(0.0, 0.0); 4];
        for kind in geometry.cell_order {
            let w = geometry.width_of(kind);
            placed[kind.index()] = (x, w);
            x += w + geometry.intra_cell_gap_um;
        }
        for kind in CellKind::ALL {
            let (x, w) = placed[kind.index()];
            cells.push(Cell {
                id: CellId((4 * stage + kind.index()) as u32),
                stage,
                kind,
                x,
                y,
                w,
                h: geometry.cell_height_um,
                occlusion: 0.0,
            });
        }
    }

    apply_occlusion(&mut cells, occlusion)?;

    let stage_cells = (0..stages)
        .map(|s| core::array::from_fn(|k| (4 * s + k) as u32))
        .collect();
    Ok(RegisterLayout { stages, geometry, cells, stage_cells })
}

fn apply_occlusion(cells: &mut [Cell], spec: &OcclusionSpec) -> Result<()> {
    spec.validate()?;
    match spec {
        OcclusionSpec::Uniform { value } => cells.iter_mut().for_each(|c| c.occlusion = *value),
        OcclusionSpec::PerCell { default, cells: per_cell } => {
            cells.iter_mut().for_each(|c| c.occlusion = *default);
            for entry in per_cell {
                let pos = cells
                    .binary_search_by_key(&entry.id, |c| c.id)
                    .map_err(|_| Error::UnknownCell(entry.id))?;
                cells[pos].occlusion = entry.occlusion;
            }
        }
        OcclusionSpec::RandomMask { probability, occlusion, seed } => {
            let mut rng = rng::stream(*seed, 0);
            for c in cells.iter_mut() {
                c.occlusion = if rng::unit_f64(&mut rng) < *probability { *occlusion } else { 0.0 };
            }
        }
    }
    Ok(())
}

impl RegisterLayout {
    /// Validates and indexes an externally supplied cell list.
    pub fn from_parts(stages: usize, geometry: GeometryParams, mut cells: Vec<Cell>) -> Result<Self> {
        if stages == 0 {
            return Err(Error::invalid("stages", "must be at least 1"));
        }
        geometry.validate()?;
        if cells.len() != 4 * stages {
            return Err(Error::invalid(
                "cells",
                format!("expected {} cells for {stages} stages, found {}", 4 * stages, cells.len()),
            ));
        }
        cells.sort_by_key(|c| c.id);
        if let Some(w) = cells.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::invalid("cells", format!("duplicate cell id {}", w[0].id)));
        }
        let mut stage_cells = alloc::vec![[u32::MAX; 4]; stages];
        for (pos, c) in cells.iter().enumerate() {
            if !(c.w.is_finite() && c.w > 0.0 && c.h.is_finite() && c.h > 0.0) {
                return Err(Error::invalid("cells", format!("cell {} has a non-positive size", c.id)));
            }
            if !(c.x.is_finite() && c.y.is_finite()) {
                return Err(Error::invalid("cells", format!("cell {} has a non-finite position", c.id)));
            }
            check_fraction("cells.occlusion", c.occlusion)?;
            let slot = stage_cells
                .get_mut(c.stage)
                .ok_or(Error::StageOutOfRange { stage: c.stage, stages })?;
            if slot[c.kind.index()] != u32::MAX {
                return Err(Error::invalid(
                    "cells",
                    format!("stage {} has more than one {} cell", c.stage, c.kind),
                ));
            }
            slot[c.kind.index()] = pos as u32;
        }
        for (s, slot) in stage_cells.iter().enumerate() {
            let first = &cells[slot[0] as usize];
            if slot[1..].iter().any(|&p| {
                let c = &cells[p as usize];
                c.y != first.y || c.h != first.h
            }) {
                return Err(Error::invalid("cells", format!("cells of stage {s} are not in one row")));
            }
        }
        let layout = RegisterLayout { stages, geometry, cells, stage_cells };
        if let Some((a, b)) = layout.find_overlap() {
            return Err(Error::invalid("cells", format!("cells {a} and {b} overlap")));
        }
        Ok(layout)
    }

    fn find_overlap(&self) -> Option<(CellId, CellId)> {
        let mut by_x: Vec<&Cell> = self.cells.iter().collect();
        by_x.sort_by(|a, b| a.x.total_cmp(&b.x));
        for (i, a) in by_x.iter().enumerate() {
            for b in &by_x[i + 1..] {
                if b.x >= a.x + a.w {
                    break;
                }
                if a.overlaps(b) {
                    return Some((a.id, b.id));
                }
            }
        }
        None
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn geometry(&self) -> &GeometryParams {
        &self.geometry
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn ff_count(&self) -> usize {
        self.cells.iter().filter(|c| c.kind.is_ff()).count()
    }

    pub fn voter_count(&self) -> usize {
        self.cells.len() - self.ff_count()
    }

    pub fn cell(&self, id: CellId) -> Option<&Cell> {
        match self.cells.get(id.0 as usize) {
            Some(c) if c.id == id => Some(c),
            _ => self
                .cells
                .binary_search_by_key(&id, |c| c.id)
                .ok()
                .map(|i| &self.cells[i]),
        }
    }

    pub fn stage_cell(&self, stage: usize, kind: CellKind) -> Result<&Cell> {
        let slot = self
            .stage_cells
            .get(stage)
            .ok_or(Error::StageOutOfRange { stage, stages: self.stages })?;
        Ok(&self.cells[slot[kind.index()] as usize])
    }

    /// Axis-aligned bounding box `(x0, y0, x1, y1)` of all cells of a stage.
    pub fn stage_bbox(&self, stage: usize) -> Result<(f64, f64, f64, f64)> {
        let mut bbox = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for kind in CellKind::ALL {
            let c = self.stage_cell(stage, kind)?;
            bbox.0 = bbox.0.min(c.x);
            bbox.1 = bbox.1.min(c.y);
            bbox.2 = bbox.2.max(c.x + c.w);
            bbox.3 = bbox.3.max(c.y + c.h);
        }
        Ok(bbox)
    }

    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        self.cells.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |b, c| (b.0.min(c.x), b.1.min(c.y), b.2.max(c.x + c.w), b.3.max(c.y + c.h)),
        )
    }

    /// Same cells with a new occlusion assignment.
    pub fn with_occlusion(&self, spec: &OcclusionSpec) -> Result<Self> {
        let mut l = self.clone();
        apply_occlusion(&mut l.cells, spec)?;
        Ok(l)
    }

    /// Fraction of one cell covered by the spot; `None` for an unknown id.
    pub fn coverage(&self, id: CellId, center: (f64, f64), diameter: f64, profile: SpotProfile) -> Option<f64> {
        let c = self.cell(id)?;
        if diameter.is_nan() || diameter <= 0.0 {
            return Some(0.0);
        }
        Some(match profile {
            SpotProfile::Uniform => disk_rect_fraction(c, center, diameter / 2.0),
            SpotProfile::Gaussian => gaussian_rect_fraction(c, center, diameter / 2.0),
        })
    }

    /// Uniform-disk spatial query; see [`RegisterLayout::cells_hit_with`].
    pub fn cells_hit(&self, center: (f64, f64), diameter: f64) -> Vec<(CellId, f64)> {
        self.cells_hit_with(center, diameter, SpotProfile::Uniform)
    }

    /// Every cell touched by the spot with the fraction of the cell it covers,
    /// ordered by cell id. For a uniform disk the fraction is intersection
    /// area over cell area; for a Gaussian it is the mean normalized
    /// intensity over the cell.
    pub fn cells_hit_with(&self, center: (f64, f64), diameter: f64, profile: SpotProfile) -> Vec<(CellId, f64)> {
        if diameter.is_nan() || diameter <= 0.0 {
            return Vec::new();
        }
        let reach = match profile {
            SpotProfile::Uniform => diameter / 2.0,
            SpotProfile::Gaussian => 3.0 * diameter,
        };
        self.cells
            .iter()
            .filter(|c| {
                c.x - reach < center.0 && center.0 < c.x + c.w + reach && c.y - reach < center.1 && center.1 < c.y + c.h + reach
            })
            .filter_map(|c| {
                let f = match profile {
                    SpotProfile::Uniform => disk_rect_fraction(c, center, diameter / 2.0),
                    SpotProfile::Gaussian => gaussian_rect_fraction(c, center, diameter / 2.0),
                };
                (f > 1e-12).then_some((c.id, f))
            })
            .collect()
    }
}

/// Signed area of the disk of radius `r` centered at the origin intersected
/// with the rectangle spanned by the origin and `(x, y)`.
fn quadrant_area(x: f64, y: f64, r: f64) -> f64 {
    let sign = x.signum() * y.signum();
    let x = libm::fabs(x).min(r);
    let y = libm::fabs(y).min(r);
    if x * x + y * y <= r * r {
        return sign * x * y;
    }
    let prim = |t: f64| 0.5 * (t * libm::sqrt((r * r - t * t).max(0.0)) + r * r * libm::asin((t / r).clamp(-1.0, 1.0)));
    let xs = libm::sqrt((r * r - y * y).max(0.0));
    sign * (xs * y + prim(x) - prim(xs))
}

fn disk_rect_fraction(c: &Cell, center: (f64, f64), r: f64) -> f64 {
    let (x0, x1) = (c.x - center.0, c.x + c.w - center.0);
    let (y0, y1) = (c.y - center.1, c.y + c.h - center.1);
    let far_x = libm::fabs(x0).max(libm::fabs(x1));
    let far_y = libm::fabs(y0).max(libm::fabs(y1));
    if far_x * far_x + far_y * far_y <= r * r {
        return 1.0;
    }
    let area = quadrant_area(x1, y1, r) - quadrant_area(x0, y1, r) - quadrant_area(x1, y0, r) + quadrant_area(x0, y0, r);
    (area / c.area()).clamp(0.0, 1.0)
}

fn gaussian_rect_fraction(c: &Cell, center: (f64, f64), w: f64) -> f64 {
    // I(r) = exp(-2 r^2 / w^2), separable in x and y.
    let k = core::f64::consts::SQRT_2 / w;
    let span = |a: f64, b: f64| libm::erf(k * b) - libm::erf(k * a);
    let ix = span(c.x - center.0, c.x + c.w - center.0);
    let iy = span(c.y - center.1, c.y + c.h - center.1);
    let integral = core::f64::consts::PI * w * w / 8.0 * ix * iy;
    (integral / c.area()).clamp(0.0, 1.0)
}
