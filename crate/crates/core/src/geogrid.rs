//! Hexagonal binning of GPS fixes, dwell-time ranking of cells, and
//! pseudo-labelling of audio segments by the cell they were recorded in.
//!
//! Degrees are treated as planar coordinates: the edge length is a raw
//! degree magnitude, longitude is the horizontal axis and latitude the
//! vertical one. Hexagons are pointy-top in axial `(q, r)` coordinates.

use std::collections::HashMap;
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{SegmentRecord, SEGMENT_SECONDS};
use crate::io;

pub const DEFAULT_EDGE: f64 = 0.0015;
pub const DEFAULT_TOP_K: usize = 10;
pub const DEFAULT_MAX_GAP: f64 = 300.0;
pub const DEFAULT_TOLERANCE: f64 = 120.0;

const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpsFix {
    pub user_id: String,
    pub timestamp: DateTime<Utc>,
    pub lat: f64,
    pub lon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub situational_label: Option<String>,
}

/// Axial hexagon coordinate. Cube coordinates are `(q, -q - r, r)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HexCoord {
    pub q: i64,
    pub r: i64,
}

impl HexCoord {
    pub fn new(q: i64, r: i64) -> Self {
        HexCoord { q, r }
    }

    pub fn cube(self) -> (i64, i64, i64) {
        (self.q, -self.q - self.r, self.r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedCell {
    pub cell: HexCoord,
    pub dwell_seconds: f64,
    pub rank: usize,
    pub majority_situational_label: Option<String>,
}

/// Top cells by dwell time, rank 1 first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CellRanking {
    pub cells: Vec<RankedCell>,
}

impl CellRanking {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn rank_of(&self, cell: HexCoord) -> Option<&RankedCell> {
        self.cells.iter().find(|c| c.cell == cell)
    }

    /// Writes `rank,q,r,dwell_seconds,centroid_lat,centroid_lon,situational_label`.
    pub fn write_csv(&self, path: &Path, edge: f64) -> Result<()> {
        let mut w = io::csv_writer(path)?;
        w.write_record([
            "rank",
            "q",
            "r",
            "dwell_seconds",
            "centroid_lat",
            "centroid_lon",
            "situational_label",
        ])?;
        for c in &self.cells {
            let (lat, lon) = hex_centroid(c.cell, edge);
            w.write_record([
                c.rank.to_string(),
                c.cell.q.to_string(),
                c.cell.r.to_string(),
                io::fmt_f64(c.dwell_seconds),
                io::fmt_f64(lat),
                io::fmt_f64(lon),
                c.majority_situational_label.clone().unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoLabeledSegment {
    pub segment_id: String,
    pub cell_rank: Option<usize>,
    pub situational_label: Option<String>,
}

pub fn write_labels_csv(path: &Path, labels: &[PseudoLabeledSegment]) -> Result<()> {
    let mut w = io::csv_writer(path)?;
    w.write_record(["segment_id", "cell_rank", "situational_label"])?;
    for l in labels {
        w.write_record([
            l.segment_id.clone(),
            l.cell_rank.map(|r| r.to_string()).unwrap_or_default(),
            l.situational_label.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_labels_csv(path: &Path) -> Result<Vec<PseudoLabeledSegment>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(io::open(path)?);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(Error::Parse(format!(
                "{}: expected 3 columns, found {}",
                path.display(),
                rec.len()
            )));
        }
        let cell_rank = match rec[1].trim() {
            "" => None,
            s => Some(
                s.parse()
                    .map_err(|_| Error::Parse(format!("{}: bad cell_rank `{s}`", path.display())))?,
            ),
        };
        let label = rec[2].trim();
        out.push(PseudoLabeledSegment {
            segment_id: rec[0].to_string(),
            cell_rank,
            situational_label: (!label.is_empty()).then(|| label.to_string()),
        });
    }
    Ok(out)
}

pub fn load_fixes(path: &Path) -> Result<Vec<GpsFix>> {
    let fixes: Vec<GpsFix> = io::read_jsonl(path)?;
    for f in &fixes {
        check_lat_lon(f.lat, f.lon)?;
    }
    Ok(fixes)
}

fn check_lat_lon(lat: f64, lon: f64) -> Result<()> {
    if !(-90.0..=90.0).contains(&lat) {
        return Err(Error::Input(format!("latitude {lat} outside [-90, 90]")));
    }
    if !(-180.0..=180.0).contains(&lon) {
        return Err(Error::Input(format!("longitude {lon} outside [-180, 180]")));
    }
    Ok(())
}

/// Cube rounding of fractional axial coordinates. The coordinate with the
/// largest rounding error is recomputed from the other two; exact ties
/// prefer x, then y, then z.
fn cube_round(fq: f64, fr: f64) -> HexCoord {
    let (fx, fy, fz) = (fq, -fq - fr, fr);
    let (mut rx, mut ry, mut rz) = (fx.round(), fy.round(), fz.round());
    let (dx, dy, dz) = ((rx - fx).abs(), (ry - fy).abs(), (rz - fz).abs());
    if dx >= dy && dx >= dz {
        rx = -ry - rz;
    } else if dy >= dz {
        ry = -rx - rz;
    } else {
        rz = -rx - ry;
    }
    debug_assert_eq!(rx + ry + rz, 0.0);
    HexCoord::new(rx as i64, rz as i64)
}

/// Pointy-top hexagon containing `(lon, lat)` for hexagons of the given edge.
pub fn hex_index(lat: f64, lon: f64, edge: f64) -> Result<HexCoord> {
    if !(edge > 0.0) || !edge.is_finite() {
        return Err(Error::Input(format!("hex edge must be positive, got {edge}")));
    }
    check_lat_lon(lat, lon)?;
    let fq = (SQRT3 / 3.0 * lon - lat / 3.0) / edge;
    let fr = (2.0 / 3.0 * lat) / edge;
    Ok(cube_round(fq, fr))
}

/// Centre of a cell as `(lat, lon)`.
pub fn hex_centroid(c: HexCoord, edge: f64) -> (f64, f64) {
    let (q, r) = (c.q as f64, c.r as f64);
    let lon = edge * (SQRT3 * q + SQRT3 / 2.0 * r);
    let lat = edge * 1.5 * r;
    (lat, lon)
}

#[derive(Default)]
struct CellAcc {
    dwell: f64,
    first_visit: Option<DateTime<Utc>>,
    labels: HashMap<String, usize>,
}

fn majority_label(counts: &HashMap<String, usize>) -> Option<String> {
    counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
        .map(|(l, _)| l.clone())
}

/// Ranks cells by capped gap-to-next-fix dwell time and keeps the top `k`.
///
/// Fixes are sorted by timestamp first (stable), so the caller may pass them
/// in file order.
pub fn rank_cells(fixes: &[GpsFix], edge: f64, k: usize, max_gap: f64) -> Result<CellRanking> {
    if k == 0 {
        return Err(Error::Input("top-k must be at least 1".into()));
    }
    if !(max_gap >= 0.0) {
        return Err(Error::Input(format!("max_gap must be non-negative, got {max_gap}")));
    }
    let mut sorted: Vec<&GpsFix> = fixes.iter().collect();
    sorted.sort_by_key(|f| f.timestamp);

    let mut cells: HashMap<HexCoord, CellAcc> = HashMap::new();
    for (i, fix) in sorted.iter().enumerate() {
        let dwell = match sorted.get(i + 1) {
            Some(next) => {
                let gap = (next.timestamp - fix.timestamp).num_milliseconds() as f64 / 1000.0;
                gap.min(max_gap)
            }
            None => 0.0,
        };
        let cell = hex_index(fix.lat, fix.lon, edge)?;
        let acc = cells.entry(cell).or_default();
        acc.dwell += dwell;
        acc.first_visit.get_or_insert(fix.timestamp);
        if let Some(label) = fix.situational_label.as_deref().filter(|l| !l.is_empty()) {
            *acc.labels.entry(label.to_string()).or_default() += 1;
        }
    }

    let mut ranked: Vec<(HexCoord, CellAcc)> = cells.into_iter().collect();
    ranked.sort_by(|(ca, a), (cb, b)| {
        b.dwell
            .total_cmp(&a.dwell)
            .then_with(|| a.first_visit.cmp(&b.first_visit))
            .then_with(|| ca.cmp(cb))
    });
    ranked.truncate(k);
    Ok(CellRanking {
        cells: ranked
            .into_iter()
            .enumerate()
            .map(|(i, (cell, acc))| RankedCell {
                cell,
                dwell_seconds: acc.dwell,
                rank: i + 1,
                majority_situational_label: majority_label(&acc.labels),
            })
            .collect(),
    })
}

/// Tags each segment with the rank of the cell of the fix nearest in time to
/// its midpoint. Segments whose nearest fix is further than `tolerance`
/// seconds, or lies outside the ranking, stay unlabelled.
///
/// The situational label is the ranked cell's majority label; for unranked
/// matches it falls back to the matched fix's own label.
pub fn assign_pseudo_labels(
    segments: &[SegmentRecord],
    fixes: &[GpsFix],
    ranking: &CellRanking,
    edge: f64,
    tolerance: f64,
) -> Result<Vec<PseudoLabeledSegment>> {
    let mut sorted: Vec<&GpsFix> = fixes.iter().collect();
    sorted.sort_by_key(|f| f.timestamp);
    let half = Duration::milliseconds((SEGMENT_SECONDS as i64) * 500);

    segments
        .iter()
        .map(|seg| {
            let mid = seg.start + half;
            let unlabeled = PseudoLabeledSegment {
                segment_id: seg.segment_id.clone(),
                cell_rank: None,
                situational_label: None,
            };
            let Some(fix) = nearest_in_time(&sorted, mid) else {
                return Ok(unlabeled);
            };
            let gap = (fix.timestamp - mid).num_milliseconds().abs() as f64 / 1000.0;
            if gap > tolerance {
                return Ok(unlabeled);
            }
            let cell = hex_index(fix.lat, fix.lon, edge)?;
            Ok(match ranking.rank_of(cell) {
                Some(ranked) => PseudoLabeledSegment {
                    segment_id: seg.segment_id.clone(),
                    cell_rank: Some(ranked.rank),
                    situational_label: ranked.majority_situational_label.clone(),
                },
                None => PseudoLabeledSegment {
                    situational_label: fix.situational_label.clone(),
                    ..unlabeled
                },
            })
        })
        .collect()
}

/// Nearest fix to `t` in a timestamp-sorted slice; ties go to the earlier fix.
fn nearest_in_time<'a>(sorted: &[&'a GpsFix], t: DateTime<Utc>) -> Option<&'a GpsFix> {
    let idx = sorted.partition_point(|f| f.timestamp < t);
    let after = sorted.get(idx).copied();
    let before = idx.checked_sub(1).and_then(|i| sorted.get(i)).copied();
    match (before, after) {
        (Some(b), Some(a)) => {
            if (a.timestamp - t) < (t - b.timestamp) {
                Some(a)
            } else {
                Some(b)
            }
        }
        (b, a) => b.or(a),
    }
}
