//! Scene state and its deterministic text rendering.
//!
//! Rendering rules:
//! * distances are rounded to whole meters (half away from zero);
//! * speeds fall into `stationary` (< 0.5 m/s), `slow` (< 3), `moderate` (< 8)
//!   and `fast`;
//! * bearings are one of eight 45° sectors relative to the ego heading,
//!   positive angles to the left.
//!
//! Sections appear in a fixed order: concepts, ego, objects, regions,
//! navigation, instruction. Empty sections are omitted, except ego and
//! navigation which are always present.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Concept keys a scene may carry.
pub const CONCEPT_KEYS: &[&str] =
    &["location", "weather", "time", "road_surface", "speed_limit", "min_speed", "traffic_control"];

pub const EMPTY_LABEL: &str = "empty";
pub const DRIVABLE_LABEL: &str = "drivable";

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("negative ego speed {0}")]
    NegativeSpeed(f64),
    #[error("grid must have positive dimensions and resolution")]
    EmptyGrid,
    #[error("grid has {found} cells, expected {expected}")]
    GridSize { found: usize, expected: usize },
    #[error("grid cell refers to label {0} outside the legend")]
    UnknownLabel(u8),
    #[error("unknown concept key `{0}`")]
    UnknownConcept(String),
    #[error("instance `{0}` has a non-positive size")]
    BadInstance(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub position: [f64; 2],
    pub heading: f64,
    pub speed: f64,
    #[serde(default)]
    pub accel: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InstanceSource {
    #[default]
    Specialized,
    OpenWorld,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub instance_id: String,
    pub label: String,
    #[serde(default)]
    pub source: InstanceSource,
    pub center: [f64; 2],
    pub size: [f64; 2],
    #[serde(default)]
    pub yaw: f64,
    #[serde(default)]
    pub velocity: [f64; 2],
}

impl Instance {
    pub fn speed(&self) -> f64 {
        self.velocity[0].hypot(self.velocity[1])
    }
}

/// Row-major label grid: cell `(i, j)` is column `i`, row `j`, covering
/// `[origin + (i, j) * resolution, origin + (i + 1, j + 1) * resolution)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticGrid {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: [f64; 2],
    /// Label names; cell values index into this list. Index 0 is `empty`.
    pub legend: Vec<String>,
    pub cells: Vec<u8>,
}

impl SemanticGrid {
    pub fn new(width: usize, height: usize, resolution: f64, origin: [f64; 2]) -> Self {
        Self { width, height, resolution, origin, legend: vec![EMPTY_LABEL.into()], cells: vec![0; width * height] }
    }

    /// Grid from rows of single-character codes, `.` meaning empty.
    /// Row 0 of `rows` is grid row 0.
    pub fn from_rows(rows: &[&str], codes: &[(char, &str)], resolution: f64) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        let mut g = Self::new(width, height, resolution, [0.0, 0.0]);
        for (j, row) in rows.iter().enumerate() {
            for (i, ch) in row.chars().enumerate() {
                if let Some((_, name)) = codes.iter().find(|(c, _)| *c == ch) {
                    g.set(i, j, name);
                }
            }
        }
        g
    }

    pub fn label_id(&mut self, name: &str) -> u8 {
        match self.legend.iter().position(|l| l == name) {
            Some(i) => i as u8,
            None => {
                self.legend.push(name.to_string());
                (self.legend.len() - 1) as u8
            }
        }
    }

    pub fn set(&mut self, i: usize, j: usize, name: &str) {
        let id = self.label_id(name);
        let w = self.width;
        self.cells[j * w + i] = id;
    }

    pub fn label(&self, i: usize, j: usize) -> &str {
        &self.legend[self.cells[j * self.width + i] as usize]
    }

    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + (i as f64 + 0.5) * self.resolution,
            self.origin[1] + (j as f64 + 0.5) * self.resolution,
        ]
    }

    pub fn cell_at(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let fi = ((p[0] - self.origin[0]) / self.resolution).floor();
        let fj = ((p[1] - self.origin[1]) / self.resolution).floor();
        if fi < 0.0 || fj < 0.0 || fi >= self.width as f64 || fj >= self.height as f64 {
            return None;
        }
        Some((fi as usize, fj as usize))
    }

    pub fn label_at(&self, p: [f64; 2]) -> Option<&str> {
        self.cell_at(p).map(|(i, j)| self.label(i, j))
    }

    /// Labels present in at least one cell, excluding `empty`.
    pub fn present_labels(&self) -> BTreeSet<&str> {
        let mut seen = vec![false; self.legend.len()];
        for &c in &self.cells {
            seen[c as usize] = true;
        }
        self.legend.iter().zip(seen).filter(|(l, s)| *s && l.as_str() != EMPTY_LABEL).map(|(l, _)| l.as_str()).collect()
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.width == 0 || self.height == 0 || self.resolution <= 0.0 {
            return Err(SceneError::EmptyGrid);
        }
        if self.cells.len() != self.width * self.height {
            return Err(SceneError::GridSize { found: self.cells.len(), expected: self.width * self.height });
        }
        if let Some(&c) = self.cells.iter().find(|&&c| c as usize >= self.legend.len()) {
            return Err(SceneError::UnknownLabel(c));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NavCommand {
    #[default]
    Keep,
    TurnLeft,
    TurnRight,
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub timestamp: f64,
    pub ego: EgoState,
    #[serde(default)]
    pub instances: Vec<Instance>,
    pub grid: SemanticGrid,
    #[serde(default)]
    pub concepts: BTreeMap<String, String>,
    #[serde(default)]
    pub nav_command: NavCommand,
    #[serde(default)]
    pub route: Option<String>,
    #[serde(default)]
    pub user_instruction: Option<String>,
    /// Attributes not yet perceived, keyed by the entity name that reveals
    /// them. Never rendered.
    #[serde(default)]
    pub hidden: BTreeMap<String, String>,
    /// Hidden keys already revealed.
    #[serde(default)]
    pub revealed: BTreeSet<String>,
}

impl SceneState {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.ego.speed < 0.0 {
            return Err(SceneError::NegativeSpeed(self.ego.speed));
        }
        self.grid.validate()?;
        if let Some(k) = self.concepts.keys().find(|k| !CONCEPT_KEYS.contains(&k.as_str())) {
            return Err(SceneError::UnknownConcept(k.clone()));
        }
        if let Some(i) = self.instances.iter().find(|i| !(i.size[0] > 0.0 && i.size[1] > 0.0)) {
            return Err(SceneError::BadInstance(i.instance_id.clone()));
        }
        Ok(())
    }

    /// Numeric concept value, if present and parseable.
    pub fn concept_f64(&self, key: &str) -> Option<f64> {
        self.concepts.get(key).and_then(|v| v.parse().ok())
    }
}

/// Phrase used for a grid label in text ("water" → "standing water").
pub fn grid_label_phrase(label: &str) -> String {
    match label {
        "water" => "standing water".into(),
        other => other.replace('_', " "),
    }
}

/// Phrase used for a concept in text. Numeric speed concepts become
/// "speed limit 22 m/s" / "minimum speed 11 m/s".
pub fn concept_phrase(key: &str, value: &str) -> String {
    let num = value.parse::<f64>().ok().map(|v| format!("{} m/s", round_m(v)));
    match (key, num) {
        ("speed_limit", Some(n)) => format!("speed limit {n}"),
        ("min_speed", Some(n)) => format!("minimum speed {n}"),
        _ => format!("{} {}", key.replace('_', " "), value),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectedBlock {
    pub label: String,
    pub cells: Vec<(usize, usize)>,
    pub bbox: ([f64; 2], [f64; 2]),
    pub area: f64,
}

impl ConnectedBlock {
    /// Distance from `p` to the nearest point of the bounding box.
    pub fn distance_to(&self, p: [f64; 2]) -> f64 {
        let dx = (self.bbox.0[0] - p[0]).max(0.0).max(p[0] - self.bbox.1[0]);
        let dy = (self.bbox.0[1] - p[1]).max(0.0).max(p[1] - self.bbox.1[1]);
        dx.hypot(dy)
    }

    pub fn nearest_point(&self, p: [f64; 2]) -> [f64; 2] {
        [p[0].clamp(self.bbox.0[0], self.bbox.1[0]), p[1].clamp(self.bbox.0[1], self.bbox.1[1])]
    }
}

/// Default connectivity radius: 2 cells for gap-prone labels, 1 otherwise.
pub fn default_radius(label: &str) -> usize {
    match label {
        "water" | "solid_line" => 2,
        _ => 1,
    }
}

/// Same-label cells within Chebyshev distance `radius_fn(label)` of each
/// other end up in one block. Blocks are ordered by label, then by bbox
/// distance to `ego` when given, then by first cell in scanline order.
pub fn connected_blocks(grid: &SemanticGrid, radius_fn: &dyn Fn(&str) -> usize, ego: Option<[f64; 2]>) -> Vec<ConnectedBlock> {
    let (w, h) = (grid.width, grid.height);
    let mut visited = vec![false; w * h];
    let mut blocks: Vec<(ConnectedBlock, usize)> = Vec::new();
    for start in 0..w * h {
        let id = grid.cells[start];
        if visited[start] || grid.legend[id as usize] == EMPTY_LABEL {
            continue;
        }
        let label = &grid.legend[id as usize];
        let r = radius_fn(label) as isize;
        let mut cells = Vec::new();
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(c) = queue.pop_front() {
            let (ci, cj) = ((c % w) as isize, (c / w) as isize);
            cells.push((ci as usize, cj as usize));
            for dj in -r..=r {
                for di in -r..=r {
                    let (ni, nj) = (ci + di, cj + dj);
                    if ni < 0 || nj < 0 || ni >= w as isize || nj >= h as isize {
                        continue;
                    }
                    let n = nj as usize * w + ni as usize;
                    if !visited[n] && grid.cells[n] == id {
                        visited[n] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
        cells.sort_by_key(|&(i, j)| (j, i));
        let res = grid.resolution;
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for &(i, j) in &cells {
            lo[0] = lo[0].min(grid.origin[0] + i as f64 * res);
            lo[1] = lo[1].min(grid.origin[1] + j as f64 * res);
            hi[0] = hi[0].max(grid.origin[0] + (i + 1) as f64 * res);
            hi[1] = hi[1].max(grid.origin[1] + (j + 1) as f64 * res);
        }
        let area = cells.len() as f64 * res * res;
        blocks.push((ConnectedBlock { label: label.clone(), cells, bbox: (lo, hi), area }, start));
    }
    blocks.sort_by(|(a, sa), (b, sb)| {
        a.label.cmp(&b.label).then_with(|| match ego {
            Some(p) => a.distance_to(p).total_cmp(&b.distance_to(p)),
            None => std::cmp::Ordering::Equal,
        })
        .then(sa.cmp(sb))
    });
    blocks.into_iter().map(|(b, _)| b).collect()
}

pub fn speed_bucket(speed: f64) -> &'static str {
    match speed {
        s if s < 0.5 => "stationary",
        s if s < 3.0 => "slow",
        s if s < 8.0 => "moderate",
        _ => "fast",
    }
}

const BEARINGS: [&str; 8] = ["ahead", "ahead-left", "left", "behind-left", "behind", "behind-right", "right", "ahead-right"];

/// Eight-way bearing of `target` seen from `ego`.
pub fn bearing_bucket(ego: &EgoState, target: [f64; 2]) -> &'static str {
    let dx = target[0] - ego.position[0];
    let dy = target[1] - ego.position[1];
    if dx == 0.0 && dy == 0.0 {
        return "ahead";
    }
    let rel = (dy.atan2(dx) - ego.heading).rem_euclid(2.0 * PI);
    let sector = ((rel + PI / 8.0) / (PI / 4.0)).floor() as usize % 8;
    BEARINGS[sector]
}

pub fn round_m(x: f64) -> i64 {
    x.round() as i64
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Labels whose blocks are too large or ubiquitous to describe.
fn is_background(label: &str) -> bool {
    label == DRIVABLE_LABEL || label == EMPTY_LABEL
}

pub fn verbalize(scene: &SceneState, blocks: &[ConnectedBlock]) -> String {
    let ego = &scene.ego;
    let mut out = String::new();
    if !scene.concepts.is_empty() {
        let parts: Vec<String> = scene.concepts.iter().map(|(k, v)| concept_phrase(k, v)).collect();
        let _ = writeln!(out, "Concepts: {}.", parts.join("; "));
    }
    let _ = writeln!(
        out,
        "Ego: speed {} m/s ({}), heading {} deg.",
        round_m(ego.speed),
        speed_bucket(ego.speed),
        round_m(ego.heading.to_degrees())
    );
    let mut inst: Vec<(i64, &Instance)> = scene.instances.iter().map(|i| (round_m(dist(ego.position, i.center)), i)).collect();
    inst.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.label.cmp(&b.1.label)).then_with(|| a.1.instance_id.cmp(&b.1.instance_id)));
    if !inst.is_empty() {
        out.push_str("Objects:\n");
        for (d, i) in inst {
            let _ = writeln!(
                out,
                "- {} {} at {} m, moving {}",
                i.label,
                bearing_bucket(ego, i.center),
                d,
                speed_bucket(i.speed())
            );
        }
    }
    let shown: Vec<&ConnectedBlock> = blocks.iter().filter(|b| !is_background(&b.label)).collect();
    if !shown.is_empty() {
        out.push_str("Regions:\n");
        for b in shown {
            let p = b.nearest_point(ego.position);
            let _ = writeln!(
                out,
                "- {} region {} at {} m, area {} m2",
                grid_label_phrase(&b.label),
                bearing_bucket(ego, p),
                round_m(b.distance_to(ego.position)),
                round_m(b.area)
            );
        }
    }
    let nav = match scene.nav_command {
        NavCommand::Keep => "keep lane",
        NavCommand::TurnLeft => "turn left",
        NavCommand::TurnRight => "turn right",
        NavCommand::Stop => "stop",
    };
    match &scene.route {
        Some(r) => {
            let _ = writeln!(out, "Navigation: {nav}, route {r}.");
        }
        None => {
            let _ = writeln!(out, "Navigation: {nav}.");
        }
    }
    if let Some(u) = &scene.user_instruction {
        let _ = writeln!(out, "Instruction: {u}");
    }
    out
}

/// Blocks with the default radius table, then the rendered query.
pub fn scene_query(scene: &SceneState) -> String {
    let blocks = connected_blocks(&scene.grid, &default_radius, Some(scene.ego.position));
    verbalize(scene, &blocks)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Union-find over all same-label cell pairs within Chebyshev distance r.
    fn brute_force_blocks(grid: &SemanticGrid, r: usize) -> usize {
        let n = grid.width * grid.height;
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut Vec<usize>, x: usize) -> usize {
            let mut x = x;
            while p[x] != x {
                x = p[x];
            }
            x
        }
        let cells: Vec<usize> = (0..n).filter(|&c| grid.cells[c] != 0).collect();
        for &a in &cells {
            for &b in &cells {
                let (ai, aj) = (a % grid.width, a / grid.width);
                let (bi, bj) = (b % grid.width, b / grid.width);
                if grid.cells[a] == grid.cells[b] && ai.abs_diff(bi).max(aj.abs_diff(bj)) <= r {
                    let (x, y) = (find(&mut parent, a), find(&mut parent, b));
                    parent[x] = y;
                }
            }
        }
        let roots: BTreeSet<usize> = cells.iter().map(|&c| find(&mut parent, c)).collect();
        roots.len()
    }

    #[test]
    fn diagonal_gap_depends_on_radius() {
        let g = SemanticGrid::from_rows(&["A..", "...", "..A"], &[('A', "water")], 1.0);
        let r1 = connected_blocks(&g, &|_| 1, None);
        let r2 = connected_blocks(&g, &|_| 2, None);
        assert_eq!(r1.len(), 2);
        assert_eq!(r2.len(), 1);
        assert_eq!(brute_force_blocks(&g, 1), 2);
        assert_eq!(brute_force_blocks(&g, 2), 1);
    }

    #[test]
    fn uniform_and_empty_grids() {
        let g = SemanticGrid::from_rows(&["AAA", "AAA"], &[('A', "drivable")], 1.0);
        let b = connected_blocks(&g, &default_radius, None);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].cells.len(), 6);
        assert!((b[0].area - 6.0).abs() < 1e-12);
        let e = SemanticGrid::new(4, 4, 0.5, [0.0, 0.0]);
        assert!(connected_blocks(&e, &default_radius, None).is_empty());
    }

    #[test]
    fn bearings() {
        let ego = EgoState { position: [0.0, 0.0], heading: 0.0, speed: 0.0, accel: 0.0 };
        assert_eq!(bearing_bucket(&ego, [8.2, 0.0]), "ahead");
        assert_eq!(bearing_bucket(&ego, [0.0, 3.0]), "left");
        assert_eq!(bearing_bucket(&ego, [5.0, -5.0]), "ahead-right");
        assert_eq!(bearing_bucket(&ego, [-5.0, 0.1]), "behind");
        let north = EgoState { heading: PI / 2.0, ..ego };
        assert_eq!(bearing_bucket(&north, [-3.0, 0.0]), "left");
    }

    #[test]
    fn speed_buckets() {
        assert_eq!(speed_bucket(0.0), "stationary");
        assert_eq!(speed_bucket(0.5), "slow");
        assert_eq!(speed_bucket(7.99), "moderate");
        assert_eq!(speed_bucket(8.0), "fast");
    }
}
