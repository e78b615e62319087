//! Frontier search: monotone constrained minimization over a 2-d box.
//!
//! The objective `s` and the constraint `c` are both non-decreasing in each
//! coordinate of `z`. Queries that satisfy `c >= threshold` form the upper set
//! and rule out everything above them; the others form the lower set and rule
//! out everything below them. The search repeatedly picks the rectangle between
//! the two staircases with the largest max-min distance and splits it with the
//! query whose worst outcome shrinks that distance the most.
//!
//! Coordinates used here are `z = (-log10 l, log10 nu)`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A point of the search plane.
pub type Z = [f64; 2];

/// Tolerance for frontier membership and tie detection.
pub const TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FrontierError<E> {
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("lengthscale and variance must be positive, got ({0}, {1})")]
    NonPositive(f64, f64),
    #[error("oracle failed: {0}")]
    Oracle(#[source] E),
}

pub fn log_transform(lengthscale: f64, variance: f64) -> Result<Z, FrontierError<std::convert::Infallible>> {
    if !(lengthscale > 0.0 && variance > 0.0) {
        return Err(FrontierError::NonPositive(lengthscale, variance));
    }
    Ok([-lengthscale.log10(), variance.log10()])
}

/// Inverse of [`log_transform`]: `(l, nu)`.
pub fn inverse_transform(z: Z) -> (f64, f64) {
    (10f64.powf(-z[0]), 10f64.powf(z[1]))
}

/// The search rectangle `[lo1, hi1] x [lo2, hi2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: Z,
    pub hi: Z,
}

impl Bounds {
    pub fn new(lo: Z, hi: Z) -> Result<Self, FrontierError<std::convert::Infallible>> {
        if !(lo[0] < hi[0] && lo[1] < hi[1]) || lo.iter().chain(&hi).any(|v| !v.is_finite()) {
            return Err(FrontierError::InvalidBounds(format!(
                "need lo < hi componentwise, got {lo:?} and {hi:?}"
            )));
        }
        Ok(Self { lo, hi })
    }

    /// Bounds in z-space from lengthscale and variance ranges.
    pub fn from_ranges(
        lengthscale: (f64, f64),
        variance: (f64, f64),
    ) -> Result<Self, FrontierError<std::convert::Infallible>> {
        let a = log_transform(lengthscale.1, variance.0)?;
        let b = log_transform(lengthscale.0, variance.1)?;
        Self::new(a, b)
    }

    pub fn contains(&self, z: Z) -> bool {
        (0..2).all(|i| z[i] >= self.lo[i] - TOL && z[i] <= self.hi[i] + TOL)
    }
}

/// `a >= b` componentwise.
pub fn dominates(a: Z, b: Z) -> bool {
    a[0] >= b[0] && a[1] >= b[1]
}

fn lex(a: Z, b: Z) -> Ordering {
    a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1]))
}

/// Which staircase a set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Upper,
    Lower,
}

/// Inserts `new` keeping only the minimal (upper side) or maximal (lower side)
/// elements. Returns whether `new` was kept.
pub fn prune(q: &mut Vec<Z>, new: Z, side: Side) -> bool {
    let covered = match side {
        Side::Upper => q.iter().any(|p| dominates(new, *p)),
        Side::Lower => q.iter().any(|p| dominates(*p, new)),
    };
    if covered {
        return false;
    }
    match side {
        Side::Upper => q.retain(|p| !dominates(*p, new)),
        Side::Lower => q.retain(|p| !dominates(new, *p)),
    }
    q.push(new);
    q.sort_by(|a, b| lex(*a, *b));
    true
}

/// An axis-aligned segment (possibly a single point).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: Z,
    pub b: Z,
}

impl Segment {
    fn lo(&self) -> Z {
        [self.a[0].min(self.b[0]), self.a[1].min(self.b[1])]
    }

    fn hi(&self) -> Z {
        [self.a[0].max(self.b[0]), self.a[1].max(self.b[1])]
    }

    pub fn distance(&self, z: Z) -> f64 {
        let (lo, hi) = (self.lo(), self.hi());
        let dx = z[0] - z[0].clamp(lo[0], hi[0]);
        let dy = z[1] - z[1].clamp(lo[1], hi[1]);
        dx.hypot(dy)
    }

    fn contains(&self, z: Z) -> bool {
        self.distance(z) <= TOL
    }

    /// Part of the segment inside the box, if any.
    fn clip(&self, lo: Z, hi: Z) -> Option<Segment> {
        let (sl, sh) = (self.lo(), self.hi());
        let a = [sl[0].max(lo[0]), sl[1].max(lo[1])];
        let b = [sh[0].min(hi[0]), sh[1].min(hi[1])];
        (a[0] <= b[0] + TOL && a[1] <= b[1] + TOL).then_some(Segment { a, b })
    }
}

/// Query sets of both sides over a search rectangle. Both sets are antichains
/// sorted by ascending `z1` (hence descending `z2`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierState {
    pub bounds: Bounds,
    pub upper: Vec<Z>,
    pub lower: Vec<Z>,
}

impl FrontierState {
    pub fn initial(bounds: Bounds) -> Self {
        Self {
            bounds,
            upper: vec![bounds.hi],
            lower: vec![bounds.lo],
        }
    }

    pub fn insert(&mut self, z: Z, side: Side) -> bool {
        match side {
            Side::Upper => prune(&mut self.upper, z, side),
            Side::Lower => prune(&mut self.lower, z, side),
        }
    }

    /// `min { z2' : z1 >= z1' }` over the upper set, `hi2` if empty.
    pub fn f2_upper(&self, z1: f64) -> f64 {
        self.upper
            .iter()
            .filter(|p| z1 >= p[0])
            .map(|p| p[1])
            .fold(self.bounds.hi[1], f64::min)
    }

    /// `min { z1' : z2 >= z2' }` over the upper set, `hi1` if empty.
    pub fn f1_upper(&self, z2: f64) -> f64 {
        self.upper
            .iter()
            .filter(|p| z2 >= p[1])
            .map(|p| p[0])
            .fold(self.bounds.hi[0], f64::min)
    }

    /// `max { z2' : z1 <= z1' }` over the lower set, `lo2` if empty.
    pub fn f2_lower(&self, z1: f64) -> f64 {
        f2_lower_of(&self.lower, z1, self.bounds.lo[1])
    }

    /// `max { z1' : z2 <= z2' }` over the lower set, `lo1` if empty.
    pub fn f1_lower(&self, z2: f64) -> f64 {
        f1_lower_of(&self.lower, z2, self.bounds.lo[0])
    }

    /// Whether `z` lies between the frontiers (boundaries included), i.e. it is
    /// neither strictly below a lower query nor strictly above an upper one.
    pub fn in_gamma(&self, z: Z) -> bool {
        self.bounds.contains(z)
            && !self
                .lower
                .iter()
                .any(|q| z[0] < q[0] - TOL && z[1] < q[1] - TOL)
            && !self
                .upper
                .iter()
                .any(|p| z[0] > p[0] + TOL && z[1] > p[1] + TOL)
    }

    /// The staircase through the upper queries: a vertical ray from the
    /// leftmost point to the top edge, alternating steps, and a horizontal ray
    /// from the rightmost point to the right edge.
    pub fn upper_segments(&self) -> Vec<Segment> {
        let q = &self.upper;
        let mut segs = Vec::with_capacity(2 * q.len() + 1);
        let first = q[0];
        segs.push(Segment {
            a: first,
            b: [first[0], self.bounds.hi[1]],
        });
        for w in q.windows(2) {
            let corner = [w[1][0], w[0][1]];
            segs.push(Segment { a: w[0], b: corner });
            segs.push(Segment { a: corner, b: w[1] });
        }
        let last = q[q.len() - 1];
        segs.push(Segment {
            a: last,
            b: [self.bounds.hi[0], last[1]],
        });
        segs
    }

    /// Mirror of [`upper_segments`](Self::upper_segments) for the lower set.
    pub fn lower_segments(&self) -> Vec<Segment> {
        let q = &self.lower;
        let mut segs = Vec::with_capacity(2 * q.len() + 1);
        let first = q[0];
        segs.push(Segment {
            a: [self.bounds.lo[0], first[1]],
            b: first,
        });
        for w in q.windows(2) {
            let corner = [w[0][0], w[1][1]];
            segs.push(Segment { a: w[0], b: corner });
            segs.push(Segment { a: corner, b: w[1] });
        }
        let last = q[q.len() - 1];
        segs.push(Segment {
            a: last,
            b: [last[0], self.bounds.lo[1]],
        });
        segs
    }

    pub fn on_upper(&self, z: Z) -> bool {
        self.upper_segments().iter().any(|s| s.contains(z))
    }

    pub fn on_lower(&self, z: Z) -> bool {
        self.lower_segments().iter().any(|s| s.contains(z))
    }

    /// Outer corner points of the region between the frontiers.
    pub fn outer_corners(&self) -> Vec<Z> {
        outer_corners_in(&self.lower, self.bounds.lo, self.bounds.hi)
            .into_iter()
            .filter(|z| self.in_gamma(*z))
            .collect()
    }

    /// Corner points of the upper staircase, including where it meets the top
    /// and right edges.
    pub fn upper_corners(&self) -> Vec<Z> {
        let q = &self.upper;
        let mut out = q.clone();
        for w in q.windows(2) {
            out.push([w[1][0], w[0][1]]);
        }
        out.push([q[0][0], self.bounds.hi[1]]);
        out.push([self.bounds.hi[0], q[q.len() - 1][1]]);
        dedup(out)
    }
}

fn f2_lower_of(lower: &[Z], z1: f64, floor: f64) -> f64 {
    lower
        .iter()
        .filter(|p| z1 <= p[0])
        .map(|p| p[1])
        .fold(floor, f64::max)
}

fn f1_lower_of(lower: &[Z], z2: f64, floor: f64) -> f64 {
    lower
        .iter()
        .filter(|p| z2 <= p[1])
        .map(|p| p[0])
        .fold(floor, f64::max)
}

fn dedup(mut pts: Vec<Z>) -> Vec<Z> {
    pts.sort_by(|a, b| lex(*a, *b));
    pts.dedup_by(|a, b| (a[0] - b[0]).abs() <= TOL && (a[1] - b[1]).abs() <= TOL);
    pts
}

/// Outer corners of the area above the lower staircase of `lower` inside the
/// box `[lo, hi]`.
fn outer_corners_in(lower: &[Z], lo: Z, hi: Z) -> Vec<Z> {
    let bl = [f1_lower_of(lower, hi[1], lo[0]), hi[1]];
    let br = [hi[0], f2_lower_of(lower, hi[0], lo[1])];
    let mut pts: Vec<Z> = lower.to_vec();
    pts.push(bl);
    pts.push(br);
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(b[1].total_cmp(&a[1])));
    let mut out: Vec<Z> = pts.windows(2).map(|w| [w[0][0], w[1][1]]).collect();
    out.push(bl);
    out.push(br);
    dedup(out)
}

fn max_min(corners: &[Z], segs: &[Segment]) -> f64 {
    corners
        .iter()
        .map(|z| segs.iter().map(|s| s.distance(*z)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

/// Max over the region between the frontiers of the distance to the nearest
/// point of the upper staircase.
pub fn max_min_distance(state: &FrontierState) -> f64 {
    max_min(&state.outer_corners(), &state.upper_segments())
}

/// The max-min distance restricted to the box `[lo, hi]`.
pub fn rect_max_min_distance(state: &FrontierState, lo: Z, hi: Z) -> f64 {
    let lower: Vec<Z> = state
        .lower
        .iter()
        .filter(|p| dominates(**p, lo))
        .map(|p| [p[0].min(hi[0]), p[1].min(hi[1])])
        .collect();
    let corners: Vec<Z> = outer_corners_in(&lower, lo, hi)
        .into_iter()
        .filter(|z| state.in_gamma(*z))
        .collect();
    let segs: Vec<Segment> = state
        .upper_segments()
        .iter()
        .filter_map(|s| s.clip(lo, hi))
        .collect();
    if corners.is_empty() {
        return 0.0;
    }
    if segs.is_empty() {
        return f64::INFINITY;
    }
    max_min(&corners, &segs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxMinRect {
    /// Outer corner of the region between the frontiers.
    pub corner: Z,
    /// Corner of the upper staircase.
    pub frontier_corner: Z,
    pub maxmin_distance: f64,
}

impl MaxMinRect {
    pub fn lo(&self) -> Z {
        [
            self.corner[0].min(self.frontier_corner[0]),
            self.corner[1].min(self.frontier_corner[1]),
        ]
    }

    pub fn hi(&self) -> Z {
        [
            self.corner[0].max(self.frontier_corner[0]),
            self.corner[1].max(self.frontier_corner[1]),
        ]
    }
}

/// Whether the pair satisfies the three admissibility conditions.
pub fn rect_admissible(state: &FrontierState, z: Z, zp: Z) -> bool {
    let in_gamma = state.in_gamma([z[0], zp[1]]) && state.in_gamma([zp[0], z[1]]);
    let area = (z[0] - zp[0]).abs() * (z[1] - zp[1]).abs() > TOL * TOL;
    let tighter = state.upper.iter().any(|q| {
        (z[0] < q[0] && q[0] < zp[0] && (zp[1] - q[1]).abs() <= TOL)
            || (z[1] < q[1] && q[1] < zp[1] && (zp[0] - q[0]).abs() <= TOL)
    });
    in_gamma && area && !tighter
}

/// Admissible rectangle with the largest max-min distance, or `None` when no
/// admissible rectangle is left. Ties go to the lexicographically smallest
/// `(corner, frontier_corner)`.
pub fn largest_max_min_rect(state: &FrontierState) -> Option<MaxMinRect> {
    let mut best: Option<MaxMinRect> = None;
    let frontier = state.upper_corners();
    for z in state.outer_corners() {
        for zp in &frontier {
            if !rect_admissible(state, z, *zp) {
                continue;
            }
            let cand = MaxMinRect {
                corner: z,
                frontier_corner: *zp,
                maxmin_distance: 0.0,
            };
            let d = rect_max_min_distance(state, cand.lo(), cand.hi());
            let better = match &best {
                None => true,
                Some(b) => {
                    d > b.maxmin_distance + TOL
                        || ((d - b.maxmin_distance).abs() <= TOL
                            && lex(z, b.corner).then(lex(*zp, b.frontier_corner)) == Ordering::Less)
                }
            };
            if better {
                best = Some(MaxMinRect {
                    maxmin_distance: d,
                    ..cand
                });
            }
        }
    }
    best
}

/// Center, middle of the right side and middle of the upper side.
pub fn query_candidates(rect: &MaxMinRect) -> [Z; 3] {
    let (z, zp) = (rect.corner, rect.frontier_corner);
    let mid = [0.5 * (z[0] + zp[0]), 0.5 * (z[1] + zp[1])];
    [mid, [zp[0], mid[1]], [mid[0], zp[1]]]
}

/// Worst case over both outcomes of querying `zq`, measured inside `rect`.
pub fn worst_case_distance(state: &FrontierState, rect: &MaxMinRect, zq: Z) -> f64 {
    let (lo, hi) = (rect.lo(), rect.hi());
    let mut below = state.clone();
    below.insert(zq, Side::Lower);
    let mut above = state.clone();
    above.insert(zq, Side::Upper);
    rect_max_min_distance(&below, lo, hi).max(rect_max_min_distance(&above, lo, hi))
}

/// The candidate with the smallest worst-case distance, skipping candidates
/// already on a frontier. Ties go to the lexicographically smallest point.
pub fn best_worst_case_query(state: &FrontierState, rect: &MaxMinRect) -> Option<Z> {
    let mut best: Option<(Z, f64)> = None;
    for zq in query_candidates(rect) {
        if state.on_upper(zq) || state.on_lower(zq) {
            continue;
        }
        let d = worst_case_distance(state, rect, zq);
        let better = match best {
            None => true,
            Some((bz, bd)) => d < bd - TOL || ((d - bd).abs() <= TOL && lex(zq, bz) == Ordering::Less),
        };
        if better {
            best = Some((zq, d));
        }
    }
    best.map(|(z, _)| z)
}

/// An evaluated query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchPoint {
    pub z: Z,
    pub s_value: f64,
    pub c_value: f64,
}

/// One iteration of the search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub k: usize,
    pub query: SearchPoint,
    pub feasible: bool,
    /// Max-min distance after the query was inserted.
    pub distance: f64,
    pub best: SearchPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: SearchPoint,
    pub state: FrontierState,
    pub initial_distance: f64,
    pub trace: Vec<TraceRecord>,
    /// True when the search stopped before the budget because no admissible
    /// rectangle or query was left.
    pub converged: bool,
}

impl SearchOutcome {
    pub fn final_distance(&self) -> f64 {
        self.trace.last().map_or(self.initial_distance, |t| t.distance)
    }
}

/// Minimizes `s` subject to `c >= threshold` with `budget` queries after the
/// two corner evaluations. `oracle` maps `z` to `(s, c)`.
pub fn frontier_search<F, E>(
    mut oracle: F,
    bounds: Bounds,
    threshold: f64,
    budget: usize,
) -> Result<SearchOutcome, FrontierError<E>>
where
    F: FnMut(Z) -> Result<(f64, f64), E>,
{
    let mut eval = |z: Z| -> Result<SearchPoint, FrontierError<E>> {
        let (s, c) = oracle(z).map_err(FrontierError::Oracle)?;
        Ok(SearchPoint {
            z,
            s_value: s,
            c_value: c,
        })
    };
    let top = eval(bounds.hi)?;
    if top.c_value.is_nan() || top.c_value < threshold {
        return Err(FrontierError::InvalidBounds(format!(
            "upper corner {:?} violates the constraint (c = {})",
            bounds.hi, top.c_value
        )));
    }
    let bottom = eval(bounds.lo)?;
    if bottom.c_value.is_nan() || bottom.c_value >= threshold {
        return Err(FrontierError::InvalidBounds(format!(
            "lower corner {:?} already satisfies the constraint (c = {})",
            bounds.lo, bottom.c_value
        )));
    }

    let mut state = FrontierState::initial(bounds);
    let mut best = top;
    let initial_distance = max_min_distance(&state);
    let mut trace = Vec::with_capacity(budget);
    let mut converged = false;
    for k in 0..budget {
        let Some(rect) = largest_max_min_rect(&state) else {
            converged = true;
            break;
        };
        let Some(zq) = best_worst_case_query(&state, &rect) else {
            converged = true;
            break;
        };
        let query = eval(zq)?;
        let feasible = query.c_value >= threshold;
        if feasible {
            state.insert(zq, Side::Upper);
            if query.s_value < best.s_value {
                best = query;
            }
        } else {
            state.insert(zq, Side::Lower);
        }
        log::debug!("frontier k={k} z={zq:?} s={} c={}", query.s_value, query.c_value);
        trace.push(TraceRecord {
            k,
            query,
            feasible,
            distance: max_min_distance(&state),
            best,
        });
    }
    Ok(SearchOutcome {
        best,
        state,
        initial_distance,
        trace,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> Bounds {
        Bounds::new([0.0, 0.0], [1.0, 1.0]).unwrap()
    }

    #[test]
    fn transform_examples() {
        assert_eq!(log_transform(1.0, 1.0).unwrap(), [0.0, 0.0]);
        let z = log_transform(0.01, 6.0).unwrap();
        assert!((z[0] - 2.0).abs() < 1e-15);
        assert!((z[1] - 0.778151250383644).abs() < 1e-12);
        assert!(log_transform(0.0, 1.0).is_err());
        assert!(log_transform(1.0, -2.0).is_err());
        let (l, v) = inverse_transform(log_transform(0.37, 2.9).unwrap());
        assert!((l - 0.37).abs() < 1e-12 && (v - 2.9).abs() < 1e-12);
    }

    #[test]
    fn frontier_function_example() {
        let b = Bounds::new([0.0, 0.0], [4.0, 4.0]).unwrap();
        let mut s = FrontierState::initial(b);
        s.insert([1.0, 3.0], Side::Upper);
        s.insert([2.0, 2.0], Side::Upper);
        assert_eq!(s.upper, vec![[1.0, 3.0], [2.0, 2.0]]);
        assert_eq!(s.f2_upper(1.5), 3.0);
        assert_eq!(s.f2_upper(2.5), 2.0);
        assert_eq!(s.f2_upper(0.5), 4.0);
    }

    #[test]
    fn prune_examples() {
        let mut q = vec![[2.0, 2.0]];
        prune(&mut q, [1.0, 1.0], Side::Upper);
        assert_eq!(q, vec![[1.0, 1.0]]);
        let mut q = vec![[2.0, 2.0]];
        prune(&mut q, [1.0, 3.0], Side::Upper);
        assert_eq!(q, vec![[1.0, 3.0], [2.0, 2.0]]);
        let mut q = vec![[1.0, 1.0]];
        assert!(!prune(&mut q, [2.0, 2.0], Side::Upper));
        let mut q = vec![[1.0, 1.0]];
        prune(&mut q, [2.0, 2.0], Side::Lower);
        assert_eq!(q, vec![[2.0, 2.0]]);
    }

    #[test]
    fn initial_corners_and_distance() {
        let s = FrontierState::initial(unit());
        assert_eq!(s.outer_corners(), vec![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]);
        assert!((max_min_distance(&s) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(s.upper_corners(), vec![[1.0, 1.0]]);
    }

    #[test]
    fn two_lower_points_give_five_corners() {
        let mut s = FrontierState::initial(Bounds::new([0.0, 0.0], [4.0, 4.0]).unwrap());
        s.insert([1.0, 3.0], Side::Lower);
        s.insert([3.0, 1.0], Side::Lower);
        let c = s.outer_corners();
        assert_eq!(
            c,
            vec![[0.0, 3.0], [0.0, 4.0], [1.0, 1.0], [3.0, 0.0], [4.0, 0.0]]
        );
    }

    #[test]
    fn initial_rect_is_whole_domain() {
        let s = FrontierState::initial(unit());
        let r = largest_max_min_rect(&s).unwrap();
        assert_eq!(r.lo(), [0.0, 0.0]);
        assert_eq!(r.hi(), [1.0, 1.0]);
        assert!((r.maxmin_distance - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn initial_query_is_center() {
        let s = FrontierState::initial(unit());
        let r = largest_max_min_rect(&s).unwrap();
        assert_eq!(best_worst_case_query(&s, &r), Some([0.5, 0.5]));
    }

    #[test]
    fn closed_gap_has_zero_distance() {
        let s = FrontierState {
            bounds: unit(),
            upper: vec![[0.5, 0.5]],
            lower: vec![[0.5, 1.0], [1.0, 0.5]],
        };
        assert!(max_min_distance(&s) < 1e-12);
        assert!(largest_max_min_rect(&s).is_none());
    }

    #[test]
    fn corner_preconditions_checked() {
        let r = frontier_search(|_| Ok::<_, ()>((0.0, 0.0)), unit(), 1.0, 5);
        assert!(matches!(r, Err(FrontierError::InvalidBounds(_))));
        let r = frontier_search(|_| Ok::<_, ()>((0.0, 2.0)), unit(), 1.0, 5);
        assert!(matches!(r, Err(FrontierError::InvalidBounds(_))));
    }

    #[test]
    fn zero_budget_returns_upper_corner() {
        let out = frontier_search(
            |z: Z| Ok::<_, ()>((z[0] + z[1], z[0] + z[1])),
            unit(),
            1.0,
            0,
        )
        .unwrap();
        assert_eq!(out.best.z, [1.0, 1.0]);
        assert!(out.trace.is_empty());
    }
}
